"""Run context for the CLI: settings, input loading with provenance, report output."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
from rich.markup import escape

from isoalign.align.maps import load_map
from isoalign.core.config import Settings, load_settings
from isoalign.core.console import configure_logging, err_console, get_logger
from isoalign.core.exceptions import (
    BoundViolationError,
    ContractError,
    FormatError,
    InfeasibleScenarioError,
    NumericalError,
)
from isoalign.core.hashing import fingerprint_inputs
from isoalign.core.models import AlignmentMap, ClassPrototypes, EmbeddingSet
from isoalign.metrics.report import Report
from isoalign.store import codec
from isoalign.store.embeddings import load_embeddings, load_prototypes

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONTRACT = 2
EXIT_FORMAT = 3


@dataclass
class RunContext:
    """What every subcommand needs: settings plus the inputs it has read so far."""

    settings: Settings
    verbose: bool = False
    inputs: Dict[str, Optional[Path]] = field(default_factory=dict)

    def _track(self, role: str, path: Path) -> Path:
        path = Path(path)
        self.inputs[role] = path
        return path

    def embeddings(self, role: str, path: Path) -> EmbeddingSet:
        return load_embeddings(self._track(role, path))

    def optional_embeddings(self, role: str, path: Optional[Path]) -> Optional[EmbeddingSet]:
        return None if path is None else self.embeddings(role, path)

    def alignment_map(self, role: str, path: Path) -> AlignmentMap:
        return load_map(self._track(role, path))

    def prototypes(self, role: str, path: Optional[Path]) -> Optional[ClassPrototypes]:
        return None if path is None else load_prototypes(self._track(role, path))

    def provenance(self) -> Dict[str, Any]:
        return fingerprint_inputs(self.inputs)

    def new_report(self, kind: str, **meta: Any) -> Report:
        return Report(kind=kind, meta=dict(meta))

    def emit(self, report: Report, out: Optional[Path], fmt: str = "json") -> None:
        """Write the report to ``out`` (atomically) or to stdout."""
        report.meta["inputs"] = self.provenance()
        text = report.render(fmt)
        if out is None:
            click.echo(text, nl=False)
            return
        codec.write_atomic(Path(out), text.encode("utf-8"))
        logger.info("wrote %s report to %s", report.kind, out)


def build_context(verbose: bool = False, tolerance: Optional[float] = None,
                  env_file: Optional[Path] = None) -> RunContext:
    settings = load_settings(env_file).with_tolerance(tolerance)
    configure_logging("DEBUG" if verbose else settings.log_level)
    return RunContext(settings=settings, verbose=verbose)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, BoundViolationError):
        return EXIT_VIOLATION
    if isinstance(error, (FormatError, OSError)):
        return EXIT_FORMAT
    if isinstance(error, (ContractError, NumericalError, InfeasibleScenarioError)):
        return EXIT_CONTRACT
    raise error


def guarded(fn: Callable[..., None]) -> Callable[..., None]:
    """Map library errors onto the stable exit codes, with the message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            fn(*args, **kwargs)
        except (BoundViolationError, FormatError, OSError, ContractError, NumericalError,
                InfeasibleScenarioError) as e:
            code = exit_code_for(e)
            err_console.print(f"[red]error:[/red] {escape(str(e))}", highlight=False)
            if isinstance(e, BoundViolationError) and e.seed is not None:
                err_console.print(f"violating seed: {e.seed}", highlight=False)
            click.get_current_context().exit(code)

    return wrapper

