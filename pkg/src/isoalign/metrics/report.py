"""
Report container shared by the CLI and the sweeps.

A report is a flat list of long-format rows (one value per row, for plotting) plus
free-form JSON sections. Both renderings are deterministic: JSON keys are sorted,
rows keep insertion order and no timestamps are recorded.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from isoalign import __version__


@dataclass(frozen=True)
class ReportRow:
    metric: str
    subset: str
    value: Any
    keys: Tuple[Tuple[str, Any], ...] = ()


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        f = float(value)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    return value


@dataclass
class Report:
    kind: str
    meta: Dict[str, Any] = field(default_factory=dict)
    rows: List[ReportRow] = field(default_factory=list)
    sections: Dict[str, Any] = field(default_factory=dict)

    def add(self, metric: str, subset: str, value: Any, **keys: Any) -> None:
        self.rows.append(ReportRow(metric, subset, value, tuple(sorted(keys.items()))))

    def add_metrics(self, family: str, subset: str, metrics: Any, **keys: Any) -> None:
        """Add every populated scalar field of a MetricsReport as its own row."""
        for name in ("mean_cosine", "std_cosine", "mean_l2", "top1_accuracy"):
            value = getattr(metrics, name)
            if value is not None:
                self.add(f"{family}.{name}", subset, value, **keys)

    def section(self, name: str, payload: Any) -> None:
        self.sections[name] = payload

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(
            {
                "kind": self.kind,
                "version": __version__,
                "meta": self.meta,
                "rows": [
                    dict(r.keys, metric=r.metric, subset=r.subset, value=r.value) for r in self.rows
                ],
                **self.sections,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self, extra_columns: Optional[List[str]] = None) -> str:
        key_columns = extra_columns or sorted({k for r in self.rows for k, _ in r.keys})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*key_columns, "subset", "metric", "value"])
        for r in self.rows:
            keys = dict(r.keys)
            writer.writerow(
                [*(to_jsonable(keys.get(k, "")) for k in key_columns), r.subset, r.metric,
                 _csv_value(r.value)]
            )
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        return self.to_csv() if fmt == "csv" else self.to_json()


def _csv_value(value: Any) -> str:
    value = to_jsonable(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
