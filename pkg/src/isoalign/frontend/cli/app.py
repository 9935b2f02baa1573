"""
isoalign command line.

Start here with ``isoalign --help`` (or ``python main.py --help``). Reports go to stdout
unless ``--out`` is given; diagnostics go to stderr. Exit codes: 0 ok, 1 bound
violation, 2 input contract or numerical failure, 3 malformed or unreadable file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Tuple

import click
import numpy as np

from isoalign import __version__
from isoalign.align.maps import apply, apply_rows, compose, invert, save_map, with_means
from isoalign.align.procrustes import METHODS, fit
from isoalign.core.console import err_console
from isoalign.core.exceptions import (
    ContractError,
    DimensionMismatchError,
    MissingLabelsError,
    ValidationError,
)
from isoalign.core.models import EmbeddingSet, FitModality, MapKind, Modality, SplitSpec, StorageDType
from isoalign.metrics.battery import evaluate_battery
from isoalign.metrics.kernels import kernel_agreement, modality_gap, multimodal_kernel
from isoalign.metrics.two_path import two_path_retrieval
from isoalign.store.embeddings import (
    check_pairing,
    class_prototypes,
    column_mean,
    import_csv,
    normalize,
    save_embeddings,
    save_prototypes,
    split,
    split_indices,
)
from isoalign.synth.planted import PlantedParams, make_planted, write_scenario
from isoalign.theory.sweeps import run_theory_sweep

from .context import EXIT_CONTRACT, RunContext, build_context, guarded

FILE = click.Path(dir_okay=False, path_type=Path)
FORMATS = click.Choice(["json", "csv"])


def _out_option(fn):
    return click.option("--out", type=FILE, default=None,
                        help="Write the report here instead of stdout.")(fn)


def _format_option(default: str):
    return click.option("--format", "fmt", type=FORMATS, default=default, show_default=True)


def _four_sets(fn):
    for name, role in reversed((
        ("--source-images", "source images"),
        ("--source-texts", "source texts"),
        ("--target-images", "target images"),
        ("--target-texts", "target texts"),
    )):
        fn = click.option(name, type=FILE, required=True, help=f"EMB1 file of {role}.")(fn)
    return fn


def _load_four(run: RunContext, source_images: Path, source_texts: Path,
               target_images: Path, target_texts: Path) -> Tuple[EmbeddingSet, ...]:
    return (
        run.embeddings("source_images", source_images),
        run.embeddings("source_texts", source_texts),
        run.embeddings("target_images", target_images),
        run.embeddings("target_texts", target_texts),
    )


def _text_means(run: RunContext, paths: Optional[Sequence[Path]]) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    if not paths:
        return None, None
    src = run.embeddings("text_means_source", paths[0])
    tgt = run.embeddings("text_means_target", paths[1])
    return column_mean(src), column_mean(tgt)


def _deployment_means(amap, src_txt: EmbeddingSet, tgt_txt: EmbeddingSet):
    # a centered map deploys on texts with the texts' own means
    if not amap.has_means or src_txt.n == 0 or tgt_txt.n == 0:
        return None, None
    return column_mean(src_txt), column_mean(tgt_txt)


# === Group ===


@click.group()
@click.version_option(version=__version__, prog_name="isoalign")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging on stderr.")
@click.option("--tolerance", type=float, default=None,
              help="Absolute slack when judging bounds (overrides ALIGN_BOUND_TOL).")
@click.option("--env-file", type=FILE, default=None, help="Optional .env file to load first.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, tolerance: Optional[float], env_file: Optional[Path]) -> None:
    """Fit, apply and evaluate isometric maps between contrastive embedding spaces."""
    try:
        ctx.obj = build_context(verbose=verbose, tolerance=tolerance, env_file=env_file)
    except ContractError as e:
        err_console.print(f"error: {e}", highlight=False, markup=False)
        ctx.exit(EXIT_CONTRACT)


# === Files ===


@cli.command("import-csv")
@click.argument("csv_path", type=FILE)
@click.option("--out", type=FILE, required=True, help="EMB1 file to write.")
@click.option("--no-labels", is_flag=True, help="The first column is a coordinate, not a label.")
@click.option("--model-id", default="")
@click.option("--modality", type=click.Choice([m.value for m in Modality]), default="image")
@click.option("--dataset-id", default="")
@click.option("--normalize", "do_normalize", is_flag=True, help="Normalize rows before writing.")
@click.option("--dtype", type=click.Choice([t.value for t in StorageDType]), default="f32",
              show_default=True)
@click.pass_obj
@guarded
def import_csv_cmd(run: RunContext, csv_path: Path, out: Path, no_labels: bool, model_id: str,
                   modality: str, dataset_id: str, do_normalize: bool, dtype: str) -> None:
    """Convert a header-less CSV into an EMB1 file with sidecar."""
    es = import_csv(csv_path, has_labels=not no_labels, model_id=model_id,
                    modality=modality, dataset_id=dataset_id)
    if do_normalize:
        es = normalize(es)
    save_embeddings(es, out, dtype=StorageDType(dtype))
    err_console.print(f"wrote {es.n} x {es.d} rows to {out}", highlight=False)


@cli.command("prototypes")
@click.option("--texts", type=FILE, required=True, help="Labeled EMB1 file of class prompts.")
@click.option("--out", type=FILE, required=True, help="Prototype file to write.")
@click.pass_obj
@guarded
def prototypes_cmd(run: RunContext, texts: Path, out: Path) -> None:
    """Average the prompts of each class into one unit prototype."""
    es = run.embeddings("texts", texts)
    if not es.normalized:
        es = normalize(es)
    protos = class_prototypes(es)
    save_prototypes(protos, out, model_id=es.model_id, class_names=es.class_names)
    err_console.print(f"wrote {protos.k} prototypes to {out}", highlight=False)


@cli.command("synth")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--d", "d", type=int, default=8, show_default=True)
@click.option("--d-tilde", type=int, default=None, help="Target dimension (default: d).")
@click.option("--n-img", type=int, default=200, show_default=True)
@click.option("--n-txt", type=int, default=100, show_default=True)
@click.option("--classes", "K", type=int, default=10, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--text-noise", type=float, default=None, help="Text noise (default: --noise).")
@click.option("--gap", type=float, default=0.0, show_default=True)
@click.option("--cap-angle", type=float, default=60.0, show_default=True)
@click.option("--spread", type=float, default=0.15, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_obj
@guarded
def synth_cmd(run: RunContext, out_dir: Path, d: int, d_tilde: Optional[int], n_img: int,
              n_txt: int, K: int, noise: float, text_noise: Optional[float], gap: float,
              cap_angle: float, spread: float, seed: int) -> None:
    """Write a planted two-model scenario: four EMB1 files plus scenario.json."""
    params = PlantedParams(
        d=d, d_tilde=d if d_tilde is None else d_tilde, n_img=n_img, n_txt=n_txt, K=K,
        noise_sigma=noise, gap_norm=gap, seed=seed, cap_angle_deg=cap_angle, spread=spread,
        text_noise_sigma=text_noise,
    )
    scenario = make_planted(params)
    written = write_scenario(scenario, out_dir)
    for role, path in sorted(written.items()):
        click.echo(f"{role}\t{path}")


# === Alignment ===


@cli.command("fit")
@click.option("--source", type=FILE, required=True, help="Source model EMB1 file.")
@click.option("--target", type=FILE, required=True, help="Target model EMB1 file, paired by row.")
@click.option("--map", "map_path", type=FILE, required=True, help="MAP1 file to write.")
@click.option("--method", type=click.Choice(METHODS), default="orthogonal", show_default=True)
@click.option("--ridge", type=float, default=0.0, show_default=True)
@_format_option("json")
@_out_option
@click.pass_obj
@guarded
def fit_cmd(run: RunContext, source: Path, target: Path, map_path: Path, method: str,
            ridge: float, fmt: str, out: Optional[Path]) -> None:
    """Fit a map from paired source/target rows and write it as MAP1."""
    src = run.embeddings("source", source)
    tgt = run.embeddings("target", target)
    check_pairing(src, tgt)
    amap = fit(src, tgt, method=method, ridge=ridge,
               fit_modality=FitModality(src.modality.value))
    save_map(amap, map_path)

    report = run.new_report("fit", method=method, map=amap.describe())
    for name, value in sorted(amap.stats.items()):
        report.add(name, "train", value)
    report.section("stats", amap.stats)
    run.emit(report, out, fmt)


@cli.command("apply")
@click.option("--map", "map_path", type=FILE, required=True)
@click.option("--input", "input_path", type=FILE, required=True, help="EMB1 file to transform.")
@click.option("--out", type=FILE, required=True, help="EMB1 file to write.")
@click.option("--mu-source-from", type=FILE, default=None,
              help="EMB1 file whose column mean replaces the map's source mean.")
@click.option("--mu-target-from", type=FILE, default=None,
              help="EMB1 file whose column mean replaces the map's target mean.")
@click.option("--renormalize", is_flag=True, help="Normalize the mapped rows.")
@click.pass_obj
@guarded
def apply_cmd(run: RunContext, map_path: Path, input_path: Path, out: Path,
              mu_source_from: Optional[Path], mu_target_from: Optional[Path],
              renormalize: bool) -> None:
    """Transform every row of an embedding file."""
    amap = run.alignment_map("map", map_path)
    es = run.embeddings("input", input_path)
    mu_s = run.optional_embeddings("mu_source", mu_source_from)
    mu_t = run.optional_embeddings("mu_target", mu_target_from)
    mapped = apply(
        amap, es,
        override_mu_source=None if mu_s is None else column_mean(mu_s),
        override_mu_target=None if mu_t is None else column_mean(mu_t),
        renormalize=renormalize,
    )
    save_embeddings(mapped, out, dtype=StorageDType.F64)
    err_console.print(f"wrote {mapped.n} x {mapped.d} rows to {out}", highlight=False)


# === Evaluation ===


@cli.command("eval")
@click.option("--map", "map_path", type=FILE, required=True)
@_four_sets
@click.option("--source-prototypes", type=FILE, default=None)
@click.option("--target-prototypes", type=FILE, default=None)
@click.option("--text-means", type=FILE, nargs=2, default=None,
              help="Source and target text files whose means center texts.")
@click.option("--recenter", is_flag=True,
              help="Keep Q but recompute every mean on the evaluation files.")
@_format_option("json")
@_out_option
@click.pass_obj
@guarded
def eval_cmd(run: RunContext, map_path: Path, source_images: Path, source_texts: Path,
             target_images: Path, target_texts: Path, source_prototypes: Optional[Path],
             target_prototypes: Optional[Path], text_means: Optional[Tuple[Path, Path]],
             recenter: bool, fmt: str, out: Optional[Path]) -> None:
    """Run the metric battery before and after alignment."""
    amap = run.alignment_map("map", map_path)
    si, st, ti, tt = _load_four(run, source_images, source_texts, target_images, target_texts)
    if recenter:
        amap = with_means(amap, column_mean(si), column_mean(ti))
        mu_s, mu_t = column_mean(st), column_mean(tt)
    else:
        mu_s, mu_t = _text_means(run, text_means)

    result = evaluate_battery(
        si, st, ti, tt, amap,
        text_mu_source=mu_s, text_mu_target=mu_t,
        src_protos=run.prototypes("source_prototypes", source_prototypes),
        tgt_protos=run.prototypes("target_prototypes", target_prototypes),
    )
    report = run.new_report("eval", map=amap.describe(), recenter=recenter)
    result.add_to(report)
    report.section("battery", result.to_dict())
    run.emit(report, out, fmt)


def _parse_counts(values: Sequence[str]) -> Tuple[int, ...]:
    counts = []
    for raw in values:
        for part in str(raw).split(","):
            if part.strip():
                try:
                    counts.append(int(part))
                except ValueError as e:
                    raise ValidationError(f"class count {part!r} is not an integer") from e
    if not counts:
        raise ValidationError("give at least one class count with --n")
    return tuple(sorted(set(counts)))


@cli.command("sweep")
@_four_sets
@click.option("--n", "counts", multiple=True, required=True,
              help="Seen-class counts, repeatable or comma separated.")
@click.option("--method", type=click.Choice(METHODS), default="orthogonal", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_format_option("csv")
@_out_option
@click.pass_obj
@guarded
def sweep_cmd(run: RunContext, source_images: Path, source_texts: Path, target_images: Path,
              target_texts: Path, counts: Sequence[str], method: str, seed: int, fmt: str,
              out: Optional[Path]) -> None:
    """Fit on the first N classes (seeded order) and score seen and unseen classes apart."""
    si, st, ti, tt = _load_four(run, source_images, source_texts, target_images, target_texts)
    check_pairing(si, ti)
    check_pairing(st, tt)
    if si.labels is None or st.labels is None:
        raise MissingLabelsError("a seen/unseen sweep needs labeled images and texts")
    classes = np.random.default_rng(seed).permutation(np.unique(si.labels))
    ns = _parse_counts(counts)
    if ns[0] < 1 or ns[-1] > classes.size:
        raise ValidationError(f"class counts must be in [1, {classes.size}], got {list(ns)}")

    report = run.new_report("sweep", method=method, seed=seed, n_classes=int(classes.size))
    for N in ns:
        spec = SplitSpec.by_classes(sorted(classes[:N].tolist()), seed=seed)
        si_seen, si_unseen = split(si, spec)
        ti_seen, ti_unseen = split(ti, spec)
        st_seen, st_unseen = split(st, spec)
        tt_seen, tt_unseen = split(tt, spec)
        amap = fit(si_seen, ti_seen, method=method)
        mu_s, mu_t = _deployment_means(amap, st_seen, tt_seen)
        report.add("image_rank", "seen", int(np.linalg.matrix_rank(si_seen.data)), N=N)
        parts = (
            ("seen", si_seen, st_seen, ti_seen, tt_seen),
            ("unseen", si_unseen, st_unseen, ti_unseen, tt_unseen),
        )
        for subset, img_s, txt_s, img_t, txt_t in parts:
            if img_s.n == 0 or txt_s.n == 0:
                continue
            result = evaluate_battery(img_s, txt_s, img_t, txt_t, amap,
                                      text_mu_source=mu_s, text_mu_target=mu_t)
            result.add_to(report, subset=subset, N=N)
    run.emit(report, out, fmt)


@cli.command("compare")
@_four_sets
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--ridge", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_format_option("csv")
@_out_option
@click.pass_obj
@guarded
def compare_cmd(run: RunContext, source_images: Path, source_texts: Path, target_images: Path,
                target_texts: Path, train_fraction: float, ridge: float, seed: int, fmt: str,
                out: Optional[Path]) -> None:
    """Fit every aligner on one training split and score each on the held-out rows."""
    si, st, ti, tt = _load_four(run, source_images, source_texts, target_images, target_texts)
    check_pairing(si, ti)
    check_pairing(st, tt)
    spec = SplitSpec.by_fraction(train_fraction, seed=seed)
    img_train, img_test = split_indices(si.n, None, spec)
    txt_train, txt_test = split_indices(st.n, None, spec)
    if img_test.size == 0 or txt_test.size == 0:
        raise ValidationError("the held-out split is empty; lower --train-fraction")

    report = run.new_report("compare", train_fraction=train_fraction, seed=seed)
    for method in METHODS:
        amap = fit(si.take(img_train), ti.take(img_train), method=method, ridge=ridge)
        mu_s, mu_t = _deployment_means(amap, st.take(txt_train), tt.take(txt_train))
        result = evaluate_battery(
            si.take(img_test), st.take(txt_test), ti.take(img_test), tt.take(txt_test), amap,
            text_mu_source=mu_s, text_mu_target=mu_t,
        )
        result.add_to(report, subset="test", method=method)
        report.add("residual", "train", amap.stats.get("residual"), method=method, stage="fit")
    run.emit(report, out, fmt)


@cli.command("cycle")
@click.option("--a-images", type=FILE, required=True)
@click.option("--b-images", type=FILE, required=True)
@click.option("--c-images", type=FILE, default=None, help="Third model for the composition check.")
@click.option("--method", type=click.Choice(METHODS), default="orthogonal", show_default=True)
@click.option("--fraction", type=float, default=0.95, show_default=True,
              help="Share of rows used for the independent reverse fit.")
@click.option("--seed", type=int, default=0, show_default=True)
@_format_option("json")
@_out_option
@click.pass_obj
@guarded
def cycle_cmd(run: RunContext, a_images: Path, b_images: Path, c_images: Optional[Path],
              method: str, fraction: float, seed: int, fmt: str, out: Optional[Path]) -> None:
    """Round trips A -> B -> A and, with a third model, A -> B -> C against A -> C."""
    a = run.embeddings("a_images", a_images)
    b = run.embeddings("b_images", b_images)
    check_pairing(a, b)
    if a.d != b.d:
        raise DimensionMismatchError(
            f"round trips need equal dimensions (got {a.d} and {b.d}): the reverse fit maps "
            f"B back into A, and a semi-orthogonal map cannot take {b.d} dimensions into {a.d}"
        )
    report = run.new_report("cycle", method=method, seed=seed, fraction=fraction)

    q_ab = fit(a, b, method=method)
    reverse_idx, _ = split_indices(a.n, None, SplitSpec.by_fraction(fraction, seed=seed))
    q_ba = fit(b.take(reverse_idx), a.take(reverse_idx), method=method)
    roundtrip = compose(q_ab, q_ba)
    report.add("roundtrip_frobenius", "refit", float(np.linalg.norm(roundtrip.Q - np.eye(q_ab.d))))
    report.add("roundtrip_pointwise", "refit",
               float(np.linalg.norm(apply_rows(roundtrip, a.data) - a.data, axis=1).max()))
    if q_ab.d == q_ab.d_tilde and q_ab.kind is MapKind.ORTHOGONAL:
        exact = compose(q_ab, invert(q_ab))
        report.add("roundtrip_pointwise", "inverse",
                   float(np.linalg.norm(apply_rows(exact, a.data) - a.data, axis=1).max()))

    if c_images is not None:
        c = run.embeddings("c_images", c_images)
        check_pairing(a, c)
        q_bc = fit(b, c, method=method)
        q_ac = fit(a, c, method=method)
        chain = compose(q_ab, q_bc)
        report.add("composition_frobenius", "chain", float(np.linalg.norm(q_ac.Q - chain.Q)))
        report.add("composition_pointwise", "chain", float(np.linalg.norm(
            apply_rows(q_ac, a.data) - apply_rows(chain, a.data), axis=1).max()))
    run.emit(report, out, fmt)


@cli.command("two-path")
@click.option("--map", "map_path", type=FILE, required=True)
@_four_sets
@click.option("--k", "k", type=int, default=5, show_default=True)
@click.option("--text-means", type=FILE, nargs=2, default=None,
              help="Source and target text files whose means center texts.")
@_format_option("csv")
@_out_option
@click.pass_obj
@guarded
def two_path_cmd(run: RunContext, map_path: Path, source_images: Path, source_texts: Path,
                 target_images: Path, target_texts: Path, k: int,
                 text_means: Optional[Tuple[Path, Path]], fmt: str, out: Optional[Path]) -> None:
    """Compare direct image retrieval with the route through the nearest text."""
    amap = run.alignment_map("map", map_path)
    si, st, ti, tt = _load_four(run, source_images, source_texts, target_images, target_texts)
    mu_s, mu_t = _text_means(run, text_means)
    result = two_path_retrieval(si, st, ti, tt, amap, k, text_mu_source=mu_s, text_mu_target=mu_t)

    report = run.new_report("two_path", k=result.k)
    for row in result.per_query_rows():
        report.add("overlap", "query", row["overlap"], query=row["query"])
        report.add("class_match", "query", int(row["majority_direct"] == row["majority_text"]),
                   query=row["query"])
    for name, value in sorted(result.to_dict().items()):
        if name not in ("k", "n_queries") and value is not None:
            report.add(name, "all", value)
    report.section("summary", result.to_dict())
    run.emit(report, out, fmt)


@cli.command("gap")
@_four_sets
@_format_option("csv")
@_out_option
@click.pass_obj
@guarded
def gap_cmd(run: RunContext, source_images: Path, source_texts: Path, target_images: Path,
            target_texts: Path, fmt: str, out: Optional[Path]) -> None:
    """Modality gap of each model and how well the two multimodal kernels agree."""
    si, st, ti, tt = _load_four(run, source_images, source_texts, target_images, target_texts)
    check_pairing(si, ti)
    check_pairing(st, tt)
    report = run.new_report("gap")
    report.add("modality_gap", "source", modality_gap(si, st))
    report.add("modality_gap", "target", modality_gap(ti, tt))
    agreement = kernel_agreement(multimodal_kernel(si, st), multimodal_kernel(ti, tt))
    for name, value in sorted(agreement.items()):
        if value is not None:
            report.add(f"kernel.{name}", "all", value)
    report.section("kernel_agreement", agreement)
    run.emit(report, out, fmt)


# === Theory ===


@cli.command("theory")
@click.option("--instances", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--negative-controls", is_flag=True,
              help="Also run instances that break the preconditions (informational).")
@_format_option("json")
@_out_option
@click.pass_obj
@guarded
def theory_cmd(run: RunContext, instances: int, seed: int, negative_controls: bool, fmt: str,
               out: Optional[Path]) -> None:
    """Check every identifiability bound on seeded synthetic instances."""
    sweep = run_theory_sweep(instances, seed=seed, settings=run.settings,
                             negative_controls=negative_controls)
    report = run.new_report("theory", n_instances=instances, seed=seed,
                            tolerance=run.settings.bound_tolerance,
                            negative_controls=negative_controls)
    for rec in sweep.records:
        subset = "control" if rec.control else ("checked" if rec.precondition else "skipped")
        report.add(rec.check, subset, rec.observed_max, seed=rec.seed,
                   bound=rec.bound_value, satisfied=rec.satisfied)
    report.section("summary", sweep.summary())
    report.section("violations", [r.to_dict() for r in sweep.violations()])
    run.emit(report, out, fmt)
    sweep.raise_for_violations()


def main() -> None:
    cli(prog_name="isoalign")


if __name__ == "__main__":
    main()
