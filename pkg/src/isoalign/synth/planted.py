"""
Planted two-model worlds.

Model A places images and texts on the unit sphere in two cones whose centers sit
``gap_norm`` apart; class k has one direction per cone sharing the same tangent offset,
and each sample is a jittered copy of its class direction. Model B is model A pushed
through a hidden semi-orthogonal Q_true, with optional Gaussian noise added before
renormalization. With zero noise every multimodal kernel of A equals that of B.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from isoalign.core.console import get_logger
from isoalign.core.exceptions import ValidationError
from isoalign.core.models import EmbeddingSet, Modality
from isoalign.metrics.kernels import modality_gap
from isoalign.store import codec
from isoalign.store.embeddings import save_embeddings

logger = get_logger(__name__)

SOURCE_MODEL = "model_a"
TARGET_MODEL = "model_b"
DATASET_ID = "planted"

SCENARIO_FILES = {
    "source_images": "a_images.emb",
    "source_texts": "a_texts.emb",
    "target_images": "b_images.emb",
    "target_texts": "b_texts.emb",
}


def random_semi_orthogonal(d: int, d_tilde: int, seed: int = 0) -> np.ndarray:
    """A d_tilde x d matrix with orthonormal columns, the Q factor of a seeded Gaussian."""
    if d < 1 or d > d_tilde:
        raise ValidationError(f"need 1 <= d <= d_tilde, got d={d}, d_tilde={d_tilde}")
    rng = np.random.default_rng(seed)
    Q, R = linalg.qr(rng.standard_normal((d_tilde, d)), mode="economic")
    # fix column signs so the factor is unique for a given draw
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


@dataclass(frozen=True)
class PlantedParams:
    d: int
    d_tilde: int
    n_img: int
    n_txt: int
    K: int
    noise_sigma: float = 0.0
    gap_norm: float = 0.0
    seed: int = 0
    cap_angle_deg: float = 60.0
    spread: float = 0.15
    text_noise_sigma: Optional[float] = None

    def __post_init__(self) -> None:
        if self.d < 3:
            raise ValidationError("planted cones need d >= 3")
        if self.d > self.d_tilde:
            raise ValidationError(f"d={self.d} exceeds d_tilde={self.d_tilde}")
        if self.K < 1 or self.K > min(self.n_img, self.n_txt):
            raise ValidationError(f"K={self.K} must be in [1, min(n_img, n_txt)]")
        if self.noise_sigma < 0 or (self.text_noise_sigma or 0.0) < 0 or self.spread < 0:
            raise ValidationError("noise levels and spread must be >= 0")
        if not 0.0 <= self.gap_norm <= 2.0:
            raise ValidationError(f"gap_norm must be in [0, 2], got {self.gap_norm}")
        if not 0.0 < self.cap_angle_deg <= 90.0:
            raise ValidationError("cap_angle_deg must be in (0, 90]")

    @property
    def text_sigma(self) -> float:
        return self.noise_sigma if self.text_noise_sigma is None else self.text_noise_sigma


@dataclass(frozen=True)
class PlantedScenario:
    params: PlantedParams
    Q_true: np.ndarray = field(repr=False)
    fA: EmbeddingSet = field(repr=False)
    gA: EmbeddingSet = field(repr=False)
    fB: EmbeddingSet = field(repr=False)
    gB: EmbeddingSet = field(repr=False)
    achieved_gap: float = 0.0

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def d_tilde(self) -> int:
        return self.params.d_tilde

    @property
    def seed(self) -> int:
        return self.params.seed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": asdict(self.params),
            "seed": self.params.seed,
            "Q_true": self.Q_true.tolist(),
            "achieved_gap": self.achieved_gap,
        }


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def _push(rows: np.ndarray, Q: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    mapped = rows @ Q.T
    if sigma > 0:
        mapped = mapped + sigma * rng.standard_normal(mapped.shape)
    return _unit(mapped)


def _embedding_set(data: np.ndarray, labels: np.ndarray, model_id: str, modality: Modality) -> EmbeddingSet:
    return EmbeddingSet(
        data=data,
        labels=labels,
        model_id=model_id,
        modality=modality,
        dataset_id=DATASET_ID,
        normalized=True,
    )


def make_planted(params: PlantedParams) -> PlantedScenario:
    """Build the scenario; a pure function of ``params`` (seed included)."""
    p = params
    rng = np.random.default_rng(p.seed)
    Q_true = random_semi_orthogonal(p.d, p.d_tilde, seed=int(rng.integers(2**32)))

    # orthonormal frame: cone axis c0, gap direction e, the rest for class offsets
    frame, _ = linalg.qr(rng.standard_normal((p.d, p.d)))
    c0, e, tangent_space = frame[:, 0], frame[:, 1], frame[:, 2:]
    half = math.asin(p.gap_norm / 2.0)
    c_img = math.cos(half) * c0 - math.sin(half) * e
    c_txt = math.cos(half) * c0 + math.sin(half) * e

    cap = math.radians(p.cap_angle_deg)
    alphas = rng.uniform(cap / 2.0, cap, size=p.K)
    offsets = _unit(rng.standard_normal((p.K, tangent_space.shape[1])) @ tangent_space.T)
    img_dirs = np.cos(alphas)[:, None] * c_img + np.sin(alphas)[:, None] * offsets
    txt_dirs = np.cos(alphas)[:, None] * c_txt + np.sin(alphas)[:, None] * offsets

    if p.K > 1:
        dist = np.linalg.norm(img_dirs[:, None, :] - img_dirs[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() < 2.0 * p.spread:
            logger.warning(
                "cone too tight for K=%d classes: closest class directions %.3f apart, spread %.3f",
                p.K, float(dist.min()), p.spread,
            )

    def sample(dirs: np.ndarray, n: int) -> tuple:
        labels = np.arange(n) % p.K
        jitter = p.spread * rng.standard_normal((n, p.d)) / math.sqrt(p.d)
        return _unit(dirs[labels] + jitter), labels

    f_rows, f_labels = sample(img_dirs, p.n_img)
    g_rows, g_labels = sample(txt_dirs, p.n_txt)
    fB_rows = _push(f_rows, Q_true, p.noise_sigma, rng)
    gB_rows = _push(g_rows, Q_true, p.text_sigma, rng)

    fA = _embedding_set(f_rows, f_labels, SOURCE_MODEL, Modality.IMAGE)
    gA = _embedding_set(g_rows, g_labels, SOURCE_MODEL, Modality.TEXT)
    return PlantedScenario(
        params=p,
        Q_true=Q_true,
        fA=fA,
        gA=gA,
        fB=_embedding_set(fB_rows, f_labels, TARGET_MODEL, Modality.IMAGE),
        gB=_embedding_set(gB_rows, g_labels, TARGET_MODEL, Modality.TEXT),
        achieved_gap=modality_gap(fA, gA),
    )


def perturb_target_images(scenario: PlantedScenario, sigma: float, seed: int = 0) -> PlantedScenario:
    """Redraw model B's images as normalize(Q_true f + sigma * noise); texts stay as they are."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    rows = _push(scenario.fA.data, scenario.Q_true, sigma, rng)
    return replace(
        scenario,
        fB=scenario.fB.with_data(rows),
        params=replace(scenario.params, noise_sigma=float(sigma),
                       text_noise_sigma=scenario.params.text_sigma),
    )


def write_scenario(scenario: PlantedScenario, out_dir: str | Path) -> Dict[str, Path]:
    """Write the four sets as EMB1 files plus ``scenario.json`` with the ground truth."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sets = {
        "source_images": scenario.fA,
        "source_texts": scenario.gA,
        "target_images": scenario.fB,
        "target_texts": scenario.gB,
    }
    written: Dict[str, Path] = {}
    for role, es in sets.items():
        path = out_dir / SCENARIO_FILES[role]
        save_embeddings(es, path)
        written[role] = path

    record = scenario.to_dict()
    record["files"] = dict(SCENARIO_FILES)
    manifest = out_dir / "scenario.json"
    codec.write_atomic(manifest, json.dumps(record, sort_keys=True, indent=2).encode("utf-8"))
    written["scenario"] = manifest
    logger.info("wrote planted scenario (seed=%d) to %s", scenario.seed, out_dir)
    return written
