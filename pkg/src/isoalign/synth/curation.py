"""
Curated discrete worlds.

A base joint p* is block-uniform: X and Y are cut into contiguous blocks and
p*(x, y) depends only on the pair of blocks. Curation weights are positive noise
around one common within-block mean, so E*[v | x] and E*[u | y] are constant and every
curation shifts the PMI by a single constant.

For a generic joint the conditional-mean constraints E*[v | x] = const are |X| linear
equations on |Y| unknowns; when |X| = |Y| and the conditional table is invertible only
constant weights satisfy them, which is why the block structure is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from isoalign.core.exceptions import ValidationError
from isoalign.core.models import DiscreteJoint


@dataclass(frozen=True)
class CurationScenario:
    p_star: DiscreteJoint
    blocks_x: np.ndarray = field(repr=False)
    blocks_y: np.ndarray = field(repr=False)
    weights: List[Tuple[np.ndarray, np.ndarray]] = field(repr=False)
    # p_star with each dataset's weights attached; .curated() gives the curated table
    joints: List[DiscreteJoint] = field(repr=False)
    seed: int = 0

    def curated_joints(self) -> List[DiscreteJoint]:
        return [j.curated() for j in self.joints]


def _blocks(n: int, b: int, axis: str) -> np.ndarray:
    if b < 1 or n < 1 or n % b:
        raise ValidationError(f"{b} blocks must divide n{axis}={n}")
    return np.arange(n) // (n // b)


def _block_mean_weights(blocks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Positive weights whose mean inside every block is the same constant."""
    xi = rng.uniform(-0.5, 0.5, size=blocks.shape[0])
    for b in np.unique(blocks):
        members = blocks == b
        xi[members] -= xi[members].mean()
    return rng.uniform(0.5, 2.0) * (1.0 + xi)


def make_curation_world(
    nx: int,
    ny: int,
    bx: int,
    by: int,
    n_datasets: int = 2,
    seed: int = 0,
) -> CurationScenario:
    if n_datasets < 1:
        raise ValidationError("n_datasets must be >= 1")
    blocks_x = _blocks(nx, bx, "x")
    blocks_y = _blocks(ny, by, "y")
    rng = np.random.default_rng(seed)

    B = rng.uniform(0.5, 1.5, size=(bx, by))
    B /= B.sum()
    table = B[blocks_x][:, blocks_y] / ((nx // bx) * (ny // by))
    p_star = DiscreteJoint.from_weights(table)

    weights = []
    joints = []
    for _ in range(n_datasets):
        u = _block_mean_weights(blocks_x, rng)
        v = _block_mean_weights(blocks_y, rng)
        weights.append((u, v))
        joints.append(DiscreteJoint(p=p_star.p, u=u, v=v))
    return CurationScenario(
        p_star=p_star,
        blocks_x=blocks_x,
        blocks_y=blocks_y,
        weights=weights,
        joints=joints,
        seed=seed,
    )


def make_generic_joint(nx: int, ny: int, seed: int = 0) -> DiscreteJoint:
    """A positive joint with unstructured positive curation weights."""
    if nx < 1 or ny < 1:
        raise ValidationError("joint dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    table = rng.uniform(0.1, 1.0, size=(nx, ny))
    return DiscreteJoint.from_weights(
        table,
        u=rng.uniform(0.2, 2.0, size=nx),
        v=rng.uniform(0.2, 2.0, size=ny),
    )
