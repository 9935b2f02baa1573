"""
Class-prompt worlds with a prescribed signal margin and residual interaction.

Source prompts are g_c = u_c + w_c with u_c in an r-dimensional subspace U and w_c in
its complement; target prompts are Q (u_c + w_hat_c). The Gram matrix of the signals is
gamma * I + (s - gamma) * 11^T, so the margin is exactly gamma, and the residual inner
products <w_c, w_hat_k> are eta * S_ck with max |S| = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from isoalign.core.exceptions import InfeasibleScenarioError, ValidationError
from isoalign.core.models import AlignmentMap, FitModality, MapKind

from .planted import SOURCE_MODEL, TARGET_MODEL, random_semi_orthogonal


@dataclass(frozen=True)
class MarginWorld:
    U_basis: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    gA: np.ndarray = field(repr=False)
    gB: np.ndarray = field(repr=False)
    gamma_target: float = 0.0
    eta_target: float = 0.0
    seed: int = 0

    def alignment_map(self) -> AlignmentMap:
        return AlignmentMap(
            Q=self.Q,
            kind=MapKind.ORTHOGONAL,
            fit_modality=FitModality.SYNTHETIC,
            source_model=SOURCE_MODEL,
            target_model=TARGET_MODEL,
        )


def _random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    Q, _ = linalg.qr(rng.standard_normal((n, n)))
    return Q


def make_margin_world(
    d: int,
    r: int,
    K: int,
    gamma_target: float,
    eta_target: float,
    seed: int = 0,
    d_tilde: Optional[int] = None,
) -> MarginWorld:
    d_tilde = d if d_tilde is None else d_tilde
    if not 1 <= r < d or d > d_tilde:
        raise ValidationError(f"need 1 <= r < d <= d_tilde, got r={r}, d={d}, d_tilde={d_tilde}")
    if not 2 <= K <= r:
        raise ValidationError(f"need 2 <= K <= r, got K={K}, r={r}")
    if gamma_target > 1.0:
        raise InfeasibleScenarioError(f"unit prompts cannot have a margin above 1 (got {gamma_target})")
    if gamma_target <= 0.0 or eta_target < 0.0:
        raise InfeasibleScenarioError("need gamma_target > 0 and eta_target >= 0")

    if eta_target == 0.0:
        s = 1.0
    else:
        s = (1.0 + gamma_target) / 2.0
    t = 1.0 - s
    if eta_target > t:
        raise InfeasibleScenarioError(
            f"eta_target={eta_target} exceeds the residual energy {t:.3f} left by gamma={gamma_target}"
        )
    if eta_target > 0.0 and d - r < K + 1:
        raise InfeasibleScenarioError(f"residuals need d - r >= K + 1, got {d - r}")

    rng = np.random.default_rng(seed)
    Q = random_semi_orthogonal(d, d_tilde, seed=int(rng.integers(2**32)))
    frame = _random_rotation(d, rng)
    U, complement = frame[:, :r], frame[:, r:]

    gram = gamma_target * np.eye(K) + (s - gamma_target) * np.ones((K, K))
    L = linalg.cholesky(gram, lower=True)
    coords = np.zeros((K, r))
    coords[:, :K] = L
    u = (coords @ _random_rotation(r, rng)) @ U.T

    if eta_target == 0.0:
        w = np.zeros((K, d))
        w_hat = np.zeros((K, d))
    else:
        W = complement @ _random_rotation(d - r, rng)[:, : K + 1]
        w = np.sqrt(t) * W[:, :K].T
        S = rng.uniform(-1.0, 1.0, size=(K, K))
        cap = t / eta_target
        norms = np.linalg.norm(S, axis=0)
        S = S * np.minimum(1.0, cap / norms)[None, :]
        pinned = int(rng.integers(K))
        S[:, pinned] = 0.0
        S[int(rng.integers(K)), pinned] = rng.choice([-1.0, 1.0])
        S = np.clip(S, -1.0, 1.0)
        # w_hat_k = sum_c (eta S_ck / t) w_c + fill, with fill completing the norm to sqrt(t)
        w_hat = (eta_target / t) * (S.T @ w)
        fill = np.sqrt(np.maximum(t - np.sum(w_hat**2, axis=1), 0.0))
        w_hat = w_hat + fill[:, None] * W[:, K][None, :]

    gA = u + w
    gB = (u + w_hat) @ Q.T
    return MarginWorld(
        U_basis=U,
        Q=Q,
        gA=gA,
        gB=gB,
        gamma_target=float(gamma_target),
        eta_target=float(eta_target),
        seed=seed,
    )
