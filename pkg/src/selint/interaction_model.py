"""Interaction candidates and the post-selection key statistics.

After the additive fit selects a set M of feature groups, each candidate pair
(j, k) is tested inside the working model

    y ~ N( I_jk theta + Psi_M beta, sigma^2 I_n ),

where I_jk is the elementwise product of the two raw features.  The least
squares statistics of this augmented regression, together with the correlation
of the excluded groups with its residual, are jointly Gaussian with a block
diagonal covariance; they are the only data summaries the selective likelihood
needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COND_LIMIT = 1e10


def candidate_interactions(M, p: int, rule: str = "weak_hierarchy") -> list[tuple[int, int]]:
    """Pairs (j, k), j < k, eligible for interaction testing.

    Under weak hierarchy a pair qualifies when at least one endpoint was
    selected as a main effect.
    """
    if rule != "weak_hierarchy":
        raise ValueError(f"unknown candidate rule: {rule!r}")
    sel = set(int(j) for j in M)
    for j in sel:
        if j < 0 or j >= p:
            raise ValueError(f"selected group {j} outside 0..{p - 1}")
    return [
        (j, k)
        for j in range(p)
        for k in range(j + 1, p)
        if j in sel or k in sel
    ]


def _selected_columns(design, M) -> list[int]:
    cols = []
    for j in M:
        sl = design.groups[j]
        cols.extend(range(sl.start, sl.stop))
    return cols


def augmented_design(design, M, j: int, k: int) -> tuple[np.ndarray, list[int]]:
    """The interaction column stacked with the selected groups' columns.

    Returns (Zbar, selected column indices).  Rejects numerically collinear
    stacks (condition number above COND_LIMIT).
    """
    M = sorted(int(m) for m in M)
    inter = design.raw_features[:, j] * design.raw_features[:, k]
    cols = _selected_columns(design, M)
    Z = np.column_stack([inter, design.matrix[:, cols]])
    evals = np.linalg.eigvalsh(Z.T @ Z)
    if evals[0] <= 0 or evals[-1] / evals[0] > COND_LIMIT:
        raise ValueError(
            f"collinear augmented design for pair ({j}, {k}) with M={M}"
        )
    return Z, cols


@dataclass
class KeyStats:
    """Least squares summaries of the augmented regression for one pair.

    est_cov is the covariance of (theta_hat, beta_hat); excluded_cov is the
    covariance of a_hat, the negative correlation of the excluded groups with
    the augmented-fit residual.  The two blocks are independent.
    """

    pair: tuple[int, int]
    M: list[int]
    theta_hat: float
    beta_hat: np.ndarray
    a_hat: np.ndarray
    est_cov: np.ndarray
    excluded_cov: np.ndarray
    aug: np.ndarray
    sigma: float

    @property
    def xhat(self) -> np.ndarray:
        return np.r_[self.theta_hat, self.beta_hat]


def key_statistics(y, design, M, j: int, k: int, sigma: float) -> KeyStats:
    """Fit the augmented regression for pair (j, k) given selected groups M."""
    M = sorted(int(m) for m in M)
    Z, _ = augmented_design(design, M, j, k)
    G = Z.T @ Z
    xhat = np.linalg.solve(G, Z.T @ y)
    resid = y - Z @ xhat

    inactive = [g for g in range(design.p) if g not in set(M)]
    cols_out = _selected_columns(design, inactive)
    Psi_out = design.matrix[:, cols_out]
    a_hat = -Psi_out.T @ resid

    G_inv = np.linalg.inv(G)
    est_cov = sigma**2 * G_inv
    # Psi_out' (I - Z (Z'Z)^{-1} Z') Psi_out without forming the projector
    cross = Psi_out.T @ Z
    excluded_cov = sigma**2 * (Psi_out.T @ Psi_out - cross @ G_inv @ cross.T)

    return KeyStats(
        pair=(j, k),
        M=M,
        theta_hat=float(xhat[0]),
        beta_hat=xhat[1:],
        a_hat=a_hat,
        est_cov=0.5 * (est_cov + est_cov.T),
        excluded_cov=0.5 * (excluded_cov + excluded_cov.T),
        aug=Z,
        sigma=float(sigma),
    )
