"""Randomized group lasso: solver, selection event, and supporting rules.

The estimator minimizes

    0.5 ||y - Psi beta||^2 + sum_j ( lam_j ||beta_gj|| + 0.5 eps ||beta_gj||^2 )
    - omega' beta

over group-structured beta, where omega is a Gaussian randomization vector.
The small ridge term (eps > 0) makes the problem strictly convex, so the
solution and the selected set are unique.  Selection is the set of groups with
nonzero blocks, certified by the exact blockwise test ||rho_j|| > lam_j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GroupLayout:
    """Minimal column-grouped matrix wrapper for solver inputs."""

    matrix: np.ndarray
    groups: list[slice]
    group_sizes: np.ndarray


def make_layout(Psi: np.ndarray, sizes) -> GroupLayout:
    sizes = np.asarray(sizes, dtype=int)
    if sizes.sum() != Psi.shape[1]:
        raise ValueError("group sizes must sum to the number of columns")
    groups, start = [], 0
    for s in sizes:
        groups.append(slice(start, start + int(s)))
        start += int(s)
    return GroupLayout(matrix=np.asarray(Psi, dtype=float), groups=groups, group_sizes=sizes)


# ---------------------------------------------------------------------------
# Penalty weights and noise scale
# ---------------------------------------------------------------------------

def default_lambda(sigma: float, n: int, sizes: np.ndarray, q: int) -> np.ndarray:
    """Per-group penalty weights 0.5 * sigma * sqrt(n) * sqrt(B_j) * sqrt(2 log q)."""
    if q < 2:
        raise ValueError(f"penalty rule needs q >= 2 columns, got q={q}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    sizes = np.asarray(sizes, dtype=float)
    return 0.5 * sigma * np.sqrt(n) * np.sqrt(sizes) * np.sqrt(2.0 * np.log(q))


def estimate_sigma(y: np.ndarray, Psi: np.ndarray) -> float:
    """Plug-in noise scale from the full-design least squares residual."""
    n, q = Psi.shape
    if n <= q:
        raise ValueError(f"rank-deficient design: n={n} <= q={q}")
    coef, _, rank, _ = np.linalg.lstsq(Psi, y, rcond=None)
    if rank < q:
        raise ValueError(f"rank-deficient design: rank {rank} < q={q}")
    r = y - Psi @ coef
    return float(np.sqrt(r @ r / (n - q)))


# ---------------------------------------------------------------------------
# Randomization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomizationSpec:
    """How the randomization covariance is formed.

    scaled_gram: Omega = sigma2 * ((1 - r) / r) * Psi'Psi, the default that
    trades a fraction (1 - r) of the information for selection noise.
    explicit: a user-supplied covariance matrix.
    """

    kind: str = "scaled_gram"
    r: float = 0.9
    sigma2: float = 1.0
    matrix: np.ndarray | None = None

    def covariance(self, Psi: np.ndarray) -> np.ndarray:
        if self.kind == "scaled_gram":
            if not (0.0 < self.r < 1.0):
                raise ValueError(f"r must be in (0, 1), got {self.r}")
            return self.sigma2 * ((1.0 - self.r) / self.r) * (Psi.T @ Psi)
        if self.kind == "explicit":
            if self.matrix is None:
                raise ValueError("explicit randomization needs a matrix")
            return np.asarray(self.matrix, dtype=float)
        raise ValueError(f"unknown randomization kind: {self.kind!r}")


def sample_randomization(Omega: np.ndarray, seed) -> np.ndarray:
    """Draw omega ~ N(0, Omega) for a fixed seed."""
    try:
        L = np.linalg.cholesky(Omega)
    except np.linalg.LinAlgError as exc:
        raise ValueError("randomization covariance not positive definite") from exc
    z = np.random.default_rng(seed).standard_normal(Omega.shape[0])
    return L @ z


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

@dataclass
class RandomizedLassoFit:
    beta: np.ndarray
    M: np.ndarray
    active: np.ndarray
    objective_trace: list[float]
    kkt_residual: float
    n_sweeps: int
    epsilon: float
    lam: np.ndarray
    omega: np.ndarray

    def diagnostics_json(self) -> str:
        return json.dumps(
            {
                "n_sweeps": self.n_sweeps,
                "kkt_residual": self.kkt_residual,
                "epsilon": self.epsilon,
                "objective_trace": list(map(float, self.objective_trace)),
                "n_active": int(self.active.sum()),
            }
        )


class ConvergenceError(ValueError):
    def __init__(self, msg, kkt_residual):
        super().__init__(msg)
        self.kkt_residual = kkt_residual


def _block_magnitude(rho_rot: np.ndarray, evals: np.ndarray, eps: float, lam: float) -> float:
    """Solve sum_i rho_i^2 / (t (d_i + eps) + lam)^2 = 1 for t > 0.

    rho_rot is the block gradient rotated into the eigenbasis of the block
    Gram; the left side is strictly decreasing in t and the root is bracketed
    by (||rho|| - lam) / (d + eps) at the extreme eigenvalues.  Scalar math
    throughout: the blocks are tiny and this sits in the innermost loop.
    """
    de = [float(d) + eps for d in evals]
    r2 = [float(r) * float(r) for r in rho_rot]
    norm = math.sqrt(sum(r2))
    lo = (norm - lam) / max(de)
    hi = (norm - lam) / min(de)
    if hi - lo <= 1e-15 * max(1.0, hi):
        return hi
    t = 0.5 * (lo + hi)
    for _ in range(200):
        g = -1.0
        dg = 0.0
        for ri, di in zip(r2, de):
            den = t * di + lam
            g += ri / (den * den)
            dg -= 2.0 * ri * di / (den * den * den)
        if g > 0:
            lo = t
        else:
            hi = t
        t_new = t - g / dg
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-12 * max(1.0, t_new):
            return t_new
        t = t_new
    return t


def _kkt_residual(Psi, groups, beta, resid, lam, eps, omega):
    grad = -(Psi.T @ resid) + eps * beta - omega
    worst = 0.0
    for j, sl in enumerate(groups):
        bj = beta[sl]
        nb = math.sqrt(float(bj @ bj))
        if nb > 0:
            worst = max(worst, float(np.abs(grad[sl] + lam[j] * bj / nb).max()))
        else:
            gj = grad[sl]
            worst = max(worst, max(0.0, math.sqrt(float(gj @ gj)) - lam[j]))
    return worst


def solve_randomized_group_lasso(
    design,
    y: np.ndarray,
    lam: np.ndarray,
    omega: np.ndarray,
    epsilon: float | None = None,
    tol_change: float = 1e-9,
    tol_kkt: float = 1e-8,
    max_sweeps: int = 20000,
    beta0: np.ndarray | None = None,
) -> RandomizedLassoFit:
    """Cyclic block coordinate descent with exact per-block minimization.

    Each block update either zeroes the block (when ||rho_j|| <= lam_j) or
    solves the one-dimensional fixed point for the block magnitude in the
    eigenbasis of the block Gram.  Convergence requires both a small maximal
    blockwise change and a small KKT sup-norm residual.
    """
    Psi = design.matrix
    groups = design.groups
    n, q = Psi.shape
    p = len(groups)
    lam = np.asarray(lam, dtype=float)
    if epsilon is None:
        epsilon = 1e-6 * float(np.mean(np.einsum("ij,ij->j", Psi, Psi)))

    grams = [Psi[:, sl].T @ Psi[:, sl] for sl in groups]
    eigs = []
    for j, G in enumerate(grams):
        if G.shape[0] == 1:
            eigs.append((G[0, 0:1], None))
        else:
            w, V = np.linalg.eigh(G)
            eigs.append((w, V))

    beta = np.zeros(q) if beta0 is None else np.array(beta0, dtype=float)
    resid = y - Psi @ beta
    trace: list[float] = []
    starts = np.array([sl.start for sl in groups])

    def objective():
        norms = np.sqrt(np.add.reduceat(beta * beta, starts))
        return float(
            0.5 * resid @ resid + lam @ norms
            + 0.5 * epsilon * beta @ beta - omega @ beta
        )

    trace.append(objective())
    kkt = np.inf
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        max_change = 0.0
        for j, sl in enumerate(groups):
            Psi_j = Psi[:, sl]
            bj = beta[sl]
            rho = Psi_j.T @ resid + grams[j] @ bj + omega[sl]
            nr = math.sqrt(float(rho @ rho))
            if nr <= lam[j]:
                new = np.zeros(len(rho))
            else:
                w, V = eigs[j]
                if V is None:
                    # scalar block: soft threshold against the ridge-shifted Gram
                    new = np.array([np.sign(rho[0]) * (nr - lam[j]) / (w[0] + epsilon)])
                else:
                    rho_rot = V.T @ rho
                    t = _block_magnitude(rho_rot, w, epsilon, lam[j])
                    new = V @ (rho_rot * t / (t * (w + epsilon) + lam[j]))
            delta = new - bj
            change = float(np.abs(delta).max()) if delta.size else 0.0
            if change > 0:
                resid -= Psi_j @ delta
                beta[sl] = new
            max_change = max(max_change, change)
        trace.append(objective())
        # the KKT certificate is only worth computing once the sweep has
        # stalled; convergence still demands both conditions together
        if max_change <= tol_change:
            kkt = _kkt_residual(Psi, groups, beta, resid, lam, epsilon, omega)
            if kkt <= tol_kkt:
                break
    else:
        kkt = _kkt_residual(Psi, groups, beta, resid, lam, epsilon, omega)
        raise ConvergenceError(
            f"group lasso did not converge in {max_sweeps} sweeps "
            f"(kkt residual {kkt:.3e})",
            kkt_residual=kkt,
        )

    active = np.zeros(p, dtype=bool)
    for j, sl in enumerate(groups):
        rho = Psi[:, sl].T @ resid + grams[j] @ beta[sl] + omega[sl]
        active[j] = np.linalg.norm(rho) > lam[j]
    M = np.flatnonzero(active)

    return RandomizedLassoFit(
        beta=beta,
        M=M,
        active=active,
        objective_trace=trace,
        kkt_residual=float(kkt),
        n_sweeps=sweeps,
        epsilon=float(epsilon),
        lam=lam,
        omega=omega,
    )


# ---------------------------------------------------------------------------
# Selection event
# ---------------------------------------------------------------------------

@dataclass
class SelectionEvent:
    """Selected set with block magnitudes, unit directions, and the inactive
    subgradients, i.e. everything the stationarity identity pins down."""

    selected: np.ndarray
    inactive: np.ndarray
    magnitudes: np.ndarray
    directions: list[np.ndarray]
    subgradients: list[np.ndarray]


def extract_selection_event(
    design, fit: RandomizedLassoFit, y: np.ndarray, ztol: float = 1e-6
) -> SelectionEvent:
    """Decompose a converged fit into (M, magnitudes, directions, subgradients).

    Inactive subgradients are z_j = (Psi_j' r + omega_j) / lam_j with r the
    fit residual; their norms must not exceed one (up to ztol) or the fit is
    not actually at a KKT point.
    """
    Psi = design.matrix
    groups = design.groups
    resid = y - Psi @ fit.beta
    selected, inactive = [], []
    magnitudes, directions, subgradients = [], [], []
    for j, sl in enumerate(groups):
        if fit.active[j]:
            bj = fit.beta[sl]
            g = np.linalg.norm(bj)
            selected.append(j)
            magnitudes.append(g)
            directions.append(bj / g)
        else:
            s = Psi[:, sl].T @ resid + fit.omega[sl]
            if fit.lam[j] <= 0:
                raise ValueError(
                    f"KKT violation: invalid inactive subgradient for group {j} "
                    "(zero penalty on an inactive group)"
                )
            z = s / fit.lam[j]
            nz = np.linalg.norm(z)
            if nz > 1.0 + ztol:
                raise ValueError(
                    f"KKT violation: invalid inactive subgradient for group {j} "
                    f"(norm {nz:.6f} > 1)"
                )
            inactive.append(j)
            subgradients.append(z)
    return SelectionEvent(
        selected=np.asarray(selected, dtype=int),
        inactive=np.asarray(inactive, dtype=int),
        magnitudes=np.asarray(magnitudes, dtype=float),
        directions=directions,
        subgradients=subgradients,
    )
