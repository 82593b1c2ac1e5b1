"""Selection-adjusted likelihood inference for one interaction effect.

The selected-model statistics (theta_hat, beta_hat) are biased by the
randomized group-lasso screening.  This module conditions on the selection
event, integrates the randomization out with a Laplace approximation, and
maximizes the resulting adjusted likelihood.  The pipeline is

    build_mapping      affine map from statistics and block magnitudes
                       back to the randomization vector
    reduce_gaussians   collapse the conditional law to two small Gaussians
    solve_barrier_problem
                       inner optimization over block magnitudes, kept
                       feasible by a log-barrier on the positive orthant
    selective_mle_and_fisher
                       adjusted point estimate and observed information

selective_inference ties these together into a report with a normal pivot,
two-sided p-value, and a Wald interval on the adjusted scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr, ndtri

from .group_lasso import SelectionEvent
from .interaction_model import KeyStats
from .spline_basis import GroupedDesign


class EmptySelectionError(ValueError):
    """Raised when no groups were selected, so there is nothing to test."""


@dataclass(frozen=True)
class SelectionMapping:
    """Affine reconstruction omega = score_map x + magnitude_map g + offset.

    Columns are permuted so the selected blocks come first (perm indexes the
    original columns).  dir_complement spans the within-block directions
    orthogonal to the observed unit directions; together with jacobian_base
    it determines the change-of-variables Jacobian as a function of the
    block magnitudes g.
    """

    score_map: np.ndarray
    magnitude_map: np.ndarray
    offset: np.ndarray
    dir_complement: np.ndarray
    jacobian_base: np.ndarray
    active_sizes: np.ndarray
    gamma_init: np.ndarray
    perm: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class ReducedGaussians:
    """Conditional law after collapsing the randomization.

    The statistics follow N(est_slope nu + est_offset, est_cov_adj) and the
    magnitudes follow N(opt_slope x + opt_offset, opt_cov) given statistics x,
    up to the positivity constraint and the Jacobian factor.
    """

    opt_cov: np.ndarray
    opt_prec: np.ndarray
    opt_slope: np.ndarray
    opt_offset: np.ndarray
    est_cov_adj: np.ndarray
    est_slope: np.ndarray
    est_offset: np.ndarray
    base_cov: np.ndarray
    base_prec: np.ndarray


@dataclass(frozen=True)
class BarrierResult:
    g: np.ndarray
    value: float
    grad_norm: float
    n_iter: int


@dataclass(frozen=True)
class InferenceReport:
    pair: tuple[int, int]
    method: str
    theta_mle: float
    stderr: float
    pivot: float
    p_value: float
    ci: tuple[float, float]
    status: str
    theta_null: float
    alpha: float
    diagnostics: dict


def _orthonormal_complement(u: np.ndarray) -> np.ndarray:
    """Columns spanning the subspace orthogonal to the unit vector u."""
    B = u.size
    if B == 1:
        return np.zeros((1, 0))
    v = u.copy()
    v[0] += np.copysign(1.0, u[0]) if u[0] != 0 else 1.0
    H = np.eye(B) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def build_mapping(
    design: GroupedDesign,
    event: SelectionEvent,
    stats: KeyStats,
    lam,
    epsilon: float,
) -> SelectionMapping:
    """Assemble the affine map from (statistics, magnitudes) to randomization.

    Splitting the stationarity condition of the fit along selected and
    inactive blocks expresses omega as an affine function of the augmented
    least squares statistics and the selected block magnitudes, with the
    observed directions, subgradients, and excluded-block correlations
    frozen into the coefficients.
    """
    M = np.asarray(event.selected, dtype=int)
    if M.size == 0:
        raise EmptySelectionError("empty selection: no groups to test")
    if list(M) != list(stats.M):
        raise ValueError(
            f"selection mismatch: statistics use M={stats.M}, event has M={M.tolist()}"
        )
    lam_vec = np.broadcast_to(np.asarray(lam, dtype=float), (len(design.groups),))
    Psi = design.matrix
    col_index = np.arange(design.q)
    active_cols = [col_index[design.groups[j]] for j in M]
    inactive_cols = [col_index[design.groups[j]] for j in event.inactive]
    perm = np.concatenate(active_cols + inactive_cols) if inactive_cols else (
        np.concatenate(active_cols)
    )
    Psi_p = Psi[:, perm]
    q_M = int(sum(len(c) for c in active_cols))
    m = M.size

    score_map = -Psi_p.T @ stats.aug

    magnitude_map = np.zeros((design.q, m))
    offset = np.zeros(design.q)
    row = 0
    for i, j in enumerate(M):
        u = event.directions[i]
        B_j = u.size
        magnitude_map[:, i] = Psi_p.T @ (Psi[:, design.groups[j]] @ u)
        magnitude_map[row : row + B_j, i] += epsilon * u
        offset[row : row + B_j] = lam_vec[j] * u
        row += B_j
    for i, j in enumerate(event.inactive):
        z = event.subgradients[i]
        sl = slice(row, row + z.size)
        offset[sl] = lam_vec[j] * z
        row += z.size
    offset[q_M:] += stats.a_hat

    blocks = [_orthonormal_complement(event.directions[i]) for i in range(m)]
    sizes = np.array([b.shape[0] for b in blocks], dtype=int)
    U = np.zeros((q_M, q_M - m))
    r = c = 0
    for blk in blocks:
        U[r : r + blk.shape[0], c : c + blk.shape[1]] = blk
        r += blk.shape[0]
        c += blk.shape[1]

    Psi_M = Psi_p[:, :q_M]
    Q_M = Psi_M.T @ Psi_M
    lam_diag = np.concatenate(
        [np.full(len(active_cols[i]), lam_vec[j]) for i, j in enumerate(M)]
    )
    jacobian_base = U.T @ np.linalg.solve(Q_M, lam_diag[:, None] * U)

    return SelectionMapping(
        score_map=score_map,
        magnitude_map=magnitude_map,
        offset=offset,
        dir_complement=U,
        jacobian_base=jacobian_base,
        active_sizes=sizes,
        gamma_init=np.array(event.magnitudes, dtype=float),
        perm=perm,
        epsilon=float(epsilon),
    )


def reduce_gaussians(
    mapping: SelectionMapping, Omega: np.ndarray, est_cov: np.ndarray
) -> ReducedGaussians:
    """Collapse the joint Gaussian law onto the statistics and magnitudes."""
    Om = np.asarray(Omega, dtype=float)[np.ix_(mapping.perm, mapping.perm)]
    try:
        OmL = cho_factor(Om, lower=True)
    except np.linalg.LinAlgError:
        Om = Om + 1e-10 * np.mean(np.diag(Om)) * np.eye(Om.shape[0])
        try:
            OmL = cho_factor(Om, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "randomization covariance is not positive definite"
            ) from exc

    A = mapping.score_map
    B = mapping.magnitude_map
    c = mapping.offset

    W = cho_solve(OmL, B)
    S = B.T @ W  # opt precision before conditioning, m x m
    SL = cho_factor(0.5 * (S + S.T), lower=True)
    opt_cov = cho_solve(SL, np.eye(S.shape[0]))
    opt_slope = -cho_solve(SL, W.T @ A)
    opt_offset = -cho_solve(SL, W.T @ c)

    base_prec = np.linalg.inv(est_cov)
    OmInvA = cho_solve(OmL, A)
    theta_inv = base_prec - opt_slope.T @ S @ opt_slope + A.T @ OmInvA
    theta_inv = 0.5 * (theta_inv + theta_inv.T)
    try:
        TL = cho_factor(theta_inv, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate adjusted covariance for the statistics") from exc
    est_cov_adj = cho_solve(TL, np.eye(theta_inv.shape[0]))
    est_cov_adj = 0.5 * (est_cov_adj + est_cov_adj.T)
    est_slope = est_cov_adj @ base_prec
    est_offset = cho_solve(
        TL, opt_slope.T @ S @ opt_offset - A.T @ cho_solve(OmL, c)
    )

    return ReducedGaussians(
        opt_cov=0.5 * (opt_cov + opt_cov.T),
        opt_prec=0.5 * (S + S.T),
        opt_slope=opt_slope,
        opt_offset=opt_offset,
        est_cov_adj=est_cov_adj,
        est_slope=est_slope,
        est_offset=est_offset,
        base_cov=np.asarray(est_cov, dtype=float),
        base_prec=base_prec,
    )


def _jacobian_matrix(g: np.ndarray, mapping: SelectionMapping) -> np.ndarray:
    reps = np.repeat(np.arange(mapping.active_sizes.size), mapping.active_sizes - 1)
    if reps.size == 0:
        return np.zeros((0, 0))
    return np.diag(np.asarray(g)[reps]) + mapping.jacobian_base


def _positive_logdet(D: np.ndarray) -> float | None:
    """log det D when every eigenvalue has positive real part, else None.

    D is nonsymmetric when penalty weights differ across blocks, so a
    determinant-sign test is not enough: an even number of negative
    eigenvalues still has a positive determinant.
    """
    w = np.linalg.eigvals(D)
    if np.min(w.real) <= 0:
        return None
    return float(np.sum(np.log(w)).real)


def log_jacobian(g: np.ndarray, mapping: SelectionMapping):
    """Log determinant of the change of variables, with gradient and Hessian.

    Only blocks of size above one contribute; a selection of singleton
    blocks has a constant Jacobian and returns zeros.
    """
    g = np.asarray(g, dtype=float)
    m = mapping.active_sizes.size
    reps = np.repeat(np.arange(m), mapping.active_sizes - 1)
    if reps.size == 0:
        return 0.0, np.zeros(m), np.zeros((m, m))
    D = np.diag(g[reps]) + mapping.jacobian_base
    logdet = _positive_logdet(D)
    if logdet is None:
        raise ValueError("Jacobian not positive definite")
    Dinv = np.linalg.inv(D)
    grad = np.bincount(reps, weights=np.diag(Dinv), minlength=m)
    T = (reps == np.arange(m)[:, None]).astype(float)
    hess = -T @ (Dinv * Dinv.T) @ T.T
    return float(logdet), grad, hess


def solve_barrier_problem(
    mean: np.ndarray,
    cov: np.ndarray,
    mapping: SelectionMapping,
    g0: np.ndarray | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
) -> BarrierResult:
    """Minimize the barrier-regularized objective over positive magnitudes.

    objective(g) = 0.5 (g - mean)' cov^{-1} (g - mean) - log_jacobian(g)
                   + sum_k log(1 + 1/g_k)

    Damped Newton with an Armijo line search and a fraction-to-boundary rule
    keeping all iterates strictly positive; falls back to gradient steps when
    the Newton direction fails to make progress.
    """
    mean = np.asarray(mean, dtype=float)
    m = mean.size
    prec = np.linalg.inv(0.5 * (cov + cov.T))
    g = np.array(mapping.gamma_init if g0 is None else g0, dtype=float)
    if np.any(g <= 0):
        raise ValueError("barrier initialization must be strictly positive")

    def objective(g_try):
        if np.any(g_try <= 0):
            return np.inf
        D = _jacobian_matrix(g_try, mapping)
        logdet = _positive_logdet(D) if D.shape[0] else 0.0
        if logdet is None:
            return np.inf
        d = g_try - mean
        return float(0.5 * d @ prec @ d - logdet + np.sum(np.log1p(1.0 / g_try)))

    abs_prec = np.abs(prec)

    def gradient(gv):
        _, grad_ld, _ = log_jacobian(gv, mapping)
        return prec @ (gv - mean) - grad_ld - 1.0 / (gv * (1.0 + gv))

    def noise_floor(gv):
        # rounding error of the gradient evaluation itself; the quadratic
        # term dominates when the inner covariance is tiny
        mags = abs_prec @ np.abs(gv - mean) + 1.0 / (gv * (1.0 + gv)) + 1.0
        return 64.0 * np.finfo(float).eps * float(np.max(mags))

    def boundary_cap(gv, step):
        shrink = step < 0
        if not np.any(shrink):
            return 1.0
        return min(1.0, 0.99 * float(np.min(-gv[shrink] / step[shrink])))

    f = objective(g)
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = gradient(g)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= max(grad_tol, noise_floor(g)):
            break
        _, _, hess_ld = log_jacobian(g, mapping)
        hess = prec - hess_ld + np.diag((2.0 * g + 1.0) / (g * g + g) ** 2)
        try:
            HL = cho_factor(0.5 * (hess + hess.T), lower=True)
            newton = -cho_solve(HL, grad)
        except np.linalg.LinAlgError:
            newton = None
        if newton is None or grad @ newton >= 0:
            newton = None
        accepted = False
        step = newton if newton is not None else -grad
        alpha = boundary_cap(g, step)
        slope = float(grad @ step)
        # demand a few-ulp decrease so rounding noise is never "progress"
        min_drop = 4.0 * np.finfo(float).eps * max(1.0, abs(f))
        for _ in range(60):
            g_try = g + alpha * step
            f_try = objective(g_try)
            if f_try <= f + min(1e-4 * alpha * slope, -min_drop):
                g, f = g_try, f_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted and newton is not None:
            # objective decrease is below float resolution near the solution;
            # the full Newton step still contracts the gradient quadratically
            g_try = g + boundary_cap(g, newton) * newton
            if np.isfinite(objective(g_try)):
                if np.max(np.abs(gradient(g_try))) < grad_norm:
                    g, f = g_try, objective(g_try)
                    accepted = True
        if not accepted:
            break
    else:
        grad_norm = float(np.max(np.abs(gradient(g))))
    if grad_norm > max(grad_tol, noise_floor(g)):
        raise ValueError(
            f"barrier optimization did not converge: grad norm {grad_norm:.2e}"
        )
    return BarrierResult(g=g, value=f, grad_norm=grad_norm, n_iter=it)


def selective_mle_and_fisher(
    reduced: ReducedGaussians, mapping: SelectionMapping, xhat: np.ndarray
):
    """Adjusted point estimate and observed information for the statistics.

    Returns (mle, fisher, info) where info carries the inverse information
    (the adjusted covariance of the estimate) and barrier diagnostics.  The
    inverse information has the closed form base_cov K base_cov, so the
    Fisher matrix itself is never needed on the hot path.
    """
    xhat = np.asarray(xhat, dtype=float)
    Abar = reduced.opt_slope
    mean_opt = Abar @ xhat + reduced.opt_offset
    res = solve_barrier_problem(mean_opt, reduced.opt_cov, mapping)

    theta_prec = np.linalg.inv(reduced.est_cov_adj)
    mle = reduced.base_cov @ (
        theta_prec @ (xhat - reduced.est_offset)
        + Abar.T @ reduced.opt_prec @ (mean_opt - res.g)
    )

    _, _, hess_ld = log_jacobian(res.g, mapping)
    H = (
        reduced.opt_prec
        - hess_ld
        + np.diag((2.0 * res.g + 1.0) / (res.g * res.g + res.g) ** 2)
    )
    try:
        HL = cho_factor(0.5 * (H + H.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate information at the barrier solution") from exc
    PA = reduced.opt_prec @ Abar
    K = theta_prec + Abar.T @ reduced.opt_prec @ Abar - PA.T @ cho_solve(HL, PA)
    K = 0.5 * (K + K.T)
    cov = reduced.base_cov @ K @ reduced.base_cov
    cov = 0.5 * (cov + cov.T)
    if np.any(np.diag(cov) <= 0):
        raise ValueError("degenerate information for the selected model")
    try:
        KL = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate information for the selected model") from exc
    fisher = reduced.base_prec @ cho_solve(KL, reduced.base_prec)
    info = {
        "cov": cov,
        "g_star": res.g,
        "barrier_iterations": res.n_iter,
        "barrier_grad_norm": res.grad_norm,
    }
    return mle, fisher, info


def approx_log_likelihood(
    reduced: ReducedGaussians,
    mapping: SelectionMapping,
    xhat: np.ndarray,
    nu: np.ndarray,
    grad_tol: float = 1e-10,
) -> float:
    """Laplace-approximated selective log-likelihood at parameter nu.

    Up to a constant not depending on nu.  The normalizer marginalizes the
    statistics exactly (a Gaussian convolution) and treats the positivity
    constraint on the magnitudes with the barrier approximation.
    """
    xhat = np.asarray(xhat, dtype=float)
    nu = np.asarray(nu, dtype=float)
    m = reduced.est_slope @ nu + reduced.est_offset
    resid = xhat - m
    theta_prec = np.linalg.inv(reduced.est_cov_adj)
    V = reduced.opt_cov + reduced.opt_slope @ reduced.est_cov_adj @ reduced.opt_slope.T
    res = solve_barrier_problem(
        reduced.opt_slope @ m + reduced.opt_offset,
        V,
        mapping,
        grad_tol=grad_tol,
    )
    return float(-0.5 * resid @ theta_prec @ resid + res.value)


def selective_inference(
    stats: KeyStats,
    event: SelectionEvent,
    design: GroupedDesign,
    Omega: np.ndarray,
    lam,
    epsilon: float,
    alpha: float = 0.1,
    theta_null: float = 0.0,
) -> InferenceReport:
    """Selection-adjusted test and interval for one interaction effect."""
    mapping = build_mapping(design, event, stats, lam, epsilon)
    reduced = reduce_gaussians(mapping, Omega, stats.est_cov)
    mle, _, info = selective_mle_and_fisher(reduced, mapping, stats.xhat)
    theta_mle = float(mle[0])
    stderr = float(np.sqrt(info["cov"][0, 0]))
    pivot = float(ndtr((theta_mle - theta_null) / stderr))
    p_value = float(2.0 * min(pivot, 1.0 - pivot))
    crit = float(ndtri(1.0 - alpha / 2.0))
    ci = (theta_mle - crit * stderr, theta_mle + crit * stderr)
    return InferenceReport(
        pair=stats.pair,
        method="selective_mle",
        theta_mle=theta_mle,
        stderr=stderr,
        pivot=pivot,
        p_value=p_value,
        ci=ci,
        status="ok",
        theta_null=theta_null,
        alpha=alpha,
        diagnostics={
            "n_selected": len(stats.M),
            "barrier_iterations": info["barrier_iterations"],
            "barrier_grad_norm": info["barrier_grad_norm"],
        },
    )
