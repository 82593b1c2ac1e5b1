"""Reference methods: unadjusted tests and sample splitting.

Both baselines answer the same question as the selection-adjusted pipeline,
an interval and p-value for one interaction coefficient in the selected
additive model, and share its report format so downstream code can compare
methods row by row.

The naive method reuses the post-selection least squares summaries and
pretends the model was fixed in advance.  The splitting method spends a
fraction of the rows on selection and tests on the remainder; it is valid
without adjustment but can run out of holdout degrees of freedom, which is
reported as an infeasible status rather than an error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, t as student_t

from .group_lasso import (
    default_lambda,
    estimate_sigma,
    make_layout,
    solve_randomized_group_lasso,
)
from .interaction_model import COND_LIMIT, KeyStats, augmented_design
from .selective_mle import InferenceReport
from .spline_basis import GroupedDesign


def _wald_report(pair, method, est, se, dist, alpha, theta_null, diagnostics):
    pivot = float(dist.cdf((est - theta_null) / se))
    p_value = float(2.0 * min(pivot, 1.0 - pivot))
    crit = float(dist.ppf(1.0 - alpha / 2.0))
    return InferenceReport(
        pair=pair,
        method=method,
        theta_mle=float(est),
        stderr=float(se),
        pivot=pivot,
        p_value=p_value,
        ci=(float(est - crit * se), float(est + crit * se)),
        status="ok",
        theta_null=float(theta_null),
        alpha=float(alpha),
        diagnostics=diagnostics,
    )


def _infeasible_report(pair, status, alpha, theta_null, diagnostics):
    nan = float("nan")
    return InferenceReport(
        pair=pair,
        method="split",
        theta_mle=nan,
        stderr=nan,
        pivot=nan,
        p_value=nan,
        ci=(nan, nan),
        status=status,
        theta_null=float(theta_null),
        alpha=float(alpha),
        diagnostics=diagnostics,
    )


def naive_inference(
    stats: KeyStats, alpha: float = 0.1, theta_null: float = 0.0
) -> InferenceReport:
    """Unadjusted z-test for the interaction, ignoring that M was selected."""
    se = float(np.sqrt(stats.est_cov[0, 0]))
    return _wald_report(
        stats.pair,
        "naive",
        stats.theta_hat,
        se,
        norm,
        alpha,
        theta_null,
        {"n_selected": len(stats.M)},
    )


@dataclass(frozen=True)
class SplitPlan:
    """Row partition and the model selected on the selection half."""

    selection_rows: np.ndarray
    holdout_rows: np.ndarray
    M: np.ndarray
    lam: np.ndarray
    r: float
    seed: int


def split_selection(
    design: GroupedDesign,
    y: np.ndarray,
    r: float = 0.9,
    seed: int = 0,
    sigma: float | None = None,
    lam_scale: float = 1.0,
    epsilon: float | None = None,
) -> SplitPlan:
    """Select groups on a random floor(r n)-row subset with the group lasso.

    The penalty uses the selection-half sample size, so smaller selection
    fractions are penalized less aggressively in absolute terms.
    """
    n = design.matrix.shape[0]
    if not 0.0 < r < 1.0:
        raise ValueError(f"selection fraction must be in (0, 1), got r={r}")
    n1 = int(np.floor(r * n))
    if n1 < 1 or n1 >= n:
        raise ValueError(f"selection fraction r={r} leaves an empty half for n={n}")
    order = np.random.default_rng(seed).permutation(n)
    sel = np.sort(order[:n1])
    hold = np.sort(order[n1:])
    Psi1, y1 = design.matrix[sel], np.asarray(y, dtype=float)[sel]
    if sigma is None:
        sigma = estimate_sigma(y1, Psi1)
    lam = lam_scale * default_lambda(sigma, n1, design.group_sizes, design.q)
    sub = make_layout(Psi1, design.group_sizes)
    fit = solve_randomized_group_lasso(sub, y1, lam, np.zeros(design.q), epsilon=epsilon)
    return SplitPlan(
        selection_rows=sel,
        holdout_rows=hold,
        M=fit.M,
        lam=lam,
        r=float(r),
        seed=int(seed),
    )


def split_inference(
    plan: SplitPlan,
    design: GroupedDesign,
    y: np.ndarray,
    j: int,
    k: int,
    sigma: float | None = None,
    alpha: float = 0.1,
    theta_null: float = 0.0,
) -> InferenceReport:
    """Test the (j, k) interaction on the holdout half.

    Normal reference when sigma is known, Student t on the holdout residual
    degrees of freedom otherwise.  Returns an infeasible-status report when
    the holdout cannot support the selected model.
    """
    y = np.asarray(y, dtype=float)
    hold = plan.holdout_rows
    n2 = hold.size
    M = [int(m) for m in plan.M]
    q_M = int(sum(design.group_sizes[m] for m in M))
    pair = (min(j, k), max(j, k))
    diagnostics = {"n2": int(n2), "n_selected": len(M)}
    if n2 < q_M + 2:
        return _infeasible_report(
            pair,
            f"infeasible: holdout has {n2} rows for {q_M + 1} coefficients",
            alpha,
            theta_null,
            diagnostics,
        )
    try:
        Z, _ = augmented_design(design, M, j, k)
    except ValueError as exc:
        return _infeasible_report(
            pair, f"infeasible: {exc}", alpha, theta_null, diagnostics
        )
    Zh, yh = Z[hold], y[hold]
    G = Zh.T @ Zh
    evals = np.linalg.eigvalsh(G)
    if evals[0] <= 0 or evals[-1] / evals[0] > COND_LIMIT:
        return _infeasible_report(
            pair,
            f"infeasible: collinear holdout design for pair {pair}",
            alpha,
            theta_null,
            diagnostics,
        )
    coef = np.linalg.solve(G, Zh.T @ yh)
    unit_var = np.linalg.inv(G)[0, 0]
    if sigma is None:
        df = n2 - Zh.shape[1]
        resid = yh - Zh @ coef
        s2 = float(resid @ resid / df)
        se = np.sqrt(s2 * unit_var)
        dist = student_t(df)
        diagnostics["df"] = int(df)
    else:
        se = float(sigma) * np.sqrt(unit_var)
        dist = norm
    report = _wald_report(
        pair, "split", coef[0], se, dist, alpha, theta_null, diagnostics
    )
    return report
