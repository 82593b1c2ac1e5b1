"""Simulation study: data generation, replication engine, and metrics.

Each replication draws correlated features through a Gaussian copula, builds
a nonlinear mean with a handful of pairwise interactions, and runs three
inference pipelines on the same data: the selection-adjusted method, the
unadjusted (naive) z-test, and sample splitting.  Per-pair results are
collected into flat records; summaries report pivot uniformity (KS
distance), interval length, coverage, and test F1 against projection-based
truths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .baselines import naive_inference, split_inference, split_selection
from .group_lasso import (
    ConvergenceError,
    RandomizationSpec,
    default_lambda,
    extract_selection_event,
    sample_randomization,
    solve_randomized_group_lasso,
)
from .interaction_model import augmented_design, candidate_interactions, key_statistics
from .selective_mle import selective_inference
from .spline_basis import BasisConfig, GroupedDesign, build_design

ALL_METHODS = ("selective", "naive", "split")


@dataclass(frozen=True)
class SimSetting:
    """One simulation configuration; defaults mirror the base scenario."""

    n: int = 200
    p: int = 20
    rho1: float = 0.6
    rho2: float = 0.6
    rho_cross: float = 0.48
    sigma: float = 2.0
    s_inter: int = 5
    gamma_main: float = 2.0
    gamma_inter: float = 2.0
    r: float = 0.9
    seed: int = 0
    replications: int = 500
    setting_id: str = "custom"
    alpha: float = 0.1
    t0: float = 0.1
    resample_pairs: bool = False
    methods: tuple[str, ...] = ALL_METHODS
    basis: BasisConfig = field(default_factory=BasisConfig)


def preset_setting(
    setting: int,
    sigma: float | None = None,
    rho_cross: float | None = None,
    gamma_inter: float | None = None,
    s_inter: int | None = None,
    **overrides,
) -> SimSetting:
    """The four standard scenarios; each varies one knob around the base."""
    if setting == 1:
        value = 2.0 if sigma is None else float(sigma)
        return SimSetting(
            sigma=value, setting_id=f"setting1_sigma{value:g}", **overrides
        )
    if setting == 2:
        value = 0.48 if rho_cross is None else float(rho_cross)
        return SimSetting(
            rho_cross=value, setting_id=f"setting2_rhocross{value:g}", **overrides
        )
    if setting == 3:
        value = 2.0 if gamma_inter is None else float(gamma_inter)
        return SimSetting(
            gamma_inter=value, setting_id=f"setting3_gammainter{value:g}", **overrides
        )
    if setting == 4:
        value = 5 if s_inter is None else int(s_inter)
        return SimSetting(
            s_inter=value, setting_id=f"setting4_sinter{value:d}", **overrides
        )
    raise ValueError(f"unknown setting {setting}; choose 1, 2, 3, or 4")


@dataclass(frozen=True)
class PairResult:
    """Flat per-pair outcome for one method in one replication."""

    method: str
    pair: tuple[int, int]
    estimate: float
    stderr: float
    pivot: float
    p_value: float
    ci: tuple[float, float]
    theta_star: float
    theta_truth: float
    status: str


@dataclass(frozen=True)
class ReplicationRecord:
    setting_id: str
    rep: int
    selected: dict[str, list[int]]
    results: list[PairResult]


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

def build_feature_covariance(
    rho1: float, rho2: float, rho_cross: float, p_signal: int = 3, p_noise: int = 17
) -> np.ndarray:
    """Block compound-symmetry correlation for signal and noise features."""
    p = p_signal + p_noise
    cov = np.full((p, p), rho_cross)
    cov[:p_signal, :p_signal] = rho1
    cov[p_signal:, p_signal:] = rho2
    np.fill_diagonal(cov, 1.0)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "invalid correlation configuration: "
            f"rho1={rho1}, rho2={rho2}, rho_cross={rho_cross} is not positive definite"
        ) from exc
    return cov


def generate_features(setting: SimSetting, seed) -> np.ndarray:
    """Correlated uniform features; the first three are scaled to [0, 2.5]."""
    p_signal = min(3, setting.p)
    cov = build_feature_covariance(
        setting.rho1, setting.rho2, setting.rho_cross, p_signal, setting.p - p_signal
    )
    L = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((setting.n, setting.p)) @ L.T
    X = ndtr(Z)
    X[:, :p_signal] *= 2.5
    return X


def sample_interaction_pairs(p: int, s_inter: int, rng) -> list[tuple[int, int]]:
    """s_inter unordered pairs drawn uniformly without replacement."""
    all_pairs = [(j, k) for j in range(p) for k in range(j + 1, p)]
    if not 0 <= s_inter <= len(all_pairs):
        raise ValueError(
            f"s_inter={s_inter} outside [0, {len(all_pairs)}] for p={p}"
        )
    idx = rng.choice(len(all_pairs), size=s_inter, replace=False)
    return [all_pairs[i] for i in idx]


def generate_response(
    X: np.ndarray,
    G,
    gamma_main: float,
    gamma_inter: float,
    sigma: float,
    seed,
    s_inter: int | None = None,
):
    """Nonlinear main effects plus pairwise interactions, Gaussian noise."""
    rng = np.random.default_rng(seed)
    if G is None:
        G = sample_interaction_pairs(X.shape[1], int(s_inter), rng)
    mu = gamma_main * (
        2.0 * np.sin(2.0 * X[:, 0]) + X[:, 1] ** 2 + np.exp(-X[:, 2])
    )
    for j, k in G:
        mu = mu + gamma_inter * X[:, j] * X[:, k]
    y = mu + sigma * rng.standard_normal(X.shape[0])
    return y, mu


def true_targets(mu: np.ndarray, design: GroupedDesign, M, pairs):
    """Projection targets of the noiseless mean, one per candidate pair.

    Collinear pairs are flagged False and get a NaN target; they are kept
    out of pivot pooling downstream.
    """
    targets = np.full(len(pairs), np.nan)
    ok = np.zeros(len(pairs), dtype=bool)
    for i, (j, k) in enumerate(pairs):
        try:
            Z, _ = augmented_design(design, M, j, k)
        except ValueError:
            continue
        targets[i] = float(np.linalg.solve(Z.T @ Z, Z.T @ mu)[0])
        ok[i] = True
    return targets, ok


# ---------------------------------------------------------------------------
# Replication engine
# ---------------------------------------------------------------------------

def _nan_row(method, pair, status):
    nan = float("nan")
    return PairResult(
        method=method,
        pair=pair,
        estimate=nan,
        stderr=nan,
        pivot=nan,
        p_value=nan,
        ci=(nan, nan),
        theta_star=nan,
        theta_truth=nan,
        status=status,
    )


def _holdout_target(mu, design, plan, j, k):
    try:
        Z, _ = augmented_design(design, [int(m) for m in plan.M], j, k)
    except ValueError:
        return float("nan"), False
    Zh = Z[plan.holdout_rows]
    G = Zh.T @ Zh
    evals = np.linalg.eigvalsh(G)
    if evals[0] <= 0 or evals[-1] / evals[0] > 1e10:
        return float("nan"), False
    return float(np.linalg.solve(G, Zh.T @ mu[plan.holdout_rows])[0]), True


def run_replications(setting: SimSetting) -> list[ReplicationRecord]:
    """Run all requested methods over independent replications.

    Randomness is organized as one stream per replication spawned from the
    setting seed, so records do not depend on execution order; the true
    interaction set is drawn once from its own child stream unless
    resample_pairs asks for a fresh draw per replication.

    A replication whose solver stalls is recorded under a failed status
    rather than aborting the campaign.
    """
    root = np.random.SeedSequence(setting.seed)
    children = root.spawn(setting.replications + 1)
    G_fixed = sample_interaction_pairs(
        setting.p, setting.s_inter, np.random.default_rng(children[0])
    )
    kinds = ["nonlinear"] * setting.p
    records = []
    for i in range(setting.replications):
        feat_ss, noise_ss, omega_ss, split_ss, pairs_ss = children[1 + i].spawn(5)
        G = (
            sample_interaction_pairs(
                setting.p, setting.s_inter, np.random.default_rng(pairs_ss)
            )
            if setting.resample_pairs
            else G_fixed
        )
        X = generate_features(setting, feat_ss)
        y, mu = generate_response(
            X, G, setting.gamma_main, setting.gamma_inter, setting.sigma, noise_ss
        )
        design = build_design(X, kinds=kinds, config=setting.basis)
        lam = default_lambda(
            setting.sigma, setting.n, design.group_sizes, design.q
        )
        selected: dict[str, list[int]] = {}
        rows: list[PairResult] = []

        if "selective" in setting.methods:
            Omega = RandomizationSpec(
                kind="scaled_gram", r=setting.r, sigma2=setting.sigma**2
            ).covariance(design.matrix)
            omega = sample_randomization(Omega, omega_ss)
            # a stalled solve loses this replication, never the campaign
            try:
                fit = solve_randomized_group_lasso(design, y, lam, omega)
                M = fit.M.tolist()
            except ConvergenceError as exc:
                M = []
                rows.append(_nan_row("selective", (-1, -1), f"failed: {exc}"))
            selected["selective"] = M
            if M:
                event = extract_selection_event(design, fit, y)
                pairs = candidate_interactions(M, setting.p)
                targets, ok = true_targets(mu, design, M, pairs)
                for pair, tstar, good in zip(pairs, targets, ok):
                    if not good:
                        rows.append(_nan_row("selective", pair, "collinear"))
                        continue
                    stats = key_statistics(y, design, M, *pair, setting.sigma)
                    try:
                        rep = selective_inference(
                            stats, event, design, Omega, lam, fit.epsilon,
                            alpha=setting.alpha, theta_null=0.0,
                        )
                    except ValueError as exc:
                        rows.append(
                            _nan_row("selective", pair, f"failed: {exc}")
                        )
                        continue
                    pivot = float(ndtr((rep.theta_mle - tstar) / rep.stderr))
                    rows.append(PairResult(
                        method="selective",
                        pair=pair,
                        estimate=rep.theta_mle,
                        stderr=rep.stderr,
                        pivot=pivot,
                        p_value=rep.p_value,
                        ci=rep.ci,
                        theta_star=tstar,
                        theta_truth=tstar,
                        status="ok",
                    ))

        if "naive" in setting.methods:
            try:
                fit0 = solve_randomized_group_lasso(
                    design, y, lam, np.zeros(design.q)
                )
                M0 = fit0.M.tolist()
            except ConvergenceError as exc:
                M0 = []
                rows.append(_nan_row("naive", (-1, -1), f"failed: {exc}"))
            selected["naive"] = M0
            if M0:
                pairs = candidate_interactions(M0, setting.p)
                targets, ok = true_targets(mu, design, M0, pairs)
                for pair, tstar, good in zip(pairs, targets, ok):
                    if not good:
                        rows.append(_nan_row("naive", pair, "collinear"))
                        continue
                    stats = key_statistics(y, design, M0, *pair, setting.sigma)
                    rep = naive_inference(stats, alpha=setting.alpha, theta_null=0.0)
                    pivot = float(ndtr((rep.theta_mle - tstar) / rep.stderr))
                    rows.append(PairResult(
                        method="naive",
                        pair=pair,
                        estimate=rep.theta_mle,
                        stderr=rep.stderr,
                        pivot=pivot,
                        p_value=rep.p_value,
                        ci=rep.ci,
                        theta_star=tstar,
                        theta_truth=tstar,
                        status="ok",
                    ))

        if "split" in setting.methods:
            split_seed = int(split_ss.generate_state(1)[0])
            try:
                plan = split_selection(
                    design, y, r=setting.r, seed=split_seed, sigma=setting.sigma
                )
                Ms = [int(m) for m in plan.M]
            except ConvergenceError as exc:
                Ms = []
                rows.append(_nan_row("split", (-1, -1), f"failed: {exc}"))
            selected["split"] = Ms
            if Ms:
                pairs = candidate_interactions(Ms, setting.p)
                truths, _ = true_targets(mu, design, Ms, pairs)
                for pair, truth in zip(pairs, truths):
                    rep = split_inference(
                        plan, design, y, *pair, sigma=setting.sigma,
                        alpha=setting.alpha, theta_null=0.0,
                    )
                    if rep.status != "ok":
                        rows.append(PairResult(
                            method="split", pair=pair,
                            estimate=float("nan"), stderr=float("nan"),
                            pivot=float("nan"), p_value=float("nan"),
                            ci=(float("nan"), float("nan")),
                            theta_star=float("nan"), theta_truth=float(truth),
                            status=rep.status,
                        ))
                        continue
                    tstar, good = _holdout_target(mu, design, plan, *pair)
                    pivot = (
                        float(ndtr((rep.theta_mle - tstar) / rep.stderr))
                        if good
                        else float("nan")
                    )
                    rows.append(PairResult(
                        method="split",
                        pair=pair,
                        estimate=rep.theta_mle,
                        stderr=rep.stderr,
                        pivot=pivot,
                        p_value=rep.p_value,
                        ci=rep.ci,
                        theta_star=tstar,
                        theta_truth=float(truth),
                        status="ok",
                    ))

        records.append(ReplicationRecord(
            setting_id=setting.setting_id, rep=i, selected=selected, results=rows
        ))
    return records


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def metric_ecdf_ks(pivots):
    """KS distance of the pivots from Uniform(0,1), plus the ECDF table."""
    pivots = np.asarray([p for p in pivots if np.isfinite(p)], dtype=float)
    if pivots.size == 0:
        raise ValueError("empty pivot list")
    u = np.sort(pivots)
    m = u.size
    upper = np.max(np.arange(1, m + 1) / m - u)
    lower = np.max(u - np.arange(0, m) / m)
    table = np.column_stack([u, np.arange(1, m + 1) / m])
    return float(max(upper, lower)), table


def metric_avg_ci_length(reports) -> float:
    """Mean interval length over reports with ok status."""
    lengths = [r.ci[1] - r.ci[0] for r in reports if r.status == "ok"]
    if not lengths:
        return float("nan")
    return float(np.mean(lengths))


def metric_f1(reports, true_thetas, t0: float, alpha: float):
    """Precision, recall, and F1 of p-value discoveries against |theta*|>=t0.

    Reports that could not be computed (non-ok status) are never
    discoveries but still count toward the recall denominator.
    """
    discovered = set()
    truths = set()
    for i, (rep, theta) in enumerate(zip(reports, true_thetas)):
        if rep.status == "ok" and rep.p_value < alpha:
            discovered.add(i)
        if np.isfinite(theta) and abs(theta) >= t0:
            truths.add(i)
    hits = len(discovered & truths)
    precision = hits / len(discovered) if discovered else 0.0
    recall = hits / len(truths) if truths else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return float(precision), float(recall), float(f1)


# ---------------------------------------------------------------------------
# Summaries and output files
# ---------------------------------------------------------------------------

def records_frame(records) -> pd.DataFrame:
    """Flatten records into the replications table (one row per pair)."""
    rows = []
    for rec in records:
        for row in rec.results:
            rows.append({
                "setting_id": rec.setting_id,
                "rep": rec.rep,
                "method": row.method,
                "j": row.pair[0],
                "k": row.pair[1],
                "estimate": row.estimate,
                "stderr": row.stderr,
                "pivot": row.pivot,
                "p_value": row.p_value,
                "ci_lower": row.ci[0],
                "ci_upper": row.ci[1],
                "theta_star": row.theta_star,
                "theta_truth": row.theta_truth,
                "status": row.status,
                "n_selected": len(rec.selected.get(row.method, [])),
            })
    columns = [
        "setting_id", "rep", "method", "j", "k", "estimate", "stderr",
        "pivot", "p_value", "ci_lower", "ci_upper", "theta_star",
        "theta_truth", "status", "n_selected",
    ]
    return pd.DataFrame(rows, columns=columns)


def summarize(records, alpha: float = 0.1, t0: float = 0.1):
    """Per-method metric table and pooled pivot ECDF points."""
    methods = sorted({row.method for rec in records for row in rec.results})
    metric_rows = []
    ecdf_rows = []
    setting_id = records[0].setting_id if records else ""
    for method in methods:
        pivots = []
        ci_means = []
        f1s, precs, recs_ = [], [], []
        covered = total_ok = 0
        n_infeasible = n_collinear = n_failed = 0
        n_empty = 0
        for rec in records:
            rows = [r for r in rec.results if r.method == method]
            if method in rec.selected and not rec.selected[method]:
                n_empty += 1
            piv = [r.pivot for r in rows if r.status == "ok" and np.isfinite(r.pivot)]
            pivots.extend(piv)
            ok_rows = [r for r in rows if r.status == "ok"]
            if ok_rows:
                ci_means.append(metric_avg_ci_length(ok_rows))
                for r in ok_rows:
                    if np.isfinite(r.theta_star):
                        total_ok += 1
                        covered += int(r.ci[0] <= r.theta_star <= r.ci[1])
            p, rcl, f1 = metric_f1(
                rows, [r.theta_truth for r in rows], t0=t0, alpha=alpha
            )
            precs.append(p)
            recs_.append(rcl)
            f1s.append(f1)
            n_infeasible += sum(r.status.startswith("infeasible") for r in rows)
            n_collinear += sum(r.status == "collinear" for r in rows)
            n_failed += sum(r.status.startswith("failed") for r in rows)
        if pivots:
            ks, table = metric_ecdf_ks(pivots)
            for u, F in table:
                ecdf_rows.append({
                    "setting_id": setting_id, "method": method,
                    "pivot": u, "ecdf": F,
                })
        else:
            ks = float("nan")
        metric_rows.append({
            "setting_id": setting_id,
            "method": method,
            "n_replications": len(records),
            "n_pivots": len(pivots),
            "ks_pivot": ks,
            "mean_ci_length": float(np.mean(ci_means)) if ci_means else float("nan"),
            "coverage": covered / total_ok if total_ok else float("nan"),
            "mean_precision": float(np.mean(precs)) if precs else float("nan"),
            "mean_recall": float(np.mean(recs_)) if recs_ else float("nan"),
            "mean_f1": float(np.mean(f1s)) if f1s else float("nan"),
            "n_infeasible": n_infeasible,
            "n_collinear": n_collinear,
            "n_failed": n_failed,
            "n_empty_selection": n_empty,
        })
    metrics = pd.DataFrame(metric_rows)
    ecdf = pd.DataFrame(
        ecdf_rows, columns=["setting_id", "method", "pivot", "ecdf"]
    )
    return metrics, ecdf


def write_outputs(records, outdir, alpha: float = 0.1, t0: float = 0.1):
    """Write replications.csv, metrics.csv, and ecdf.csv under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    frame = records_frame(records)
    metrics, ecdf = summarize(records, alpha=alpha, t0=t0)
    paths = {
        "replications": outdir / "replications.csv",
        "metrics": outdir / "metrics.csv",
        "ecdf": outdir / "ecdf.csv",
    }
    frame.to_csv(paths["replications"], index=False)
    metrics.to_csv(paths["metrics"], index=False)
    ecdf.to_csv(paths["ecdf"], index=False)
    return paths
