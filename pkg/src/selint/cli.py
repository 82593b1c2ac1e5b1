"""Command line interface: seeded simulations and CSV dataset analysis.

Three modes share one flag namespace:

  simulate   run one simulation setting and write replications/metrics/ecdf
             CSVs plus a config echo into the output directory.
  analyze    fit the additive model to a CSV dataset, test every candidate
             interaction, and write per-pair reports, the selected main
             effects, and sampled per-feature curves.
  validate   draw a subsample, run the analyze pipeline on it, and score its
             discoveries against holdout OLS t-tests as the proxy truth.

Features with more than 40 unique values are modeled nonlinearly (spline
group); the rest enter linearly.  Analyze and validate min-max scale the
features before basis expansion.  A --demo flag substitutes a built-in
synthetic dataset (13 features, 7 continuous and 6 discrete) for --dataset.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats as sps

from .baselines import naive_inference
from .group_lasso import (
    RandomizationSpec,
    default_lambda,
    estimate_sigma,
    extract_selection_event,
    sample_randomization,
    solve_randomized_group_lasso,
)
from .interaction_model import candidate_interactions, key_statistics
from .selective_mle import EmptySelectionError, selective_inference
from .sim_harness import preset_setting, run_replications, summarize, write_outputs
from .spline_basis import build_design, bspline_basis, design_matrix_at

SETTING_KNOBS = {1: "sigma", 2: "rho_cross", 3: "gamma_inter", 4: "s_inter"}
NONLINEAR_UNIQUE_THRESHOLD = 40
CURVE_GRID_POINTS = 100


class CliError(Exception):
    """Runtime failure with a user-facing message (exit code 1)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selint",
        description="Selective inference for interactions after additive modeling.",
    )
    parser.add_argument(
        "--mode", required=True, choices=("simulate", "analyze", "validate")
    )
    parser.add_argument("--setting", type=int, choices=(1, 2, 3, 4))
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--rho-cross", type=float, dest="rho_cross")
    parser.add_argument("--gamma-inter", type=float, dest="gamma_inter")
    parser.add_argument("--s-inter", type=int, dest="s_inter")
    parser.add_argument("--reps", type=int, help="replications (default 500)")
    parser.add_argument("--fast", action="store_true", help="default to 100 reps")
    parser.add_argument("--r", type=float, default=0.9)
    parser.add_argument("--alpha", type=float, default=0.1)
    parser.add_argument("--t0", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="selint_output")
    parser.add_argument(
        "--methods", default=None,
        help="comma-separated subset of selective,naive,split",
    )
    parser.add_argument("--dataset", help="CSV path for analyze/validate")
    parser.add_argument("--response", help="response column name")
    parser.add_argument(
        "--subsample-frac", type=float, default=0.1, dest="subsample_frac"
    )
    parser.add_argument("--repeats", type=int, default=1)
    parser.add_argument(
        "--demo", action="store_true", help="use the built-in synthetic dataset"
    )
    parser.add_argument(
        "--demo-rows", type=int, default=1000, dest="demo_rows"
    )
    return parser


def _check_common(parser, args):
    if not (0.0 < args.alpha < 1.0):
        parser.error(f"--alpha must be in (0, 1), got {args.alpha}")
    if not (0.0 < args.r < 1.0):
        parser.error(f"--r must be in (0, 1), got {args.r}")
    if args.t0 < 0:
        parser.error(f"--t0 must be nonnegative, got {args.t0}")


def _parse_methods(parser, text, default):
    if text is None:
        return default
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in ("selective", "naive", "split")]
    if bad or not methods:
        parser.error(f"--methods must be a subset of selective,naive,split, got {text!r}")
    return methods


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(parser, args) -> int:
    if args.setting is None:
        parser.error("--mode simulate requires --setting")
    reps = args.reps
    if reps is None:
        reps = 100 if args.fast else 500
    if reps < 1:
        parser.error(f"--reps must be a positive integer, got {reps}")
    knob = SETTING_KNOBS[args.setting]
    for name in SETTING_KNOBS.values():
        if name != knob and getattr(args, name) is not None:
            parser.error(
                f"setting {args.setting} varies {knob} only; --{name.replace('_', '-')} "
                "does not apply"
            )
    methods = _parse_methods(parser, args.methods, ("selective", "naive", "split"))

    setting = preset_setting(
        args.setting,
        sigma=args.sigma,
        rho_cross=args.rho_cross,
        gamma_inter=args.gamma_inter,
        s_inter=args.s_inter,
        replications=reps,
        seed=args.seed,
        r=args.r,
        alpha=args.alpha,
        t0=args.t0,
        methods=methods,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _echo_config(outdir, args, {
        "setting_id": setting.setting_id,
        "replications": setting.replications,
        "methods": list(methods),
        "n": setting.n,
        "p": setting.p,
        "basis_degree": setting.basis.degree,
        "basis_df": setting.basis.df,
    })

    records = run_replications(setting)
    paths = write_outputs(records, outdir, alpha=setting.alpha, t0=setting.t0)
    metrics, _ = summarize(records, alpha=setting.alpha, t0=setting.t0)
    print(f"setting {setting.setting_id}: {reps} replications")
    print(metrics.to_string(index=False))
    for name, path in sorted(paths.items()):
        print(f"wrote {name}: {path}")
    return 0


def _echo_config(outdir: Path, args, extra: dict) -> None:
    config = {
        "mode": args.mode,
        "alpha": args.alpha,
        "r": args.r,
        "t0": args.t0,
        "seed": args.seed,
        "out": str(outdir),
    }
    config.update(extra)
    (outdir / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n"
    )


# ---------------------------------------------------------------------------
# dataset loading and the demo generator
# ---------------------------------------------------------------------------

def make_demo_dataset(n_rows: int, seed) -> pd.DataFrame:
    """Synthetic dataset: 7 continuous and 6 discrete features, response y.

    The mean has smooth main effects in the first three continuous features
    and two planted interactions, c1*c2 among the mains and c4*d1 involving
    a discrete feature; unit Gaussian noise.
    """
    if n_rows < 60:
        raise CliError(f"demo dataset needs at least 60 rows, got {n_rows}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    cont = {
        f"c{i+1}": rng.uniform(lo, hi, size=n_rows)
        for i, (lo, hi) in enumerate(
            [(0, 2.5), (0, 2.5), (0, 2.5), (0, 1), (0, 1), (-1, 1), (0, 3)]
        )
    }
    levels = (2, 3, 4, 5, 7, 12)
    disc = {
        f"d{i+1}": rng.integers(0, k, size=n_rows).astype(float)
        for i, k in enumerate(levels)
    }
    df = pd.DataFrame({**cont, **disc})
    mu = (
        2.0 * np.sin(2.0 * df["c1"]) + df["c2"] ** 2 + np.exp(-df["c3"])
        + 2.0 * df["c1"] * df["c2"]
        + 2.0 * df["c4"] * df["d1"]
    )
    df["y"] = mu + rng.standard_normal(n_rows)
    return df


def _load_frame(args) -> tuple[pd.DataFrame, str]:
    if args.demo and args.dataset:
        raise CliError("--demo and --dataset are mutually exclusive")
    if args.demo:
        return make_demo_dataset(args.demo_rows, args.seed), args.response or "y"
    if not args.dataset:
        raise CliError(f"--mode {args.mode} requires --dataset or --demo")
    if not args.response:
        raise CliError(f"--mode {args.mode} requires --response")
    path = Path(args.dataset)
    if not path.exists():
        raise CliError(f"dataset not found: {path}")
    return pd.read_csv(path), args.response


def _prepare_dataset(df: pd.DataFrame, response: str):
    """Validate and split the frame into features and response.

    Drops rows with missing values (warned with a count) and rejects
    non-numeric columns by name.
    """
    if response not in df.columns:
        raise CliError(f"response column {response!r} not in dataset")
    for col in df.columns:
        if not pd.api.types.is_numeric_dtype(df[col]):
            raise CliError(f"non-numeric column: {col!r}")
    n0 = len(df)
    df = df.dropna()
    dropped = n0 - len(df)
    if dropped:
        print(f"dropped {dropped} rows with missing values", file=sys.stderr)
    if len(df) == 0:
        raise CliError("no complete rows in dataset")
    y = df[response].to_numpy(dtype=float)
    X = df.drop(columns=[response])
    if X.shape[1] < 2:
        raise CliError("need at least two feature columns")
    return X, y


def _classify_kinds(X: pd.DataFrame) -> list[str]:
    return [
        "nonlinear" if X[c].nunique() > NONLINEAR_UNIQUE_THRESHOLD else "linear"
        for c in X.columns
    ]


def _minmax_scale(X: np.ndarray, names, lo=None, hi=None):
    """Scale columns to [0, 1] by the given (or fitted) ranges."""
    if lo is None:
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        for j, name in enumerate(names):
            if hi[j] - lo[j] <= 0:
                raise CliError(f"degenerate feature: {name} is constant")
    return (X - lo) / (hi - lo), lo, hi


# ---------------------------------------------------------------------------
# the shared analyze pipeline
# ---------------------------------------------------------------------------

def _analyze_rows(Xs, y, kinds, names, r, alpha, omega_seed, methods):
    """Fit both pipelines on the given rows and test all candidate pairs.

    Returns (rows, selected, design, fits) where rows are report dicts and
    selected maps method name to the list of selected feature indices.
    """
    design = build_design(Xs, kinds=kinds, feature_names=list(names))
    sigma_hat = estimate_sigma(y, design.matrix)
    lam = default_lambda(sigma_hat, design.n, design.group_sizes, design.q)
    rows = []
    selected = {}
    fits = {}

    if "selective" in methods:
        Omega = RandomizationSpec(
            kind="scaled_gram", r=r, sigma2=sigma_hat**2
        ).covariance(design.matrix)
        omega = sample_randomization(Omega, omega_seed)
        fit = solve_randomized_group_lasso(design, y, lam, omega)
        M = fit.M.tolist()
        selected["selective"] = M
        fits["selective"] = fit
        if M:
            event = extract_selection_event(design, fit, y)
            for pair in candidate_interactions(M, design.p):
                rows.append(_report_row(
                    "selective", pair, names,
                    lambda p=pair: selective_inference(
                        key_statistics(y, design, M, *p, sigma_hat),
                        event, design, Omega, lam, fit.epsilon, alpha=alpha,
                    ),
                ))

    if "naive" in methods:
        fit0 = solve_randomized_group_lasso(design, y, lam, np.zeros(design.q))
        M0 = fit0.M.tolist()
        selected["naive"] = M0
        fits["naive"] = fit0
        if M0:
            for pair in candidate_interactions(M0, design.p):
                rows.append(_report_row(
                    "naive", pair, names,
                    lambda p=pair: naive_inference(
                        key_statistics(y, design, M0, *p, sigma_hat), alpha=alpha
                    ),
                ))
    return rows, selected, design, fits


def _report_row(method, pair, names, compute):
    j, k = pair
    base = {
        "method": method,
        "j": j,
        "k": k,
        "feature_j": names[j],
        "feature_k": names[k],
    }
    try:
        rep = compute()
    except ValueError as exc:
        status = "collinear" if "collinear" in str(exc) else f"failed: {exc}"
        return {
            **base, "estimate": np.nan, "stderr": np.nan, "p_value": np.nan,
            "ci_lower": np.nan, "ci_upper": np.nan, "status": status,
        }
    return {
        **base,
        "estimate": rep.theta_mle,
        "stderr": rep.stderr,
        "p_value": rep.p_value,
        "ci_lower": rep.ci[0],
        "ci_upper": rep.ci[1],
        "status": rep.status,
    }


def _curves_frame(design, fit, names, lo, hi) -> pd.DataFrame:
    """Per-feature additive curves of the randomized fit on a 100-point grid."""
    rows = []
    for j in fit.M.tolist():
        sl = design.groups[j]
        beta_j = fit.beta[sl]
        ts = np.linspace(0.0, 1.0, CURVE_GRID_POINTS)
        if design.kinds[j] == "nonlinear":
            basis, _ = bspline_basis(
                ts,
                degree=design.config.degree,
                df=design.config.df,
                knots=design.knots[j],
            )
            fhat = basis @ beta_j
        else:
            fhat = ts * beta_j[0]
        xs = lo[j] + ts * (hi[j] - lo[j])
        for x, f in zip(xs, fhat):
            rows.append({"feature": names[j], "x": x, "fhat": f})
    return pd.DataFrame(rows, columns=["feature", "x", "fhat"])


def cmd_analyze(parser, args) -> int:
    methods = _parse_methods(parser, args.methods, ("selective", "naive"))
    bad = [m for m in methods if m == "split"]
    if bad:
        parser.error("--mode analyze supports methods selective,naive")
    df, response = _load_frame(args)
    X, y = _prepare_dataset(df, response)
    names = list(X.columns)
    kinds = _classify_kinds(X)
    Xs, lo, hi = _minmax_scale(X.to_numpy(dtype=float), names)

    omega_ss = np.random.SeedSequence(entropy=args.seed, spawn_key=(1,))
    rows, selected, design, fits = _analyze_rows(
        Xs, y, kinds, names, args.r, args.alpha, omega_ss, methods
    )

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _echo_config(outdir, args, {
        "dataset": "demo" if args.demo else str(args.dataset),
        "response": response,
        "n": int(design.n),
        "q": int(design.q),
        "methods": list(methods),
        "feature_kinds": dict(zip(names, kinds)),
    })

    reports = pd.DataFrame(rows, columns=[
        "method", "j", "k", "feature_j", "feature_k", "estimate",
        "stderr", "p_value", "ci_lower", "ci_upper", "status",
    ])
    reports.to_csv(outdir / "reports.csv", index=False)

    sel_rows = [
        {"method": m, "feature_index": j, "feature_name": names[j]}
        for m in sorted(selected) for j in selected[m]
    ]
    pd.DataFrame(
        sel_rows, columns=["method", "feature_index", "feature_name"]
    ).to_csv(outdir / "selected.csv", index=False)

    if "selective" in fits:
        _curves_frame(design, fits["selective"], names, lo, hi).to_csv(
            outdir / "curves.csv", index=False
        )

    for m in sorted(selected):
        chosen = ", ".join(names[j] for j in selected[m]) or "(none)"
        print(f"{m} selected: {chosen}")
    n_small = int((reports["p_value"] < args.alpha).sum())
    print(f"{len(reports)} candidate pairs tested, {n_small} with p < {args.alpha}")
    print(f"wrote reports: {outdir / 'reports.csv'}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _holdout_truth(design_sub, Xh_scaled, yh, M, pair, alpha):
    """OLS t-test for the pair on the holdout; None when rank-deficient."""
    Psi_h, _ = design_matrix_at(design_sub, Xh_scaled)
    inter = Xh_scaled[:, pair[0]] * Xh_scaled[:, pair[1]]
    cols = [c for j in M for c in range(design_sub.groups[j].start, design_sub.groups[j].stop)]
    Z = np.column_stack([inter, Psi_h[:, cols]])
    n_h, ncols = Z.shape
    if n_h <= ncols:
        return None
    G = Z.T @ Z
    evals = np.linalg.eigvalsh(G)
    if evals[0] <= 0 or evals[-1] / evals[0] > 1e10:
        return None
    coef = np.linalg.solve(G, Z.T @ yh)
    resid = yh - Z @ coef
    df_resid = n_h - ncols
    s2 = float(resid @ resid) / df_resid
    se = float(np.sqrt(s2 * np.linalg.inv(G)[0, 0]))
    tstat = coef[0] / se
    p = 2.0 * sps.t.sf(abs(tstat), df_resid)
    return bool(p < alpha)


def cmd_validate(parser, args) -> int:
    if not (0.0 < args.subsample_frac < 1.0):
        parser.error(
            f"--subsample-frac must be in (0, 1), got {args.subsample_frac}"
        )
    if args.repeats < 1:
        parser.error(f"--repeats must be a positive integer, got {args.repeats}")
    methods = _parse_methods(parser, args.methods, ("selective", "naive"))
    if "split" in methods:
        parser.error("--mode validate supports methods selective,naive")
    df, response = _load_frame(args)
    X, y = _prepare_dataset(df, response)
    names = list(X.columns)
    Xarr = X.to_numpy(dtype=float)
    n = len(y)

    root = np.random.SeedSequence(entropy=args.seed, spawn_key=(2,))
    rep_children = root.spawn(args.repeats)
    table = []
    n_skipped = 0
    for child in rep_children:
        sub_ss, omega_ss = child.spawn(2)
        perm = np.random.default_rng(sub_ss).permutation(n)
        n_sub = int(np.floor(args.subsample_frac * n))
        if n_sub < 2:
            raise CliError(
                f"subsample of {n_sub} rows is too small; raise --subsample-frac"
            )
        sub, hold = perm[:n_sub], perm[n_sub:]
        X_sub = pd.DataFrame(Xarr[sub], columns=names)
        kinds = _classify_kinds(X_sub)
        try:
            Xs, lo, hi = _minmax_scale(Xarr[sub], names)
        except CliError as exc:
            raise CliError(f"subsample stage: {exc}") from exc
        rows, selected, design_sub, _ = _analyze_rows(
            Xs, y[sub], kinds, names, args.r, args.alpha, omega_ss, methods
        )
        Xh_scaled, _, _ = _minmax_scale(Xarr[hold], names, lo, hi)

        for m in methods:
            M = selected.get(m, [])
            m_rows = [row for row in rows if row["method"] == m]
            discoveries = set()
            truths = set()
            for row in m_rows:
                pair = (row["j"], row["k"])
                truth = _holdout_truth(
                    design_sub, Xh_scaled, y[hold], M, pair, args.alpha
                )
                if truth is None:
                    n_skipped += 1
                    continue
                if truth:
                    truths.add(pair)
                if row["status"] == "ok" and row["p_value"] < args.alpha:
                    discoveries.add(pair)
            hits = len(discoveries & truths)
            precision = hits / len(discoveries) if discoveries else 0.0
            recall = hits / len(truths) if truths else 0.0
            f1 = (
                2 * precision * recall / (precision + recall)
                if precision + recall > 0 else 0.0
            )
            table.append({
                "method": m,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "n_discoveries": len(discoveries),
                "n_truths": len(truths),
            })

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _echo_config(outdir, args, {
        "dataset": "demo" if args.demo else str(args.dataset),
        "response": response,
        "subsample_frac": args.subsample_frac,
        "repeats": args.repeats,
        "methods": list(methods),
        "n_pairs_skipped": n_skipped,
    })
    frame = pd.DataFrame(table, columns=[
        "method", "precision", "recall", "f1", "n_discoveries", "n_truths",
    ])
    frame.to_csv(outdir / "validation.csv", index=False)
    if n_skipped:
        print(f"skipped {n_skipped} rank-deficient holdout pairs", file=sys.stderr)
    agg = frame.groupby("method", sort=True).mean(numeric_only=True)
    print(agg.to_string())
    print(f"wrote validation: {outdir / 'validation.csv'}")
    return 0


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_common(parser, args)
    try:
        if args.mode == "simulate":
            return cmd_simulate(parser, args)
        if args.mode == "analyze":
            return cmd_analyze(parser, args)
        return cmd_validate(parser, args)
    except (CliError, EmptySelectionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
