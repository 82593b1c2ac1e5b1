"""Acceptance gate: one test per shipping criterion, at the pinned tolerances.

Every test prints a single "[criterion N] PASS|FAIL" verdict line (visible in
captured output on failure; the -v test status carries the same verdict for
passing runs).  The Monte-Carlo campaigns behind the distributional criteria
are expensive, so they are computed once per session in module fixtures and
shared: the sigma=2 campaign serves criteria 1, 3, 4, 5 and 10.

Criteria 4 and 10 are expected to fail: the conditioned-on-everything MLE
trades away most of the span(design) information at the default randomization
share, which widens its intervals well past 1.5x naive on these correlated
designs.  See the README's "Known behavior" section; the failures are kept
loud on purpose.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pandas as pd
import pytest

import test_selective_mle as mle_oracles
from selint.cli import main as cli_main
from selint.selective_mle import (
    build_mapping,
    log_jacobian,
    reduce_gaussians,
    selective_mle_and_fisher,
)
from selint.sim_harness import (
    preset_setting,
    records_frame,
    run_replications,
    summarize,
)


def _verdict(num: int, ok: bool, detail: str) -> str:
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    return line


def _campaign(setting):
    start = time.perf_counter()
    records = run_replications(setting)
    elapsed = time.perf_counter() - start
    metrics, _ = summarize(records, alpha=setting.alpha, t0=setting.t0)
    return dict(
        records=records,
        frame=records_frame(records),
        metrics=metrics.set_index("method"),
        elapsed=elapsed,
    )


@pytest.fixture(scope="module")
def run_sigma2():
    return _campaign(preset_setting(1, sigma=2.0, replications=200, seed=1202))


@pytest.fixture(scope="module")
def run_sigma05():
    return _campaign(preset_setting(
        1, sigma=0.5, replications=200, seed=1205, methods=("selective",)
    ))


@pytest.fixture(scope="module")
def run_sigma4():
    return _campaign(preset_setting(
        1, sigma=4.0, replications=200, seed=1204,
        methods=("selective", "naive"),
    ))


@pytest.fixture(scope="module")
def run_setting4():
    return _campaign(preset_setting(
        4, s_inter=20, replications=50, seed=1420,
        methods=("selective", "split"),
    ))


# ---------------------------------------------------------------------------
# 1. selective pivots are uniform at both noise levels, within budget
# ---------------------------------------------------------------------------

def test_criterion_01_pivot_validity(run_sigma2, run_sigma05):
    ks2 = float(run_sigma2["metrics"].loc["selective", "ks_pivot"])
    ks05 = float(run_sigma05["metrics"].loc["selective", "ks_pivot"])
    runtime = run_sigma2["elapsed"] + run_sigma05["elapsed"]
    ok = ks2 <= 0.06 and ks05 <= 0.06 and runtime <= 600.0
    line = _verdict(
        1, ok,
        f"selective KS sigma=2: {ks2:.4f}, sigma=0.5: {ks05:.4f} "
        f"(bound 0.06); runtime {runtime:.0f}s (bound 600s)",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 2. naive pivots are detectably non-uniform at high noise
# ---------------------------------------------------------------------------

def test_criterion_02_naive_invalidity(run_sigma4):
    ks_naive = float(run_sigma4["metrics"].loc["naive", "ks_pivot"])
    ks_sel = float(run_sigma4["metrics"].loc["selective", "ks_pivot"])
    ok = ks_naive >= ks_sel + 0.03
    line = _verdict(
        2, ok,
        f"naive KS {ks_naive:.4f} vs selective {ks_sel:.4f} "
        f"(need gap >= 0.03)",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 3. data splitting: valid when feasible, infeasible under dense signals
# ---------------------------------------------------------------------------

def test_criterion_03_split_validity_and_breakdown(run_sigma2, run_setting4):
    ks_split = float(run_sigma2["metrics"].loc["split", "ks_pivot"])

    frame = run_setting4["frame"]
    split_rows = frame[frame["method"] == "split"]
    infeasible_reps = split_rows[
        split_rows["status"].str.startswith("infeasible")
    ]["rep"].nunique()

    sel_rows = frame[frame["method"] == "selective"]
    nonempty = sorted(sel_rows[sel_rows["n_selected"] > 0]["rep"].unique())
    reported = {
        rep
        for rep in nonempty
        if np.isfinite(
            sel_rows[(sel_rows["rep"] == rep) & (sel_rows["status"] == "ok")][
                "p_value"
            ]
        ).any()
    }
    missing = [rep for rep in nonempty if rep not in reported]

    ok = ks_split <= 0.06 and infeasible_reps >= 1 and not missing
    line = _verdict(
        3, ok,
        f"split KS {ks_split:.4f} (bound 0.06); infeasible split reps "
        f"{infeasible_reps} (need >= 1); selective silent on reps {missing}",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 4. CI length ordering across methods
# ---------------------------------------------------------------------------

def test_criterion_04_ci_ordering(run_sigma2):
    mean_ci = run_sigma2["metrics"]["mean_ci_length"]
    sel, nai, spl = (
        float(mean_ci["selective"]),
        float(mean_ci["naive"]),
        float(mean_ci["split"]),
    )
    ok = sel < spl and sel <= 1.5 * nai
    line = _verdict(
        4, ok,
        f"mean CI selective {sel:.3f}, naive {nai:.3f}, split {spl:.3f}; "
        f"need selective < split and <= 1.5x naive ({1.5 * nai:.3f})",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 5. selective CIs cover the projected target at nominal rate
# ---------------------------------------------------------------------------

def test_criterion_05_coverage(run_sigma2):
    frame = run_sigma2["frame"]
    rows = frame[
        (frame["method"] == "selective")
        & (frame["status"] == "ok")
        & np.isfinite(frame["theta_star"])
        & np.isfinite(frame["ci_lower"])
    ]
    covered = (
        (rows["ci_lower"] <= rows["theta_star"])
        & (rows["theta_star"] <= rows["ci_upper"])
    ).mean()
    n = len(rows)
    ok = n >= 1000 and abs(covered - 0.90) <= 0.04
    line = _verdict(
        5, ok,
        f"coverage {covered:.4f} over {n} intervals (need 0.90 +- 0.04, "
        f"n >= 1000)",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 6. the adjustment vanishes as the randomization grows
# ---------------------------------------------------------------------------

def test_criterion_06_no_selection_limit():
    inst = mle_oracles._instance(11)
    assert inst is not None
    stats = inst["stats"]
    mapping = build_mapping(
        inst["design"], inst["event"], stats, inst["fit"].lam,
        inst["fit"].epsilon,
    )
    naive_se = np.sqrt(stats.est_cov[0, 0])
    gaps, se_gaps = [], []
    for scale in (1e2, 1e6, 1e12):
        reduced = reduce_gaussians(
            mapping, scale * np.eye(inst["design"].q), stats.est_cov
        )
        mle, _, info = selective_mle_and_fisher(reduced, mapping, stats.xhat)
        gaps.append(abs(mle[0] - stats.theta_hat))
        se_gaps.append(abs(np.sqrt(info["cov"][0, 0]) - naive_se))
    ok = (
        gaps[0] > gaps[1] > gaps[2]
        and gaps[2] <= 1e-4
        and se_gaps[2] <= 1e-4
    )
    line = _verdict(
        6, ok,
        f"|mle - unadjusted| over scales 1e2/1e6/1e12: "
        f"{gaps[0]:.2e} > {gaps[1]:.2e} > {gaps[2]:.2e} (limit <= 1e-4); "
        f"stderr gap at 1e12: {se_gaps[2]:.2e}",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 7. Laplace maximizer tracks the exact-likelihood maximizer
# ---------------------------------------------------------------------------

def test_criterion_07_exact_likelihood_oracle():
    start = time.perf_counter()
    worst = 0.0
    found = 0
    for seed in itertools.count():
        # interior instances: the Laplace-vs-exact gap decays like the
        # inverse square of the selected magnitude, so a decisive planted
        # effect keeps the whole vector inside the 1e-3 band
        inst = mle_oracles._exact_instance(seed, signal=4.0)
        if inst is None:
            continue
        exact, laplace = mle_oracles.exact_mle_for_instance(inst)
        worst = max(worst, float(np.max(np.abs(exact - laplace))))
        found += 1
        if found == 20:
            break
    runtime = time.perf_counter() - start
    ok = worst <= 1e-3 and runtime <= 60.0
    line = _verdict(
        7, ok,
        f"max |Laplace - exact| over 20 instances: {worst:.2e} "
        f"(bound 1e-3); runtime {runtime:.1f}s (bound 60s)",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 8. analytic derivatives of the optimizer objective
# ---------------------------------------------------------------------------

def test_criterion_08_derivative_suites():
    h = 1e-5
    worst_grad = worst_hess = worst_barrier = 0.0
    for seed in range(50):
        sizes = [[2, 1, 3], [2, 2], [3, 1, 1, 2], [1, 1], [2, 3]][seed % 5]
        mapping = mle_oracles._synthetic_mapping(seed, sizes)
        m = len(sizes)
        rng = np.random.default_rng(900 + seed)
        g = rng.uniform(0.8, 2.5, size=m)
        _, grad, hess = log_jacobian(g, mapping)

        mean = rng.uniform(0.5, 4.0, size=m)
        prec = np.diag(1.0 / rng.uniform(0.5, 2.0, size=m))

        def objective(gv):
            val, _, _ = log_jacobian(gv, mapping)
            return (
                0.5 * (gv - mean) @ prec @ (gv - mean)
                - val
                + np.sum(np.log1p(1.0 / gv))
            )

        barrier_grad = prec @ (g - mean) - grad - 1.0 / (g * (1.0 + g))
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            vp, gp, _ = log_jacobian(g + e, mapping)
            vm, gm, _ = log_jacobian(g - e, mapping)
            fd = (vp - vm) / (2 * h)
            worst_grad = max(
                worst_grad, abs(fd - grad[j]) / max(abs(grad[j]), 1e-8)
            )
            fd_col = (gp - gm) / (2 * h)
            denom = np.maximum(np.abs(hess[:, j]), 1e-8)
            worst_hess = max(
                worst_hess, float(np.max(np.abs(fd_col - hess[:, j]) / denom))
            )
            fd_obj = (objective(g + e) - objective(g - e)) / (2 * h)
            worst_barrier = max(
                worst_barrier,
                abs(fd_obj - barrier_grad[j]) / max(abs(barrier_grad[j]), 1e-8),
            )
    ok = max(worst_grad, worst_hess, worst_barrier) <= 1e-5
    line = _verdict(
        8, ok,
        f"worst relative FD error over 50 instances - logdet grad: "
        f"{worst_grad:.2e}, hess: {worst_hess:.2e}, barrier grad: "
        f"{worst_barrier:.2e} (bound 1e-5)",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 9. the affine selection mapping reproduces the randomization exactly
# ---------------------------------------------------------------------------

def test_criterion_09_kkt_suite():
    worst_recon = 0.0
    worst_sub = 0.0
    found = 0
    for seed in itertools.count():
        inst = mle_oracles._instance(
            seed,
            n=60 + 10 * (seed % 3),
            p=3 + (seed % 3),
            lam_scale=(0.6, 0.8, 1.0)[seed % 3],
        )
        if inst is None:
            continue
        mapping = build_mapping(
            inst["design"], inst["event"], inst["stats"],
            inst["fit"].lam, inst["fit"].epsilon,
        )
        rebuilt = (
            mapping.score_map @ inst["stats"].xhat
            + mapping.magnitude_map @ inst["event"].magnitudes
            + mapping.offset
        )
        worst_recon = max(
            worst_recon,
            float(np.max(np.abs(rebuilt - inst["omega"][mapping.perm]))),
        )
        for z in inst["event"].subgradients:
            worst_sub = max(worst_sub, float(np.linalg.norm(z)))
        found += 1
        if found == 100:
            break
    ok = worst_recon <= 1e-8 and worst_sub <= 1 + 1e-10
    line = _verdict(
        9, ok,
        f"worst omega reconstruction {worst_recon:.2e} (bound 1e-8); "
        f"worst inactive subgradient norm {worst_sub:.12f} "
        f"(bound 1 + 1e-10) over {found} instances",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 10. discovery quality relative to the baselines
# ---------------------------------------------------------------------------

def test_criterion_10_f1_direction(run_sigma2):
    f1 = run_sigma2["metrics"]["mean_f1"]
    sel, nai, spl = (
        float(f1["selective"]),
        float(f1["naive"]),
        float(f1["split"]),
    )
    ok = sel >= nai - 0.02 and sel >= spl
    line = _verdict(
        10, ok,
        f"mean F1 selective {sel:.3f}, naive {nai:.3f}, split {spl:.3f}; "
        f"need selective >= naive - 0.02 and >= split",
    )
    assert ok, line


# ---------------------------------------------------------------------------
# 11. simulate runs are byte-reproducible
# ---------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    args = [
        "--mode", "simulate", "--setting", "1", "--sigma", "2",
        "--reps", "3", "--seed", "7",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli_main(args + ["--out", str(out1)]) == 0
    assert cli_main(args + ["--out", str(out2)]) == 0
    same = {
        name: (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for name in ("replications.csv", "metrics.csv", "ecdf.csv")
    }
    ok = all(same.values())
    line = _verdict(11, ok, f"byte-equal reruns: {same}")
    assert ok, line
