"""B-spline basis expansion and grouped design assembly for additive models.

Each feature column becomes a group of design columns: nonlinear features get a
degree-d B-spline expansion on a clamped knot vector with the leading
(intercept-like) basis function dropped, linear features pass through as a
single column.  The grouped layout is what the group-penalized solver and the
downstream inference consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BasisConfig:
    """Knobs for the per-feature expansion.

    df is the number of retained columns per nonlinear feature; the full
    clamped basis has df + 1 functions and the first one is dropped, so the
    retained columns plus the dropped function form a partition of unity.
    """

    degree: int = 2
    df: int = 2
    knot_rule: str = "quantile"  # or "uniform"

    def __post_init__(self):
        if self.df < 1 or self.degree < 1:
            raise ValueError(
                f"invalid basis size: degree={self.degree}, df={self.df}"
            )
        if self.df < self.degree:
            raise ValueError(
                "invalid basis size: df >= degree required so that exactly one "
                f"intercept function is dropped (degree={self.degree}, df={self.df})"
            )
        if self.knot_rule not in ("quantile", "uniform"):
            raise ValueError(f"unknown knot rule: {self.knot_rule!r}")


def _knot_vector(x: np.ndarray, degree: int, df: int, rule: str) -> np.ndarray:
    a, b = float(np.min(x)), float(np.max(x))
    n_interior = max(df - degree, 0)
    if n_interior > 0:
        if rule == "quantile":
            probs = np.arange(1, n_interior + 1) / (n_interior + 1)
            interior = np.quantile(x, probs)
        else:
            interior = np.linspace(a, b, n_interior + 2)[1:-1]
    else:
        interior = np.empty(0)
    return np.r_[np.full(degree + 1, a), interior, np.full(degree + 1, b)]


def bspline_basis(
    x: np.ndarray,
    degree: int = 2,
    df: int = 2,
    knots: np.ndarray | None = None,
    knot_rule: str = "quantile",
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the df retained B-spline basis columns at the points x.

    Returns (matrix, knot_vector).  When knots is None the clamped knot vector
    is built from x (boundary at the data range, interior knots by knot_rule).
    Points outside the boundary are clamped to it.
    """
    if df < 1 or degree < 1 or df < degree:
        raise ValueError(f"invalid basis size: degree={degree}, df={df}")
    x = np.asarray(x, dtype=float)
    if knots is None:
        knots = _knot_vector(x, degree, df, knot_rule)
    a, b = knots[0], knots[-1]
    xc = np.clip(x, a, b)
    full = BSpline.design_matrix(xc, knots, degree, extrapolate=False).toarray()
    return full[:, 1:], knots


@dataclass
class GroupedDesign:
    """Column-grouped design matrix plus the metadata needed to rebuild it.

    groups[j] is the slice of columns belonging to feature j; knots[j] is the
    fitted knot vector for nonlinear features (None for linear ones).
    """

    matrix: np.ndarray
    groups: list[slice]
    group_sizes: np.ndarray
    kinds: list[str]
    raw_features: np.ndarray
    knots: list[np.ndarray | None]
    config: BasisConfig
    feature_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def q(self) -> int:
        return self.matrix.shape[1]

    @property
    def p(self) -> int:
        return len(self.groups)


def build_design(
    X: np.ndarray,
    kinds: list[str],
    config: BasisConfig = BasisConfig(),
    feature_names: list[str] | None = None,
) -> GroupedDesign:
    """Assemble the grouped design matrix for the additive model.

    X is n x p raw features; kinds[j] is "nonlinear" (spline group of size df)
    or "linear" (single raw column).  Constant columns and designs with
    n <= total columns are rejected.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if len(kinds) != p:
        raise ValueError("kinds must have one entry per feature")
    names = feature_names if feature_names is not None else [f"x{j}" for j in range(p)]

    cols, groups, sizes, knot_list = [], [], [], []
    start = 0
    for j in range(p):
        xj = X[:, j]
        if np.max(xj) - np.min(xj) <= 0:
            raise ValueError(f"degenerate feature: {names[j]} is constant")
        if kinds[j] == "nonlinear":
            Bj, kn = bspline_basis(
                xj, degree=config.degree, df=config.df, knot_rule=config.knot_rule
            )
            cols.append(Bj)
            knot_list.append(kn)
            size = config.df
        elif kinds[j] == "linear":
            cols.append(xj[:, None])
            knot_list.append(None)
            size = 1
        else:
            raise ValueError(f"unknown feature kind: {kinds[j]!r}")
        groups.append(slice(start, start + size))
        sizes.append(size)
        start += size

    matrix = np.hstack(cols)
    q = matrix.shape[1]
    if n <= q:
        raise ValueError(f"over-parameterized design: n={n} <= q={q}")
    return GroupedDesign(
        matrix=matrix,
        groups=groups,
        group_sizes=np.asarray(sizes),
        kinds=list(kinds),
        raw_features=X,
        knots=knot_list,
        config=config,
        feature_names=list(names),
    )


def design_matrix_at(
    design: GroupedDesign, Xnew: np.ndarray
) -> tuple[np.ndarray, int]:
    """Evaluate the fitted expansion at new feature rows.

    Nonlinear features are clamped to their fitted boundary knots; the number
    of clamped values is returned alongside the matrix.
    """
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim == 1:
        Xnew = Xnew[None, :]
    if Xnew.shape[1] != design.p:
        raise ValueError(f"expected {design.p} features, got {Xnew.shape[1]}")

    cols = []
    n_clamped = 0
    for j in range(design.p):
        xj = Xnew[:, j]
        if design.kinds[j] == "nonlinear":
            kn = design.knots[j]
            n_clamped += int(np.sum((xj < kn[0]) | (xj > kn[-1])))
            Bj, _ = bspline_basis(
                xj, degree=design.config.degree, df=design.config.df, knots=kn
            )
            cols.append(Bj)
        else:
            cols.append(xj[:, None])
    return np.hstack(cols), n_clamped
