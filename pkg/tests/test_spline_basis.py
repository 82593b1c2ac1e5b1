import numpy as np
import pytest

from selint.spline_basis import (
    BasisConfig,
    bspline_basis,
    build_design,
    design_matrix_at,
)


# ---------------------------------------------------------------------------
# Independent oracle: naive recursive Cox-de Boor evaluation, one point and
# one basis function at a time.  Kept deliberately dumb.
# ---------------------------------------------------------------------------

def _cox_de_boor(x, k, i, t):
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        return 0.0
    left = 0.0
    if t[i + k] > t[i]:
        left = (x - t[i]) / (t[i + k] - t[i]) * _cox_de_boor(x, k - 1, i, t)
    right = 0.0
    if t[i + k + 1] > t[i + 1]:
        right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * _cox_de_boor(
            x, k - 1, i + 1, t
        )
    return left + right


def _oracle_knots(x, degree, df):
    a, b = float(np.min(x)), float(np.max(x))
    n_interior = max(df - degree, 0)
    if n_interior > 0:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(x, probs)
    else:
        interior = np.array([])
    return np.r_[np.full(degree + 1, a), interior, np.full(degree + 1, b)]


def _oracle_full_basis(x_eval, degree, t):
    n_basis = len(t) - degree - 1
    out = np.zeros((len(x_eval), n_basis))
    for r, xv in enumerate(x_eval):
        for i in range(n_basis):
            out[r, i] = _cox_de_boor(xv, degree, i, t)
    return out


def test_matches_recursive_oracle():
    rng = np.random.default_rng(7)
    for degree, df in [(1, 1), (2, 2), (2, 3), (3, 5), (2, 6)]:
        x = rng.uniform(-1.3, 2.7, size=120)
        B, knots = bspline_basis(x, degree=degree, df=df)
        np.testing.assert_allclose(knots, _oracle_knots(x, degree, df), atol=1e-14)
        # evaluate strictly inside the boundary so the half-open degree-0
        # convention of the oracle cannot disagree at the right endpoint
        inner = (x > np.min(x)) & (x < np.max(x))
        full = _oracle_full_basis(x[inner], degree, knots)
        assert B.shape == (120, df)
        np.testing.assert_allclose(B[inner], full[:, 1:], atol=1e-12)


def test_linear_ramp_degree1_df1():
    x = np.linspace(0.0, 1.0, 11)
    B, _ = bspline_basis(x, degree=1, df=1)
    assert B.shape == (11, 1)
    np.testing.assert_allclose(B[:, 0], x, atol=1e-12)


def test_partition_of_unity_with_dropped_column():
    # the dropped intercept function plus the retained df columns sum to one
    rng = np.random.default_rng(21)
    for degree, df in [(2, 2), (2, 4), (3, 3)]:
        x = rng.normal(size=300)
        B, knots = bspline_basis(x, degree=degree, df=df)
        dropped = _oracle_full_basis(x, degree, knots)[:, 0]
        inner = (x > np.min(x)) & (x < np.max(x))
        np.testing.assert_allclose(
            (B.sum(axis=1) + dropped)[inner], 1.0, atol=1e-10
        )
        # retained columns alone never exceed one and hit one at the maximum
        assert np.all(B.sum(axis=1) <= 1 + 1e-10)
        assert abs(B[np.argmax(x)].sum() - 1.0) < 1e-10


def test_right_boundary_value():
    x = np.linspace(0.0, 2.0, 50)
    B, _ = bspline_basis(x, degree=2, df=2)
    # at the right boundary the last basis function equals one
    assert abs(B[-1, -1] - 1.0) < 1e-12
    assert abs(B[-1, :-1].sum()) < 1e-12


def test_local_support():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 400)
    degree, df = 2, 6
    B, knots = bspline_basis(x, degree=degree, df=df)
    # column i of the full basis is supported on [t_i, t_{i+degree+1}];
    # retained column j corresponds to full index j+1
    for j in range(df):
        lo, hi = knots[j + 1], knots[j + 1 + degree + 1]
        outside = (x < lo - 1e-12) | (x > hi + 1e-12)
        assert np.all(np.abs(B[outside, j]) < 1e-12)


def test_build_design_shapes_and_groups():
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(200, 20))
    design = build_design(X, kinds=["nonlinear"] * 20, config=BasisConfig(degree=2, df=2))
    assert design.matrix.shape == (200, 40)
    assert list(design.group_sizes) == [2] * 20
    assert sum(design.group_sizes) == design.matrix.shape[1]
    # group slices are contiguous and ordered
    start = 0
    for j, sl in enumerate(design.groups):
        assert sl.start == start and sl.stop == start + design.group_sizes[j]
        start = sl.stop
    np.testing.assert_allclose(design.raw_features, X)


def test_mixed_linear_nonlinear_layout():
    rng = np.random.default_rng(13)
    X = rng.uniform(size=(150, 13))
    kinds = ["nonlinear"] * 7 + ["linear"] * 6
    design = build_design(X, kinds=kinds, config=BasisConfig(degree=2, df=2))
    assert design.matrix.shape == (150, 7 * 2 + 6)
    assert list(design.group_sizes) == [2] * 7 + [1] * 6
    # linear features pass through untouched
    for j in range(7, 13):
        np.testing.assert_allclose(design.matrix[:, design.groups[j]][:, 0], X[:, j])


def test_constant_feature_rejected():
    X = np.ones((50, 3))
    X[:, 0] = np.linspace(0, 1, 50)
    X[:, 2] = np.linspace(0, 2, 50)
    with pytest.raises(ValueError, match="degenerate feature"):
        build_design(X, kinds=["nonlinear"] * 3, config=BasisConfig())


def test_overparameterized_design_rejected():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(30, 20))
    with pytest.raises(ValueError, match="over-parameterized"):
        build_design(X, kinds=["nonlinear"] * 20, config=BasisConfig(degree=2, df=2))


def test_invalid_basis_size_rejected():
    x = np.linspace(0, 1, 40)
    with pytest.raises(ValueError, match="invalid basis size"):
        bspline_basis(x, degree=2, df=0)
    with pytest.raises(ValueError, match="invalid basis size"):
        bspline_basis(x, degree=3, df=2)


def test_transform_clamps_out_of_range():
    rng = np.random.default_rng(17)
    X = rng.uniform(0.2, 0.8, size=(100, 2))
    design = build_design(X, kinds=["nonlinear", "linear"], config=BasisConfig())
    Xnew = np.array([[0.0, 5.0], [0.5, 1.0], [1.0, -2.0]])
    Psi, n_clamped = design_matrix_at(design, Xnew)
    assert Psi.shape == (3, design.matrix.shape[1])
    # two nonlinear values fall outside the fitted range; linear ones never clamp
    assert n_clamped == 2
    lo_row, _ = design_matrix_at(design, np.array([[X[:, 0].min(), 0.0]]))
    np.testing.assert_allclose(Psi[0, design.groups[0]], lo_row[0, design.groups[0]])
    # in-range points reproduce the training expansion
    Psi_train, c = design_matrix_at(design, X)
    assert c == 0
    np.testing.assert_allclose(Psi_train, design.matrix, atol=1e-12)
