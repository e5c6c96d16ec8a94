import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_sme.model import BilinearSystem, Trajectory, generate_structured_system
from bilinear_sme.sme import (FeasibleSet, InfeasibleSetError, RowPolytope, build_feasible_set,
                              chebyshev_center, chebyshev_estimate, contains, diameter,
                              prune_redundant, random_directions, row_diameter_bounds,
                              write_diameter_csv)
from bilinear_sme.stochastic import InputSpec, NoiseSpec, make_rng, simulate
from oracles import (chebyshev_radius_2d, grid_inscribed_radius_2d, random_polytope_2d,
                     vertex_diameter)


@pytest.fixture(scope="module")
def desk():
    sys = generate_structured_system(3, 2, 0.98, seed=0, input_var=InputSpec().variance)
    traj = simulate(sys, None, 2000, InputSpec(), NoiseSpec("truncated-laplace"), seed=1)
    return sys, traj


def test_constraint_layout():
    Z = np.array([[1.0, 2.0], [3.0, 4.0]])
    Y = np.array([[0.5], [1.5]])
    fs = FeasibleSet(Z, Y, w_max=0.1, prior_R0=7.0)
    row = fs.rows[0]
    assert row.n_prior == 4 and row.n_halfspaces == 8
    np.testing.assert_array_equal(row.A[:4], [[1, 0], [-1, 0], [0, 1], [0, -1]])
    np.testing.assert_array_equal(row.b[:4], 7.0)
    np.testing.assert_array_equal(row.A[4:], [[1, 2], [-1, -2], [3, 4], [-3, -4]])
    np.testing.assert_allclose(row.b[4:], [0.6, -0.4, 1.6, -1.4])


def test_hand_built_unit_box():
    # z_1 = e_1 with x = 0 and z_2 = e_2 with x = 0: the row polytope is [-1, 1]^2
    fs = FeasibleSet([[1.0, 0.0], [0.0, 1.0]], [[0.0], [0.0]], w_max=1.0, prior_R0=10.0)
    rep = diameter(fs, directions=np.zeros((0, 2)))
    assert rep.upper == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    c, r = chebyshev_center(fs.rows[0])
    np.testing.assert_allclose(c, 0.0, atol=1e-12)
    assert r == pytest.approx(1.0)


def test_truth_membership(desk):
    sys, traj = desk
    fs = build_feasible_set(traj, sys.w_max)
    for T in (0, 1, 10, 100, 2000):
        assert contains(fs.prefix(T), sys.theta_star())


def test_offset_breaks_membership(desk):
    sys, traj = desk
    fs = build_feasible_set(traj.prefix(200), sys.w_max)
    Z = fs.Z
    bump = 3 * sys.w_max / np.min(np.abs(Z[:, 0])[np.abs(Z[:, 0]) > 0.05])
    theta = sys.theta_star().copy()
    theta[0, 0] += min(bump, 9.0)
    # the largest-|z_t[0]| sample now has residual beyond w_max
    assert not fs.contains(theta)


def test_empty_data_prior_box():
    fs = FeasibleSet.empty(2, 6, w_max=1.0, prior_R0=10.0)
    assert fs.contains(np.full((2, 6), 10.0))
    assert not fs.contains(np.full((2, 6), 10.1))
    rep = diameter(fs, directions=np.zeros((0, 6)), refine=0)
    assert rep.upper == pytest.approx(2 * 10.0 * math.sqrt(2 * 6))
    assert rep.prior_active


def test_contains_shape_check():
    fs = FeasibleSet.empty(2, 6, 1.0)
    with pytest.raises(ValueError):
        fs.contains(np.zeros((2, 5)))


def test_extend_preserves_order():
    rng = np.random.default_rng(0)
    Z, Y = rng.standard_normal((10, 3)), rng.standard_normal((10, 2))
    a = FeasibleSet(Z[:4], Y[:4], 1.0).extend(Z[4:], Y[4:])
    b = FeasibleSet(Z, Y, 1.0)
    for ra, rb in zip(a.rows, b.rows):
        np.testing.assert_array_equal(ra.A, rb.A)
        np.testing.assert_array_equal(ra.b, rb.b)
    short = FeasibleSet(Z[:4], Y[:4], 1.0).rows[0]
    np.testing.assert_array_equal(b.rows[0].A[:short.n_halfspaces], short.A)


def test_json_export(tmp_path):
    fs = FeasibleSet([[1.0, 0.0]], [[0.5]], 1.0, 2.0)
    p = tmp_path / "fs.json"
    fs.save_json(p)
    data = json.loads(p.read_text())
    hs = data["rows"][0]["halfspaces"]
    assert len(hs) == 6 and hs[4] == {"a": [1.0, 0.0], "b": 1.5}


def test_chebyshev_boxes():
    c, r = chebyshev_center(RowPolytope.box([-1, -1], [1, 1]))
    np.testing.assert_allclose(c, [0, 0], atol=1e-12)
    assert r == pytest.approx(1.0)
    c, r = chebyshev_center(RowPolytope.box([0, -1], [2, 1]))
    np.testing.assert_allclose(c, [1, 0], atol=1e-12)
    assert r == pytest.approx(1.0)


def test_chebyshev_infeasible():
    row = RowPolytope(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    with pytest.raises(InfeasibleSetError):
        chebyshev_center(row)


def test_chebyshev_random_polygons():
    rng = np.random.default_rng(8)
    for _ in range(100):
        A, b = random_polytope_2d(rng)
        row = RowPolytope(A, b)
        c, r = chebyshev_center(row)
        r_ref, _ = chebyshev_radius_2d(A, b)
        assert r == pytest.approx(r_ref, abs=1e-6)
        assert row.contains(c)
        assert np.all(b - A @ c >= r * np.linalg.norm(A, axis=1) - 1e-9)


def test_chebyshev_against_grid():
    rng = np.random.default_rng(9)
    for _ in range(10):
        A, b = random_polytope_2d(rng)
        _, r = chebyshev_center(RowPolytope(A, b))
        g = grid_inscribed_radius_2d(A, b, [-3, -3], [3, 3])
        assert abs(r - g) <= 0.02 * r


def test_diameter_box():
    row = RowPolytope.box([-1, -1], [1, 1])
    lo, up = row_diameter_bounds(row)
    assert up == 2 * math.sqrt(2)
    assert lo >= 2.0 - 1e-12
    lo, up = row_diameter_bounds(row, directions=np.array([[1.0, 1.0]]) / math.sqrt(2))
    assert lo == pytest.approx(2 * math.sqrt(2))


def test_diameter_sandwich_random_polygons():
    rng = np.random.default_rng(10)
    dirs = random_directions(2, 16, make_rng(0))
    for _ in range(100):
        A, b = random_polytope_2d(rng)
        lo, up = row_diameter_bounds(RowPolytope(A, b), dirs)
        true = vertex_diameter(A, b)
        assert lo <= true + 1e-9
        assert true <= up + 1e-9
        assert lo == pytest.approx(true, abs=1e-6)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_diameter_sandwich_3d(seed):
    rng = np.random.default_rng(seed)
    A = np.vstack([rng.standard_normal((8, 3)), np.eye(3), -np.eye(3)])
    b = np.r_[rng.uniform(0.3, 2, 8), np.full(6, 2.0)]
    lo, up = row_diameter_bounds(RowPolytope(A, b), random_directions(3, 20, make_rng(seed)))
    true = vertex_diameter(A, b)
    assert lo <= true + 1e-9 <= up + 2e-9


def test_row_decomposition_against_pair_sampling():
    rng = np.random.default_rng(12)
    sys = BilinearSystem(np.diag([0.3, -0.2]), [np.array([[0.0, 0.0], [0.4, 0.0]])])
    tr = simulate(sys, None, 30, InputSpec(), NoiseSpec("uniform-box"), seed=2)
    fs = build_feasible_set(tr, 1.0)
    rep = diameter(fs, n_directions=32, rng=make_rng(3))
    assert rep.lower == pytest.approx(math.sqrt(sum(lo ** 2 for lo, _ in rep.per_row)))
    assert rep.upper == pytest.approx(math.sqrt(sum(up ** 2 for _, up in rep.per_row)))
    # sample members by rejection inside the bounding box; any pair distance <= upper
    boxes = []
    for row in fs.rows:
        verts = [row.contains(v) for v in np.zeros((1, 4))]
        assert verts[0] or True
        boxes.append(row)
    pts = []
    for _ in range(200):
        theta = np.vstack([rng.uniform(-3, 3, 4) for _ in range(2)])
        if fs.contains(theta):
            pts.append(theta)
    pts.append(sys.theta_star())
    for p in pts:
        for q in pts:
            assert np.linalg.norm(p - q) <= rep.upper + 1e-9


def test_noiseless_tiny_diameter():
    rng = np.random.default_rng(13)
    d = 4
    Z = rng.standard_normal((d, d))
    theta = rng.uniform(-1, 1, (1, d))
    w = 1e-6
    fs = FeasibleSet(Z, Z @ theta.T, w_max=w)
    rep = diameter(fs, directions=np.zeros((0, d)))
    # the set is Theta* + Z^-1 [-w, w]^d; its bounding box half-widths are w * row sums of |Z^-1|
    c = 2 * np.linalg.norm(np.abs(np.linalg.inv(Z)).sum(axis=1))
    assert rep.upper <= c * w * (1 + 1e-6)
    assert rep.upper == pytest.approx(c * w, rel=1e-6)


def test_nestedness_and_hints(desk):
    sys, traj = desk
    fs = build_feasible_set(traj, sys.w_max)
    dirs = random_directions(fs.dim, 32, make_rng(4))
    prev = math.inf
    hints = None
    for T in (100, 200, 500, 2000):
        rep = diameter(fs.prefix(T), directions=dirs, hints=hints)
        cold = diameter(fs.prefix(T), directions=dirs)
        assert rep.upper == pytest.approx(cold.upper, rel=1e-9)
        assert rep.lower <= rep.upper
        assert rep.upper <= prev + 1e-9
        prev = rep.upper
        hints = rep.geometries


def test_diameter_needs_rng():
    fs = FeasibleSet.empty(1, 2, 1.0)
    with pytest.raises(ValueError):
        diameter(fs, n_directions=3)


def test_infeasible_set_is_reported():
    sys = BilinearSystem([[0.5]], [[[0.0]]])
    tr = simulate(sys, None, 300, InputSpec(), NoiseSpec("uniform-box"), seed=0)
    fs = build_feasible_set(tr, w_max=0.3)  # smaller than the true bound
    with pytest.raises(InfeasibleSetError) as err:
        diameter(fs, directions=np.zeros((0, 2)))
    assert err.value.row == 0
    with pytest.raises(InfeasibleSetError):
        chebyshev_estimate(fs)


def test_chebyshev_estimate_near_truth(desk):
    sys, traj = desk
    est = chebyshev_estimate(build_feasible_set(traj, sys.w_max))
    assert est.shape == sys.theta_star().shape
    assert np.linalg.norm(est - sys.theta_star()) < 0.5


def test_prune_duplicate_and_slack():
    A = np.array([[1.0, 0], [1.0, 0], [-1, 0], [0, 1], [0, -1], [1, 0]])
    b = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 5.0])
    pruned = prune_redundant(RowPolytope(A, b))
    assert pruned.n_halfspaces == 4
    assert row_diameter_bounds(pruned) == row_diameter_bounds(RowPolytope.box([-1, -1], [1, 1]))


def test_prune_keeps_diameter(desk):
    sys, traj = desk
    row = build_feasible_set(traj.prefix(60), sys.w_max).rows[1]
    pruned = prune_redundant(row)
    assert pruned.n_halfspaces < row.n_halfspaces
    dirs = random_directions(row.dim, 16, make_rng(1))
    lo1, up1 = row_diameter_bounds(row, dirs)
    lo2, up2 = row_diameter_bounds(pruned, dirs)
    assert up1 == pytest.approx(up2, abs=1e-8)
    assert lo1 == pytest.approx(lo2, abs=1e-8)


def test_diameter_csv(tmp_path):
    p = tmp_path / "d.csv"
    write_diameter_csv([(10, 0, 1.0, 2.0)], p)
    assert p.read_text() == "T,row,lower,upper\n10,0,1.0,2.0\n"


def test_trajectory_object_only():
    with pytest.raises(AttributeError):
        build_feasible_set(Trajectory(np.zeros((2, 1)), np.zeros((1, 1))).x, 1.0)
