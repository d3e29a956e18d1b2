import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from oracles import (hs_vertices, lifted_feasible, lp_support, margin, random_polytope,
                     vertex_support)
from rcigrid.polytope import (Box, DimensionMismatchError, DimensionTooHighError,
                              EmptyPolytopeError, HPolytope, UnboundedError,
                              contains_scaled, convex_hull, intersect, linear_image,
                              minkowski_sum, polygon, pontryagin_diff, product,
                              product_all, project, read_csv, reduce, sample_uniform,
                              support, supports, vertices, write_csv)


def box(*bounds):
    return Box.symmetric(bounds).to_hpolytope()


def same_set(P, Q, dirs):
    hp = np.array([support(P, d) for d in dirs])
    hq = np.array([support(Q, d) for d in dirs])
    return np.max(np.abs(hp - hq))


# ---------------------------------------------------------------- construction

def test_rows_are_normalized_and_zero_rows_dropped():
    P = HPolytope([[3.0, 4.0], [0.0, 0.0], [-1.0, 0.0]], [5.0, 1.0, 2.0])
    assert P.nrows == 2
    np.testing.assert_allclose(np.linalg.norm(P.A, axis=1), 1.0)
    np.testing.assert_allclose(P.b, [1.0, 2.0])


def test_zero_row_with_negative_offset_is_empty_marker():
    P = HPolytope([[0.0, 0.0], [1.0, 0.0]], [-1.0, 1.0])
    assert P.is_empty_marker and P.is_empty


def test_row_count_mismatch():
    with pytest.raises(ValueError):
        HPolytope(np.eye(2), [1.0])


def test_box_roundtrip_and_bounds():
    B = Box([-1.0, 0.0], [2.0, 3.0])
    P = B.to_hpolytope()
    assert P.nrows == 4
    lo, hi = P.box_bounds
    np.testing.assert_allclose(lo, B.lower)
    np.testing.assert_allclose(hi, B.upper)
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


def test_infeasible_rows_detected():
    P = HPolytope([[1.0, 1.0], [-1.0, -1.0]], [0.0, -1.0])
    assert not P.is_empty_marker and P.is_empty
    assert reduce(P).is_empty_marker


# ---------------------------------------------------------------- support

def test_support_box():
    P = box(1, 1)
    assert support(P, [1, 0]) == pytest.approx(1.0)
    assert support(P, [1, 1]) == pytest.approx(2.0)


def test_support_errors():
    with pytest.raises(UnboundedError):
        support(HPolytope([[1.0, 0.0]], [1.0]), [0.0, 1.0])
    with pytest.raises(EmptyPolytopeError):
        support(HPolytope.empty(2), [1.0, 0.0])


def test_support_matches_vertex_oracle():
    rng = np.random.default_rng(1)
    for _ in range(30):
        A, b = random_polytope(rng, 2)
        P = HPolytope(A, b)
        V = hs_vertices(A, b)
        for d in rng.normal(size=(10, 2)):
            assert support(P, d) == pytest.approx(vertex_support(V, d), abs=1e-8)
        # batched path (vertex cache) agrees with the LP path
        D = rng.normal(size=(10, 2))
        np.testing.assert_allclose(supports(P, D), [support(P, d) for d in D], atol=1e-9)


# ---------------------------------------------------------------- reduce

def test_reduce_duplicated_row():
    A = np.vstack([np.eye(2), -np.eye(2), [[1.0, 0.0]]])
    assert reduce(HPolytope(A, [1, 1, 1, 1, 1])).nrows == 4


def test_reduce_slack_row():
    A = np.vstack([np.eye(2), -np.eye(2), [[1.0, 0.0]]])
    assert reduce(HPolytope(A, [1, 1, 1, 1, 10])).nrows == 4


def test_reduce_keeps_set_and_removes_redundancy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 4))
        A, b = random_polytope(rng, n, m=30)
        P = HPolytope(A, b)
        R = reduce(P)
        dirs = rng.normal(size=(100, n))
        assert same_set(P, R, dirs) < 1e-9
        X = rng.uniform(-2, 2, size=(1000, n))
        m0, m1 = margin(A, b, X), margin(R.A, R.b, X)
        clear = np.abs(m0) > 1e-9
        assert np.array_equal(m0[clear] <= 0, m1[clear] <= 0)
        # every kept row is necessary: dropping it enlarges the set
        for i in range(R.nrows):
            keep = [j for j in range(R.nrows) if j != i]
            res = linprog(-R.A[i], A_ub=R.A[keep], b_ub=R.b[keep],
                          bounds=[(None, None)] * n, method="highs")
            assert res.status == 3 or -res.fun > R.b[i] + 1e-9


def test_reduce_flat_set_falls_back():
    # the segment {x = 0, -1 <= y <= 1} plus a redundant row
    A = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1]]
    R = reduce(HPolytope(A, [0, 0, 1, 1, 5]))
    assert R.nrows == 4


# ---------------------------------------------------------------- set operations

def test_intersect_examples():
    P = box(1, 1)
    assert same_set(intersect(P, P), P, np.eye(2)) < 1e-12
    I1 = HPolytope([[1.0], [-1.0]], [1.0, 1.0])
    I2 = HPolytope([[1.0], [-1.0]], [3.0, -2.0])
    assert intersect(I1, I2).is_empty_marker
    with pytest.raises(DimensionMismatchError):
        intersect(I1, P)


def test_intersect_membership():
    rng = np.random.default_rng(3)
    A1, b1 = random_polytope(rng, 2)
    A2, b2 = random_polytope(rng, 2)
    b2 = b2 - 0.1 * A2[:, 0]  # shift the second set so the two overlap partially
    R = intersect(HPolytope(A1, b1), HPolytope(A2, b2))
    X = rng.uniform(-2, 2, size=(1000, 2))
    both = np.maximum(margin(A1, b1, X), margin(A2, b2, X))
    mine = margin(R.A, R.b, X)
    clear = np.abs(both) > 1e-9
    assert np.array_equal(both[clear] <= 0, mine[clear] <= 0)


def test_pontryagin_examples():
    assert same_set(pontryagin_diff(box(2, 2), box(1, 1)), box(1, 1), np.eye(2)) < 1e-12
    P = HPolytope(*random_polytope(np.random.default_rng(4), 2))
    zero = box(0, 0)
    assert same_set(pontryagin_diff(P, zero), P, np.random.default_rng(5).normal(size=(20, 2))) < 1e-9
    assert pontryagin_diff(box(1, 1), box(2, 2)).is_empty_marker


def test_pontryagin_definition_by_sampling():
    rng = np.random.default_rng(6)
    for _ in range(10):
        A, b = random_polytope(rng, 2)
        Aq, bq = random_polytope(rng, 2, box=0.3)
        bq = 0.2 * bq
        R = pontryagin_diff(HPolytope(A, b), HPolytope(Aq, bq))
        Vq = hs_vertices(Aq, bq)
        X = rng.uniform(-1.5, 1.5, size=(1000, 2))
        # x in P - Q  iff  x + q in P for every vertex q of Q
        oracle = np.max([margin(A, b, X + q) for q in Vq], axis=0)
        mine = margin(R.A, R.b, X) if not R.is_empty_marker else np.full(len(X), 1.0)
        clear = np.abs(oracle) > 1e-9
        assert np.array_equal(oracle[clear] <= 0, mine[clear] <= 0)


def test_erosion_sum_adjointness():
    rng = np.random.default_rng(7)
    A, b = random_polytope(rng, 2)
    Aq, bq = random_polytope(rng, 2, box=0.2)
    P, Q = HPolytope(A, b), HPolytope(Aq, 0.15 * bq)
    R = pontryagin_diff(P, Q)
    # (P - Q) + Q is inside P
    S = minkowski_sum(R, Q)
    for d in rng.normal(size=(50, 2)):
        assert support(S, d) <= support(P, d) + 1e-9


def test_minkowski_examples():
    P = HPolytope(*random_polytope(np.random.default_rng(8), 2))
    S = minkowski_sum(P, box(0, 0))
    assert same_set(S, P, np.random.default_rng(9).normal(size=(20, 2))) < 1e-9
    I = HPolytope([[1.0], [-1.0]], [1.0, 1.0])
    J = minkowski_sum(I, I)
    assert support(J, [1.0]) == pytest.approx(2.0)
    assert support(J, [-1.0]) == pytest.approx(2.0)
    with pytest.raises(DimensionMismatchError):
        minkowski_sum(I, P)


def test_minkowski_support_additivity():
    rng = np.random.default_rng(10)
    for _ in range(5):
        A1, b1 = random_polytope(rng, 2)
        A2, b2 = random_polytope(rng, 2)
        S = minkowski_sum(HPolytope(A1, b1), HPolytope(A2, b2))
        V1, V2 = hs_vertices(A1, b1), hs_vertices(A2, b2)
        for d in rng.normal(size=(100, 2)):
            assert support(S, d) == pytest.approx(
                vertex_support(V1, d) + vertex_support(V2, d), abs=1e-8)


def test_linear_image_examples():
    P = box(1, 1)
    assert same_set(linear_image(np.eye(2), P), P, np.eye(2)) < 1e-12
    assert same_set(linear_image(2 * np.eye(2), P), box(2, 2),
                    np.vstack([np.eye(2), -np.eye(2)])) < 1e-12


def test_linear_image_of_4d_box():
    rng = np.random.default_rng(11)
    lo, hi = -rng.uniform(0.5, 1, 4), rng.uniform(0.5, 1, 4)
    F = rng.normal(size=(2, 4))
    img = linear_image(F, Box(lo, hi).to_hpolytope())
    corners = np.array([[lo[i] if (k >> i) & 1 else hi[i] for i in range(4)]
                        for k in range(16)])
    for d in rng.normal(size=(50, 2)):
        assert support(img, d) == pytest.approx(np.max(corners @ F.T @ d), abs=1e-9)


def test_linear_image_rank_deficient():
    # projection to a line embedded in 2-D
    img = linear_image(np.array([[1.0, 1.0], [1.0, 1.0]]), box(1, 1))
    assert support(img, [1, 1]) == pytest.approx(4.0)
    assert support(img, [1, -1]) == pytest.approx(0.0, abs=1e-9)


def test_project_examples():
    P3 = box(1, 2, 3)
    Q = project(P3, [0, 2])
    lo, hi = Q.box_bounds
    np.testing.assert_allclose(hi, [1, 3])
    P = HPolytope(*random_polytope(np.random.default_rng(12), 2))
    back = project(product(P, box(0.5)), [0, 1])
    assert contains_scaled(back, P, 1 + 1e-9) and contains_scaled(P, back, 1 + 1e-9)


def test_project_reorders_columns():
    P = Box([0, 1, 2], [1, 2, 3]).to_hpolytope()
    Q = project(P, [2, 0])
    lo, hi = Q.box_bounds
    np.testing.assert_allclose(lo, [2, 0])
    np.testing.assert_allclose(hi, [3, 1])


def test_project_membership_oracle():
    rng = np.random.default_rng(13)
    for _ in range(5):
        A, b = random_polytope(rng, 3)
        R = project(HPolytope(A, b), [0, 1])
        X = rng.uniform(-2.5, 2.5, size=(200, 2))
        mine = margin(R.A, R.b, X)
        for x, m in zip(X, mine):
            if abs(m) > 1e-7:
                assert lifted_feasible(A, b, [0, 1], x) == (m <= 0)


def test_product_examples():
    P = product(HPolytope([[1.0], [-1.0]], [1, 1]), HPolytope([[1.0], [-1.0]], [2, 2]))
    np.testing.assert_allclose(P.box_bounds[1], [1, 2])
    assert product(box(1), HPolytope.empty(2)).is_empty_marker
    assert product(box(1, 1), box(1, 1, 1)).dim == 5
    assert product_all([]).dim == 0


# ---------------------------------------------------------------- containment

def test_contains_scaled_examples():
    P = HPolytope(*random_polytope(np.random.default_rng(14), 2))
    assert contains_scaled(P, P, 1.0)
    assert contains_scaled(box(1, 1), box(1.05, 1.05), 1.1)
    assert not contains_scaled(box(1, 1), box(1.05, 1.05), 1.0)


def test_contains_scaled_vertex_oracle():
    rng = np.random.default_rng(15)
    for _ in range(20):
        A, b = random_polytope(rng, 2)
        inner_b = b * rng.uniform(0.7, 1.0)
        V = hs_vertices(A, inner_b)
        for s in (0.8, 0.95, 1.0, 1.2):
            oracle = bool(np.all(margin(A, s * b, V) <= 1e-9))
            assert contains_scaled(HPolytope(A, b), HPolytope(A, inner_b), s) == oracle


# ---------------------------------------------------------------- vertices

def test_vertices_examples():
    V = vertices(box(1, 1))
    assert len(V) == 4
    np.testing.assert_allclose(np.abs(V), 1.0)
    S = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert len(vertices(S)) == 3


def test_vertices_active_set_oracle():
    rng = np.random.default_rng(16)
    for _ in range(20):
        A, b = random_polytope(rng, 2)
        P = HPolytope(A, b)
        V = vertices(P)
        slack = P.b - V @ P.A.T
        assert np.all(slack >= -1e-9)
        assert np.all((np.abs(slack) <= 1e-9).sum(axis=1) >= 2)
        assert len(V) == len(hs_vertices(A, b)) or len(V) == len(
            np.unique(np.round(hs_vertices(A, b), 7), axis=0))


def test_vertices_errors():
    with pytest.raises(DimensionTooHighError):
        vertices(box(*([1] * 7)))
    with pytest.raises(UnboundedError):
        vertices(HPolytope([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]))
    with pytest.raises(EmptyPolytopeError):
        vertices(HPolytope.empty(2))


def test_polygon_is_counterclockwise():
    V = polygon(HPolytope(*random_polytope(np.random.default_rng(17), 2)))
    x, y = V[:, 0], V[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert area2 > 0


def test_convex_hull_flat_cloud():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, 0.0]])
    H = convex_hull(pts)
    assert support(H, [0, 0, 1]) == pytest.approx(0.0, abs=1e-9)
    assert support(H, [1, 1, 0]) == pytest.approx(1.0)


def test_sample_uniform_inside():
    P = HPolytope(*random_polytope(np.random.default_rng(18), 3))
    X = sample_uniform(P, 300, np.random.default_rng(0))
    assert X.shape == (300, 3) and np.all(P.contains(X))


# ---------------------------------------------------------------- serialization

def test_csv_roundtrip_is_bitwise(tmp_path):
    P = HPolytope(*random_polytope(np.random.default_rng(19), 3))
    path = tmp_path / "p.csv"
    write_csv(path, P)
    Q = read_csv(path)
    assert np.array_equal(P.A, Q.A) and np.array_equal(P.b, Q.b)
    assert path.read_text().startswith("# n=3\n")


def test_csv_empty_marker(tmp_path):
    path = tmp_path / "e.csv"
    write_csv(path, HPolytope.empty(2))
    assert read_csv(path).is_empty_marker


def test_csv_bad_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# n=2\n1,0,1\n1,2\n")
    with pytest.raises(ValueError, match=":3:"):
        read_csv(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=4))
def test_box_support_property(bounds):
    P = Box.symmetric(bounds).to_hpolytope()
    d = np.ones(len(bounds))
    assert support(P, d) == pytest.approx(sum(bounds))
    assert reduce(P).nrows == 2 * len(bounds)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_operations_are_pure(seed):
    A, b = random_polytope(np.random.default_rng(seed), 2)
    R1, R2 = reduce(HPolytope(A, b)), reduce(HPolytope(A, b))
    assert np.array_equal(R1.A, R2.A) and np.array_equal(R1.b, R2.b)
