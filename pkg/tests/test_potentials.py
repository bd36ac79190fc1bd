import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rculmc.potentials import (
    CallableTarget,
    CostLedger,
    GraphTarget,
    ProductExperimentTarget,
    QuadraticTarget,
    condition_numbers,
    finite_difference_mismatch,
    read_edge_list,
)

ONES3 = np.eye(3) + np.ones((3, 3))


def random_spd(rng, d):
    B = rng.standard_normal((d, d))
    return B @ B.T + 0.1 * np.eye(d)


def random_graph(rng, d, n_edges):
    i = rng.integers(0, d, n_edges)
    j = rng.integers(0, d, n_edges)
    keep = i != j
    return np.stack([i[keep], j[keep]], axis=1)


# --- values and derivatives ----------------------------------------------------


def test_eval_examples():
    assert QuadraticTarget.standard_gaussian(3).eval(np.zeros(3)) == 0.0
    assert QuadraticTarget.standard_gaussian(2).eval([3.0, 4.0]) == 12.5
    assert ProductExperimentTarget(d=20, seed=7, block=5).eval(np.zeros(20)) == 0.0


def test_dimension_mismatch_raises():
    t = QuadraticTarget.standard_gaussian(3)
    with pytest.raises(ValueError):
        t.eval(np.zeros(2))
    with pytest.raises(ValueError):
        t.full_grad(np.zeros(4))


def test_partial_grad_examples():
    t = QuadraticTarget.standard_gaussian(4)
    for i in range(4):
        assert t.partial_grad(i, np.eye(4)[i]) == 1.0
    assert QuadraticTarget(ONES3).partial_grad(0, np.ones(3)) == 4.0


def test_partial_grad_index_out_of_range():
    t = QuadraticTarget.standard_gaussian(3)
    with pytest.raises(IndexError):
        t.partial_grad(3, np.zeros(3))
    with pytest.raises(IndexError):
        t.partial_grad(-1, np.zeros(3))


def test_full_grad_examples():
    np.testing.assert_array_equal(QuadraticTarget.standard_gaussian(2).full_grad([1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_array_equal(QuadraticTarget(ONES3).full_grad(np.ones(3)), [4.0, 4.0, 4.0])


@pytest.mark.parametrize(
    "target",
    [
        QuadraticTarget(ONES3),
        ProductExperimentTarget(d=30, seed=3, block=6),
        GraphTarget(6, [(0, 1), (1, 2), (4, 5)], beta=2.0, alpha=0.5),
    ],
    ids=["dense", "product", "graph"],
)
def test_gradient_vanishes_at_minimiser(target):
    assert np.max(np.abs(target.full_grad(target.x_star))) <= 1e-10


def test_cost_ledger_charges():
    t = QuadraticTarget.standard_gaussian(5)
    ledger = CostLedger()
    t.partial_grad(2, np.ones(5), ledger)
    assert ledger.units == 1
    t.full_grad(np.ones(5), ledger)
    assert ledger.units == 6
    t.eval(np.ones(5))
    assert ledger.units == 6


# --- constants -------------------------------------------------------------------


def test_condition_numbers_examples():
    k, kv, km = condition_numbers(QuadraticTarget.standard_gaussian(5))
    assert (k, km) == pytest.approx((1.0, 1.0))
    np.testing.assert_allclose(kv, np.ones(5))

    k, kv, km = QuadraticTarget(ONES3).condition_numbers()
    assert k == pytest.approx(4.0, rel=1e-12)
    np.testing.assert_allclose(kv, [2.0, 2.0, 2.0])
    assert km == pytest.approx(2.0, rel=1e-12)
    assert k <= 3 * km

    k, kv, km = QuadraticTarget.diagonal([1.0, 8.0]).condition_numbers()
    assert k == pytest.approx(8.0)
    np.testing.assert_allclose(kv, [1.0, 8.0])
    assert km == 8.0


def test_condition_numbers_rejects_nonpositive_mu():
    t = CallableTarget(lambda x: 0.0, lambda x: 0 * x, dim=2, mu=1.0, big_L=1.0, coord_L=np.ones(2))
    object.__setattr__(t, "mu", 0.0)
    with pytest.raises(ValueError):
        condition_numbers(t)


def test_constructor_rejects_bad_matrices():
    with pytest.raises(ValueError):
        QuadraticTarget([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        QuadraticTarget([[1.0, 2.0], [2.0, 1.0]])


def test_inequality_chain_on_random_spd():
    rng = np.random.default_rng(11)
    for _ in range(100):
        d = int(rng.integers(1, 9))
        t = QuadraticTarget(random_spd(rng, d))
        k, kv, km = condition_numbers(t)
        tol = 1e-9 * k
        assert np.all(kv <= km + tol)
        assert km <= k + tol
        assert k <= d * km + tol


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8), t=st.floats(-10, 10))
def test_directional_lipschitz_is_diagonal(seed, d, t):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, d)
    target = QuadraticTarget(A)
    x = rng.standard_normal(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = t
        change = abs(target.partial_grad(i, x + e) - target.partial_grad(i, x))
        assert change == pytest.approx(A[i, i] * abs(t), rel=1e-9, abs=1e-9)


def test_partial_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    targets = [
        QuadraticTarget(random_spd(rng, 6)),
        ProductExperimentTarget(d=15, seed=1, block=5),
        GraphTarget(12, random_graph(rng, 12, 20), beta=1.5, alpha=0.3),
    ]
    for t in targets:
        assert finite_difference_mismatch(t, rng=0, n_points=10) <= 1e-6


# --- product target ------------------------------------------------------------


def test_product_target_structure():
    t = ProductExperimentTarget(d=40, seed=4, block=8)
    H = t.dense_hessian()
    np.testing.assert_allclose(H[:8, :8], t.block_hessian, rtol=1e-14)
    np.testing.assert_array_equal(H[8:, 8:], np.eye(32))
    assert not np.any(H[:8, 8:])
    ev = np.linalg.eigvalsh(H)
    assert t.mu == pytest.approx(ev[0], rel=1e-10)
    assert t.big_L == pytest.approx(ev[-1], rel=1e-10)
    np.testing.assert_allclose(t.coord_L, np.diag(H))


def test_product_target_is_seed_reproducible():
    a = ProductExperimentTarget(d=20, seed=9, block=4)
    b = ProductExperimentTarget(d=20, seed=9, block=4)
    c = ProductExperimentTarget(d=20, seed=10, block=4)
    np.testing.assert_array_equal(a.gamma_matrix, b.gamma_matrix)
    assert not np.array_equal(a.gamma_matrix, c.gamma_matrix)


def test_coupled_closure_covers_the_block():
    t = ProductExperimentTarget(d=20, seed=0, block=5)
    np.testing.assert_array_equal(t.coupled_closure([1]), np.arange(5))
    np.testing.assert_array_equal(t.coupled_closure([2, 12]), [0, 1, 2, 3, 4, 12])
    with pytest.raises(IndexError):
        t.coupled_closure([20])


# --- graph target ----------------------------------------------------------------


def test_graph_isolated_node_sees_only_the_convexifier():
    t = GraphTarget(5, [(0, 1), (1, 2)], beta=3.0, alpha=0.7)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(5)
        assert t.partial_grad(4, x) == pytest.approx(0.7 * x[4], rel=1e-15)
    assert len(t.incident_edges(4)) == 0


def test_graph_partials_match_full_gradient():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(2, 51))
        edges = random_graph(rng, d, int(rng.integers(0, 3 * d)))
        beta = rng.uniform(0.1, 2.0, len(edges))
        t = GraphTarget(d, edges, beta=beta, alpha=rng.uniform(0.1, 1.0))
        x = rng.standard_normal(d)
        full = t.full_grad(x)
        partial = np.array([t.partial_grad(i, x) for i in range(d)])
        np.testing.assert_allclose(partial, full, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(full, t.dense_hessian() @ x, rtol=1e-12, atol=1e-12)


def test_graph_rejects_bad_input():
    with pytest.raises(ValueError):
        GraphTarget(3, [(0, 3)])
    with pytest.raises(ValueError):
        GraphTarget(3, [(1, 1)])
    with pytest.raises(ValueError):
        GraphTarget(3, [(0, 1)], alpha=0.0)
    with pytest.raises(ValueError):
        GraphTarget(3, [(0, 1)], beta=-1.0)


def test_edge_list_file(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("# ring\n0 1\n1 2  # trailing\n\n2 0\n")
    np.testing.assert_array_equal(read_edge_list(path), [[0, 1], [1, 2], [2, 0]])
    t = GraphTarget.from_edge_file(path)
    assert t.dim == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    with pytest.raises(ValueError):
        read_edge_list(bad)


# --- user-supplied targets -----------------------------------------------------


def test_callable_target_spot_check():
    A = np.diag([1.0, 3.0])
    good = CallableTarget(lambda x: 0.5 * x @ A @ x, lambda x: A @ x, dim=2, mu=1.0, big_L=3.0, coord_L=np.diag(A))
    assert good.spot_check(rng=0) <= 1e-6
    wrong = CallableTarget(lambda x: 0.5 * x @ A @ x, lambda x: 2 * A @ x, dim=2, mu=1.0, big_L=3.0, coord_L=np.diag(A))
    assert wrong.spot_check(rng=0) > 0.5


def test_callable_target_rejects_inconsistent_constants():
    with pytest.raises(ValueError):
        CallableTarget(lambda x: 0.0, lambda x: x, dim=2, mu=1.0, big_L=10.0, coord_L=np.ones(2))
