import math

import numpy as np
import pytest

from rcigrid.invariant import (CONVERGED, EMPTY_FAILURE, INCONCLUSIVE, IterationConfig,
                               NotControllableError, StepBoundWarning, centralized_rci,
                               consensus_coupling, distributed_rci,
                               distributed_rci_network, geometric_decay_ratio,
                               network_sets, preimage_step)
from rcigrid.network import (SubsystemModel, build_model, bundled_case, load_network,
                             theorem1_step_bound)
from rcigrid.polytope import Box, contains_scaled, support


def interval(lo, hi):
    return Box([lo], [hi]).to_hpolytope()


def sym(*r):
    return Box.symmetric(r).to_hpolytope()


def bounds_1d(P):
    return -support(P, [-1.0]), support(P, [1.0])


def same(P, Q, tol=1e-9):
    return contains_scaled(P, Q, 1 + tol) and contains_scaled(Q, P, 1 + tol)


# ---------------------------------------------------------------- preimage

def test_preimage_fully_actuated_identity_reaches_everything():
    X = sym(1, 1)
    R = preimage_step(X, np.eye(2), np.eye(2), sym(1e3, 1e3), np.zeros((2, 2)), sym(0, 0))
    assert contains_scaled(R, X, 1.0)


def test_preimage_frozen_dynamics_returns_target():
    X = sym(1, 2)
    R = preimage_step(X, np.eye(2), np.zeros((2, 1)), sym(0), np.zeros((2, 1)), sym(0))
    assert same(R, X)


def test_preimage_scalar_closed_form():
    R = preimage_step(interval(-1, 1), np.eye(1), np.eye(1), sym(0.5), np.eye(1), sym(0.1))
    np.testing.assert_allclose(bounds_1d(R), (-1.4, 1.4), atol=1e-12)


def test_preimage_of_fully_eroded_target_is_empty():
    R = preimage_step(interval(-0.05, 0.05), np.eye(1), np.eye(1), sym(0.5), np.eye(1),
                      sym(0.1))
    assert R.is_empty_marker


# ---------------------------------------------------------------- centralized

def test_centralized_scalar_already_invariant():
    res = centralized_rci(np.eye(1), np.eye(1), np.eye(1), interval(-1, 1), sym(0.5), sym(0.1))
    assert res.status == CONVERGED
    # the first admissible iterate equals X, so the very first test passes
    assert res.k_used == 1
    np.testing.assert_allclose(bounds_1d(res.sets[0]), (-1, 1), atol=1e-12)


def test_centralized_scalar_disturbance_dominates():
    res = centralized_rci(np.eye(1), np.eye(1), np.eye(1), interval(-1, 1), sym(0.05),
                          sym(0.1), IterationConfig(k_max=500))
    assert res.status == EMPTY_FAILURE
    assert res.sets[0].is_empty_marker


def test_centralized_kmax_gives_inconclusive():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    res = centralized_rci(A, B, B, sym(1, 1), sym(0.5), sym(0.1), IterationConfig(k_max=1))
    assert res.status == INCONCLUSIVE and res.k_used == 1


def test_centralized_not_controllable():
    with pytest.raises(NotControllableError):
        centralized_rci(np.eye(2), np.array([[1.0], [0.0]]), np.zeros((2, 1)),
                        sym(1, 1), sym(1), sym(0))


def test_centralized_history_is_monotone():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    res = centralized_rci(A, B, B, sym(1, 1), sym(0.5), sym(0.1), IterationConfig(history=True))
    assert res.status == CONVERGED
    H = res.history
    assert len(H) == res.k_used + 1
    for prev, nxt in zip(H, H[1:]):
        assert contains_scaled(prev, nxt, 1 + 1e-9)


def test_iteration_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        IterationConfig(k_max=0)


# ---------------------------------------------------------------- consensus

def _sub(i, A1, B1, A2, B2, E, nbrs):
    return SubsystemModel(index=i, bus_id=str(i + 1), A1=np.asarray(A1, float),
                          B1=np.asarray(B1, float), A2=np.asarray(A2, float),
                          B2=np.asarray(B2, float), E=np.asarray(E, float),
                          neighbors=tuple(nbrs))


def decoupled_pair(dbar=0.1):
    A1 = [[1.0, 0.1], [0.0, 1.0]]
    B1 = [[0.0], [0.1]]
    E = [[0.0], [0.1]]
    subs = [_sub(i, A1, B1, np.zeros((2, 0)), np.zeros((2, 0)), E, ()) for i in range(2)]
    X = [sym(1, 1), sym(1, 1)]
    U = [sym(0.5), sym(0.5)]
    return subs, X, U, sym(dbar)


def coupled_pair(h=0.1):
    spec, cons = load_network(bundled_case("two_gen"))
    _, subs, dm = build_model(spec, h)
    X, U, D = network_sets(dm, cons)
    return list(dm.subsystems), X, U, D, subs


def test_consensus_decoupled_single_sweep():
    subs, X, U, D = decoupled_pair()
    res = consensus_coupling(subs, X, U, D)
    assert res.sweeps == 1 and res.converged


def test_consensus_without_disturbance_keeps_sets():
    # angle row contracts, ample input holds the frequency row anywhere in the box
    A1 = [[0.5, 0.1], [0.0, 1.0]]
    subs = [_sub(i, A1, [[0.0], [0.1]], np.zeros((2, 0)), np.zeros((2, 0)),
                 [[0.0], [0.1]], ()) for i in range(2)]
    X = [sym(1, 1), sym(1, 1)]
    res = consensus_coupling(subs, X, [sym(10.0)] * 2, sym(0.0))
    assert res.sweeps == 1
    for a, b in zip(res.next_sets, X):
        assert same(a, b)


def test_consensus_guarantee_covers_assumption():
    # every neighbour's next admissible set lies inside what was assumed for it
    dsubs, X, U, D, _ = coupled_pair()
    res = consensus_coupling(dsubs, X, U, D)
    assert res.converged
    for i, s in enumerate(dsubs):
        for f, j in zip(res.coupling.state_factors[i], s.neighbors):
            assert contains_scaled(f, res.next_sets[j], 1 + 1e-9)


def test_coupling_sets_start_inside_safe_sets():
    dsubs, X, U, D, _ = coupled_pair()
    res = consensus_coupling(dsubs, X, U, D)
    for i, s in enumerate(dsubs):
        for f, j in zip(res.coupling.state_factors[i], s.neighbors):
            assert contains_scaled(X[j], f, 1 + 1e-9)


# ---------------------------------------------------------------- distributed

def test_distributed_decoupled_matches_centralized_per_bus():
    subs, X, U, D = decoupled_pair()
    dist = distributed_rci(subs, X, U, D)
    assert dist.status == CONVERGED
    for i, s in enumerate(subs):
        cen = centralized_rci(s.A1, s.B1, s.E, X[i], U[i], D)
        assert cen.status == CONVERGED
        assert same(dist.sets[i], cen.sets[0])


def test_distributed_not_controllable():
    subs, X, U, D = decoupled_pair()
    bad = [_sub(0, np.eye(2), [[1.0], [0.0]], np.zeros((2, 0)), np.zeros((2, 0)),
                [[0.0], [0.1]], ())] + subs[1:]
    with pytest.raises(NotControllableError):
        distributed_rci(bad, X, U, D)


def test_distributed_results_inside_safe_sets():
    dsubs, X, U, D, _ = coupled_pair()
    res = distributed_rci(dsubs, X, U, D)
    assert res.status == CONVERGED
    for S, Xi in zip(res.sets, X):
        assert not S.is_empty and contains_scaled(Xi, S, 1 + 1e-9)


def test_large_step_warns_and_terminates():
    spec, cons = load_network(bundled_case("nine_bus"))
    model, subs, _ = build_model(spec, 0.05)
    bound = theorem1_step_bound(subs)
    _, _, dm = build_model(spec, 20 * bound)
    with pytest.warns(StepBoundWarning):
        res = distributed_rci_network(dm, cons, IterationConfig(k_max=3, l_max=4),
                                      step_bound=bound)
    assert res.status in (CONVERGED, EMPTY_FAILURE, INCONCLUSIVE)
    assert any("exceeds" in w for w in res.warnings)


def test_thread_count_does_not_change_result(monkeypatch):
    dsubs, X, U, D, _ = coupled_pair()
    monkeypatch.setenv("RCIGRID_THREADS", "1")
    a = distributed_rci(dsubs, X, U, D)
    monkeypatch.setenv("RCIGRID_THREADS", "4")
    b = distributed_rci(dsubs, X, U, D)
    assert a.consensus_iterations == b.consensus_iterations
    for P, Q in zip(a.sets, b.sets):
        assert np.array_equal(P.A, Q.A) and np.array_equal(P.b, Q.b)


def test_nine_bus_converges_with_few_sweeps():
    spec, cons = load_network(bundled_case("nine_bus"))
    _, subs, dm = build_model(spec, 0.05)
    res = distributed_rci_network(dm, cons, IterationConfig(epsilon=1e-3),
                                  step_bound=theorem1_step_bound(subs))
    assert res.status == CONVERGED
    assert max(res.consensus_iterations) <= 6


# ---------------------------------------------------------------- decay helper

def test_geometric_decay_ratio():
    assert geometric_decay_ratio([1.0, 0.5, 0.25]) == pytest.approx(0.5)
    assert geometric_decay_ratio([0.0, 0.0]) == 0.0
    assert geometric_decay_ratio([]) == math.inf
