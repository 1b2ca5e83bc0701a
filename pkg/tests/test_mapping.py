import numpy as np
import pytest
from scipy.optimize import linprog

from distiller.autograd import Tensor, check_gradients
from distiller.losses import InterLossKind, Projection
from distiller.mapping import (FlowProblem, build_mapping, emd_loss, solve_transport,
                               solve_transport_full)


def lp_oracle(cost, a, b):
    m, n = cost.shape
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        a_eq[m + j, j::n] = 1
    res = linprog(cost.reshape(-1), A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs")
    return res.fun


def test_skip_and_last_examples():
    assert build_mapping("Skip", 12, 4).pairs() == [(3, 1), (6, 2), (9, 3), (12, 4)]
    assert build_mapping("Last", 12, 4).pairs() == [(9, 1), (10, 2), (11, 3), (12, 4)]


def test_equal_depth_is_identity():
    for s in ("Skip", "Last"):
        np.testing.assert_array_equal(build_mapping(s, 3, 3).weights, np.eye(3))


def test_mapping_errors():
    with pytest.raises(ValueError):
        build_mapping("Skip", 2, 4)
    with pytest.raises(ValueError):
        build_mapping("EMD", 4, 2)
    with pytest.raises(ValueError):
        build_mapping("Skip", 4, 0)


@pytest.mark.parametrize("seed", range(25))
def test_transport_matches_lp(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 7, size=2)
    cost = rng.uniform(0, 10, size=(m, n))
    a = rng.uniform(0.1, 1, size=m)
    b = rng.uniform(0.1, 1, size=n)
    b *= a.sum() / b.sum()
    b[-1] = a.sum() - b[:-1].sum()
    sol = solve_transport_full(FlowProblem(cost, a, b))
    assert np.all(sol.flow >= 0)
    np.testing.assert_allclose(sol.flow.sum(1), a, atol=1e-12)
    np.testing.assert_allclose(sol.flow.sum(0), b, atol=1e-12)
    assert sol.objective == pytest.approx(lp_oracle(cost, a, b), abs=1e-9)
    # dual feasibility and complementary slackness certify optimality on their own
    reduced = cost - sol.u[:, None] - sol.v[None, :]
    assert reduced.min() >= -1e-9
    assert np.all(np.abs(reduced[sol.flow > 1e-12]) < 1e-9)


def test_transport_degenerate_ties():
    flow = solve_transport(FlowProblem(np.zeros((3, 3)), np.full(3, 1 / 3), np.full(3, 1 / 3)))
    np.testing.assert_allclose(flow.sum(0), 1 / 3)


def test_flow_problem_validation():
    with pytest.raises(ValueError):
        FlowProblem(np.ones((2, 2)), [0.5, 0.5], [0.3, 0.3])
    with pytest.raises(ValueError):
        FlowProblem(np.ones((2, 2)), [1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        FlowProblem(np.array([[np.inf, 1], [1, 1]]), [0.5, 0.5], [0.5, 0.5])


def test_emd_two_teacher_one_student_averages():
    rng = np.random.default_rng(0)
    hs = [Tensor(rng.normal(size=(4, 3)))]
    ht = [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]
    from distiller.losses import inter_loss
    proj = [Projection(3, 3)]
    kind = InterLossKind("MSE")
    a = inter_loss(kind, hs[0], ht[0], proj[0]).item()
    b = inter_loss(kind, hs[0], ht[1], proj[0]).item()
    loss, mapping = emd_loss(hs, ht, kind, proj)
    assert loss.item() == pytest.approx((a + b) / 2)
    np.testing.assert_allclose(mapping.weights, [[0.5], [0.5]])


def test_emd_prefers_cheap_pairs():
    base = np.random.default_rng(1).normal(size=(4, 3))
    hs = [Tensor(base), Tensor(-base)]
    ht = [-base, base]
    loss, mapping = emd_loss(hs, ht, InterLossKind("MSE"), [Projection(3, 3)] * 2)
    np.testing.assert_allclose(mapping.weights, [[0, 0.5], [0.5, 0]])
    assert loss.item() == pytest.approx(0.0)


def test_emd_gradient_with_flow_held_fixed():
    rng = np.random.default_rng(2)
    hs = [Tensor(rng.normal(size=(3, 2)), requires_grad=True) for _ in range(2)]
    ht = [rng.normal(size=(3, 2)) for _ in range(3)]
    proj = [Projection(2, 2), Projection(2, 2)]
    # the loss is piecewise smooth; away from flow switches its gradient is the fixed-flow one
    assert check_gradients(lambda: emd_loss(hs, ht, InterLossKind("MSE"), proj)[0], hs) < 1e-6
