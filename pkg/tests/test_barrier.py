import cvxpy as cp
import numpy as np
import pytest

from lightpfl.optimizer.barrier import LinearBlock, barrier_minimize, phase_one


class Ball:
    """||x - centre||^2 <= radius^2 as a single-row block."""

    def __init__(self, centre, radius):
        self.centre = np.asarray(centre, dtype=float)
        self.radius = radius

    size = 1

    def in_domain(self, x):
        return True

    def values(self, x):
        d = x - self.centre
        return np.array([d @ d - self.radius**2])

    def jacobian(self, x):
        return 2.0 * (x - self.centre)[None, :]

    def hessian(self, x, weights):
        return 2.0 * weights[0] * np.eye(x.size)


def box(n, lo, hi):
    A = np.vstack([np.eye(n), -np.eye(n)])
    return LinearBlock(A, np.concatenate([np.full(n, hi), np.full(n, -lo)]))


def test_box_lp_reaches_corner():
    c = np.array([1.0, -2.0, 0.5])
    res = barrier_minimize(c, [box(3, -1.0, 1.0)], np.zeros(3), eps=1e-9)
    assert res.converged
    np.testing.assert_allclose(res.x, [-1.0, 1.0, -1.0], atol=1e-8)


def test_ball_lp_closed_form():
    c = np.array([3.0, 4.0])
    res = barrier_minimize(c, [Ball([0, 0], 2.0)], np.zeros(2), eps=1e-10)
    np.testing.assert_allclose(res.x, -2.0 * c / 5.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_matches_independent_conic_solver(seed):
    rng = np.random.default_rng(seed)
    n = 4
    c = rng.standard_normal(n)
    A = rng.standard_normal((3, n))
    b = A @ np.zeros(n) + rng.uniform(0.2, 1.0, 3)
    centre = rng.uniform(-0.2, 0.2, n)
    blocks = [LinearBlock(A, b), Ball(centre, 1.0), box(n, -0.8, 0.8)]
    start = phase_one(blocks, np.zeros(n))
    res = barrier_minimize(c, blocks, start, eps=1e-9)

    x = cp.Variable(n)
    prob = cp.Problem(cp.Minimize(c @ x),
                      [A @ x <= b, cp.sum_squares(x - centre) <= 1.0, x <= 0.8, x >= -0.8])
    prob.solve(solver=cp.CLARABEL)
    assert float(c @ res.x) == pytest.approx(prob.value, abs=1e-6)


def test_phase_one_recovers_from_infeasible_start():
    A = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    blocks = [LinearBlock(A, np.array([1.0, 0.0, 0.0]))]
    x = phase_one(blocks, np.array([2.0, 2.0]))
    assert x is not None
    assert np.all(blocks[0].values(x) < 0)


def test_phase_one_reports_empty_set():
    # x <= -1 and x >= 1
    blocks = [LinearBlock(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))]
    assert phase_one(blocks, np.array([0.0])) is None


def test_fixed_coordinates_stay_put():
    c = np.array([1.0, 1.0])
    free = np.array([True, False])
    res = barrier_minimize(c, [box(2, -1.0, 1.0)], np.array([0.0, 0.3]), free=free, eps=1e-8)
    assert res.x[1] == 0.3
    assert res.x[0] == pytest.approx(-1.0, abs=1e-7)


def test_rejects_infeasible_start():
    with pytest.raises(ValueError):
        barrier_minimize(np.ones(1), [box(1, 0.0, 1.0)], np.array([2.0]))
