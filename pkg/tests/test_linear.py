import numpy as np
import pytest

from activescout import linear_example as lin


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_kalman_update_matches_information_form():
    """One scalar update equals the information-filter closed form."""
    rng = np.random.default_rng(0)
    d = 3
    cov = np.diag([4.0, 1.0, 0.25])
    mean = np.zeros(d)
    belief = lin.GaussianBelief(mean, cov)
    x = rng.standard_normal(d)
    y = 1.3
    r = 0.5
    post = lin.kalman_update(belief, x, y, r)
    # information form: Lambda' = Lambda + x x^T / r^2
    lam = np.linalg.inv(cov) + np.outer(x, x) / r**2
    cov_ref = np.linalg.inv(lam)
    mean_ref = cov_ref @ (np.linalg.inv(cov) @ mean + x * y / r**2)
    assert np.allclose(post.cov, cov_ref, atol=1e-10)
    assert np.allclose(post.mean, mean_ref, atol=1e-10)


def test_kalman_update_shrinks_uncertainty_along_x():
    belief = lin.GaussianBelief(np.zeros(2), np.diag([10.0, 10.0]))
    x = np.array([1.0, 0.0])
    post = lin.kalman_update(belief, x, 0.0, 0.1)
    assert post.cov[0, 0] < 0.02  # observed direction collapses
    assert post.cov[1, 1] == pytest.approx(10.0, abs=1e-9)  # orthogonal


def test_repeated_updates_converge_to_truth():
    rng = np.random.default_rng(1)
    xi = np.array([0.7, -1.2])
    sys = lin.LinearSystem(np.eye(2), np.zeros(2), 0.05, xi)
    belief = lin.GaussianBelief(np.zeros(2), 10.0 * np.eye(2))
    for _ in range(300):
        x = rng.standard_normal(2)
        y = sys.observe(x, rng)
        belief = lin.kalman_update(belief, x, y, sys.noise_std)
    assert np.linalg.norm(belief.mean - xi) < 0.05
    assert np.trace(belief.cov) < 1e-3


def test_objective_floor_and_values():
    cov = np.diag([2.0, 0.5])
    states = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    assert lin.objective(cov, states) == pytest.approx(
        np.log(2.0) + np.log(0.5), abs=1e-12)
    assert lin.objective(cov, [np.zeros(2)]) == pytest.approx(
        np.log(lin.OBJECTIVE_FLOOR), abs=1e-12)


def test_greedy_control_aligns_with_largest_eigenvector():
    """With an anisotropic belief the one-step controller steers the state
    to within 5 degrees of the dominant uncertainty direction."""
    theta = 0.35
    R = _rotation(theta)
    cov = R @ np.diag([100.0, 1.0]) @ R.T
    belief = lin.GaussianBelief(np.zeros(2), cov)
    # x' = u * B: the control picks the state direction directly
    grid = np.linspace(-1.0, 1.0, 41)
    best_angle, best_val = None, -np.inf
    for phi in np.linspace(0.0, np.pi, 181, endpoint=False):
        sys = lin.LinearSystem(np.zeros((2, 2)),
                               np.array([np.cos(phi), np.sin(phi)]),
                               1.0, np.zeros(2))
        _, val = lin.greedy_control(sys, belief, np.zeros(2), 1, grid)
        if val > best_val:
            best_angle, best_val = phi, val
    gap = abs(best_angle - theta) % np.pi
    gap = min(gap, np.pi - gap)
    assert np.degrees(gap) < 5.0


def test_greedy_argmax_invariant_to_cov_scaling():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((3, 3))
    cov = M @ M.T + 0.1 * np.eye(3)
    sys = lin.LinearSystem(rng.standard_normal((3, 3)) * 0.5,
                           rng.standard_normal(3), 1.0, np.zeros(3))
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    seq1, _ = lin.greedy_control(sys, lin.GaussianBelief(np.zeros(3), cov),
                                 np.ones(3), 2, grid)
    seq2, _ = lin.greedy_control(
        sys, lin.GaussianBelief(np.zeros(3), 7.0 * cov), np.ones(3), 2, grid)
    assert seq1 == seq2  # log(k x^T S x) shifts by a constant per state


def test_objective_monotone_in_loewner_order():
    """If S1 <= S2 in the Loewner order, the objective cannot be larger."""
    rng = np.random.default_rng(3)
    M = rng.standard_normal((3, 3))
    s1 = M @ M.T + 0.1 * np.eye(3)
    s2 = s1 + 0.5 * np.eye(3)
    states = rng.standard_normal((20, 3))
    assert lin.objective(s1, states) <= lin.objective(s2, states) + 1e-12


def test_validation():
    with pytest.raises(ValueError):
        lin.LinearSystem(np.eye(2), np.zeros(2), 0.0, np.zeros(2))
    with pytest.raises(ValueError):
        lin.GaussianBelief(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        lin.GaussianBelief(np.zeros(2), np.diag([1.0, -1.0]))
    sys = lin.LinearSystem(np.eye(2), np.zeros(2), 1.0, np.zeros(2))
    with pytest.raises(ValueError):
        lin.greedy_control(sys, lin.GaussianBelief(np.zeros(2), np.eye(2)),
                           np.zeros(2), 1, [])
