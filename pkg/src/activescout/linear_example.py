"""Linear-Gaussian instantiation: Kalman estimation and log-det control.

A static unknown parameter vector is observed through scalar projections
onto the system state; the controller steers future states along the
directions of largest posterior uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

OBJECTIVE_FLOOR = 1e-12


@dataclass
class LinearSystem:
    A: np.ndarray  # (d, d)
    B: np.ndarray  # (d,)
    noise_std: float
    xi_true: np.ndarray  # (d,)

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise std must be positive")
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.xi_true = np.asarray(self.xi_true, dtype=np.float64)

    def observe(self, x, rng) -> float:
        return float(self.xi_true @ x + self.noise_std * rng.standard_normal())


@dataclass
class GaussianBelief:
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.cov)) < -1e-10:
            raise ValueError("covariance must be positive semidefinite")


def kalman_update(belief: GaussianBelief, x, y: float,
                  noise_std: float) -> GaussianBelief:
    """Measurement update for the static parameter with observation row x."""
    x = np.asarray(x, dtype=np.float64)
    S = float(x @ belief.cov @ x) + noise_std**2
    K = belief.cov @ x / S
    mean = belief.mean + K * (y - float(belief.mean @ x))
    cov = belief.cov - np.outer(K, x @ belief.cov)
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean, cov)


def objective(cov: np.ndarray, states) -> float:
    """Sum over states of ln(x^T Sigma x), floored away from zero."""
    total = 0.0
    for x in states:
        x = np.asarray(x, dtype=np.float64)
        total += np.log(max(float(x @ cov @ x), OBJECTIVE_FLOOR))
    return float(total)


def rollout(system: LinearSystem, x0, controls) -> np.ndarray:
    """Future states induced by a control sequence (excludes x0)."""
    states = []
    x = np.asarray(x0, dtype=np.float64)
    for u in controls:
        x = system.A @ x + system.B * u
        states.append(x.copy())
    return np.array(states)


def greedy_control(system: LinearSystem, belief: GaussianBelief, x0,
                   horizon: int, control_grid):
    """Exhaustive search over control-grid sequences maximizing the objective.

    The belief is held fixed during the search: hypothetical future
    observations carry no new information about the parameter. Ties break
    toward the first sequence in grid enumeration order.
    """
    control_grid = list(control_grid)
    if not control_grid:
        raise ValueError("empty control grid")
    best_seq, best_val = None, -np.inf
    for seq in product(control_grid, repeat=horizon):
        states = rollout(system, x0, seq)
        val = objective(belief.cov, states)
        if val > best_val + 1e-12:
            best_seq, best_val = seq, val
    return list(best_seq), best_val
