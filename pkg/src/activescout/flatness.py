"""Quadrotor flatness map and minimum-snap piecewise polynomials.

Each flat output (x, y, z, yaw) is a 7th-order polynomial per segment in
time normalized to [0, 1]; position minimizes integrated squared snap and
yaw integrated squared acceleration, as decoupled equality-constrained QPs
solved through their dense KKT systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

N_COEFF = 8  # 7th-order polynomials

CRUISE_SPEED = 0.5  # m/s
ACCEL = 1.0  # m/s^2 ramp at both ends of the speed profile

KKT_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.5  # kg
    inertia: np.ndarray = None  # (3, 3) kg m^2
    gravity: np.ndarray = None  # acceleration vector, world frame

    def __post_init__(self):
        J = self.inertia if self.inertia is not None else np.diag(
            [2.3e-3, 2.3e-3, 4.0e-3])
        g = self.gravity if self.gravity is not None else np.array(
            [0.0, 0.0, -9.81])
        J = np.asarray(J, dtype=np.float64)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise ValueError("inertia must be symmetric positive definite")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "gravity", np.asarray(g, dtype=np.float64))


@dataclass
class FlatState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray
    snap: np.ndarray
    yaw: float
    yaw_rate: float
    yaw_acceleration: float


@dataclass
class FlatTrajectory:
    """Piecewise polynomials in normalized time; coeffs (n_seg, 8, 4)."""

    coeffs: np.ndarray  # [..., (x, y, z, yaw)]
    durations: np.ndarray  # (n_seg,)

    @property
    def total_duration(self) -> float:
        return float(self.durations.sum())

    @property
    def start_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def to_json_dict(self) -> dict:
        return {
            "durations": self.durations.tolist(),
            "coefficients": self.coeffs.tolist(),
            "outputs": ["x", "y", "z", "yaw"],
            "time_normalization": "per-segment tau in [0, 1]",
        }

    def sample(self, dt: float):
        """States at a fixed step, inclusive of both endpoints."""
        ts = np.arange(0.0, self.total_duration + 1e-12, dt)
        if ts[-1] < self.total_duration - 1e-9:
            ts = np.append(ts, self.total_duration)
        return ts, [evaluate(self, t) for t in ts]


def _dpoly(coeffs, tau, order):
    """order-th derivative of sum c_k tau^k w.r.t. tau."""
    val = 0.0
    for k in range(order, N_COEFF):
        fac = factorial(k) / factorial(k - order)
        val += coeffs[k] * fac * tau ** (k - order)
    return val


def _deriv_row(tau, order):
    row = np.zeros(N_COEFF)
    for k in range(order, N_COEFF):
        row[k] = factorial(k) / factorial(k - order) * tau ** (k - order)
    return row


def _gram(order, T):
    """Integral over the segment of squared order-th time derivative.

    With tau = t / T the cost is T^(1-2*order) * integral over tau.
    """
    Q = np.zeros((N_COEFF, N_COEFF))
    for k in range(order, N_COEFF):
        for l in range(order, N_COEFF):
            fk = factorial(k) / factorial(k - order)
            fl = factorial(l) / factorial(l - order)
            Q[k, l] = fk * fl / (k + l - 2 * order + 1)
    return Q * T ** (1 - 2 * order)


def _solve_1d(values, durations, cost_order, cont_orders, end_orders):
    """Min-cost piecewise polynomial through `values` via the KKT system."""
    n_seg = len(durations)
    n = n_seg * N_COEFF

    Q = np.zeros((n, n))
    for i, T in enumerate(durations):
        s = i * N_COEFF
        Q[s:s + N_COEFF, s:s + N_COEFF] = _gram(cost_order, T)

    rows, rhs = [], []

    def add(row, b):
        rows.append(row)
        rhs.append(b)

    for i in range(n_seg):
        r = np.zeros(n)
        r[i * N_COEFF:(i + 1) * N_COEFF] = _deriv_row(0.0, 0)
        add(r, values[i])
        r = np.zeros(n)
        r[i * N_COEFF:(i + 1) * N_COEFF] = _deriv_row(1.0, 0)
        add(r, values[i + 1])

    for order in end_orders:
        r = np.zeros(n)
        r[:N_COEFF] = _deriv_row(0.0, order) * durations[0] ** (-order)
        add(r, 0.0)
        r = np.zeros(n)
        r[-N_COEFF:] = _deriv_row(1.0, order) * durations[-1] ** (-order)
        add(r, 0.0)

    for i in range(n_seg - 1):
        for order in cont_orders:
            r = np.zeros(n)
            r[i * N_COEFF:(i + 1) * N_COEFF] = (
                _deriv_row(1.0, order) * durations[i] ** (-order))
            r[(i + 1) * N_COEFF:(i + 2) * N_COEFF] = (
                -_deriv_row(0.0, order) * durations[i + 1] ** (-order))
            add(r, 0.0)

    A = np.array(rows)
    b = np.array(rhs)
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = 2.0 * Q
    K[:n, n:] = A.T
    K[n:, :n] = A
    sol = np.linalg.solve(K, np.concatenate([np.zeros(n), b]))
    x = sol[:n]
    resid = np.max(np.abs(A @ x - b)) if m else 0.0
    if not np.isfinite(resid) or resid > KKT_RESIDUAL_TOL:
        raise np.linalg.LinAlgError(
            f"KKT solve failed (constraint residual {resid:.2e})")
    return x.reshape(n_seg, N_COEFF)


def min_snap(waypoints, yaws, times) -> FlatTrajectory:
    """Min-snap position / min-acceleration yaw through the waypoints.

    `times` are waypoint arrival times (strictly increasing). Both ends are
    at rest: position derivatives 1-3 and yaw derivatives 1-2 vanish there;
    the interior enforces continuity of position derivatives 1-4 and yaw
    derivatives 1-2. Yaw is unwrapped first so full turns fit as ramps.
    """
    waypoints = np.asarray(waypoints, dtype=np.float64)
    yaws = np.unwrap(np.asarray(yaws, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)
    if waypoints.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    if waypoints.shape[0] != len(yaws) or len(yaws) != len(times):
        raise ValueError("waypoints, yaws and times must have equal length")
    durations = np.diff(times)
    if np.any(durations <= 0):
        raise ValueError("times must be strictly increasing")

    n_seg = len(durations)
    coeffs = np.zeros((n_seg, N_COEFF, 4))
    for axis in range(3):
        coeffs[:, :, axis] = _solve_1d(
            waypoints[:, axis], durations, cost_order=4,
            cont_orders=(1, 2, 3, 4), end_orders=(1, 2, 3))
    coeffs[:, :, 3] = _solve_1d(
        yaws, durations, cost_order=2, cont_orders=(1, 2), end_orders=(1, 2))
    return FlatTrajectory(coeffs, durations)


def evaluate(traj: FlatTrajectory, t: float) -> FlatState:
    """Flat outputs and their derivatives at absolute time t."""
    total = traj.total_duration
    if t < -1e-9 or t > total + 1e-9:
        raise ValueError(f"t={t} outside [0, {total}]")
    t = min(max(t, 0.0), total)
    starts = traj.start_times
    seg = min(int(np.searchsorted(starts, t, side="right")) - 1,
              len(traj.durations) - 1)
    T = traj.durations[seg]
    tau = (t - starts[seg]) / T

    vals = np.empty((5, 4))  # derivative order x flat output
    for order in range(5):
        for out in range(4):
            vals[order, out] = _dpoly(traj.coeffs[seg, :, out], tau, order) \
                * T ** (-order)
    return FlatState(
        position=vals[0, :3].copy(), velocity=vals[1, :3].copy(),
        acceleration=vals[2, :3].copy(), jerk=vals[3, :3].copy(),
        snap=vals[4, :3].copy(),
        yaw=float(vals[0, 3]), yaw_rate=float(vals[1, 3]),
        yaw_acceleration=float(vals[2, 3]),
    )


def snap_cost(traj: FlatTrajectory) -> float:
    """Integrated squared snap of position (exact via the Gram matrices)."""
    total = 0.0
    for i, T in enumerate(traj.durations):
        Q = _gram(4, T)
        for axis in range(3):
            c = traj.coeffs[i, :, axis]
            total += float(c @ Q @ c)
    return total


# ---------------------------------------------------------------------------
# time allocation
# ---------------------------------------------------------------------------

def allocate_times(path) -> np.ndarray:
    """Waypoint times from a trapezoidal speed profile over the polyline.

    Constant +-ACCEL at the ends and CRUISE_SPEED in between; degenerates
    to a triangular profile for short paths.
    """
    path = np.asarray(path, dtype=np.float64)
    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
    L = float(seg_len.sum())
    if L <= 0:
        raise ValueError("path length must be positive")
    s = np.concatenate([[0.0], np.cumsum(seg_len)])

    a, v = ACCEL, CRUISE_SPEED
    s_ramp = v * v / (2 * a)
    if L >= 2 * s_ramp:
        t_ramp = v / a
        total = 2 * t_ramp + (L - 2 * s_ramp) / v

        def time_of(si):
            if si <= s_ramp:
                return np.sqrt(2 * si / a)
            if si <= L - s_ramp:
                return t_ramp + (si - s_ramp) / v
            return total - np.sqrt(2 * max(L - si, 0.0) / a)
    else:
        total = 2 * np.sqrt(L / a)

        def time_of(si):
            if si <= L / 2:
                return np.sqrt(2 * si / a)
            return total - np.sqrt(2 * max(L - si, 0.0) / a)

    times = np.array([time_of(si) for si in s])
    # guard against numerically coincident interior times on short segments
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + 1e-6
    return times


# ---------------------------------------------------------------------------
# differential flatness map
# ---------------------------------------------------------------------------

def _hat(w):
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def _vee(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def flat_to_state(flat: FlatState, params: QuadrotorParams) -> dict:
    """Recover attitude, body rates, thrust, and moments from flat outputs.

    The body z-axis aligns with the mass-normalized thrust vector
    M * (acceleration - gravity); yaw fixes the rotation about it. Body
    rates and moments follow from differentiating that construction.
    """
    M = params.mass
    J = params.inertia
    F = M * (flat.acceleration - params.gravity)
    f = float(np.linalg.norm(F))
    if f < 1e-9:
        raise ValueError("free-fall singularity: thrust vector vanishes")

    Fd = M * flat.jerk
    Fdd = M * flat.snap

    b3 = F / f
    fd = float(b3 @ Fd)
    b3d = (Fd - fd * b3) / f
    fdd = float(b3d @ Fd + b3 @ Fdd)
    b3dd = (Fdd - 2.0 * fd * b3d - fdd * b3) / f

    psi, psid, psidd = flat.yaw, flat.yaw_rate, flat.yaw_acceleration
    c1 = np.array([np.cos(psi), np.sin(psi), 0.0])
    c1d = psid * np.array([-np.sin(psi), np.cos(psi), 0.0])
    c1dd = (psidd * np.array([-np.sin(psi), np.cos(psi), 0.0])
            - psid * psid * c1)

    u = np.cross(b3, c1)
    ud = np.cross(b3d, c1) + np.cross(b3, c1d)
    udd = np.cross(b3dd, c1) + 2.0 * np.cross(b3d, c1d) + np.cross(b3, c1dd)
    nrm = float(np.linalg.norm(u))
    if nrm < 1e-9:
        raise ValueError("yaw direction parallel to thrust axis")
    b2 = u / nrm
    nd = float(b2 @ ud)
    b2d = (ud - nd * b2) / nrm
    ndd = float(ud @ ud + u @ udd - nd * nd) / nrm
    b2dd = (udd - 2.0 * nd * b2d - ndd * b2) / nrm

    b1 = np.cross(b2, b3)
    b1d = np.cross(b2d, b3) + np.cross(b2, b3d)
    b1dd = np.cross(b2dd, b3) + 2.0 * np.cross(b2d, b3d) + np.cross(b2, b3dd)

    R = np.column_stack([b1, b2, b3])
    Rd = np.column_stack([b1d, b2d, b3d])
    Rdd = np.column_stack([b1dd, b2dd, b3dd])

    Omega_hat = R.T @ Rd
    Omega_hat = 0.5 * (Omega_hat - Omega_hat.T)  # clean numerical symmetry
    Omega = _vee(Omega_hat)
    Omega_dot_hat = R.T @ Rdd - Omega_hat @ Omega_hat
    Omega_dot = _vee(0.5 * (Omega_dot_hat - Omega_dot_hat.T))

    moments = J @ Omega_dot + np.cross(Omega, J @ Omega)
    return {
        "rotation": R,
        "omega": Omega,
        "omega_dot": Omega_dot,
        "thrust": f,
        "moments": moments,
    }
