"""Discrete-time trajectory problems over flattened control sequences.

A control sequence is a flat vector u of length d*T (d inputs per step, T
steps, step-major: u = [u_0, u_1, ..., u_{T-1}]). Stage costs follow the
convention that controls u_0..u_{T-1} are paid together with the states
x_1..x_T they produce; the fixed initial state x_0 is not penalized and not
constraint-checked (it is not controllable).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError, InfeasibleProblemError

Array = np.ndarray


def _check_controls(u: Array, expected: int, what: str = "control sequence") -> Array:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] != expected:
        raise DimensionMismatchError(expected, int(u.size), what)
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{what} contains non-finite entries")
    return u


@dataclass(frozen=True)
class TrajectoryProblem:
    """A finite-horizon control problem exposed through callables.

    `objective` maps a flat control vector to a scalar cost; `feasible` is the
    hard indicator of the constraint set (control bounds and any state
    constraints, checked at the discrete states x_1..x_T). A certified
    feasible control sequence must be supplied at construction so the
    weighted-sampling machinery is never started on an empty feasible set.

    `objective_batch` / `feasible_batch` optionally vectorize over the leading
    axis of an (N, d*T) array; when absent, row-by-row fallbacks are used.
    """

    control_dim: int
    horizon: int
    initial_state: Array
    dynamics: Callable[[Array, Array], Array]
    objective: Callable[[Array], float]
    feasible: Callable[[Array], bool]
    known_feasible: Array
    objective_batch: Optional[Callable[[Array], Array]] = None
    feasible_batch: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        object.__setattr__(self, "initial_state", np.asarray(self.initial_state, dtype=float))
        kf = _check_controls(self.known_feasible, self.n_controls, "known-feasible sequence")
        object.__setattr__(self, "known_feasible", kf)
        if not self.feasible(kf):
            raise InfeasibleProblemError(
                "registered known-feasible control sequence fails the feasibility check"
            )
        if not np.isfinite(self.objective(kf)):
            raise ValueError("objective is not finite on the known-feasible sequence")

    @property
    def n_controls(self) -> int:
        return self.control_dim * self.horizon

    def batch_objective(self, controls: Array) -> Array:
        controls = np.asarray(controls, dtype=float)
        if self.objective_batch is not None:
            return np.asarray(self.objective_batch(controls), dtype=float)
        return np.array([self.objective(row) for row in controls], dtype=float)

    def batch_feasible(self, controls: Array) -> Array:
        controls = np.asarray(controls, dtype=float)
        if self.feasible_batch is not None:
            return np.asarray(self.feasible_batch(controls), dtype=bool)
        return np.array([self.feasible(row) for row in controls], dtype=bool)


def rollout(problem: TrajectoryProblem, controls: Array) -> Array:
    """Roll the dynamics forward; returns states of shape (T+1, n), x_0 first."""
    u = _check_controls(controls, problem.n_controls)
    d = problem.control_dim
    x = np.asarray(problem.initial_state, dtype=float)
    states = np.empty((problem.horizon + 1, x.shape[0]))
    states[0] = x
    for t in range(problem.horizon):
        x = problem.dynamics(x, u[t * d : (t + 1) * d])
        states[t + 1] = x
    return states


# ---------------------------------------------------------------------------
# Linear-quadratic problem with box state/control constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqrSpec:
    """Linear dynamics x_{t+1} = Ax_t + Bu_t with quadratic stage costs.

    The cost is the half-quadratic form
        J(u) = 1/2 sum_{t=1..T} x_t' Q x_t + 1/2 sum_{t=0..T-1} u_t' R u_t,
    and the constraint set is the control box [u_min, u_max]^... intersected
    with per-coordinate state bounds applied to x_1..x_T.
    """

    a: Array
    b: Array
    q: Array
    r: Array
    x0: Array
    horizon: int
    u_min: Array
    u_max: Array
    x_min: Array
    x_max: Array

    def __post_init__(self):
        for name in ("a", "b", "q", "r", "x0", "u_min", "u_max", "x_min", "x_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, m = self.b.shape
        if self.a.shape != (n, n):
            raise ValueError(f"A must be ({n},{n}), got {self.a.shape}")
        for mat, dim, name in ((self.q, n, "Q"), (self.r, m, "R")):
            if mat.shape != (dim, dim):
                raise ValueError(f"{name} must be ({dim},{dim}), got {mat.shape}")
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(mat).min() < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.b.shape[0]

    @property
    def control_dim(self) -> int:
        return self.b.shape[1]


def double_integrator(horizon: int = 10) -> LqrSpec:
    """The benchmark double integrator: position/velocity state, scalar force.

    Stage matrices 2*I make the half-quadratic cost equal the plain squared
    norms sum(|x_t|^2 + |u_t|^2); from x0 = (2.5, 0) the zero sequence costs
    10 * 2.5^2 = 62.5 over the default horizon.
    """
    return LqrSpec(
        a=[[1.0, 1.0], [0.0, 1.0]],
        b=[[0.5], [1.0]],
        q=[[2.0, 0.0], [0.0, 2.0]],
        r=[[2.0]],
        x0=[2.5, 0.0],
        horizon=horizon,
        u_min=[-1.0],
        u_max=[1.0],
        x_min=[-5.0, -1.0],
        x_max=[5.0, 1.0],
    )


def _lqr_states_batch(spec: LqrSpec, controls: Array) -> Array:
    """States x_1..x_T for each row of controls; shape (N, T, n)."""
    n, m, T = spec.state_dim, spec.control_dim, spec.horizon
    U = controls.reshape(controls.shape[0], T, m)
    X = np.empty((controls.shape[0], T, n))
    x = np.broadcast_to(spec.x0, (controls.shape[0], n))
    at, bt = spec.a.T, spec.b.T
    for t in range(T):
        x = x @ at + U[:, t, :] @ bt
        X[:, t, :] = x
    return X


def lqr_objective(spec: LqrSpec, controls: Array) -> float:
    u = _check_controls(controls, spec.control_dim * spec.horizon)
    return float(lqr_objective_batch(spec, u[None, :])[0])


def lqr_objective_batch(spec: LqrSpec, controls: Array) -> Array:
    controls = np.asarray(controls, dtype=float)
    X = _lqr_states_batch(spec, controls)
    U = controls.reshape(controls.shape[0], spec.horizon, spec.control_dim)
    state_cost = 0.5 * np.einsum("ntk,kl,ntl->n", X, spec.q, X)
    control_cost = 0.5 * np.einsum("ntk,kl,ntl->n", U, spec.r, U)
    return state_cost + control_cost


def lqr_feasible_batch(spec: LqrSpec, controls: Array) -> Array:
    controls = np.asarray(controls, dtype=float)
    U = controls.reshape(controls.shape[0], spec.horizon, spec.control_dim)
    ok = (U >= spec.u_min).all(axis=(1, 2)) & (U <= spec.u_max).all(axis=(1, 2))
    X = _lqr_states_batch(spec, controls)
    ok &= (X >= spec.x_min).all(axis=(1, 2)) & (X <= spec.x_max).all(axis=(1, 2))
    return ok


def lqr_problem(spec: LqrSpec) -> TrajectoryProblem:
    def dyn(x: Array, u: Array) -> Array:
        return spec.a @ x + spec.b @ u

    return TrajectoryProblem(
        control_dim=spec.control_dim,
        horizon=spec.horizon,
        initial_state=spec.x0,
        dynamics=dyn,
        objective=lambda u: lqr_objective(spec, u),
        feasible=lambda u: bool(
            lqr_feasible_batch(spec, _check_controls(u, spec.control_dim * spec.horizon)[None, :])[0]
        ),
        known_feasible=np.zeros(spec.control_dim * spec.horizon),
        objective_batch=lambda U: lqr_objective_batch(spec, U),
        feasible_batch=lambda U: lqr_feasible_batch(spec, U),
    )


def lqr_stage_cost(spec: LqrSpec, x_next: Array, u: Array) -> float:
    """Cost paid for one transition: the state it produces plus the control."""
    x_next = np.asarray(x_next, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(0.5 * x_next @ spec.q @ x_next + 0.5 * u @ spec.r @ u)


# ---------------------------------------------------------------------------
# Dubins car with circular obstacles
# ---------------------------------------------------------------------------

# Stand-in obstacle field: a diagonal wall between start and goal with
# passable gaps near the ends. Overridable through DubinsSpec/config.
DEFAULT_OBSTACLES = (
    (0.6, 5.4, 0.6),
    (1.5, 4.5, 0.6),
    (2.4, 3.6, 0.6),
    (3.6, 2.4, 0.6),
    (4.5, 1.5, 0.6),
    (5.4, 0.6, 0.6),
)


@dataclass(frozen=True)
class DubinsSpec:
    """Constant-speed planar car steered by its turn rate.

    State is (px, py, heading); the single control w_t is the turn rate,
    bounded by |w_t| <= w_max. Dynamics (Euler step):
        x_{t+1} = x_t + dt * (v cos(theta_t), v sin(theta_t), w_t).
    Stage cost |x_t - target|^2_Q + r * w^2 with diagonal Q weights; heading
    error is the plain difference (no angle wrapping). Obstacles are circles
    (cx, cy, radius); a trajectory is feasible when every discrete state
    x_1..x_T lies strictly outside all of them.
    """

    speed: float = 4.0
    dt: float = 0.1
    horizon: int = 20
    x0: Array = field(default_factory=lambda: np.array([0.0, 0.0, np.pi / 2]))
    target: Array = field(default_factory=lambda: np.array([6.0, 6.0, 0.0]))
    q_weights: Array = field(default_factory=lambda: np.array([1.0, 1.0, 0.01]))
    r_weight: float = 0.001
    w_max: float = 1.5 * np.pi
    obstacles: Array = field(default_factory=lambda: np.array(DEFAULT_OBSTACLES))

    def __post_init__(self):
        for name in ("x0", "target", "q_weights", "obstacles"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.obstacles.size == 0:
            object.__setattr__(self, "obstacles", np.empty((0, 3)))
        if self.obstacles.ndim != 2 or self.obstacles.shape[1] != 3:
            raise ValueError("obstacles must be rows of (cx, cy, radius)")
        if self.w_max <= 0 or self.dt <= 0 or self.speed < 0:
            raise ValueError("dt and w_max must be positive, speed non-negative")


def dubins_states_batch(spec: DubinsSpec, controls: Array) -> Array:
    """Vectorized rollout; returns x_1..x_T with shape (N, T, 3)."""
    W = np.asarray(controls, dtype=float)
    theta = spec.x0[2] + spec.dt * np.cumsum(W, axis=1)
    theta_path = np.concatenate(
        [np.full((W.shape[0], 1), spec.x0[2]), theta[:, :-1]], axis=1
    )
    px = spec.x0[0] + spec.speed * spec.dt * np.cumsum(np.cos(theta_path), axis=1)
    py = spec.x0[1] + spec.speed * spec.dt * np.cumsum(np.sin(theta_path), axis=1)
    return np.stack([px, py, theta], axis=2)


def dubins_objective_batch(spec: DubinsSpec, controls: Array) -> Array:
    W = np.asarray(controls, dtype=float)
    X = dubins_states_batch(spec, W)
    err = X - spec.target
    return (err**2 @ spec.q_weights).sum(axis=1) + spec.r_weight * (W**2).sum(axis=1)


def dubins_feasible_batch(spec: DubinsSpec, controls: Array) -> Array:
    W = np.asarray(controls, dtype=float)
    ok = (np.abs(W) <= spec.w_max).all(axis=1)
    if spec.obstacles.shape[0]:
        p = dubins_states_batch(spec, W)[:, :, :2]
        centers = spec.obstacles[:, :2]
        radii2 = spec.obstacles[:, 2] ** 2
        d2 = ((p[:, :, None, :] - centers[None, None, :, :]) ** 2).sum(axis=3)
        ok &= (d2 > radii2).all(axis=(1, 2))
    return ok


def dubins_stage_cost(spec: DubinsSpec, x_next: Array, u: Array) -> float:
    err = np.asarray(x_next, dtype=float) - spec.target
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(err**2 @ spec.q_weights + spec.r_weight * (u @ u))


def dubins_clear(spec: DubinsSpec, state: Array) -> bool:
    """True when a single state lies strictly outside every obstacle."""
    if spec.obstacles.shape[0] == 0:
        return True
    d2 = ((np.asarray(state)[:2] - spec.obstacles[:, :2]) ** 2).sum(axis=1)
    return bool((d2 > spec.obstacles[:, 2] ** 2).all())


def dubins_problem(spec: DubinsSpec, known_candidate: Optional[Array] = None) -> TrajectoryProblem:
    """Build the TrajectoryProblem; `known_candidate` seeds the feasible search
    (useful when re-rooting at a mid-flight state with a warm-started plan)."""
    T = spec.horizon

    def dyn(x: Array, u: Array) -> Array:
        return x + spec.dt * np.array(
            [spec.speed * np.cos(x[2]), spec.speed * np.sin(x[2]), float(u[0])]
        )

    feasible_batch = lambda U: dubins_feasible_batch(spec, U)
    known = _find_feasible_controls(spec, extra=known_candidate)
    return TrajectoryProblem(
        control_dim=1,
        horizon=T,
        initial_state=spec.x0,
        dynamics=dyn,
        objective=lambda u: float(dubins_objective_batch(spec, _check_controls(u, T)[None, :])[0]),
        feasible=lambda u: bool(feasible_batch(_check_controls(u, T)[None, :])[0]),
        known_feasible=known,
        objective_batch=lambda U: dubins_objective_batch(spec, U),
        feasible_batch=lambda U: dubins_feasible_batch(spec, U),
    )


def _find_feasible_controls(spec: DubinsSpec, extra: Optional[Array] = None) -> Array:
    """Pick a certified-feasible turn-rate sequence, or fail loudly.

    Tries (in order) a caller-supplied candidate, no turning, and constant
    turns at graded fractions of the rate limit in both directions.
    """
    T = spec.horizon
    candidates = []
    if extra is not None:
        candidates.append(np.asarray(extra, dtype=float))
    candidates.append(np.zeros(T))
    for frac in (0.25, 0.5, 0.75, 1.0):
        candidates.append(np.full(T, frac * spec.w_max))
        candidates.append(np.full(T, -frac * spec.w_max))
    for cand in candidates:
        if cand.shape == (T,) and bool(dubins_feasible_batch(spec, cand[None, :])[0]):
            return cand
    raise InfeasibleProblemError(
        "no feasible control sequence found from the current state"
    )
