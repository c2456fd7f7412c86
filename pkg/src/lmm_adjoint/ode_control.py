"""Forward multistep integration of controlled ODEs and both adjoint routes.

The discretize-then-optimize (DtO) route solves the transposed recurrence of
the discrete optimality system; the optimize-then-discretize (OtD) route
applies the same tableau to the time-reversed continuous adjoint equation.
Both return multipliers in the continuous sign convention, i.e. they
approximate p with  -p' = f_y(y,u)^T p,  p(T) = j'(y(T)).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tableaus import MultistepTableau, TimeGrid, bootstrap_history, step


class SolverBlowUpError(RuntimeError):
    """Forward integration produced a non-finite state."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class SingularAdjointStepError(RuntimeError):
    """Pointwise adjoint solve matrix (1 - dt*b_{-1}*f_y) is numerically singular."""


class AdjointRoute(enum.Enum):
    DISCRETIZE_THEN_OPTIMIZE = "dto"
    OPTIMIZE_THEN_DISCRETIZE = "otd"


@dataclass
class OdeControlProblem:
    """Controlled ODE y' = f(y,u,t) with terminal cost j(y(T)) + (alpha/2) int u^2.

    All callables take (y, u, t) with y a 1-D state array; ``f_y`` returns the
    (n, n) state Jacobian and ``f_u`` the (n,) control derivative.  Exact
    solution hooks, when supplied, drive exact-history bootstrapping and the
    convergence studies.
    """

    f: Callable
    f_y: Callable
    f_u: Callable | None = None
    terminal_cost: Callable | None = None
    terminal_cost_grad: Callable | None = None
    alpha: float = 0.0
    y0: np.ndarray | float = 0.0
    y_exact: Callable | None = None
    p_exact: Callable | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("running-cost weight alpha must be >= 0")
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))

    @property
    def dim(self) -> int:
        return self.y0.size

    def jac(self, y, u, t) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.f_y(y, u, t), dtype=float))


@dataclass
class Trajectory:
    """States and controls on indices 1-s..N (array slot i+s-1 holds index i)."""

    grid: TimeGrid
    s: int
    states: np.ndarray    # (N+s, n)
    controls: np.ndarray  # (N+s,)

    def slot(self, i: int) -> int:
        return i + self.s - 1

    def state(self, i: int) -> np.ndarray:
        return self.states[self.slot(i)]

    def control(self, i: int) -> float:
        return self.controls[self.slot(i)]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class AdjointTrajectory:
    """Multipliers on indices 1-s..N in the continuous sign convention."""

    grid: TimeGrid
    s: int
    multipliers: np.ndarray  # (N+s, n)
    route: AdjointRoute

    def slot(self, i: int) -> int:
        return i + self.s - 1

    def p(self, i: int) -> np.ndarray:
        return self.multipliers[self.slot(i)]

    def on_grid(self) -> np.ndarray:
        """Multipliers at indices 0..N (drops the pre-initial block)."""
        return self.multipliers[self.s - 1:]


def _controls_array(controls, grid: TimeGrid, s: int) -> np.ndarray:
    n_tot = grid.N + s
    if callable(controls):
        return np.array([float(controls(grid.t(i))) for i in range(1 - s, grid.N + 1)])
    arr = np.atleast_1d(np.asarray(controls, dtype=float))
    if arr.size == 1:
        return np.full(n_tot, arr[0])
    if arr.size != n_tot:
        raise ValueError(
            f"controls must cover all {n_tot} indices 1-s..N, got {arr.size}")
    return arr.copy()


def solve_forward(problem: OdeControlProblem, tab: MultistepTableau,
                  grid: TimeGrid, controls=0.0,
                  init_mode: str = "exact") -> Trajectory:
    """Integrate y' = f(y,u,t) over the grid with the given tableau.

    Controls may be a scalar, an (N+s,) array aligned to indices 1-s..N, or
    a callable of t.  History initialization follows ``init_mode`` (``exact``
    needs the problem's exact-solution hook).  Raises ``SolverBlowUpError``
    with the offending step index on NaN/overflow.
    """
    s = tab.s
    u = _controls_array(controls, grid, s)

    def u_at(i):
        return u[i + s - 1]

    def rhs(y, t):
        # time-indexed control lookup: t maps back to the nearest index
        i = int(round((t - grid.t0) / grid.dt))
        return np.atleast_1d(np.asarray(problem.f(y, u_at(i), t), dtype=float))

    def jac(y, t):
        i = int(round((t - grid.t0) / grid.dt))
        return problem.jac(y, u_at(i), t)

    hist = bootstrap_history(tab, grid, rhs, problem.y0, mode=init_mode,
                             y_exact=problem.y_exact)
    n = problem.dim
    states = np.empty((grid.N + s, n))
    for k, y in enumerate(reversed(hist.states())):  # oldest -> newest
        states[k] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for nstep in range(grid.N):
            t_new = grid.t(nstep + 1)
            y_new = step(tab, hist, grid.dt, rhs, t_new, jac=jac)
            if not np.all(np.isfinite(y_new)):
                raise SolverBlowUpError(
                    f"non-finite state at step {nstep + 1} (t={t_new:.6g})",
                    step_index=nstep + 1)
            states[nstep + s] = y_new
            hist.push(y_new, rhs(y_new, t_new))
    return Trajectory(grid, s, states, u)


def prescribed_trajectory(grid: TimeGrid, s: int, y_of_t: Callable,
                          controls=0.0) -> Trajectory:
    """Trajectory with states sampled from an analytic y(t) (study helper)."""
    states = np.array([np.atleast_1d(np.asarray(y_of_t(grid.t(i)), dtype=float))
                       for i in range(1 - s, grid.N + 1)])
    u = _controls_array(controls, grid, s)
    return Trajectory(grid, s, states, u)


def _fy_at(problem, traj, i, fy_beyond=None):
    """State Jacobian at index i; indices beyond N use the hook or clamp to N."""
    N = traj.grid.N
    if i > N:
        t = traj.grid.t(i)
        if fy_beyond is not None:
            return np.atleast_2d(np.asarray(fy_beyond(t), dtype=float))
        if problem.y_exact is not None:
            y = np.atleast_1d(np.asarray(problem.y_exact(t), dtype=float))
            return problem.jac(y, traj.control(N), t)
        i = N  # clamp: documented order loss near T for Adams tableaus
    return problem.jac(traj.state(i), traj.control(i), traj.grid.t(i))


def _terminal_values(problem, traj, tab, terminal):
    """Values seeded at indices N..N+s-1 ('exact' or 'replicate' convention)."""
    grid, s = traj.grid, tab.s
    if terminal == "auto":
        terminal = "exact" if problem.p_exact is not None else "replicate"
    if terminal == "exact":
        if problem.p_exact is None:
            raise ValueError("terminal='exact' requires the p_exact hook")
        return [np.atleast_1d(np.asarray(problem.p_exact(grid.t(grid.N + k)),
                                         dtype=float))
                for k in range(s)], terminal
    if terminal == "replicate":
        if problem.terminal_cost_grad is None:
            raise ValueError("terminal='replicate' requires terminal_cost_grad")
        jy = np.atleast_1d(np.asarray(
            problem.terminal_cost_grad(traj.terminal_state), dtype=float))
        return [jy.copy() for _ in range(s)], terminal
    raise ValueError(f"unknown terminal mode {terminal!r}")


def _pointwise_solve(M, rhs, i):
    if M.shape == (1, 1):
        if abs(M[0, 0]) < 1e-14:
            raise SingularAdjointStepError(
                f"(1 - dt*b_-1*f_y) vanishes at step index {i}")
        return rhs / M[0, 0]
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise SingularAdjointStepError(
            f"singular pointwise adjoint matrix at step index {i}") from None


def solve_adjoint_otd(problem: OdeControlProblem, tab: MultistepTableau,
                      grid: TimeGrid, traj: Trajectory,
                      terminal: str = "auto",
                      fy_beyond: Callable | None = None) -> AdjointTrajectory:
    """Adjoint by discretizing the continuous equation (time-reversed tableau).

    Backward recurrence, solved for p_{n-1} from the s future multipliers:

        p_{n-1} = -sum_i a_i p_{n+i}
                  + dt * sum_{i=-1}^{s-1} b_i f_y(y_{n+i},u_{n+i})^T p_{n+i}

    The s-deep terminal history at indices N..N+s-1 comes from ``p_exact``
    (``terminal='exact'``) or replicates j_y(y_N) (``'replicate'``); ``auto``
    picks the former when the hook exists.  ``fy_beyond(t)`` supplies the
    Jacobian past T for Adams tableaus on prescribed studies.
    """
    s, N, dt, n = tab.s, grid.N, grid.dt, problem.dim
    if N < s:
        raise ValueError(f"adjoint solve needs N >= s (got N={N}, s={s})")
    term_vals, _ = _terminal_values(problem, traj, tab, terminal)
    # extended multiplier array on indices 1-s .. N+s-1
    ext = np.zeros((N + 2 * s - 1, n))

    def eslot(i):
        return i + s - 1

    for k in range(s):
        ext[eslot(N + k)] = term_vals[k]
    fy_cache = {}

    def fy(i):
        if i not in fy_cache:
            fy_cache[i] = _fy_at(problem, traj, i, fy_beyond)
        return fy_cache[i]

    eye = np.eye(n)
    for nn in range(N, -(s - 1), -1):  # computes p_{nn-1}
        acc = np.zeros(n)
        for i in range(s):
            p_f = ext[eslot(nn + i)]
            acc += -tab.a[i] * p_f
            if tab.b[i + 1] != 0.0:
                acc += dt * tab.b[i + 1] * (fy(nn + i).T @ p_f)
        M = eye - dt * tab.b_implicit * fy(nn - 1).T
        ext[eslot(nn - 1)] = _pointwise_solve(M, acc, nn - 1)
    return AdjointTrajectory(grid, s, ext[: N + s].copy(),
                             AdjointRoute.OPTIMIZE_THEN_DISCRETIZE)


def solve_adjoint_dto(problem: OdeControlProblem, tab: MultistepTableau,
                      grid: TimeGrid, traj: Trajectory,
                      terminal: str = "cost") -> AdjointTrajectory:
    """Adjoint of the discretized problem (transposed recurrence).

    Solves, right to left with p_j = 0 for j > N,

        0 = p_i + a^T(p_{i+1},..,p_{i+s})
            - dt * f_y(y_i,u_i)^T b^T(p_i,..,p_{i+s}) + d_{y_i} j(y_N)

    The terminal block i = N-s+1..N is assembled and solved as one coupled
    linear system; interior indices are pointwise implicit solves.  Output is
    sign-normalized to the continuous convention.  ``terminal='exact'``
    instead seeds indices N..N+s-1 from ``p_exact`` and sweeps every lower
    index with the interior recurrence (prescribed-trajectory studies).

    The transposed system fixes the multiplier amplitude so that the
    b-weighted stencil combination, not the raw multiplier, approximates the
    continuous adjoint (for BDF the raw values carry a 1/b_{-1} factor).
    Stationarity residuals and cost gradients therefore always contract the
    multipliers through (B^T p); see ``optimality_residual``.
    """
    s, N, dt, n = tab.s, grid.N, grid.dt, problem.dim
    if N < s:
        raise ValueError(f"adjoint solve needs N >= s (got N={N}, s={s})")
    ext = np.zeros((N + 2 * s - 1, n))  # indices 1-s .. N+s-1, zeros above N

    def eslot(i):
        return i + s - 1

    def fy(i):
        return _fy_at(problem, traj, i)

    eye = np.eye(n)

    def interior_solve(i):
        # (I - dt b_-1 f_y^T) p_i = sum_k [-a_k + dt b_k f_y^T] p_{i+k+1}
        J = fy(i).T
        acc = np.zeros(n)
        for k in range(s):
            p_f = ext[eslot(i + k + 1)]
            acc += -tab.a[k] * p_f
            if tab.b[k + 1] != 0.0:
                acc += dt * tab.b[k + 1] * (J @ p_f)
        M = eye - dt * tab.b_implicit * J
        ext[eslot(i)] = _pointwise_solve(M, acc, i)

    if terminal == "exact":
        term_vals, _ = _terminal_values(problem, traj, tab, "exact")
        for k in range(s):
            ext[eslot(N + k)] = term_vals[k]
        for i in range(N - 1, -s, -1):
            interior_solve(i)
        return AdjointTrajectory(grid, s, ext[: N + s].copy(),
                                 AdjointRoute.DISCRETIZE_THEN_OPTIMIZE)
    if terminal != "cost":
        raise ValueError(f"unknown terminal mode {terminal!r}")
    if problem.terminal_cost_grad is None:
        raise ValueError("DtO route requires terminal_cost_grad")

    jy = np.atleast_1d(np.asarray(
        problem.terminal_cost_grad(traj.terminal_state), dtype=float))
    # Terminal block: s coupled equations for p_{N-s+1..N} (coupled through
    # b^T p);  unknown vector stacks (p_{N-s+1}, ..., p_N).
    M = np.zeros((s * n, s * n))
    rhs = np.zeros(s * n)
    for r, i in enumerate(range(N - s + 1, N + 1)):
        J = fy(i).T
        M[r * n:(r + 1) * n, r * n:(r + 1) * n] += eye - dt * tab.b_implicit * J
        for k in range(s):
            j_idx = i + k + 1
            if j_idx > N:
                continue
            c = j_idx - (N - s + 1)
            M[r * n:(r + 1) * n, c * n:(c + 1) * n] += (
                tab.a[k] * eye - dt * tab.b[k + 1] * J)
        if i == N:
            rhs[r * n:(r + 1) * n] = jy  # continuous-sign flip applied here
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise SingularAdjointStepError(
            "singular terminal block in the transposed adjoint system") from None
    for r, i in enumerate(range(N - s + 1, N + 1)):
        ext[eslot(i)] = sol[r * n:(r + 1) * n]
    # interior sweep
    for i in range(N - s, 0, -1):
        interior_solve(i)
    # multipliers of the initial-data identities (i <= 0): explicit, and the
    # implicit b_-1 coupling is absent because those rows carry no f-term
    for i in range(0, -s, -1):
        J = fy(i).T
        acc = np.zeros(n)
        for k in range(s):
            j_idx = i + k + 1
            if j_idx < 1:
                continue
            p_f = ext[eslot(j_idx)]
            acc += -tab.a[k] * p_f
            if tab.b[k + 1] != 0.0:
                acc += dt * tab.b[k + 1] * (J @ p_f)
        ext[eslot(i)] = acc
    return AdjointTrajectory(grid, s, ext[: N + s].copy(),
                             AdjointRoute.DISCRETIZE_THEN_OPTIMIZE)


def _bt_p(adj: AdjointTrajectory, tab: MultistepTableau, i: int,
          J=None, step_equations_only: bool = True) -> np.ndarray:
    """b^T (p_i, ..., p_{i+s}) with p_j = 0 outside the step-equation range."""
    s, N, n = tab.s, adj.grid.N, adj.multipliers.shape[1]
    acc = np.zeros(n)
    for k in range(-1, s):
        j_idx = i + k + 1
        lo = 1 if step_equations_only else 1 - s
        if j_idx < lo or j_idx > N:
            continue
        acc += tab.b[k + 1] * adj.p(j_idx)
    return acc


def optimality_residual(problem: OdeControlProblem, traj: Trajectory,
                        adj: AdjointTrajectory, tab: MultistepTableau) -> np.ndarray:
    """Stationarity residual at every index 1-s..N.

    OtD route: r_i = f_u(y_i,u_i)^T p_i + alpha*u_i.  DtO route uses the
    b-weighted multiplier combination (B^T p)_i in place of p_i.  The alpha
    term applies on the cost-quadrature indices 0..N only.
    """
    if problem.f_u is None:
        raise ValueError("optimality residual requires f_u")
    grid, s = traj.grid, traj.s
    out = np.zeros(grid.N + s)
    for i in range(1 - s, grid.N + 1):
        fu = np.atleast_1d(np.asarray(
            problem.f_u(traj.state(i), traj.control(i), grid.t(i)), dtype=float))
        if adj.route is AdjointRoute.DISCRETIZE_THEN_OPTIMIZE:
            pw = _bt_p(adj, tab, i)
        else:
            pw = adj.p(i)
        r = float(fu @ pw)
        if i >= 0:
            r += problem.alpha * traj.control(i)
        out[traj.slot(i)] = r
    return out


def discrete_cost(problem: OdeControlProblem, traj: Trajectory) -> float:
    """j(y_N) + (alpha/2) * dt * sum_{i=0..N} u_i^2 for a solved trajectory."""
    if problem.terminal_cost is None:
        raise ValueError("discrete cost requires terminal_cost")
    val = float(problem.terminal_cost(traj.terminal_state))
    if problem.alpha:
        u_on = traj.controls[traj.s - 1:]
        val += 0.5 * problem.alpha * traj.grid.dt * float(np.sum(u_on ** 2))
    return val


def cost_gradient_dto(problem: OdeControlProblem, traj: Trajectory,
                      adj: AdjointTrajectory, tab: MultistepTableau) -> np.ndarray:
    """Exact gradient of the discrete cost w.r.t. every control u_i.

    Equals dt times the DtO optimality residual; matches brute-force finite
    differences of ``discrete_cost`` to solver tolerance.
    """
    if adj.route is not AdjointRoute.DISCRETIZE_THEN_OPTIMIZE:
        raise ValueError("exact discrete gradient requires the DtO adjoint")
    return traj.grid.dt * optimality_residual(problem, traj, adj, tab)
