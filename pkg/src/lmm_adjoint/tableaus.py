"""Linear multistep tableaus and the generic s-stage recurrence.

An s-stage scheme is described by coefficient vectors ``a`` (length s) and
``b`` (length s+1, with ``b[0]`` the coefficient of the implicit, newest
right-hand-side evaluation).  The update reads

    y_{n+1} = -sum_i a[i] * y_{n-i} + dt * ( b[0]*f(y_{n+1})
              + sum_{k>=0} b[k+1]*f(y_{n-k}) )

Coefficients are stored as exact rationals and converted to floating point
once, so consistency identities hold to the last ulp.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np


class UnknownTableauError(KeyError):
    """Requested scheme name is not in the registry."""


class ImplicitSolveError(RuntimeError):
    """Newton/fixed-point iteration for an implicit step did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class MultistepTableau:
    """Coefficient pair (a, b) plus metadata for one multistep scheme.

    ``a_exact`` has s entries (a_0, ..., a_{s-1}); ``b_exact`` has s+1
    entries (b_{-1}, b_0, ..., b_{s-1}).  Float views are cached at
    construction.
    """

    name: str
    s: int
    a_exact: tuple[Fraction, ...]
    b_exact: tuple[Fraction, ...]
    nominal_order: int
    a: np.ndarray = field(init=False, repr=False, compare=False)
    b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.s < 1 or len(self.a_exact) != self.s or len(self.b_exact) != self.s + 1:
            raise ValueError(f"inconsistent tableau dimensions for {self.name!r}")
        if 1 + sum(self.a_exact) != 0:
            raise ValueError(f"tableau {self.name!r} violates 1 + sum(a) = 0")
        object.__setattr__(self, "a", np.array([float(c) for c in self.a_exact]))
        object.__setattr__(self, "b", np.array([float(c) for c in self.b_exact]))

    @property
    def b_implicit(self) -> float:
        """Weight b_{-1} of the implicit right-hand-side evaluation."""
        return float(self.b_exact[0])

    @property
    def is_implicit(self) -> bool:
        return self.b_exact[0] != 0

    @property
    def is_bdf(self) -> bool:
        """b_i = 0 for all i >= 0 and b_{-1} != 0."""
        return self.b_exact[0] != 0 and all(c == 0 for c in self.b_exact[1:])

    @property
    def is_adams(self) -> bool:
        """a = (-1, 0, ..., 0)."""
        return self.a_exact[0] == -1 and all(c == 0 for c in self.a_exact[1:])

    @property
    def is_adams_bashforth(self) -> bool:
        """Explicit Adams: b_{-1} = 0."""
        return self.is_adams and self.b_exact[0] == 0

    @property
    def is_adams_moulton(self) -> bool:
        """Implicit Adams that is not a BDF scheme."""
        return self.is_adams and self.b_exact[0] != 0 and not self.is_bdf


def derive_bdf(s: int) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
    """Exact-rational BDF(s) coefficients from the s+1 order conditions.

    Solves the moment equations sum_j alpha_j * j^m = m * beta * s^(m-1),
    m = 0..s, for the stencil nodes j = 0..s (node s is y_{n+1}), by
    Gaussian elimination over Fraction.  Normalized so alpha_s = 1.
    """
    n = s + 2  # unknowns: alpha_0..alpha_s, beta
    rows = []
    for m in range(s + 1):
        row = [Fraction(j) ** m for j in range(s + 1)]
        rhs = -(Fraction(m) * Fraction(s) ** (m - 1)) if m >= 1 else Fraction(0)
        row.append(rhs)  # -beta column coefficient moved to lhs
        row.append(Fraction(0))
        rows.append(row)
    # normalization alpha_s = 1
    rows.append([Fraction(0)] * s + [Fraction(1), Fraction(0), Fraction(1)])

    # Gaussian elimination with exact arithmetic
    m = len(rows)
    for col in range(n):
        piv = next(r for r in range(col, m) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        pval = rows[col][col]
        rows[col] = [x / pval for x in rows[col]]
        for r in range(m):
            if r != col and rows[r][col] != 0:
                fac = rows[r][col]
                rows[r] = [x - fac * y for x, y in zip(rows[r], rows[col])]
    sol = [rows[i][n] for i in range(n)]
    alphas, beta = sol[: s + 1], sol[s + 1]
    # recurrence form: y_{n+1} = -sum a_i y_{n-i} + dt*beta*f_{n+1}
    a = tuple(alphas[s - 1 - i] for i in range(s))
    b = (beta,) + (Fraction(0),) * s
    return a, b


def _F(*vals) -> tuple[Fraction, ...]:
    return tuple(Fraction(v) for v in vals)


_AM4_B_720 = _F("251/720", "646/720", "-264/720", "106/720", "-19/720")
# Printed-table variant with denominator 270; inconsistent as an integrator,
# kept only for source-fidelity experiments (selectable via am_denominator=270).
_AM4_B_270 = _F("251/270", "646/270", "-264/270", "106/270", "-19/270")

_REGISTRY: dict[str, MultistepTableau] = {}


def _norm_key(name: str) -> str:
    key = name.strip().lower()
    for ch in " _()":
        key = key.replace(ch, "")
    return key


def _register(tab: MultistepTableau, *aliases: str):
    for key in (tab.name, *aliases):
        _REGISTRY[_norm_key(key)] = tab


_register(MultistepTableau("ImplicitEuler", 1, _F(-1), _F(1, 0), 1), "bdf1", "bdf(1)")
_register(MultistepTableau("ExplicitEuler", 1, _F(-1), _F(0, 1), 1), "ab1", "euler")
_register(MultistepTableau("BDF2", 2, _F("-4/3", "1/3"), _F("2/3", 0, 0), 2), "bdf(2)")
_register(
    MultistepTableau("BDF3", 3, _F("-18/11", "9/11", "-2/11"), _F("6/11", 0, 0, 0), 3),
    "bdf(3)",
)
_register(
    MultistepTableau(
        "BDF4", 4, _F("-48/25", "36/25", "-16/25", "3/25"), _F("12/25", 0, 0, 0, 0), 4
    ),
    "bdf(4)",
)
_register(MultistepTableau("BDF5", 5, *derive_bdf(5), 5), "bdf(5)")
_register(MultistepTableau("BDF6", 6, *derive_bdf(6), 6), "bdf(6)")
_register(MultistepTableau("AB2", 2, _F(-1, 0), _F(0, "3/2", "-1/2"), 2), "ab(2)")
_register(
    MultistepTableau("AB3", 3, _F(-1, 0, 0), _F(0, "23/12", "-4/3", "5/12"), 3), "ab(3)"
)
_register(MultistepTableau("AM4", 4, _F(-1, 0, 0, 0), _AM4_B_720, 5), "am(4)")
_register(
    MultistepTableau("AM4-270", 4, _F(-1, 0, 0, 0), _AM4_B_270, 5), "am4_270", "am(4)-270"
)


def tableau(name: str, am_denominator: int = 720) -> MultistepTableau:
    """Look up a scheme by name (case-insensitive, 'BDF2'/'bdf(2)' both work).

    ``am_denominator`` selects between the consistent Adams-Moulton(4)
    coefficients (720, default) and the 270-denominator variant printed in
    some sources.
    """
    if am_denominator not in (270, 720):
        raise ValueError("am_denominator must be 270 or 720")
    key = _norm_key(name)
    if key == "am4" and am_denominator == 270:
        key = "am4-270"
    try:
        return _REGISTRY[key]
    except KeyError:
        known = sorted({t.name for t in _REGISTRY.values()})
        raise UnknownTableauError(f"unknown tableau {name!r}; known: {known}") from None


def registry_names() -> list[str]:
    """Canonical names of all shipped tableaus."""
    seen = []
    for tab in _REGISTRY.values():
        if tab.name not in seen:
            seen.append(tab.name)
    return seen


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_n = t0 + n*dt with N steps up to T."""

    t0: float
    T: float
    N: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("TimeGrid requires T > t0")
        if self.N < 1:
            raise ValueError("TimeGrid requires N >= 1")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.N

    def t(self, n) -> float:
        """Time at (possibly negative or fractional) step index n."""
        return self.t0 + n * self.dt


class History:
    """Ring buffer of the s most recent states and their RHS evaluations.

    Entry 0 is the newest pair (y_n, f_n); entry s-1 the oldest.  Pushing
    onto a warm buffer evicts the oldest entry.
    """

    def __init__(self, s: int):
        self.s = s
        self._buf: deque = deque(maxlen=s)

    def push(self, y, f):
        self._buf.appendleft((np.asarray(y, dtype=float).copy(),
                              np.asarray(f, dtype=float).copy()))

    @property
    def warm(self) -> bool:
        return len(self._buf) == self.s

    def __len__(self):
        return len(self._buf)

    def states(self) -> list[np.ndarray]:
        """(y_n, y_{n-1}, ..., y_{n-s+1})."""
        return [y for y, _ in self._buf]

    def rhs(self) -> list[np.ndarray]:
        return [f for _, f in self._buf]


def _newton_step(tab, history, dt, rhs, t_new, jac, tol, maxit):
    """Solve y = c + dt*b[-1]*f(y, t_new) by damped Newton (jac analytic)."""
    b_imp = tab.b_implicit
    states = history.states()
    fvals = history.rhs()
    c = -sum(tab.a[i] * states[i] for i in range(tab.s))
    c = c + dt * sum(tab.b[k + 1] * fvals[k] for k in range(tab.s))
    y = states[0].copy()  # predictor: previous state
    n = y.size
    for it in range(maxit):
        res = y - c - dt * b_imp * rhs(y, t_new)
        rnorm = float(np.max(np.abs(res)))
        if rnorm < tol:
            return y
        if jac is not None:
            J = np.eye(n) - dt * b_imp * np.atleast_2d(jac(y, t_new))
            try:
                dy = np.linalg.solve(J, res)
            except np.linalg.LinAlgError:
                raise ImplicitSolveError(
                    f"singular Newton matrix at t={t_new}", rnorm, it)
            # damped update: halve until the residual does not grow
            lam = 1.0
            for _ in range(12):
                y_try = y - lam * dy
                r_try = y_try - c - dt * b_imp * rhs(y_try, t_new)
                if float(np.max(np.abs(r_try))) <= rnorm or lam < 1e-3:
                    break
                lam *= 0.5
            y = y_try
        else:
            y = c + dt * b_imp * rhs(y, t_new)
    res = y - c - dt * b_imp * rhs(y, t_new)
    rnorm = float(np.max(np.abs(res)))
    if rnorm < tol:
        return y
    raise ImplicitSolveError(
        f"implicit step at t={t_new} did not converge "
        f"(residual {rnorm:.3e} after {maxit} iterations)", rnorm, maxit)


def step(tab: MultistepTableau, history: History, dt: float,
         rhs: Callable, t_new: float, jac: Callable | None = None,
         tol: float = 1e-12, maxit: int = 50) -> np.ndarray:
    """Advance one step: returns y_{n+1} from a warm history.

    ``rhs(y, t)`` evaluates f; ``jac(y, t)`` its state Jacobian (used by the
    Newton solve for implicit tableaus; fixed-point iteration otherwise).
    Explicit tableaus evaluate a single arithmetic expression.
    """
    if not history.warm:
        raise ValueError(f"history must hold {tab.s} entries before stepping")
    if not tab.is_implicit:
        states = history.states()
        fvals = history.rhs()
        y = -sum(tab.a[i] * states[i] for i in range(tab.s))
        y = y + dt * sum(tab.b[k + 1] * fvals[k] for k in range(tab.s))
        return y
    return _newton_step(tab, history, dt, rhs, t_new, jac, tol, maxit)


def _rk4(rhs, y, t, dt, substeps=4):
    h = dt / substeps
    for i in range(substeps):
        ti = t + i * h
        k1 = rhs(y, ti)
        k2 = rhs(y + 0.5 * h * k1, ti + 0.5 * h)
        k3 = rhs(y + 0.5 * h * k2, ti + 0.5 * h)
        k4 = rhs(y + h * k3, ti + h)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def bootstrap_history(tab: MultistepTableau, grid: TimeGrid, rhs: Callable,
                      y0, mode: str = "exact",
                      y_exact: Callable | None = None) -> History:
    """Build the s-deep starting history at indices 1-s, ..., 0.

    ``exact`` samples the supplied exact solution at t = (1-s+i)*dt;
    ``rk-bootstrap`` integrates backward from y0 with substepped RK4
    (fourth-order start, adequate through BDF4; see tests).
    """
    s = tab.s
    hist = History(s)
    if mode == "exact":
        if y_exact is None:
            raise ValueError("exact bootstrap requires a y_exact hook")
        entries = [np.atleast_1d(np.asarray(y_exact(grid.t(n)), dtype=float))
                   for n in range(1 - s, 1)]
    elif mode == "rk-bootstrap":
        entries = [None] * s
        y = np.atleast_1d(np.asarray(y0, dtype=float))
        entries[s - 1] = y
        for k in range(s - 1):
            n = -k  # integrate from t_{-k} down to t_{-k-1}
            y = _rk4(rhs, y, grid.t(n), -grid.dt)
            entries[s - 2 - k] = y
    else:
        raise ValueError(f"unknown bootstrap mode {mode!r}")
    for i, y in enumerate(entries):  # oldest first so entry 0 ends newest
        hist.push(y, rhs(y, grid.t(1 - s + i)))
    return hist
