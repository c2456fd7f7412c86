"""Tableau registry, recurrence step, and history bootstrap."""

from fractions import Fraction

import numpy as np
import pytest

from lmm_adjoint import tableaus as tb


ALL_NAMES = ["ImplicitEuler", "ExplicitEuler", "BDF2", "BDF3", "BDF4",
             "BDF5", "BDF6", "AB2", "AB3", "AM4"]

# reference coefficient table (exact rationals)
REFERENCE = {
    "ImplicitEuler": ((-1,), (1, 0)),
    "ExplicitEuler": ((-1,), (0, 1)),
    "BDF2": (("-4/3", "1/3"), ("2/3", 0, 0)),
    "BDF3": (("-18/11", "9/11", "-2/11"), ("6/11", 0, 0, 0)),
    "BDF4": (("-48/25", "36/25", "-16/25", "3/25"), ("12/25", 0, 0, 0, 0)),
    "AB2": ((-1, 0), (0, "3/2", "-1/2")),
    "AB3": ((-1, 0, 0), (0, "23/12", "-4/3", "5/12")),
    "AM4": ((-1, 0, 0, 0),
            ("251/720", "646/720", "-264/720", "106/720", "-19/720")),
}


def lagrange_bdf_oracle(s):
    """Independent BDF(s) construction: differentiate the Lagrange
    interpolant through nodes 0..s at the endpoint node s (exact rationals).

    Different route from the registry's moment-equation elimination.
    """
    nodes = list(range(s + 1))
    weights = []
    for j in nodes:
        # derivative of ell_j at x = s
        total = Fraction(0)
        for m in nodes:
            if m == j:
                continue
            prod = Fraction(1, j - m)
            for k in nodes:
                if k in (j, m):
                    continue
                prod *= Fraction(s - k, j - k)
            total += prod
        weights.append(total)
    # sum_j w_j y_j = dt f_{n+1}; normalizing by w_s gives the recurrence
    # y_{n+1} = -sum_i a_i y_{n-i} + dt beta f_{n+1}
    beta = 1 / weights[s]
    alphas = [w * beta for w in weights]
    a = tuple(alphas[s - 1 - i] for i in range(s))
    return a, beta


class TestRegistry:
    def test_consistency_identity(self):
        for name in ALL_NAMES:
            t = tb.tableau(name)
            assert abs(1.0 + sum(float(c) for c in t.a_exact)) <= 1e-14
            assert 1 + sum(t.a_exact) == 0  # exact rationals

    def test_reference_coefficients(self):
        for name, (a_ref, b_ref) in REFERENCE.items():
            t = tb.tableau(name)
            assert t.a_exact == tuple(Fraction(c) for c in a_ref)
            assert t.b_exact == tuple(Fraction(c) for c in b_ref)

    def test_class_predicates(self):
        assert tb.tableau("ImplicitEuler").is_bdf
        assert tb.tableau("ExplicitEuler").is_adams_bashforth
        for k in range(2, 7):
            t = tb.tableau(f"BDF{k}")
            assert t.is_bdf and not t.is_adams
        for nm in ("AB2", "AB3"):
            t = tb.tableau(nm)
            assert t.is_adams_bashforth and not t.is_bdf and not t.is_implicit
        am = tb.tableau("AM4")
        assert am.is_adams_moulton and am.is_implicit and not am.is_bdf

    def test_bdf56_against_lagrange_oracle(self):
        for s in (5, 6):
            t = tb.tableau(f"BDF{s}")
            a_oracle, beta = lagrange_bdf_oracle(s)
            assert t.a_exact == a_oracle
            assert t.b_exact[0] == beta
            assert all(c == 0 for c in t.b_exact[1:])

    def test_derive_bdf_matches_published_low_orders(self):
        for s in range(1, 5):
            a, b = tb.derive_bdf(s)
            ref = tb.tableau(f"BDF{s}") if s > 1 else tb.tableau("ImplicitEuler")
            assert a == ref.a_exact and b == ref.b_exact

    def test_unknown_name(self):
        with pytest.raises(tb.UnknownTableauError):
            tb.tableau("BDF9")

    def test_am_denominator_variants(self):
        t720 = tb.tableau("AM4")
        t270 = tb.tableau("AM4", am_denominator=270)
        assert sum(t720.b_exact) == 1
        assert sum(t270.b_exact) == Fraction(720, 270)
        with pytest.raises(ValueError):
            tb.tableau("AM4", am_denominator=360)

    def test_name_normalization(self):
        for alias in ("bdf(2)", "bdf_2", "BDF 2", "Bdf2"):
            assert tb.tableau(alias).name == "BDF2"


class TestStep:
    def test_implicit_euler_fixed_point(self):
        # y' = y, y0 = 1, dt = 0.1: y1 = 1/(1 - 0.1)
        t = tb.tableau("ImplicitEuler")
        h = tb.History(1)
        h.push(np.array([1.0]), np.array([1.0]))
        y1 = tb.step(t, h, 0.1, lambda y, tt: y, 0.1,
                     jac=lambda y, tt: np.array([[1.0]]))
        assert abs(y1[0] - 1.0 / 0.9) <= 1e-12

    def test_explicit_euler_zero_rhs(self):
        t = tb.tableau("ExplicitEuler")
        h = tb.History(1)
        h.push(np.array([1.7]), np.array([0.0]))
        y1 = tb.step(t, h, 0.3, lambda y, tt: 0.0 * y, 0.3)
        assert y1[0] == 1.7

    def test_bdf2_local_error_third_order(self):
        # one step from exact history on y' = -y: local error O(dt^3)
        t = tb.tableau("BDF2")
        errs = []
        for dt in (0.01, 0.005):
            h = tb.History(2)
            for tt in (-dt, 0.0):
                h.push(np.array([np.exp(-tt)]), np.array([-np.exp(-tt)]))
            y1 = tb.step(t, h, dt, lambda y, tt: -y, dt,
                         jac=lambda y, tt: np.array([[-1.0]]))
            errs.append(abs(y1[0] - np.exp(-dt)))
        order = np.log2(errs[0] / errs[1])
        assert 2.7 <= order <= 3.3
        assert errs[0] < 5e-7  # LTE constant 2/9 at dt = 0.01

    def test_step_requires_warm_history(self):
        t = tb.tableau("BDF2")
        h = tb.History(2)
        h.push(np.array([1.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            tb.step(t, h, 0.1, lambda y, tt: y, 0.1)

    def test_step_deterministic(self):
        t = tb.tableau("BDF3")
        vals = []
        for _ in range(2):
            h = tb.History(3)
            for tt in (-0.02, -0.01, 0.0):
                h.push(np.array([np.exp(tt)]), np.array([np.exp(tt)]))
            vals.append(tb.step(t, h, 0.01, lambda y, tt: y, 0.01,
                                jac=lambda y, tt: np.array([[1.0]]))[0])
        assert vals[0] == vals[1]

    def test_nonconvergence_reports_residual(self):
        # absurd step size on a stiff quadratic forces Newton failure
        t = tb.tableau("ImplicitEuler")
        h = tb.History(1)
        h.push(np.array([10.0]), np.array([100.0]))
        with pytest.raises(tb.ImplicitSolveError) as err:
            with np.errstate(over="ignore", invalid="ignore"):
                tb.step(t, h, 10.0, lambda y, tt: y * y, 10.0,
                        jac=lambda y, tt: np.atleast_2d(2 * y))
        assert err.value.iterations is not None


class TestOrderVerification:
    def test_observed_orders(self):
        # integrate y' = y on [0, 1] with exact-history bootstrap; every
        # consecutive-error log2 ratio above the solver-tolerance floor must
        # reach the nominal order minus 0.2 (high-order tableaus reach the
        # floor early, hence the ladder extension below N = 40)
        for name in ALL_NAMES:
            tab = tb.tableau(name)
            errs = {}
            for N in (10, 20, 40, 80, 160, 320, 640):
                grid = tb.TimeGrid(0.0, 1.0, N)
                rhs = lambda y, tt: y
                jac = lambda y, tt: np.array([[1.0]])
                hist = tb.bootstrap_history(tab, grid, rhs, 1.0, mode="exact",
                                            y_exact=np.exp)
                y = None
                for n in range(N):
                    y = tb.step(tab, hist, grid.dt, rhs, grid.t(n + 1), jac=jac)
                    hist.push(y, rhs(y, grid.t(n + 1)))
                errs[N] = abs(y[0] - np.e)
            pairs = [(errs[N // 2], errs[N])
                     for N in (20, 40, 80, 160, 320, 640)]
            rates = [np.log2(e0 / e1) for e0, e1 in pairs
                     if e0 > 1e-10 and e1 > 1e-11]
            assert rates, f"{name}: no rate pair above the roundoff floor"
            # the finest clean pair carries the asymptotic order; coarser
            # pairs may under-read it slightly but must stay in range
            assert max(rates) >= tab.nominal_order - 0.2, \
                f"{name}: best rate {max(rates):.2f}"
            for r in rates:
                assert r >= tab.nominal_order - 0.75, f"{name}: rate {r:.2f}"


class TestBootstrap:
    def test_single_stage_any_mode(self):
        tab = tb.tableau("ImplicitEuler")
        grid = tb.TimeGrid(0.0, 1.0, 10)
        rhs = lambda y, tt: y
        for mode, hook in (("exact", np.exp), ("rk-bootstrap", None)):
            h = tb.bootstrap_history(tab, grid, rhs, 1.0, mode=mode,
                                     y_exact=hook)
            assert len(h) == 1 and h.states()[0][0] == 1.0

    def test_exact_mode_samples_solution(self):
        # y' = y^2, y(t) = 1/(1 - t): history entries at t = (1-s+i) dt
        tab = tb.tableau("BDF3")
        grid = tb.TimeGrid(0.0, 1.0, 100)
        rhs = lambda y, tt: y * y
        h = tb.bootstrap_history(tab, grid, rhs, 1.0, mode="exact",
                                 y_exact=lambda t: 1.0 / (1.0 - t))
        states = h.states()  # newest first
        for i, y in enumerate(states):
            t = -i * grid.dt
            assert abs(y[0] - 1.0 / (1.0 - t)) <= 1e-14

    def test_exact_mode_requires_hook(self):
        tab = tb.tableau("BDF2")
        grid = tb.TimeGrid(0.0, 1.0, 10)
        with pytest.raises(ValueError):
            tb.bootstrap_history(tab, grid, lambda y, tt: y, 1.0, mode="exact")

    def test_rk_bootstrap_matches_exact_to_fourth_order(self):
        tab = tb.tableau("BDF3")
        rhs = lambda y, tt: y * y
        devs = []
        for N in (100, 200):
            grid = tb.TimeGrid(0.0, 1.0, N)
            he = tb.bootstrap_history(tab, grid, rhs, 1.0, mode="exact",
                                      y_exact=lambda t: 1.0 / (1.0 - t))
            hr = tb.bootstrap_history(tab, grid, rhs, 1.0, mode="rk-bootstrap")
            dev = max(abs(a[0] - b[0]) for a, b in zip(he.states(), hr.states()))
            devs.append(dev)
        order = np.log2(devs[0] / devs[1])
        assert devs[0] < 1e-9
        assert order >= 3.5

    def test_history_ring_buffer_eviction(self):
        h = tb.History(2)
        for v in (1.0, 2.0, 3.0):
            h.push(np.array([v]), np.array([v]))
        assert [s[0] for s in h.states()] == [3.0, 2.0]
