"""Semi-Lagrangian relaxation solver: models, forward, adjoint, oracles."""

import numpy as np
import pytest

import lmm_adjoint as la
from lmm_adjoint import relaxation as rx


def linear_jinxin(a, eps, u0=None):
    return rx.make_jin_xin(lambda u: u, lambda u: np.ones_like(u), a, eps,
                           u0=u0)


def burgers_jinxin(a, eps, u0=None):
    return rx.make_jin_xin(lambda u: 0.5 * u * u, lambda u: u, a, eps, u0=u0)


class TestModels:
    def test_jinxin_linear_unit_speed(self):
        # F(u) = u, a = 1: E_1 = u, E_2 = 0
        m = linear_jinxin(1.0, 1e-2)
        u = np.linspace(-2, 2, 9)[None, :]
        E = m.equilibrium(u)
        assert np.allclose(E[0], u[0]) and np.allclose(E[1], 0.0)

    def test_zero_state_zero_equilibrium(self):
        m = burgers_jinxin(2.1, 1e-2)
        E = m.equilibrium(np.zeros((1, 5)))
        assert np.all(E == 0.0)

    def test_burgers_equilibrium_values(self):
        # F(u) = u^2/2, a = 2.1, u = 1: E_1 = 2.6/4.2, E_2 = 1.6/4.2
        m = burgers_jinxin(2.1, 1e-2)
        E = m.equilibrium(np.array([[1.0]]))
        assert abs(E[0, 0] - 2.6 / 4.2) <= 1e-15
        assert abs(E[1, 0] - 1.6 / 4.2) <= 1e-15

    def test_jinxin_invalid_speed(self):
        with pytest.raises(rx.ModelConfigError):
            linear_jinxin(-1.0, 1e-2)
        with pytest.raises(rx.ModelConfigError):
            linear_jinxin(1.0, 0.0)

    def test_subcharacteristic_check(self):
        u0 = np.linspace(-1.5, 1.5, 11)
        with pytest.raises(rx.ModelConfigError):
            burgers_jinxin(1.0, 1e-2, u0=u0)  # max|F'| = 1.5 > a
        burgers_jinxin(1.5, 1e-2, u0=u0)      # equality allowed

    def test_broadwell_rest_state(self):
        m = rx.make_broadwell(1.0, 1e-2)
        u = np.array([[1.0], [0.0]])
        E = m.equilibrium(u)
        assert np.allclose(E[:, 0], [0.5, 0.5, 0.0])
        assert np.allclose(m.moments(E), u)

    def test_broadwell_momentum_state(self):
        m = rx.make_broadwell(1.0, 1e-2)
        u = np.array([[1.0], [0.5]])
        E = m.equilibrium(u)
        assert np.allclose(E[:, 0], [0.875, 0.375, -0.125])
        assert np.allclose(m.moments(E), u)

    def test_broadwell_momentum_symmetry(self):
        m = rx.make_broadwell(1.3, 1e-2)
        E = m.equilibrium(np.array([[2.0], [0.0]]))
        assert E[0, 0] == E[1, 0]

    def test_broadwell_errors(self):
        with pytest.raises(rx.ModelConfigError):
            rx.make_broadwell(0.0, 1e-2)
        m = rx.make_broadwell(1.0, 1e-2)
        with pytest.raises(rx.ModelConfigError):
            m.equilibrium(np.array([[-1.0], [0.0]]))

    def test_moment_consistency_sampled(self):
        rng = np.random.default_rng(42)
        jx = burgers_jinxin(2.1, 1e-2)
        u = rng.uniform(-2, 2, size=(1, 200))
        assert jx.check_moment_consistency(u) <= 1e-12
        bw = rx.make_broadwell(1.0, 1e-2)
        u2 = np.stack([rng.uniform(0.5, 2.0, 200), rng.uniform(-1, 1, 200)])
        assert bw.check_moment_consistency(u2) <= 1e-12

    def test_broadwell_jacobian_vs_fd(self):
        m = rx.make_broadwell(1.0, 1e-2)
        u = np.array([[1.2], [0.3]])
        jac = m.equilibrium_jac(u)
        h = 1e-7
        for r in range(2):
            up, um = u.copy(), u.copy()
            up[r] += h
            um[r] -= h
            fd = (m.equilibrium(up) - m.equilibrium(um)) / (2 * h)
            assert np.max(np.abs(jac[:, r, 0] - fd[:, 0])) <= 1e-6


class TestGrid:
    def test_spacing_and_alignment(self):
        g = rx.LagrangianGrid(0.0, 6.0, 640)
        assert abs(g.dx - 6.0 / 639) <= 1e-18
        assert g.n_nodes == 639
        assert g.is_aligned(np.array([2.1, -2.1]), g.dx / 2.1)
        assert not g.is_aligned(np.array([1.0]), g.dx / 2.1)

    def test_sample_shifted_integral(self):
        g = rx.LagrangianGrid(0.0, 1.0, 11)
        v = np.arange(10.0)
        assert np.array_equal(g.sample_shifted(v, 2), np.roll(v, 2))
        gc = rx.LagrangianGrid(0.0, 1.0, 11, boundary="clamp")
        out = gc.sample_shifted(np.arange(11.0), 3)
        assert np.array_equal(out[:4], [0, 0, 0, 0])  # clamped at the wall

    def test_sample_shifted_fractional(self):
        g = rx.LagrangianGrid(0.0, 1.0, 11)
        v = np.arange(10.0)
        out = g.sample_shifted(v, 0.5)
        # value at x_i - 0.5 dx: average of neighbours for linear data
        assert abs(out[5] - 4.5) <= 1e-14


class TestForward:
    def test_linear_exactness(self):
        # F(u) = u, a = c, grid-aligned: Eulerian solution equals shifted
        # initial data at the nodes, for any eps with equilibrium lifting
        grid = rx.LagrangianGrid(0.0, 6.0, 640)
        a = 1.0
        dt = grid.dx / a
        model = linear_jinxin(a, 1e-12)
        x = grid.nodes()
        u0 = np.exp(-((x - 3.0) ** 2))[None, :]
        n_steps = int(round(1.0 / dt))
        _, us = rx.solve_forward(model, grid, la.tableau("BDF2"), u0,
                                 n_steps, dt)
        shift = int(round(a * n_steps * dt / grid.dx))
        assert np.max(np.abs(us[-1][0] - np.roll(u0[0], shift))) <= 1e-10

    def test_mass_conservation_burgers(self):
        grid = rx.LagrangianGrid(0.0, 6.0, 320)
        a = 2.1
        dt = grid.dx / a
        x = grid.nodes()
        u0 = np.exp(-((x - 3.0) ** 2))[None, :]
        model = burgers_jinxin(a, 1e-2, u0=u0[0])
        _, us = rx.solve_forward(model, grid, la.tableau("BDF3"), u0,
                                 int(round(1.0 / dt)), dt)
        mass = rx.mass_history(us, grid)[:, 0]
        assert np.max(np.abs(mass - mass[0])) <= 1e-10 * abs(mass[0])

    def test_large_eps_pure_extrapolation(self):
        # relaxation weight -> 0: the update reduces to the multistep
        # combination of the characteristic-foot history
        grid = rx.LagrangianGrid(0.0, 1.0, 33)
        a = 1.0
        dt = grid.dx / a
        model = linear_jinxin(a, 1e30)
        x = grid.nodes()
        f0 = np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)])
        fld = rx.KineticField(model, grid, dt, depth=1, f0=f0)
        rx.forward_step(model, grid, fld, la.tableau("BDF2"))
        expect = np.stack([np.roll(f0[0], 1), np.roll(f0[1], -1)])
        assert np.max(np.abs(fld.current - expect)) <= 1e-15

    def test_non_bdf_rejected(self):
        grid = rx.LagrangianGrid(0.0, 1.0, 17)
        model = linear_jinxin(1.0, 1e-2)
        fld = rx.KineticField(model, grid, 0.05, 2,
                              np.zeros((2, grid.n_nodes)))
        with pytest.raises(rx.ModelConfigError):
            rx.forward_step(model, grid, fld, la.tableau("AB2"))

    def test_broadwell_equilibrium_fixed_point(self):
        # rho = 1, m = 0 equilibrium data stays put (clamped boundaries)
        grid = rx.LagrangianGrid(-2.5, 2.5, 80, boundary="clamp")
        model = rx.make_broadwell(1.0, 1e-2)
        u0 = np.stack([np.ones(grid.n_nodes), np.zeros(grid.n_nodes)])
        _, us = rx.solve_forward(model, grid, la.tableau("BDF2"), u0, 20, 0.01)
        assert np.max(np.abs(us[-1] - u0)) <= 1e-10

    def test_reconstruct_macroscopic(self):
        grid = rx.LagrangianGrid(0.0, 1.0, 17)
        model = linear_jinxin(1.0, 1e-2)
        x = grid.nodes()
        f0 = np.stack([np.sin(2 * np.pi * x), np.zeros_like(x)])
        fld = rx.KineticField(model, grid, 0.05, 2, f0)
        u = rx.reconstruct_macroscopic(model, fld)
        assert np.allclose(u[0], f0[0])  # g = 0: u equals the f-component
        with pytest.raises(IndexError):
            rx.reconstruct_macroscopic(model, fld, level=3)

    def test_linear_flux_translates_profile(self):
        # pure-transport figure configuration: the Gaussian arrives shifted
        grid = rx.LagrangianGrid(0.0, 6.0, 320)
        a = 2.1
        dt = grid.dx / a
        x = grid.nodes()
        u0 = np.exp(-((x - 3.0) ** 2))[None, :]
        model = linear_jinxin(a, 1e-2, u0=u0[0])
        n_steps = int(round(1.0 / dt))
        _, us = rx.solve_forward(model, grid, la.tableau("BDF3"), u0,
                                 n_steps, dt)
        # the macroscopic profile rides the relaxed flux speed F' = 1, not
        # the kinetic speed a; height is preserved to a few percent
        peak = x[np.argmax(us[-1][0])]
        assert abs(peak - (3.0 + n_steps * dt)) <= 3 * grid.dx
        assert abs(us[-1][0].max() - 1.0) <= 0.07

    def test_burgers_flux_steepens_profile(self):
        # nonlinear case: the right flank steepens toward a shock
        grid = rx.LagrangianGrid(0.0, 6.0, 640)
        a = 2.1
        dt = grid.dx / a
        x = grid.nodes()
        u0 = np.exp(-((x - 3.0) ** 2))[None, :]
        model = burgers_jinxin(a, 1e-2, u0=u0[0])
        n_steps = int(round(1.0 / dt))
        _, us = rx.solve_forward(model, grid, la.tableau("BDF3"), u0,
                                 n_steps, dt)
        g0 = np.max(np.abs(np.diff(u0[0]))) / grid.dx
        gT = np.max(np.abs(np.diff(us[-1][0]))) / grid.dx
        assert gT >= 1.5 * g0

    def test_interpolation_mode_runs_and_conserves(self):
        # non-aligned dt exercises linear foot interpolation; periodic sums
        # are still conserved because the interpolation weights sum to one
        grid = rx.LagrangianGrid(0.0, 6.0, 160)
        a = 2.1
        dt = 0.8 * grid.dx / a
        x = grid.nodes()
        u0 = np.exp(-((x - 3.0) ** 2))[None, :]
        model = burgers_jinxin(a, 1e-2, u0=u0[0])
        _, us = rx.solve_forward(model, grid, la.tableau("BDF2"), u0, 50, dt)
        mass = rx.mass_history(us, grid)[:, 0]
        assert np.max(np.abs(mass - mass[0])) <= 1e-10 * abs(mass[0])


class TestAdjoint:
    def test_equalization_one_step(self):
        # eps = 1e-8: after one backward step the per-velocity multipliers
        # collapse onto the common value
        grid = rx.LagrangianGrid(0.0, 6.0, 640)
        a = 1.0
        dt = grid.dx / a
        model = linear_jinxin(a, 1e-8)
        x = grid.nodes()
        lam_T = rx.terminal_multipliers(model,
                                        np.exp(-((x - 3.0) ** 2))[None, :])
        adj = rx.AdjointField(model, grid, dt, depth=2, lam_T=lam_T)
        lam = rx.adjoint_step(model, grid, adj,
                              np.zeros((1, grid.n_nodes)), la.tableau("BDF2"))
        spread = np.max(np.abs(lam[0] - lam[1]))
        assert spread <= 1e-6 * np.max(np.abs(lam))

    def test_small_dt_interpolation_property(self):
        # eps > 0, dt -> 0: the update approaches the plain multistep
        # combination of the future multipliers at vanishing foot shifts
        # (-sum a_i lam^j(t_{n+i}, x), here the unshifted terminal level)
        grid = rx.LagrangianGrid(0.0, 1.0, 33)
        model = linear_jinxin(1.0, 1.0)
        x = grid.nodes()
        lam_T = np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)])
        devs = []
        for dt in (1e-5, 1e-7):
            adj = rx.AdjointField(model, grid, dt, 1, lam_T)
            lam = rx.adjoint_step(model, grid, adj,
                                  np.zeros((1, grid.n_nodes)),
                                  la.tableau("BDF2"))
            devs.append(np.max(np.abs(lam - lam_T)))
        assert devs[0] <= 1e-3
        assert devs[1] <= 1e-2 * devs[0] * 1.1  # deviation scales with dt

    def test_backward_transport(self):
        # small eps: p(0, x) approaches p_T(x + a T) for F(u) = u with a = 1
        grid = rx.LagrangianGrid(0.0, 6.0, 640)
        a = 1.0
        dt = grid.dx / a
        model = linear_jinxin(a, 1e-8)
        pT = lambda xx: np.exp(-((xx - 3.0) ** 2))
        n_steps = int(round(1.0 / dt))
        lam_T = rx.terminal_multipliers(model, pT(grid.nodes())[None, :])
        lam0, _ = rx.solve_adjoint(model, grid, la.tableau("BDF2"), None,
                                   lam_T, n_steps, dt)
        ref = rx.transport_oracle(grid, pT, a, n_steps * dt)
        assert np.max(np.abs(lam0.sum(axis=0) - ref)) <= 2e-4

    def test_viscous_limit_second_order(self):
        # deep AP regime: the transport deviation decays at the BDF2 order
        a = 2.1
        model = linear_jinxin(a, 1e-10)
        pT = lambda xx: np.exp(-((xx - 3.0) ** 2))
        errs = []
        for nx in (160, 320, 640):
            grid = rx.LagrangianGrid(0.0, 6.0, nx)
            dt = grid.dx / a
            errs.append(rx.viscous_limit_check(model, grid, la.tableau("BDF2"),
                                               pT, 1.0, dt))
        rates = [np.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:])]
        assert errs[-1] <= 3e-4
        assert min(rates) >= 1.8

    def test_viscous_limit_large_eps_deviates(self):
        # eps = 1: diffusion-dominated backward dynamics sit far from the
        # sharp transport solution
        grid = rx.LagrangianGrid(0.0, 6.0, 320)
        a = 2.1
        dt = grid.dx / a
        model = linear_jinxin(a, 1.0)
        pT = lambda xx: np.exp(-((xx - 3.0) ** 2))
        dev = rx.viscous_limit_check(model, grid, la.tableau("BDF2"), pT,
                                     1.0, dt)
        assert dev >= 0.05

    def test_adjoint_requires_bdf(self):
        grid = rx.LagrangianGrid(0.0, 1.0, 17)
        model = linear_jinxin(1.0, 1e-2)
        adj = rx.AdjointField(model, grid, 0.05, 2,
                              np.zeros((2, grid.n_nodes)))
        with pytest.raises(rx.ModelConfigError):
            rx.adjoint_step(model, grid, adj, np.zeros((1, grid.n_nodes)),
                            la.tableau("AM4"))

    def test_missing_forward_field_shape(self):
        grid = rx.LagrangianGrid(0.0, 1.0, 17)
        model = linear_jinxin(1.0, 1e-2)
        adj = rx.AdjointField(model, grid, 0.05, 2,
                              np.zeros((2, grid.n_nodes)))
        with pytest.raises(ValueError):
            rx.adjoint_step(model, grid, adj, np.zeros((1, 3)),
                            la.tableau("BDF2"))
