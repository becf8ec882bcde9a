"""Energy traces, stationarity relations, energy bounds and convergence tables."""

import csv
import math

import numpy as np
import pytest

from oracles import DenseQuadratic, ghost_time_operators, spectral_d2_matrix
from widewave.diagnostics import (BETA, TRACE_COLUMNS, apriori_report, bump_test_function,
                                  check_energy_bounds, check_energy_inequality,
                                  check_relation_t, check_relation_zero, convergence_table,
                                  energy_traces, hermite_sample, levd_excess, limit_energy,
                                  required_constants, write_trace_csv)
from widewave.reference import ProblemSpec, solve_mol
from widewave.solver import FamilyMember, MinimizeOptions, continuation, minimize
from widewave.spatial import SpatialGrid, preset
from widewave.timeweight import TimeGrid, Trajectory, avg_A2, tail_safe
from widewave.variational import competitor, make_functional


def _solve(name="telegraph", p=2.0, eps=0.2, tau=0.1, n_x=16, w0=None, w1=None, tol=None):
    g = SpatialGrid(n_x)
    s = g.mode(1)
    w0 = s if w0 is None else w0
    w1 = s if w1 is None else w1
    F = make_functional(eps, *preset(name, p=p), g, TimeGrid.covering(1 / eps + 15, tau), w0, w1)
    r = minimize(F, competitor(F), MinimizeOptions(grad_tol=tol))
    assert r.converged
    return F, r.minimizer


def _zero_family():
    g = SpatialGrid(8)
    P = ProblemSpec(*preset("telegraph"), g, np.zeros(8), np.zeros(8), 1.0)
    return P, continuation(P, [0.2, 0.1], tau=0.1)


class TestTraces:
    def test_identities(self):
        F, u = _solve(p=3.0)
        tr = energy_traces(u, F)
        for x in (tr.W, tr.K, tr.D, tr.G):
            assert np.all(x >= 0)
        np.testing.assert_allclose(tr.L, tr.D + tr.W + tr.G / F.eps, rtol=1e-15, atol=0)
        assert tr.E_d[0] == tr.E[0]
        assert np.all(np.diff(tr.E_d - tr.E) >= 0)

    def test_zero_problem(self):
        F, u = _solve(n_x=8, w0=np.zeros(8), w1=np.zeros(8))
        tr = energy_traces(u, F)
        for x in (tr.W, tr.K, tr.D, tr.G, tr.L, tr.Phi, tr.E, tr.E_d):
            np.testing.assert_array_equal(x, 0)
        assert tr.Lambda == 0 and tr.R == 0

    def test_initial_energy_without_velocity(self):
        F, u = _solve(p=4.0, w1=np.zeros(16))
        tr = energy_traces(u, F)
        assert tr.K[0] == 0
        assert tr.E_d[0] == avg_A2(tr.W, F.time)[0]

    def test_matches_dense_oracle(self):
        eps, n_x, tau = 0.2, 8, 0.1
        F, u = _solve(eps=eps, tau=tau, n_x=n_x, tol=1e-11)
        n_t = F.time.n_t
        g = F.grid
        s = g.mode(1)
        U, _ = DenseQuadratic(eps, n_x, g.length, n_t, tau, s, s).solve()
        A1, A2 = ghost_time_operators(n_t, tau)
        d1, d2 = A1 @ U, A2 @ U
        d1[0] += eps * s
        d2[0] -= 2 * eps * s / tau
        hx = g.length / n_x
        K = hx * np.sum(d1 ** 2, axis=1) / (2 * eps ** 2)
        Kx = -spectral_d2_matrix(n_x, g.length) + np.eye(n_x)
        W = hx * np.einsum("ti,ij,tj->t", U, Kx, U) / 2
        E = K + avg_A2(W, F.time)
        tr = energy_traces(u, F)
        safe = tail_safe(F.time)
        scale = np.max(np.abs(E[safe]))
        assert np.max(np.abs(tr.E[safe] - E[safe])) <= 1e-6 * scale
        assert np.max(np.abs(tr.D - hx * np.sum(d2 ** 2, axis=1) / (2 * eps ** 2))) <= 1e-6 * np.max(tr.D)

    def test_tail_rule(self):
        g = SpatialGrid(8)
        with pytest.raises(ValueError, match="tail"):
            make_functional(0.2, *preset("telegraph"), g, TimeGrid(100, 0.1), g.mode(1), g.mode(1))

    def test_csv_round_trip(self, tmp_path):
        F, u = _solve(p=3.0)
        tr = energy_traces(u, F)
        path = tmp_path / "trace.csv"
        write_trace_csv(tr, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TRACE_COLUMNS
        data = np.array(rows[1:], dtype=float)
        assert data.shape == (F.time.size, len(TRACE_COLUMNS))
        # 17 digits: the identity survives the file to roundoff
        t, W, K, D, G, L = (data[:, i] for i in range(6))
        np.testing.assert_allclose(L, D + W + G / F.eps, rtol=1e-15)
        np.testing.assert_array_equal(t, F.time.nodes)


class TestRelations:
    def test_zero_problem(self):
        F, u = _solve(n_x=8, w0=np.zeros(8), w1=np.zeros(8))
        tr = energy_traces(u, F)
        z = check_relation_zero(tr)
        assert z.residual == 0 and z.R == 0
        _, res = check_relation_t(tr)
        np.testing.assert_array_equal(res, 0)

    @pytest.mark.parametrize("p,eps", [(2.0, 0.2), (2.0, 0.05), (4.0, 0.2), (4.0, 0.05)])
    def test_refinement(self, p, eps):
        zero, series = [], []
        for tau in (0.1, 0.05, 0.025):
            # tolerance tied to tau^2 so the solver error does not mask the discretization
            F, u = _solve(p=p, eps=eps, tau=tau, tol=1e-6 * tau ** 2)
            tr = energy_traces(u, F)
            zero.append(abs(check_relation_zero(tr).residual))
            series.append(np.max(np.abs(check_relation_t(tr)[1])))
        assert all(a >= 3 * b for a, b in zip(zero, zero[1:]))
        assert all(a >= 3 * b for a, b in zip(series, series[1:]))

    def test_residual_small_against_scale(self):
        F, u = _solve(p=4.0, eps=0.1, tau=0.05)
        tr = energy_traces(u, F)
        z = check_relation_zero(tr)
        assert abs(z.residual) <= 1e-4 * z.scale
        _, res, scale = check_relation_t(tr, with_scale=True)
        assert np.all(np.abs(res) <= 1e-3 * np.max(scale))

    def test_perturbation_detected(self):
        F, u = _solve(p=4.0, eps=0.1, tau=0.05)
        base = np.max(np.abs(check_relation_t(energy_traces(u, F))[1]))
        rng = np.random.default_rng(3)
        noisy = u.data.copy()
        k = F.constraints.first_free
        noisy[k:] += 1e-3 * rng.normal(size=noisy[k:].shape)
        pert = np.max(np.abs(check_relation_t(energy_traces(noisy, F))[1]))
        assert pert >= 10 * base

    def test_sqrt_eps_margin(self):
        F, u = _solve(p=2.0, eps=0.1, tau=0.05)
        tr = energy_traces(u, F)
        C = abs(tr.R) / math.sqrt(0.1)
        z = check_relation_zero(tr, F, C=1.01 * C)
        assert z.sqrt_eps_margin > 0
        assert check_relation_zero(tr, F, C=0.99 * C).sqrt_eps_margin < 0

    def test_R_decays_with_eps(self):
        R = []
        schedule = (0.4, 0.2, 0.1, 0.05)
        for eps in schedule:
            F, u = _solve(p=2.0, eps=eps, tau=0.05)
            R.append(abs(energy_traces(u, F).R))
        slope = np.polyfit(np.log(schedule), np.log(R), 1)[0]
        assert slope >= 0.4


class TestEnergyBounds:
    def test_fitted_constants_are_tight(self):
        F, u = _solve(p=4.0, eps=0.1, tau=0.05)
        tr = energy_traces(u, F)
        c = required_constants(tr, F, u, 1.0)
        assert set(c) == {"levd", "appenzero", "restest", "C_beta"}
        b = check_energy_bounds(tr, F, u, c, 1.0)
        assert all(b.passed().values())
        # the minimum value bound is attained at the fitted constant
        assert abs(b.levd) <= 1e-12 * b.scales["levd"]
        shrunk = dict(c, levd=0.9 * c["levd"], appenzero=c["appenzero"] - 0.1)
        b2 = check_energy_bounds(tr, F, u, shrunk, 1.0)
        assert not b2.passed()["levd"] and not b2.passed()["appenzero"]

    def test_levd_excess_definition(self):
        F, u = _solve(p=2.0, eps=0.2, tau=0.1)
        assert levd_excess(u, F) == pytest.approx(
            required_constants(energy_traces(u, F), F, u, 1.0)["levd"] * F.eps, rel=1e-14)

    def test_unforced_growth_bound(self):
        # gamma = 0: the bound only allows growth of size sqrt(T beta / 2) * eps
        F, u = _solve(p=2.0, eps=0.1, tau=0.05)
        tr = energy_traces(u, F)
        b = check_energy_bounds(tr, F, u, {"levd": 10, "appenzero": 10, "C_beta": 0.0}, 1.0)
        assert b.passed()["stimalocT"] and b.passed()["stimalocTbis"]
        lhs = np.sqrt(tr.E_d[:len(b.T)])
        assert np.all(lhs <= math.sqrt(tr.E_d[0]) + np.sqrt(b.T * BETA / 2) * F.eps + 1e-12)

    def test_appenzero_constant_stable(self):
        # w1 = 0 and f = 0: Lambda - W(w0) <= C sqrt(eps) with a C that does not blow up
        C = []
        for eps in (0.2, 0.1, 0.05):
            F, u = _solve(p=2.0, eps=eps, tau=0.05, w1=np.zeros(16))
            C.append(required_constants(energy_traces(u, F), F, u, 1.0)["appenzero"])
        assert max(C) <= 2 * max(min(C), 1e-3)


class TestEnergyInequality:
    def test_conserved_wave_is_equality(self):
        g = SpatialGrid(16)
        s = g.mode(1)
        p = ProblemSpec(*preset("wave"), g, s, s, 1.0)
        t, margin, scale = check_energy_inequality(solve_mol(p), p)
        assert t[-1] == pytest.approx(1.0)
        assert np.max(np.abs(margin)) <= 1e-7 * scale

    def test_unforced_dissipation(self):
        g = SpatialGrid(16)
        s = g.mode(1)
        p = ProblemSpec(*preset("telegraph", p=4), g, s, s, 1.0)
        w = solve_mol(p)
        t, margin, scale = check_energy_inequality(w, p)
        assert np.all(margin >= -1e-7 * scale)
        np.testing.assert_allclose(margin, limit_energy(w, p.wspec, p.gspec)[0]
                                   - limit_energy(w, p.wspec, p.gspec), atol=1e-14)

    def test_detects_violation(self):
        g = SpatialGrid(16)
        s = g.mode(1)
        p = ProblemSpec(*preset("wave"), g, s, s, 1.0)
        w = solve_mol(p)
        # an energy injection without forcing
        pumped = Trajectory(g, w.time, w.data * (1 + w.nodes)[:, None], None)
        _, margin, scale = check_energy_inequality(pumped, p)
        assert np.min(margin) < -1e-3 * scale


class TestAprioriAndConvergence:
    def test_zero_problem(self):
        _, fam = _zero_family()
        rep = apriori_report(fam, exclude=0)
        for row in rep["rows"]:
            assert row["sup_energy"] == row["potential_integral"] == row["dissipation_integral"] == 0
        assert all(rep["bounded"].values())

    @pytest.mark.parametrize("p", [2.0, 4.0])
    def test_bounded_family(self, p):
        g = SpatialGrid(16)
        s = g.mode(1)
        P = ProblemSpec(*preset("telegraph", p=p), g, s, s, 1.0)
        rep = apriori_report(continuation(P, [0.2, 0.1, 0.05], tau=0.05), exclude=0)
        assert [r["eps"] for r in rep["rows"]] == [0.2, 0.1, 0.05]
        assert all(rep["bounded"].values()), rep["spread"]

    def test_missing_members_skipped(self):
        P, fam = _zero_family()
        fam = fam + [FamilyMember(0.05, None, None, None, None, "failed")]
        assert len(apriori_report(fam)["rows"]) == 2
        assert len(convergence_table(fam, solve_mol(P))) == 2

    def test_self_comparison(self):
        g = SpatialGrid(16)
        s = g.mode(1)
        P = ProblemSpec(*preset("telegraph"), g, s, s, 1.0)
        ref = solve_mol(P)
        m = FamilyMember(0.1, None, None, ref, None)
        row = convergence_table([m], ref)[0]
        assert row == {"eps": 0.1, "err_sup_L2": 0.0, "err_H1_time": 0.0}

    def test_grid_mismatch(self):
        P, fam = _zero_family()
        ref = solve_mol(ProblemSpec(P.wspec, P.gspec, SpatialGrid(16), np.zeros(16), np.zeros(16), 1.0))
        with pytest.raises(ValueError, match="grid"):
            convergence_table(fam, ref)

    def test_rows_sorted(self):
        P, fam = _zero_family()
        rows = convergence_table(fam[::-1], solve_mol(P))
        assert [r["eps"] for r in rows] == [0.2, 0.1]
        assert all(r["err_sup_L2"] == 0 for r in rows)

    def test_hermite_exact_on_cubics(self):
        g = SpatialGrid(8)
        time = TimeGrid(10, 0.1)
        t = time.nodes
        f = lambda t: 1 - 2 * t + 0.5 * t ** 2 - 3 * t ** 3
        df = lambda t: -2 + t - 9 * t ** 2
        ref = Trajectory(g, time, np.outer(f(t), np.ones(8)), np.outer(df(t), np.ones(8)))
        tq = np.linspace(0, 1, 37)
        pos, vel = hermite_sample(ref, tq)
        np.testing.assert_allclose(pos[:, 0], f(tq), atol=1e-14)
        # velocities are linear between nodes
        assert np.max(np.abs(vel[:, 0] - df(tq))) <= 18 * 0.1 ** 2 / 8 + 1e-12
        with pytest.raises(ValueError):
            hermite_sample(ref, [1.5])

    def test_bump(self):
        g = SpatialGrid(8)
        time = TimeGrid(100, 0.01)
        b = bump_test_function(g, time, g.mode(1), 0.8, 0.2)
        amp = b.data[:, 2] / g.mode(1)[2]
        assert np.all(amp[time.nodes <= 0.2 + 1e-12] == 0)
        assert np.all(amp[time.nodes >= 0.8 - 1e-12] == 0)
        assert amp[50] == pytest.approx(1.0)
        with pytest.raises(ValueError):
            bump_test_function(g, time, g.mode(1), 0.2, 0.2)

    def test_bump_derivatives(self):
        g = SpatialGrid(8)
        time = TimeGrid(4000, 2.5e-4)
        b, (d1, d2, d3) = bump_test_function(g, time, g.mode(1), 0.8, 0.2, derivatives=True)
        dt = time.step
        # the fourth derivative jumps at the support ends; compare away from them
        t = time.nodes[1:-1]
        away = (np.abs(t - 0.2) > 2 * dt) & (np.abs(t - 0.8) > 2 * dt)
        for lower, upper in ((b.data, d1), (d1, d2), (d2, d3)):
            fd = (lower[2:] - lower[:-2]) / (2 * dt)
            assert np.max(np.abs(fd - upper[1:-1])[away]) <= 1e-5 * np.max(np.abs(upper))
        # C^3 at the ends of the support
        for d in (d1, d2, d3):
            assert np.all(d[time.nodes <= 0.2] == 0) and np.all(d[time.nodes >= 0.8] == 0)
