"""Time grids, the exponential averages, weights, differences, Poincare and Gronwall checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from oracles import hat_weights
from widewave.spatial import SpatialGrid
from widewave.timeweight import (TAIL, TimeGrid, Trajectory, avg_A, avg_A2, d1_matrix, d2_matrix,
                                 exp_weights, gronwall_check, poincare_check, tail_safe,
                                 time_derivative, weighted_l2_sq)


def _trunc_A(fun, t, T):
    return quad(lambda s: math.exp(-(s - t)) * fun(s), t, T, epsabs=0, epsrel=1e-13, limit=200)[0]


def _trunc_A2(fun, t, T):
    return quad(lambda s: (s - t) * math.exp(-(s - t)) * fun(s), t, T,
                epsabs=0, epsrel=1e-13, limit=200)[0]


class TestTimeGrid:
    def test_basic(self):
        t = TimeGrid(10, 0.5)
        assert t.horizon == 5.0 and t.size == 11
        assert t.nodes[-1] == 5.0

    def test_covering(self):
        t = TimeGrid.covering(20.0, 0.05)
        assert t.n_t == 400 and t.horizon == pytest.approx(20.0)
        assert TimeGrid.covering(20.01, 0.05).n_t == 401

    def test_invalid(self):
        with pytest.raises(ValueError):
            TimeGrid(0, 0.1)
        with pytest.raises(ValueError):
            TimeGrid(10, -0.1)

    def test_tail_rule(self):
        with pytest.raises(ValueError, match="tail"):
            TimeGrid(10, 1.0).require_tail()
        mask = tail_safe(TimeGrid(400, 0.05))
        assert mask.sum() == 101  # nodes 0 .. 5.0

    def test_trajectory_interpolation(self):
        g = SpatialGrid(8)
        t = TimeGrid(4, 1.0)
        data = np.outer(t.nodes, np.ones(8))
        traj = Trajectory(g, t, data)
        np.testing.assert_allclose(traj.at([0.5, 3.25]), [[0.5] * 8, [3.25] * 8])
        with pytest.raises(ValueError):
            Trajectory(g, t, data[:-1])


class TestWeights:
    def test_linear_weights_match_quadrature(self):
        np.testing.assert_allclose(exp_weights(TimeGrid(40, 0.5), "linear"), hat_weights(40, 0.5),
                                   rtol=1e-12, atol=1e-16)

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_cubic_weights_exact_on_cubics(self, k):
        t = TimeGrid(50, 0.4)
        exact = quad(lambda s: math.exp(-s) * s ** k, 0, t.horizon, epsabs=0, epsrel=1e-13)[0]
        assert exp_weights(t) @ t.nodes ** k == pytest.approx(exact, rel=1e-12)

    def test_cubic_weights_equal_average_at_zero(self):
        t = TimeGrid(60, 0.3)
        h = np.cos(t.nodes) + t.nodes
        assert exp_weights(t) @ h == pytest.approx(avg_A(h, t)[0], rel=1e-13)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            exp_weights(TimeGrid(40, 0.5), "simpson")


class TestWeightedNorm:
    g = SpatialGrid(8)

    def test_constant(self):
        t = TimeGrid(400, 0.05)
        data = np.full((t.size, 8), 3.0)
        expected = 9 * 2 * math.pi * (1 - math.exp(-t.horizon))
        assert weighted_l2_sq(Trajectory(self.g, t, data)) == pytest.approx(expected, rel=1e-13)

    def test_decaying(self):
        for step in (0.05, 0.025):
            t = TimeGrid.covering(20, step)
            data = np.exp(-t.nodes / 2)[:, None] * np.ones(8)
            expected = 2 * math.pi * (1 - math.exp(-2 * t.horizon)) / 2
            # second-order product rule: error ~ step^2 / 12 relative
            assert abs(weighted_l2_sq(Trajectory(self.g, t, data)) - expected) <= step ** 2 * expected

    def test_zero(self):
        t = TimeGrid(400, 0.05)
        assert weighted_l2_sq(Trajectory(self.g, t, np.zeros((t.size, 8)))) == 0

    def test_bounded_by_sup(self):
        rng = np.random.default_rng(3)
        t = TimeGrid(400, 0.05)
        data = rng.normal(size=(t.size, 8))
        traj = Trajectory(self.g, t, data)
        sup = np.max(self.g.norm_sq(data))
        assert weighted_l2_sq(traj) <= (1 - math.exp(-t.horizon)) * sup


class TestAverages:
    t = TimeGrid(500, 0.05)

    def test_unit(self):
        m = tail_safe(self.t)
        r = self.t.horizon - self.t.nodes
        one = np.ones(self.t.size)
        np.testing.assert_allclose(avg_A(one, self.t), 1 - np.exp(-r), atol=1e-14)
        assert np.max(np.abs(avg_A(one, self.t)[m] - 1)) <= math.exp(-TAIL) * (1 + 1e-9)
        # the second kernel has mass 1 - (1 + r) e^{-r} on a truncated range
        np.testing.assert_allclose(avg_A2(one, self.t), 1 - (1 + r) * np.exp(-r), atol=1e-13)
        far = (1 + r) * np.exp(-r) <= math.exp(-TAIL)
        assert np.max(np.abs(avg_A2(one, self.t)[far] - 1)) <= math.exp(-TAIL)

    @pytest.mark.parametrize("kind", ["cubic", "linear"])
    def test_linear_function(self, kind):
        s, T = self.t.nodes, self.t.horizon
        m = tail_safe(self.t)
        exact_A = s + 1 - (T + 1) * np.exp(-(T - s))
        np.testing.assert_allclose(avg_A(s, self.t, kind), exact_A, atol=1e-12)
        assert np.max(np.abs(avg_A(s, self.t, kind) - (s + 1))[m]) <= (T + 1) * math.exp(-TAIL)
        exact_A2 = np.array([_trunc_A2(lambda x: x, ti, T) for ti in s[::50]])
        np.testing.assert_allclose(avg_A2(s, self.t, kind)[::50], exact_A2, atol=1e-11)
        r = T - s
        tail = np.exp(-r) * (r * T + r + T + 2)  # int_T^inf (x - t) e^{-(x - t)} x dx
        assert np.all(np.abs(avg_A2(s, self.t, kind) - (s + 2)) <= tail + 1e-11)

    def test_exponential(self):
        s = self.t.nodes
        m = tail_safe(self.t)
        got = avg_A(np.exp(-s), self.t)
        assert np.max(np.abs(got - np.exp(-s) / 2)[m]) <= self.t.step ** 4

    def test_cubic_fourth_order(self):
        errs = []
        for step in (0.2, 0.1, 0.05):
            t = TimeGrid.covering(20, step)
            s = t.nodes
            exact = np.array([_trunc_A(math.cos, ti, t.horizon) for ti in s[:5]])
            errs.append(np.max(np.abs(avg_A(np.cos(s), t)[:5] - exact)))
        assert errs[0] / errs[1] > 12 and errs[1] / errs[2] > 12

    def test_fubini_second_order_and_tight(self):
        # A(A h) and A^2 h are different discretizations of the same integral
        rng = np.random.default_rng(5)
        for step in (0.1, 1e-3):
            t = TimeGrid.covering(20, step)
            s = t.nodes
            h = sum(rng.normal() * np.cos(rng.uniform(0, 3) * s + rng.uniform(0, 6)) for _ in range(4))
            diff = np.max(np.abs(avg_A(avg_A(h, t), t) - avg_A2(h, t)))
            assert diff <= 10 * step ** 2
            if step == 1e-3:
                assert diff <= 1e-8

    def test_derivative_identity(self):
        t = TimeGrid.covering(25, 0.01)
        s = t.nodes
        h = np.sin(s) + 0.1 * s
        a = avg_A(h, t)
        d = np.gradient(a, t.step)
        m = tail_safe(t)
        m[0] = False
        assert np.max(np.abs(d - (a - h))[m]) <= 10 * t.step ** 2

    def test_linearity(self):
        rng = np.random.default_rng(2)
        h1, h2 = rng.normal(size=(2, self.t.size))
        lhs = avg_A2(2 * h1 - 3 * h2, self.t)
        np.testing.assert_allclose(lhs, 2 * avg_A2(h1, self.t) - 3 * avg_A2(h2, self.t), atol=1e-12)

    def test_vector_valued(self):
        rng = np.random.default_rng(4)
        H = rng.normal(size=(self.t.size, 3))
        np.testing.assert_allclose(avg_A(H, self.t)[:, 1], avg_A(H[:, 1], self.t), rtol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            avg_A(np.ones(10), self.t)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=401, max_size=401))
    def test_linear_kind_is_monotone(self, values):
        t = TimeGrid(400, 0.05)
        h = np.array(values)
        assert np.all(avg_A(h, t, "linear") >= 0)
        assert np.all(avg_A2(h, t, "linear") >= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(0.0, 1.0))
    def test_cubic_kind_monotone_on_resolved_data(self, coef, lift):
        t = TimeGrid(400, 0.05)
        s = t.nodes
        wave = sum(c * np.cos((j + 1) * 0.3 * s + j) for j, c in enumerate(coef))
        h = wave ** 2 + lift
        assert np.all(avg_A(h, t) >= 0)
        assert np.all(avg_A2(h, t) >= 0)


class TestDifferences:
    def test_first_and_second_order(self):
        t = TimeGrid(100, 0.01)
        s = t.nodes
        np.testing.assert_allclose(time_derivative(s ** 2, t), 2 * s, atol=1e-11)
        np.testing.assert_allclose(time_derivative(s ** 2, t, 2), 2 * np.ones_like(s), atol=1e-8)
        np.testing.assert_allclose(time_derivative(s ** 3, t, 2), 6 * s, atol=1e-7)

    def test_ghost_and_forward_rows(self):
        t = TimeGrid(10, 0.5)
        assert d1_matrix(t, "ghost")[0].nnz == 0
        np.testing.assert_allclose(d1_matrix(t, "forward")[0].toarray()[0, :2], [-2, 2])
        np.testing.assert_allclose(d2_matrix(t, "ghost")[0].toarray()[0, :3], [-8, 8, 0])
        with pytest.raises(ValueError):
            d1_matrix(t, "backward")

    def test_too_short(self):
        with pytest.raises(ValueError):
            d2_matrix(TimeGrid(2, 0.5))


class TestPoincare:
    g = SpatialGrid(8)

    def test_constant(self):
        t = TimeGrid(400, 0.05)
        u0 = np.sin(self.g.nodes)
        traj = Trajectory(self.g, t, np.tile(u0, (t.size, 1)))
        m = poincare_check(traj)
        assert m.margin1 == pytest.approx(0, abs=1e-12)
        assert m.margin2 >= self.g.norm_sq(u0) - 1e-12

    def test_affine(self):
        t = TimeGrid(400, 0.05)
        u0, u1 = np.sin(self.g.nodes), np.cos(self.g.nodes)
        traj = Trajectory(self.g, t, u0 + np.outer(t.nodes, u1))
        m = poincare_check(traj)
        n1 = self.g.norm_sq(u1)
        assert m.margin1 == pytest.approx(2 * n1 - n1 * (1 - math.exp(-t.horizon)), rel=1e-10)
        assert m.margin1 >= 0

    def test_random_trajectories(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            t = TimeGrid.covering(rng.uniform(15, 30), rng.uniform(0.02, 0.1))
            s = t.nodes[:, None]
            data = rng.normal(size=8) + s * rng.normal(size=8)
            for _ in range(rng.integers(1, 5)):
                data = data + np.cos(rng.uniform(0, 3) * s + rng.uniform(0, 6)) * \
                    np.exp(rng.uniform(-0.4, 0.4) * s) * rng.normal(size=8)
            assert poincare_check(Trajectory(self.g, t, data)).passed()


class TestGronwall:
    def test_constant_equality(self):
        t = TimeGrid(100, 0.01)
        c = np.full(t.size, 1.5)
        margin = gronwall_check(c ** 2, np.zeros(t.size), c, t)
        np.testing.assert_allclose(margin, 0, atol=1e-14)

    def test_saturated(self):
        t = TimeGrid(200, 0.01)
        s = t.nodes
        margin = gronwall_check((1 + s) ** 2, np.ones(t.size), np.ones(t.size), t)
        np.testing.assert_allclose(margin, 0, atol=1e-10)

    def test_constructed_triples(self):
        rng = np.random.default_rng(7)
        t = TimeGrid(400, 0.005)
        for _ in range(20):
            v = np.abs(np.cos(rng.uniform(0, 5) * t.nodes + rng.uniform(0, 6)))
            c = 1 + rng.uniform(0, 1) * t.nodes
            slack = rng.uniform(0, 1)
            # forward integration of sqrt(u)' = slack * v keeps u' = 2 slack v sqrt(u) <= 2 v sqrt(u)
            root = c[0] + slack * np.concatenate([[0], np.cumsum(0.5 * t.step * (v[1:] + v[:-1]))])
            margin = gronwall_check(root ** 2, v, c, t, tol=1e-6)
            assert np.min(margin) >= -1e-8

    def test_hypothesis_violation(self):
        t = TimeGrid(100, 0.01)
        with pytest.raises(ValueError, match="hypothesis"):
            gronwall_check(np.full(t.size, 4.0), np.zeros(t.size), np.ones(t.size), t)
        with pytest.raises(ValueError, match="nondecreasing"):
            gronwall_check(np.zeros(t.size), np.zeros(t.size), 2 - t.nodes, t)
