import numpy as np
import pytest

from slelab import curves as C
from slelab import loewner
from slelab import measures as M
from slelab.drivers import RngStream, SleParams, drive_chordal_sle_rho
from slelab.loewner import DomainError, InputError, MapStack, NumericError


def whole_plane_state(kappa, seed, T=3.0, t0=-6.0, dt=0.02):
    p = SleParams(kappa)
    dp = C._whole_plane_driving(p, t0, T, dt, RngStream(seed))
    stack = MapStack.from_driving(dp)
    lam = float(dp.values[-1])
    q = float(dp.companions["q"][-1])
    return p, stack, lam, q, stack.capacity().value


def bubble_state(kappa, seed, T=0.3, dt=0.01):
    p = SleParams(kappa)
    eps0 = 1e-3 * np.sqrt(dt)
    dp = drive_chordal_sle_rho(p, [(eps0, 2.0)], T, dt, RngStream(seed))
    stack = MapStack.from_driving(dp)
    return p, stack, float(dp.values[-1]), float(dp.companions["q"][-1])


class TestGreenEval:
    def test_chordal_at_i(self):
        # |i| = Im i = 1: every factor is 1
        g = M.green_eval(M.GreenQuery(M.CHORDAL_KIND, 1j), SleParams(8 / 3))
        assert g == pytest.approx(1.0)

    def test_loop_rooted_power_law(self):
        p = SleParams(2.0)  # d = 1.25
        g = M.green_eval(M.GreenQuery(M.LOOP_ROOTED, 2.0 + 0j), p)
        assert g == pytest.approx(2.0 ** (-1.5))

    def test_bubble_at_i(self):
        g = M.green_eval(M.GreenQuery(M.BUBBLE, 1j), SleParams(4.0))
        assert g == pytest.approx(1.0)

    def test_chordal_chart_covariance(self):
        # chart z -> z/r: G_D(w) = |1/r|^(2-d) G_H(w/r)
        p = SleParams(8 / 3)
        r = 3.0
        chart = C.MobiusMap(1.0 / r, 0.0, 0.0, 1.0)
        g = M.green_eval(M.GreenQuery(M.CHORDAL_KIND, r * 1j, chart), p)
        direct = (1.0 / r) ** (2.0 - p.d) * M.green_eval(
            M.GreenQuery(M.CHORDAL_KIND, 1j), p
        )
        assert g == pytest.approx(direct, rel=1e-12)

    def test_domain_errors(self):
        p = SleParams(4.0)
        with pytest.raises(DomainError):
            M.green_eval(M.GreenQuery(M.LOOP_ROOTED, 0j), p)
        with pytest.raises(DomainError):
            M.green_eval(M.GreenQuery(M.BUBBLE, 1.0 + 0j), p)
        with pytest.raises(InputError):
            M.green_eval(M.GreenQuery("nonsense", 1j), p)


class TestQWeights:
    def test_whole_gap_pi(self):
        p = SleParams(4.0)
        assert M.q_weight_whole(np.pi, 0.0, 0.0, p) == pytest.approx(
            2.0 ** (p.d - 2.0)
        )

    def test_whole_capacity_scaling(self):
        p = SleParams(8 / 3)
        a = M.q_weight_whole(2.0, 0.5, 1.0, p)
        b = M.q_weight_whole(2.0, 0.5, 3.0, p)
        assert b / a == pytest.approx(np.exp((p.d - 2.0) * 2.0), rel=1e-12)

    def test_whole_zero_gap_rejected(self):
        with pytest.raises(NumericError):
            M.q_weight_whole(1.0, 1.0, 0.0, SleParams(4.0))

    def test_bubble_gap_two(self):
        assert M.q_weight_bubble(0.0, 2.0, SleParams(4.0)) == pytest.approx(0.5)

    def test_bubble_order_enforced(self):
        with pytest.raises(NumericError):
            M.q_weight_bubble(1.0, 0.5, SleParams(4.0))


class TestQGRGIdentity:
    def test_whole_plane(self):
        # Q * G_after = R_w * G_C exactly, from shared chart data
        for kappa, seed in ((10 / 3, 2), (8 / 3, 7), (6.0, 11)):
            p, stack, lam, q, tau = whole_plane_state(kappa, seed)
            for w in (2.0 + 0j, -1.5 + 1j, 0.3 - 2.7j):
                lhs = M.q_weight_whole(lam, q, tau, p) * M.green_after_stop(
                    stack, lam, q, w, p
                )
                rhs = (
                    M.rn_weight_Rw(stack, lam, q, w, p)
                    * M.green_eval(M.GreenQuery(M.LOOP_ROOTED, w), p)
                    * p.chat
                )
                assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_bubble(self):
        for kappa, seed in ((4.0, 3), (6.0, 5), (8 / 3, 9)):
            p, stack, lam, q = bubble_state(kappa, seed)
            for w in (1j, 0.5 + 0.8j, -1.0 + 2j):
                lhs = M.q_weight_bubble(lam, q, p) * M.green_after_stop_bubble(
                    stack, lam, q, w, p
                )
                rhs = (
                    M.rn_weight_bubble(stack, lam, q, w, 0.0, p)
                    * M.green_eval(M.GreenQuery(M.BUBBLE, w), p)
                    * p.chat
                )
                assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_swallowed_point_rejected(self):
        p, stack, lam, q = bubble_state(4.0, 3)
        # a point far inside the hull is swallowed before the stop
        with pytest.raises(DomainError):
            M.green_after_stop_bubble(stack, lam, q, 1e-4j, p)


class TestRnWeights:
    def test_whole_plane_empty_hull_limit(self):
        # before any growth the target and infinity laws agree: R_w -> 1
        p = SleParams(10 / 3)
        stack = MapStack(loewner.WHOLE_PLANE, np.empty(0), np.empty(0),
                         t0=-15.0, lam_end=0.7)
        rw = M.rn_weight_Rw(stack, 0.7, 2.5, 2.0 + 0j, p, tau=-15.0)
        assert rw == pytest.approx(1.0, abs=1e-4)

    def test_bubble_empty_hull_limit(self):
        p = SleParams(4.0)
        stack = MapStack(loewner.CHORDAL, np.empty(0), np.empty(0),
                         lam_end=0.0)
        rw = M.rn_weight_bubble(stack, 0.0, 1e-4, 1j, 0.0, p)
        assert rw == pytest.approx(1.0, abs=1e-3)

    def test_whole_plane_mean_one(self):
        # martingale property of the target-law weight at a fixed capacity;
        # the stop keeps the hull well clear of w (the weight's tail gets
        # heavy as the hull approaches w, starving a small-sample mean)
        p = SleParams(10 / 3)
        w = 2.0 + 0j
        vals = []
        for seed in range(300):
            _, stack, lam, q, tau = whole_plane_state(
                10 / 3, 5000 + seed, T=-2.0, t0=-6.0, dt=0.02
            )
            vals.append(M.rn_weight_Rw(stack, lam, q, w, p))
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - 1.0) < max(4.0 * se, 0.02)


class TestRootedLoopSampler:
    def test_closure_and_event(self):
        p = SleParams(8 / 3)
        wl = M.sample_rooted_loop(p, 1.0, dt=0.01, rng=RngStream(1))
        pts = wl.loop.points
        assert pts[0] == 0j and pts[-1] == 0j
        assert abs(pts[-2]) < 0.01  # honest approach, not a teleport
        assert np.max(np.abs(pts)) >= 1.0
        assert wl.weight > 0
        assert wl.event == "tau_circle_r=1"

    def test_prefix_matches_full_weight(self):
        p = SleParams(8 / 3)
        full = M.sample_rooted_loop(p, 1.0, dt=0.02, rng=RngStream(6))
        pre = M.sample_rooted_loop(p, 1.0, dt=0.02, rng=RngStream(6),
                                   prefix_only=True)
        assert pre.weight == full.weight
        assert len(pre.loop.points) < len(full.loop.points)

    def test_determinism(self):
        p = SleParams(6.0)
        a = M.sample_rooted_loop(p, 0.5, dt=0.02, rng=RngStream(3))
        b = M.sample_rooted_loop(p, 0.5, dt=0.02, rng=RngStream(3))
        assert np.array_equal(a.loop.points, b.loop.points)
        assert a.weight == b.weight

    def test_bad_radius(self):
        with pytest.raises(InputError):
            M.sample_rooted_loop(SleParams(4.0), -1.0)


class TestBubbleSampler:
    def test_radius_stop(self):
        p = SleParams(4.0)
        wl = M.sample_bubble(p, 0.0, ("radius", 1.0), dt=0.01,
                             rng=RngStream(4))
        pts = wl.loop.points
        assert pts[0] == 0j and pts[-1] == 0j
        assert abs(pts[-2]) < 0.05
        assert np.max(np.abs(pts)) >= 1.0
        assert np.min(pts.imag) > -1e-9
        assert wl.weight > 0

    def test_capacity_stop_prefix(self):
        p = SleParams(6.0)
        wl = M.sample_bubble(p, 0.0, ("capacity", 0.25), dt=0.01,
                             rng=RngStream(5), prefix_only=True)
        assert wl.event == "capacity=0.25"
        assert wl.weight > 0

    def test_offset_root(self):
        p = SleParams(4.0)
        wl = M.sample_bubble(p, 1.5, ("radius", 0.5), dt=0.01,
                             rng=RngStream(7))
        assert wl.loop.points[0] == 1.5 + 0j
        assert wl.loop.points[-1] == 1.5 + 0j

    def test_bad_stop_rule(self):
        with pytest.raises(InputError):
            M.sample_bubble(SleParams(4.0), 0.0, ("nonsense", 1.0))


class TestLoopFunctionalEstimator:
    def test_constant_functional_runs(self):
        p = SleParams(8 / 3)
        K = ("disk", 2.0 + 0j, 0.5)
        res = M.loop_functional_estimator(lambda g: 1.0, K, p, 3,
                                          rng=RngStream(8), dt=0.05)
        assert res.estimate > 0 and np.isfinite(res.estimate)
        assert res.n + res.rejected == 3

    def test_region_must_avoid_root(self):
        with pytest.raises(InputError):
            M.loop_functional_estimator(lambda g: 1.0, ("disk", 0j, 1.0),
                                        SleParams(4.0), 1)

    def test_result_json_round_trip(self):
        r = M.EstimatorResult(1.5, 0.1, 40, 2)
        back = M.EstimatorResult.from_json(r.to_json())
        assert back == r

    def test_annulus_sampler(self):
        area, draw, member = M._region_area_and_sampler(
            ("annulus", 0j, 1.0, 2.0)
        )
        assert area == pytest.approx(3 * np.pi)
        g = np.random.default_rng(0)
        zs = np.array([draw(g) for _ in range(50)])
        assert np.all(member(zs))
        assert np.all((np.abs(zs) >= 1.0) & (np.abs(zs) <= 2.0))


class TestEnsembleIO:
    def test_round_trip(self, tmp_path):
        p = SleParams(6.0)
        loops = [
            M.sample_rooted_loop(p, 0.5, dt=0.02, rng=RngStream(20 + i),
                                 prefix_only=True)
            for i in range(3)
        ]
        M.save_ensemble(str(tmp_path / "ens"), loops)
        back = M.load_ensemble(str(tmp_path / "ens"))
        assert len(back) == 3
        for a, b in zip(loops, back):
            assert np.allclose(a.loop.points, b.loop.points)
            assert a.weight == b.weight and a.event == b.event

    def test_bad_weight_rejected(self):
        cur = C.CurveSample(np.array([0j]), np.zeros(1), "chordal")
        with pytest.raises(InputError):
            M.WeightedLoop(cur, -1.0, "e")
