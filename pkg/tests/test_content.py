import numpy as np
import pytest

from slelab import content as CT
from slelab import drivers as D
from slelab import loewner
from slelab.curves import CurveSample, MobiusMap
from slelab.loewner import DomainError, InputError, NumericError


def trace(kappa, seed, dt=1e-4):
    dp = D.drive_chordal_sle(D.SleParams(kappa), 1.0, dt, D.RngStream(seed))
    pts, ts = loewner.chordal_trace(dp)
    return pts, ts


@pytest.fixture(scope="module")
def trace83():
    return trace(8.0 / 3.0, 5)[0]


class TestNeighborhoodArea:
    def test_stadium(self):
        seg = np.array([0j, 1.0 + 0j])
        exact = 2 * 0.1 + np.pi * 0.01
        assert CT.neighborhood_area(seg, 0.1) == pytest.approx(exact, rel=0.01)

    def test_point_disk(self):
        a = CT.neighborhood_area(np.array([0.3 + 0.7j]), 0.25)
        assert a == pytest.approx(np.pi * 0.25 ** 2, rel=0.01)

    def test_disjoint_additivity(self):
        one = CT.neighborhood_area(np.array([0j, 1.0 + 0j]), 0.1)
        both = CT.neighborhood_area(
            [np.array([0j, 1.0 + 0j]), np.array([5j, 5j + 1.0])], 0.1
        )
        assert both == pytest.approx(2 * one, rel=1e-6)

    def test_bad_r(self):
        with pytest.raises(InputError):
            CT.neighborhood_area(np.array([0j, 1j]), 0.0)

    def test_resolution_floor(self):
        pts = np.linspace(0, 1, 1001) + 0j
        with pytest.raises(InputError):
            CT.neighborhood_area(pts, 1e-6)


class TestEstimateContent:
    def test_segment_content_vanishes_with_window(self):
        # fixed exponent d = 1.25 > 1 on a 1-dimensional set: content -> 0
        p = D.SleParams(2.0)
        seg = np.linspace(0, 1, 2001) + 0j
        big = CT.estimate_content(seg, p, window=(0.02, 0.16)).content
        small = CT.estimate_content(seg, p, window=(0.00125, 0.01)).content
        assert small < 0.6 * big
        # and the free fit sees the true dimension 1
        est = CT.estimate_content(seg, p, window=(0.00125, 0.16))
        assert est.exponent_fit == pytest.approx(1.0, abs=0.05)

    def test_free_fit_exponent_kappa2(self):
        pts, _ = trace(2.0, 1)
        res = CT._resolution([pts])
        diam = CT._diameter([pts])
        est = CT.estimate_content(pts, D.SleParams(2.0),
                                  window=(8 * res, diam / 16.0))
        assert abs(est.exponent_fit - 1.25) < 0.08

    def test_disjoint_union_additivity(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        pts = trace83
        far = pts + 100.0
        win = (0.01, 0.1)
        a = CT.estimate_content(pts, p, window=win).content
        b = CT.estimate_content([pts, far], p, window=win).content
        # raster anchoring differs between the two runs: pixel-level slack
        assert b == pytest.approx(2 * a, rel=1e-3)

    def test_clip(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        whole = CT.estimate_content(trace83, p, window=(0.01, 0.1)).content
        clipped = CT.estimate_content(trace83, p, window=(0.01, 0.1),
                                      K=(0j, 0.5)).content
        assert 0 < clipped < whole

    def test_degenerate_window(self, trace83):
        with pytest.raises(NumericError):
            CT.estimate_content(trace83, D.SleParams(8.0 / 3.0),
                                window=(0.1, 0.1))

    def test_json_round_trip(self):
        est = CT.MinkowskiEstimate(1.5, 1.3, (0.01, 0.1), 0.02)
        back = CT.MinkowskiEstimate.from_json(est.to_json())
        assert back == est


class TestContentMeasure:
    def test_shape_and_monotone(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        cm = CT.content_measure(trace83, p)
        assert cm.cumulative[0] == 0.0
        assert np.all(np.diff(cm.cumulative) >= 0.0)
        assert cm.total == cm.cumulative[-1]

    def test_total_matches_direct(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        win = CT.default_window([trace83])
        win = (win[0], win[1] / 4.0)
        cm = CT.content_measure(trace83, p, window=win)
        direct = CT.estimate_content(trace83, p, window=win).content
        assert cm.total == pytest.approx(direct, rel=0.03)

    def test_additivity(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        win = CT.default_window([trace83])
        win = (win[0], win[1] / 4.0)
        cm = CT.content_measure(trace83, p, window=win)
        rng = np.random.default_rng(0)
        for k in rng.integers(2000, 8000, 4):
            direct = CT.estimate_content(trace83[k:], p, window=win).content
            tail = cm.total - cm.cumulative[k]
            assert tail == pytest.approx(direct, rel=0.03)

    def test_reparametrization_invariance(self, trace83):
        # inserting midpoints leaves the geometric curve (hence the total)
        # unchanged
        p = D.SleParams(8.0 / 3.0)
        pts = trace83[:4000]
        mids = 0.5 * (pts[:-1] + pts[1:])
        fine = np.empty(2 * len(pts) - 1, complex)
        fine[0::2] = pts
        fine[1::2] = mids
        win = (0.01, 0.08)
        a = CT.content_measure(pts, p, window=win).total
        b = CT.content_measure(fine, p, window=win).total
        assert b == pytest.approx(a, rel=0.03)

    def test_json_round_trip(self):
        cm = CT.ContentMeasure(np.array([0.0, 0.5, 1.2]), 1.2)
        back = CT.ContentMeasure.from_json(cm.to_json())
        assert np.array_equal(back.cumulative, cm.cumulative)

    def test_bad_cumulative(self):
        with pytest.raises(InputError):
            CT.ContentMeasure(np.array([0.0, 1.0, 0.5]), 0.5)
        with pytest.raises(InputError):
            CT.ContentMeasure(np.array([0.1, 1.0]), 1.0)


class TestNaturalParametrization:
    def test_timestamps_equal_cumulative(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        cur = CurveSample(trace83, np.linspace(0, 1, len(trace83)), "chordal")
        cm = CT.content_measure(trace83, p)
        nat = CT.natural_parametrization(cur, p, measure=cm)
        assert np.array_equal(nat.times, cm.cumulative)
        assert nat.provenance["natural"]

    def test_equal_content_resampling(self, trace83):
        p = D.SleParams(8.0 / 3.0)
        cur = CurveSample(trace83, np.linspace(0, 1, len(trace83)), "chordal")
        cm = CT.content_measure(trace83, p)
        nat = CT.natural_parametrization(cur, p, measure=cm, n_points=1500)
        assert len(nat.points) == 1500
        assert np.allclose(np.diff(nat.times), nat.times[1] - nat.times[0])
        # resampled vertices lie on the original polyline's bounding range
        assert nat.points[0] == trace83[0]

    def test_zero_content_rejected(self):
        p = D.SleParams(8.0 / 3.0)
        cur = CurveSample(np.array([0j, 1j]), np.array([0.0, 1.0]), "chordal")
        cm = CT.ContentMeasure(np.array([0.0, 0.0]), 0.0)
        with pytest.raises(InputError):
            CT.natural_parametrization(cur, p, measure=cm)


class TestContentTransport:
    def setup_method(self):
        self.p = D.SleParams(8.0 / 3.0)
        pts, _ = trace(8.0 / 3.0, 5)
        self.cur = CurveSample(pts, np.linspace(0, 1, len(pts)), "chordal")
        self.cm = CT.content_measure(pts, self.p)

    def test_identity(self):
        K = (0j, 10.0)
        tot = CT.content_transport(self.cur, self.cm, MobiusMap.identity(),
                                   K, self.p)
        assert tot == pytest.approx(self.cm.total, rel=1e-9)

    def test_scaling(self):
        K = (0j, 10.0)
        r = 2.5
        F = MobiusMap(r, 0.0, 0.0, 1.0)
        tot = CT.content_transport(self.cur, self.cm, F, K, self.p)
        assert tot == pytest.approx(r ** self.p.d * self.cm.total, rel=1e-9)

    def test_pole_inside_rejected(self):
        F = MobiusMap(0.0, 1.0, 1.0, -0.5j)
        with pytest.raises(DomainError):
            CT.content_transport(self.cur, self.cm, F, (0j, 1.0), self.p)

    def test_mobius_vs_direct(self):
        # quadrature against a direct content estimate of the image
        F = MobiusMap(0.0, 1.0, 1.0, 3.0)  # 1/(z+3), pole at -3
        K = (0j, 1.0)
        tot = CT.content_transport(self.cur, self.cm, F, K, self.p)
        keep = np.abs(self.cur.points) <= 1.0
        img = F(self.cur.points[keep])
        win = CT.default_window([img])
        direct = CT.estimate_content(img, self.p,
                                     window=(win[0], win[1] / 4.0)).content
        assert tot == pytest.approx(direct, rel=0.05)
