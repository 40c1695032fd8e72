import math

import numpy as np
import pytest

from otafd.channel import (
    ChannelRealization,
    DeviceGeometry,
    path_loss_gain,
    realize_round,
    sample_small_scale,
)


class TestPathLoss:
    def test_reference_value(self):
        # (3e8 / (4 pi 915e6 * 100))^3 evaluated with 40-digit arithmetic
        g = path_loss_gain(DeviceGeometry(100.0, 915e6, 3.0))
        assert g == pytest.approx(1.776114214031102e-11, rel=1e-13)

    def test_zero_exponent(self):
        assert path_loss_gain(DeviceGeometry(321.0, 2.4e9, 0.0)) == 1.0

    def test_inverse_square(self):
        near = path_loss_gain(DeviceGeometry(150.0, 915e6, 2.0))
        far = path_loss_gain(DeviceGeometry(300.0, 915e6, 2.0))
        assert far == pytest.approx(near / 4, rel=1e-14)

    def test_monotone_in_distance_and_carrier(self):
        d = np.linspace(50, 800, 30)
        g = [path_loss_gain(DeviceGeometry(x, 915e6, 3.0)) for x in d]
        assert np.all(np.diff(g) < 0)
        f = [path_loss_gain(DeviceGeometry(100, x, 3.0)) for x in np.linspace(1e8, 6e9, 30)]
        assert np.all(np.diff(f) < 0)

    @pytest.mark.parametrize("kwargs", [dict(distance_m=0.0), dict(distance_m=-1.0), dict(carrier_hz=0.0)])
    def test_domain_errors(self, kwargs):
        args = dict(distance_m=100.0, carrier_hz=915e6, pathloss_exp=3.0) | kwargs
        with pytest.raises(ValueError):
            DeviceGeometry(**args)


class TestSmallScale:
    def test_deterministic(self):
        a = sample_small_scale(np.random.default_rng(5))
        b = sample_small_scale(np.random.default_rng(5))
        assert a == b

    def test_unit_power_zero_mean(self):
        g = sample_small_scale(np.random.default_rng(1), size=100_000)
        assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.02)
        se = math.sqrt(0.5 / g.size)
        assert abs(g.real.mean()) < 3 * se
        assert abs(g.imag.mean()) < 3 * se
        assert np.var(g.real) == pytest.approx(0.5, rel=0.02)


class _UnitRng:
    """Stub generator whose normal draws reproduce g = 1 + 0j."""

    def __init__(self):
        self.values = iter([1.0, 0.0])

    def normal(self, loc, scale, size=None):
        return next(self.values)


class TestRealizeRound:
    def test_degenerate_draw(self):
        ch = realize_round([DeviceGeometry(1.0, 1.0, 0.0)], 1e-8, _UnitRng())
        assert ch.coeffs[0] == 1 + 0j
        assert ch.noise_var == 1e-8

    def test_mean_power_matches_path_loss(self):
        geoms = [DeviceGeometry(120.0, 915e6, 3.0), DeviceGeometry(480.0, 915e6, 3.0)]
        rng = np.random.default_rng(11)
        h = np.array([realize_round(geoms, 1e-8, rng).coeffs for _ in range(100_000)])
        expected = [path_loss_gain(g) for g in geoms]
        np.testing.assert_allclose(np.mean(np.abs(h) ** 2, axis=0), expected, rtol=0.02)

    def test_seeded_reproducible_and_independent(self):
        geoms = [DeviceGeometry(100.0, 915e6, 2.0)] * 2
        a = realize_round(geoms, 1e-8, np.random.default_rng(3)).coeffs
        b = realize_round(geoms, 1e-8, np.random.default_rng(3)).coeffs
        np.testing.assert_array_equal(a, b)
        assert a[0] != a[1]

    def test_requires_a_device(self):
        with pytest.raises(ValueError):
            realize_round([], 1e-8, np.random.default_rng(0))

    def test_realization_rejects_bad_noise(self):
        with pytest.raises(ValueError):
            ChannelRealization(np.ones(2), -1.0)
