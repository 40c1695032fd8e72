import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otafd.channel import ChannelRealization
from otafd.instances import random_instance
from otafd.privacy import dp_margin
from otafd.transceiver import (
    CASE_ARTIFICIAL_NOISE,
    CASE_CHANNEL_NOISE,
    CASE_INACTIVE,
    ClassPartition,
    DegenerateChannelError,
    class_thresholds,
    design_round,
    misalignment,
    optimal_p1,
    phi1,
    phi2,
    received_noise_power,
    threshold_rounds,
)
from otafd.validate import dp_equality_residual, unconstrained_branch


def _ch(h, noise):
    return ChannelRealization(np.asarray(h, dtype=complex), noise)


class TestPartition:
    def test_shares_and_weights(self):
        p = ClassPartition([[1, 0, 3], [1, 0, 1]])
        np.testing.assert_allclose(p.class_shares(), [[0.5, 0, 0.75], [0.5, 0, 0.25]])
        np.testing.assert_allclose(p.device_weights(), [[0.25, 0, 0.75], [0.5, 0, 0.5]])
        np.testing.assert_array_equal(p.active, [True, False, True])

    @pytest.mark.parametrize("bad", [[1, 2], [[-1, 2]], [[0.5, 1]]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ClassPartition(bad)


class TestHandDesigns:
    def test_artificial_noise_single_device(self):
        # c = 1, a = 4, lambda^2 = (1 + 0) / (4 + 1), P2^2 = 4 lambda^2
        ch = _ch([1.0], 0.0)
        d = design_round(1, ch, ClassPartition([[10]]), [1.0], [1.0])
        assert d.case[0] == CASE_ARTIFICIAL_NOISE
        assert d.lam[0] ** 2 == pytest.approx(0.2, rel=1e-14)
        assert d.p2_mag[0, 0] ** 2 == pytest.approx(0.8, rel=1e-14)
        assert abs(d.p1[0, 0]) ** 2 == pytest.approx(0.2, rel=1e-14)
        assert d.power_used()[0, 0] == pytest.approx(1.0, rel=1e-14)
        assert phi2(d, ch, ClassPartition([[10]]))[0] == pytest.approx(4.0, rel=1e-14)

    def test_channel_noise_suffices(self):
        ch = _ch([0.5j, 2.0], 1.0)
        part = ClassPartition([[3, 1], [1, 1]])
        d = design_round(1, ch, part, [1.0, 1.0], [1e-3, 1e-3])
        np.testing.assert_array_equal(d.case, [CASE_CHANNEL_NOISE] * 2)
        assert np.all(d.p2_mag == 0)
        # lambda = min_i B^k sqrt(K) |h_i| sqrt(P_i) / B_i^k
        assert d.lam[0] == pytest.approx(min(4 * math.sqrt(2) * 0.5 / 3, 4 * math.sqrt(2) * 2 / 1))
        assert d.lam[1] == pytest.approx(min(2 * math.sqrt(2) * 0.5, 2 * math.sqrt(2) * 2))
        assert np.all(dp_margin(d, ch, 1, 2, [1e-3, 1e-3]) >= 0)

    def test_phi2_example(self):
        ch = _ch([1.0], 1e-7)
        part = ClassPartition([[5]])
        d = design_round(3, ch, part, [1.0], [0.0])
        assert phi2(d, ch, part)[0] == pytest.approx(1e-7, rel=1e-14)

    def test_inactive_class(self):
        part = ClassPartition([[2, 0], [1, 0]])
        ch = _ch([1, 1], 0.1)
        d = design_round(5, ch, part, [1, 1], [1.0, 1.0])
        assert d.case[1] == CASE_INACTIVE
        assert np.all(d.p1[:, 1] == 0) and np.all(d.p2_mag[:, 1] == 0)

    def test_zero_channel_holder(self):
        with pytest.raises(DegenerateChannelError):
            design_round(1, _ch([0.0, 1.0], 1.0), ClassPartition([[1], [1]]), [1, 1], [0, 0])

    def test_zero_channel_non_holder_is_fine(self):
        d = design_round(1, _ch([0.0, 1.0], 1.0), ClassPartition([[0], [1]]), [1, 1], [0, 0])
        assert d.p1[0, 0] == 0

    def test_p2_phase_alignment(self):
        ch = _ch([1j, -1.0], 0.0)
        d = design_round(10, ch, ClassPartition([[1], [1]]), [1, 1], [1.0, 1.0])
        hp2 = ch.coeffs[:, None] * d.p2(ch)
        assert np.allclose(hp2.imag, 0, atol=1e-15) and np.all(hp2.real >= 0)

    def test_num_classes_mismatch(self):
        with pytest.raises(ValueError):
            design_round(1, _ch([1.0], 1.0), ClassPartition([[1]]), [1.0], [0.0], num_classes=2)


class TestThresholds:
    def test_global_threshold_frozen(self):
        # sigma^2 / (4 K min |h|^2 P rho_max) = 1e-6 / (4 * 10 * 0.25e-8 * 1)
        t0 = threshold_rounds(_ch([1.0, 0.5], 1e-6), 1e-8, 10, [1.0, 0.3])
        assert t0 == pytest.approx(10.0, rel=1e-14)

    def test_global_threshold_no_privacy(self):
        assert threshold_rounds(_ch([1.0], 1.0), 1.0, 2, [0.0]) == math.inf

    def test_heterogeneous_counterexample(self):
        # the global formula says 250000 but the class actually needs noise beyond T = 25
        ch = _ch([1e-3, 1.0], 1.0)
        part = ClassPartition([[1], [100]])
        assert threshold_rounds(ch, 1.0, 1, [1.0, 1.0]) == pytest.approx(250000.0)
        exact = class_thresholds(ch, part, 1.0, [1.0, 1.0])
        assert exact[0] == pytest.approx(25.0, rel=1e-12)
        assert design_round(25, ch, part, [1, 1], [1, 1]).case[0] == CASE_CHANNEL_NOISE
        assert design_round(26, ch, part, [1, 1], [1, 1]).case[0] == CASE_ARTIFICIAL_NOISE

    def test_class_threshold_separates_cases(self, rng):
        for _ in range(200):
            inst = random_instance(rng, 10, 5)
            th = class_thresholds(inst.channel, inst.partition, inst.powers, inst.stringencies)
            d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
            live = inst.partition.active
            np.testing.assert_array_equal(d.case[live] == CASE_CHANNEL_NOISE, inst.rounds <= th[live] * (1 + 1e-12))


def _knowledge_norm(inst):
    target = np.einsum("jk,jkd->kd", inst.partition.class_shares(), inst.knowledge)
    ref = inst.partition.device_weights() @ np.linalg.norm(target, axis=1)
    return np.where(ref > 0, ref, 1.0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_design_invariants(seed):
    inst = random_instance(np.random.default_rng(seed))
    d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
    # alignment is exact
    assert np.all(phi1(d, inst.channel, inst.partition, inst.knowledge) / _knowledge_norm(inst) <= 1e-9)
    # power feasibility
    assert np.all(d.power_used() <= inst.powers[:, None] * (1 + 1e-9))
    # DP equality or channel-noise slack
    assert dp_equality_residual(d, inst.channel, inst.rounds, inst.stringencies) <= 1e-9
    c1 = d.case == CASE_CHANNEL_NOISE
    m = dp_margin(d, inst.channel, inst.rounds, inst.num_classes, inst.stringencies)
    assert np.all(m[c1] >= 0) and np.all(d.p2_mag[:, c1] == 0)
    assert np.all(d.lam > 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_phi2_identity_on_equality_manifold(seed):
    # in artificial-noise classes K * received / lambda^2 = K * a exactly
    inst = random_instance(np.random.default_rng(seed), 20, 6)
    d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
    shares = inst.partition.class_shares()
    a = 4 * inst.rounds * np.max(shares**2 * inst.stringencies[:, None], axis=0)
    k = inst.num_classes
    per_class = k * received_noise_power(d, inst.channel) / d.lam**2
    live = d.case == CASE_ARTIFICIAL_NOISE
    np.testing.assert_allclose(per_class[live], k * a[live], rtol=1e-9)
    np.testing.assert_allclose(phi2(d, inst.channel, inst.partition), inst.partition.device_weights() @ per_class, rtol=1e-12)


def test_peak_power_on_unconstrained_branch(rng):
    seen = 0
    for _ in range(300):
        inst = random_instance(rng, 20, 5)
        d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
        for kk in np.flatnonzero(d.case == CASE_ARTIFICIAL_NOISE):
            if unconstrained_branch(d, inst.channel, inst.partition, inst.powers, kk):
                seen += 1
                np.testing.assert_allclose(d.power_used()[:, kk], inst.powers, rtol=1e-9)
    assert seen > 10


def test_misalignment_zero_and_detects_perturbation(rng):
    inst = random_instance(rng, 8, 4)
    d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
    assert np.max(np.abs(misalignment(d, inst.channel, inst.partition))) < 1e-12
    bad = type(d)(d.p1 * 1.01, d.p2_mag, d.lam, d.case)
    assert np.max(phi1(bad, inst.channel, inst.partition, inst.knowledge)) > 1e-6


def test_p1_scales_with_lambda():
    part = ClassPartition([[1, 2], [3, 0]])
    ch = _ch([0.5 + 0.5j, 2j], 0.0)
    np.testing.assert_allclose(optimal_p1(part, ch, [2.0, 2.0]), 2 * optimal_p1(part, ch, [1.0, 1.0]))
