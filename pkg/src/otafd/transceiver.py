"""Per-round transceiver co-design.

For every class the knowledge factor P1 inverts the channel phase and scales
each device's contribution to its share B_i^k / B^k of the class samples, so
the linear estimator recovers the sample-weighted average with no
misalignment.  What remains is choosing the receive normalization lambda and
the artificial-noise powers P2 under the peak-power and DP constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization

CASE_CHANNEL_NOISE = 1  # channel noise alone satisfies the DP condition
CASE_ARTIFICIAL_NOISE = 2  # devices must add artificial noise
CASE_INACTIVE = 0  # no device holds samples of the class


class DegenerateChannelError(ValueError):
    """A device holding samples of an active class has a zero channel coefficient."""


@dataclass(frozen=True)
class ClassPartition:
    """Per-device, per-class sample counts B_i^k."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a (devices, classes) matrix")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def num_devices(self) -> int:
        return self.counts.shape[0]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def device_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def class_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def active(self) -> np.ndarray:
        return self.class_totals > 0

    def class_shares(self) -> np.ndarray:
        """B_i^k / B^k, zero for inactive classes."""
        totals = self.class_totals
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def device_weights(self) -> np.ndarray:
        """B_i^k / B_i, zero for empty devices."""
        totals = self.device_totals[:, None]
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)


@dataclass(frozen=True)
class TransceiverDesign:
    """Transmit factors and receive normalization for one round.

    p1 is complex (devices x classes); p2_mag stores |P2| only because the
    noise phase never enters the error or privacy terms.  `case` tags each
    class with one of the CASE_* constants.
    """

    p1: np.ndarray
    p2_mag: np.ndarray
    lam: np.ndarray
    case: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.lam.size

    def power_used(self) -> np.ndarray:
        return np.abs(self.p1) ** 2 + self.p2_mag**2

    def p2(self, channel: ChannelRealization) -> np.ndarray:
        """Complex noise factors phase-aligned so that h * P2 is real and non-negative."""
        phase = np.ones_like(channel.coeffs)
        nz = channel.coeffs != 0
        phase[nz] = np.conj(channel.coeffs[nz]) / np.abs(channel.coeffs[nz])
        return self.p2_mag * phase[:, None]


def threshold_rounds(channel: ChannelRealization, powers, num_classes: int, stringencies) -> float:
    """Horizon below which channel noise alone meets the DP condition.

    sigma_n^2 / (4 K min_i |h_i|^2 P_i max_i rho_i); math.inf when no device
    has a privacy requirement.
    """
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (channel.num_devices,))
    rho_max = float(np.max(stringencies))
    if rho_max <= 0:
        return math.inf
    weakest = float(np.min(channel.gains * powers))
    if weakest <= 0:
        raise DegenerateChannelError("threshold undefined for a zero channel or zero power")
    return channel.noise_var / (4.0 * num_classes * weakest * rho_max)


def _check_channel(partition: ClassPartition, channel: ChannelRealization):
    if channel.num_devices != partition.num_devices:
        raise ValueError(
            f"channel has {channel.num_devices} devices, partition has {partition.num_devices}"
        )
    holders = partition.counts > 0
    dead = (channel.coeffs == 0)[:, None] & holders
    if np.any(dead):
        i, k = np.argwhere(dead)[0]
        raise DegenerateChannelError(f"device {i} holds class {k + 1} samples but has a zero channel")


def optimal_p1(partition: ClassPartition, channel: ChannelRealization, lam) -> np.ndarray:
    """Knowledge factors that align every device's contribution: h P1 sqrt(K) / lambda = B_i^k / B^k."""
    _check_channel(partition, channel)
    k = partition.num_classes
    lam = np.asarray(lam, dtype=float)
    h = channel.coeffs[:, None]
    shares = partition.class_shares()
    p1 = np.zeros(partition.counts.shape, dtype=complex)
    mask = shares > 0
    aligned = shares * lam[None, :] / math.sqrt(k) * np.conj(h) / np.where(h != 0, np.abs(h) ** 2, 1.0)
    p1[mask] = aligned[mask]
    return p1


def class_thresholds(channel: ChannelRealization, partition: ClassPartition, powers, stringencies) -> np.ndarray:
    """Per-class horizon up to which channel noise alone meets the DP condition.

    Evaluates the exact condition sigma_n^2 >= 4 T lambda_k^2 max_i (B_i^k/B^k)^2 rho_i
    at the largest feasible noise-free lambda_k.  inf for inactive classes or
    when no holder of the class has a privacy requirement.
    """
    _check_channel(partition, channel)
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (partition.num_devices,))
    rho = np.asarray(stringencies, dtype=float)
    lam_sq = _noise_free_lambda(channel, partition, powers) ** 2
    shares = partition.class_shares()
    demand = np.max(shares**2 * rho[:, None], axis=0)
    out = np.full(partition.num_classes, math.inf)
    live = partition.active & (demand > 0)
    out[live] = channel.noise_var / (4.0 * lam_sq[live] * demand[live])
    return out


def _noise_free_lambda(channel: ChannelRealization, partition: ClassPartition, powers) -> np.ndarray:
    """min over holders i of B^k sqrt(K) |h_i| sqrt(P_i) / B_i^k (1 for inactive classes)."""
    k = partition.num_classes
    shares = partition.class_shares()
    reach = np.abs(channel.coeffs)[:, None] * np.sqrt(powers)[:, None] * math.sqrt(k)
    cand = np.where(shares > 0, reach / np.where(shares > 0, shares, 1.0), np.inf)
    lam = np.min(cand, axis=0)
    lam[~partition.active] = 1.0
    return lam


def design_round(
    rounds: int,
    channel: ChannelRealization,
    partition: ClassPartition,
    powers,
    stringencies,
    num_classes: int | None = None,
) -> TransceiverDesign:
    """Optimal transceiver for one round given the committed horizon `rounds`.

    Classes whose DP condition is met by channel noise alone get no artificial
    noise and the largest power-feasible lambda.  Otherwise lambda and the
    noise powers are chosen so the DP condition holds with equality; among the
    equivalent solutions we take

        lambda^2 = min((sum_j |h_j|^2 P_j + sigma^2) / (a + sum_j c_j), min_j |h_j|^2 P_j / c_j)

    with c_j = (B_j^k / (B^k sqrt K))^2 and a = 4 T max_i (B_i^k/B^k)^2 rho_i,
    then split the required received noise power across devices in proportion
    to their remaining headroom |h_j|^2 P_j - c_j lambda^2.
    """
    k = partition.num_classes if num_classes is None else num_classes
    if k != partition.num_classes:
        raise ValueError(f"num_classes={k} but partition has {partition.num_classes} classes")
    _check_channel(partition, channel)
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (partition.num_devices,)).copy()
    if np.any(powers < 0):
        raise ValueError("powers must be non-negative")
    rho = np.asarray(stringencies, dtype=float)
    gains = channel.gains
    sigma2 = channel.noise_var
    reach = gains * powers  # |h_j|^2 P_j

    shares = partition.class_shares()
    c = shares**2 / k
    a = 4.0 * rounds * np.max(shares**2 * rho[:, None], axis=0)

    lam_free = _noise_free_lambda(channel, partition, powers)
    channel_noise_ok = sigma2 >= a * lam_free**2

    lam = lam_free.copy()
    received_noise = np.zeros(partition.counts.shape)
    case = np.full(k, CASE_CHANNEL_NOISE)
    case[~partition.active] = CASE_INACTIVE

    for kk in np.flatnonzero(partition.active & ~channel_noise_ok):
        case[kk] = CASE_ARTIFICIAL_NOISE
        ck = c[:, kk]
        holders = ck > 0
        pooled = (reach.sum() + sigma2) / (a[kk] + ck.sum())
        lam_sq = min(pooled, float(np.min(reach[holders] / ck[holders])))
        headroom = np.maximum(reach - ck * lam_sq, 0.0)
        needed = a[kk] * lam_sq - sigma2
        total = headroom.sum()
        if total > 0:
            received_noise[:, kk] = headroom * (needed / total)
        lam[kk] = math.sqrt(lam_sq)

    p1 = optimal_p1(partition, channel, lam)
    p2_mag = np.zeros(partition.counts.shape)
    nz = gains > 0
    p2_mag[nz] = np.sqrt(received_noise[nz] / gains[nz, None])
    return TransceiverDesign(p1=p1, p2_mag=p2_mag, lam=lam, case=case)


def misalignment(design: TransceiverDesign, channel: ChannelRealization, partition: ClassPartition) -> np.ndarray:
    """h_j P1_j^k sqrt(K) / lambda^k - B_j^k / B^k for every (device, class)."""
    k = design.num_classes
    return channel.coeffs[:, None] * design.p1 * math.sqrt(k) / design.lam[None, :] - partition.class_shares()


def phi1(design: TransceiverDesign, channel: ChannelRealization, partition: ClassPartition, knowledge) -> np.ndarray:
    """Signal-misalignment error per device.

    `knowledge` has shape (devices, classes, K): device j's averaged soft
    prediction for each class.
    """
    q = np.asarray(knowledge)
    coef = misalignment(design, channel, partition)
    err = np.einsum("jk,jkd->kd", coef, q)
    per_class = np.linalg.norm(err, axis=1)
    return partition.device_weights() @ per_class


def received_noise_power(design: TransceiverDesign, channel: ChannelRealization) -> np.ndarray:
    """sum_j |h_j P2_j^k|^2 + sigma_n^2 per class."""
    return np.sum(channel.gains[:, None] * design.p2_mag**2, axis=0) + channel.noise_var


def phi2(design: TransceiverDesign, channel: ChannelRealization, partition: ClassPartition, num_classes: int | None = None) -> np.ndarray:
    """Expected squared norm of the normalized aggregate noise, per device (exact)."""
    k = design.num_classes if num_classes is None else num_classes
    per_class = k * received_noise_power(design, channel) / design.lam**2
    return partition.device_weights() @ per_class
