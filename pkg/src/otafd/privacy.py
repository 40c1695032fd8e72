"""Differential-privacy calibration for the over-the-air knowledge upload.

Each device discloses the per-class signal h * P1 * sqrt(K) * q with q on the
probability simplex, so replacing one of its B samples moves the disclosed
signal by at most sqrt(2K)|h P1| / B.  Composing the Gaussian mechanism over T
rounds yields a lower bound on the aggregate received noise power per class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .channel import ChannelRealization
    from .transceiver import TransceiverDesign

# Largest Euclidean distance between two points of a probability simplex
# (attained by any pair of distinct vertices).
SIMPLEX_DIAMETER = math.sqrt(2.0)


@dataclass(frozen=True)
class PrivacyRequirement:
    epsilon: float
    delta: float
    dataset_size: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}")


@dataclass(frozen=True)
class PrivacyStringency:
    rho: float


def stringency(req: PrivacyRequirement) -> PrivacyStringency:
    """rho = ln(1/delta) / (B^2 eps^2), natural logarithm."""
    if req.delta <= 0:
        raise ValueError("delta = 0 gives an unbounded stringency")
    return PrivacyStringency(math.log(1.0 / req.delta) / (req.dataset_size**2 * req.epsilon**2))


def stringencies(reqs: Iterable[PrivacyRequirement]) -> np.ndarray:
    return np.array([stringency(r).rho for r in reqs], dtype=float)


def sensitivity_bound(h_mag_times_p1: float, num_classes: int, dataset_size: int) -> float:
    """Replace-one l2 sensitivity bound sqrt(2K) |h P1| / B of a class signal."""
    if dataset_size <= 0:
        raise ValueError("dataset_size must be positive")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    return SIMPLEX_DIAMETER * math.sqrt(num_classes) * abs(h_mag_times_p1) / dataset_size


def gaussian_sigma(sensitivity: float, rounds: int, req: PrivacyRequirement) -> float:
    """Per-round Gaussian noise std giving (eps, delta)-DP after `rounds` compositions."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    return sensitivity * math.sqrt(2.0 * rounds * math.log(1.0 / req.delta)) / req.epsilon


def required_aggregate_noise(rounds: int, num_classes: int, per_device: Sequence[tuple[float, float]]) -> float:
    """Right-hand side max_i 4 T K |h_i P1_i|^2 rho_i of the per-class DP condition.

    `per_device` holds (|h_i P1_i|, rho_i) pairs.
    """
    if len(per_device) == 0:
        raise ValueError("at least one device is required")
    arr = np.asarray(per_device, dtype=float).reshape(-1, 2)
    return float(np.max(4.0 * rounds * num_classes * arr[:, 0] ** 2 * arr[:, 1]))


def dp_margin(
    design: TransceiverDesign,
    channel: ChannelRealization,
    rounds: int,
    num_classes: int,
    stringencies: Sequence[float],
) -> np.ndarray:
    """Per-class slack (received noise power) - (required noise power).

    Non-negative exactly when every device's (eps, delta) budget is respected
    over `rounds` rounds.
    """
    rho = np.asarray(stringencies, dtype=float)
    m = channel.num_devices
    if design.p1.shape != (m, num_classes) or design.p2_mag.shape != (m, num_classes):
        raise ValueError(
            f"design shape {design.p1.shape} does not match {m} devices x {num_classes} classes"
        )
    if rho.shape != (m,):
        raise ValueError(f"expected {m} stringencies, got {rho.shape}")
    received = np.sum(channel.gains[:, None] * design.p2_mag**2, axis=0) + channel.noise_var
    return received - required_noise_per_class(design, channel, rounds, num_classes, rho)


def required_noise_per_class(
    design: TransceiverDesign, channel: ChannelRealization, rounds: int, num_classes: int, stringencies
) -> np.ndarray:
    """Right-hand side of the DP condition for every class of a design."""
    rho = np.asarray(stringencies, dtype=float)
    signal = channel.gains[:, None] * np.abs(design.p1) ** 2
    return np.max(4.0 * rounds * num_classes * signal * rho[:, None], axis=0)
