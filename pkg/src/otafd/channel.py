"""Block-fading uplink channel: large-scale path loss times Rayleigh small-scale fading."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class DeviceGeometry:
    distance_m: float
    carrier_hz: float
    pathloss_exp: float

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")
        if not self.carrier_hz > 0:
            raise ValueError(f"carrier_hz must be positive, got {self.carrier_hz}")
        if not self.pathloss_exp >= 0:
            raise ValueError(f"pathloss_exp must be non-negative, got {self.pathloss_exp}")


@dataclass(frozen=True)
class ChannelRealization:
    """Per-device complex coefficients for one round plus the receiver noise variance."""

    coeffs: np.ndarray
    noise_var: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("channel coefficients must be finite")
        if self.noise_var < 0 or not math.isfinite(self.noise_var):
            raise ValueError(f"noise_var must be finite and >= 0, got {self.noise_var}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def num_devices(self) -> int:
        return self.coeffs.size

    @property
    def gains(self) -> np.ndarray:
        """|h_i|^2 per device."""
        return np.abs(self.coeffs) ** 2


def path_loss_gain(geom: DeviceGeometry) -> float:
    """Large-scale power gain (c / (4 pi f_c d)) ** PL."""
    return (SPEED_OF_LIGHT / (4.0 * math.pi * geom.carrier_hz * geom.distance_m)) ** geom.pathloss_exp


def sample_small_scale(rng: np.random.Generator, size=None):
    """Draw from CN(0, 1): real and imaginary parts each with variance 1/2."""
    scale = math.sqrt(0.5)
    re = rng.normal(0.0, scale, size)
    im = rng.normal(0.0, scale, size)
    if size is None:
        return complex(re, im)
    return re + 1j * im


def realize_round(geoms: Sequence[DeviceGeometry], noise_var: float, rng: np.random.Generator) -> ChannelRealization:
    if len(geoms) == 0:
        raise ValueError("at least one device is required")
    amplitude = np.sqrt([path_loss_gain(g) for g in geoms])
    g = np.array([sample_small_scale(rng) for _ in geoms], dtype=complex)
    return ChannelRealization(coeffs=amplitude * g, noise_var=noise_var)


def ideal_channel(num_devices: int, noise_var: float = 0.0) -> ChannelRealization:
    """Unit-gain channel used for the error-free reference configuration."""
    return ChannelRealization(coeffs=np.ones(num_devices, dtype=complex), noise_var=noise_var)
