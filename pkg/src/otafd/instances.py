"""Random co-design instances for self-checks and property tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .transceiver import ClassPartition


@dataclass
class DesignInstance:
    rounds: int
    channel: ChannelRealization
    partition: ClassPartition
    powers: np.ndarray
    stringencies: np.ndarray
    knowledge: np.ndarray  # (devices, classes, classes)

    @property
    def num_classes(self) -> int:
        return self.partition.num_classes


def random_instance(rng: np.random.Generator, max_devices: int = 50, max_classes: int = 10) -> DesignInstance:
    """Heterogeneous instance: log-uniform gains, powers and stringencies, sparse class counts.

    Every device keeps a non-zero channel; some classes may be held by no device.
    """
    m = int(rng.integers(1, max_devices + 1))
    k = int(rng.integers(1, max_classes + 1))
    counts = rng.integers(0, 40, (m, k)) * (rng.random((m, k)) < rng.uniform(0.3, 1.0))
    empty = counts.sum(axis=1) == 0
    counts[empty, rng.integers(0, k, int(empty.sum()))] = 1
    mag = 10 ** rng.uniform(-4, 0, m)
    coeffs = mag * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    noise_var = 10 ** rng.uniform(-12, -3)
    powers = 10 ** rng.uniform(-4, 0, m)
    rho = 10 ** rng.uniform(-6, 0, m) * (rng.random(m) < 0.9)
    rounds = int(rng.integers(1, 2000))
    knowledge = rng.dirichlet(np.full(k, 0.5), (m, k))
    return DesignInstance(rounds, ChannelRealization(coeffs, noise_var), ClassPartition(counts), powers, rho, knowledge)
