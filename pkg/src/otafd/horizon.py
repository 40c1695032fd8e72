"""Convergence-bound evaluation and the optimal training horizon."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .learner import learning_rate
from .transceiver import ClassPartition


@dataclass(frozen=True)
class HyperParams:
    gamma: float
    eta0: float
    l1: float = 10.0
    l2: float = 1.0
    grad_bound: float = 10.0
    f_max: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not (self.l1 > 0 and self.l2 > 0 and self.grad_bound > 0):
            raise ValueError("l1, l2 and grad_bound must be positive")
        if self.eta0 > 1.0 / self.l1 * (1 + 1e-12):
            raise ValueError(f"eta0={self.eta0} violates the step-size condition eta0 <= 1/l1={1.0 / self.l1}")
        f_max = np.atleast_1d(np.asarray(self.f_max, dtype=float))
        if np.any(f_max <= 0):
            raise ValueError("f_max must be positive")
        object.__setattr__(self, "f_max", f_max)

    @property
    def noise_coeff(self) -> float:
        """6 eta0 gamma^2 L2^2 L1, the weight of (phi1^2 + phi2) terms."""
        return 6.0 * self.eta0 * self.gamma**2 * self.l2**2 * self.l1


@dataclass(frozen=True)
class BoundSummands:
    """Per-(device, round) inputs of the bound: phi1^2 + phi2 and ||grad F|| * phi1."""

    phi1_sq_plus_phi2: np.ndarray
    grad_times_phi1: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.phi1_sq_plus_phi2, dtype=float))
        b = np.atleast_2d(np.asarray(self.grad_times_phi1, dtype=float))
        if a.shape != b.shape:
            raise ValueError("summand arrays must have the same (devices, rounds) shape")
        if np.any(a < 0) or np.any(b < 0):
            raise ValueError("summands must be non-negative")
        object.__setattr__(self, "phi1_sq_plus_phi2", a)
        object.__setattr__(self, "grad_times_phi1", b)


class UnboundedHorizon(ValueError):
    """No privacy requirement (or no distillation) constrains the horizon."""


def convergence_bound(rounds: int, hyper: HyperParams, summands: BoundSummands, device: int) -> float:
    """Upper bound on the expected squared gradient norm of `device` after `rounds` rounds.

    Summand column s is the executed round s + 1, so its step size is eta0 / sqrt(s + 1).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    noise = summands.phi1_sq_plus_phi2[device, :rounds]
    drift = summands.grad_times_phi1[device, :rounds]
    if noise.size < rounds:
        raise ValueError(f"summands cover {noise.size} rounds, need {rounds}")
    f_max = hyper.f_max[device] if hyper.f_max.size > 1 else hyper.f_max[0]
    eta = learning_rate(np.arange(1, rounds + 1), hyper.eta0)
    t32 = rounds**1.5
    g, l1, l2 = hyper.gamma, hyper.l1, hyper.l2
    return float(
        8.0 * g * l2 * hyper.grad_bound
        + 3.0 * f_max / (hyper.eta0 * math.sqrt(rounds))
        + hyper.noise_coeff * noise.sum() / t32
        + np.sum(6.0 * g * hyper.eta0 * l2 * (l1 * eta + 1.0) * drift / eta) / t32
    )


def _horizon_terms(hyper: HyperParams, partition: ClassPartition, stringencies):
    rho = np.asarray(stringencies, dtype=float)
    if rho.size == 0 or np.max(rho) <= 0:
        raise UnboundedHorizon("no device has a privacy requirement; supply an explicit horizon")
    if hyper.gamma == 0:
        raise UnboundedHorizon("gamma = 0 removes the noise penalty; supply an explicit horizon")
    m = partition.num_devices
    worst = int(np.argmax(rho))
    concentration = float(np.sum(partition.class_shares()[worst] ** 2))
    if concentration <= 0:
        raise ValueError(f"device {worst} attains max rho but holds no samples")
    f_max = np.broadcast_to(hyper.f_max, (m,))
    return f_max, float(rho[worst]), concentration, m


def continuous_optimal_rounds(hyper: HyperParams, partition: ClassPartition, stringencies) -> float:
    """Real-valued minimizer of the per-round-optimized bound."""
    f_max, rho_max, concentration, m = _horizon_terms(hyper, partition, stringencies)
    numer = 3.0 / m * float(np.sum(f_max))
    denom = 24.0 * hyper.eta0**2 * hyper.gamma**2 * hyper.l2**2 * hyper.l1 * rho_max * concentration
    return numer / denom


def optimal_rounds(hyper: HyperParams, partition: ClassPartition, stringencies) -> int:
    """Optimal number of training rounds, rounded to nearest and clamped to >= 1.

    The class-concentration term uses the device attaining the largest
    stringency (lowest index on ties).
    """
    t_hat = continuous_optimal_rounds(hyper, partition, stringencies)
    return max(1, int(math.floor(t_hat + 0.5)))


def horizon_objective_coeffs(hyper: HyperParams, partition: ClassPartition, stringencies) -> tuple[float, float]:
    """(a, b) of the artificial-noise regime objective a / sqrt(T) + b sqrt(T)."""
    f_max, rho_max, concentration, m = _horizon_terms(hyper, partition, stringencies)
    a = 3.0 * float(np.sum(f_max)) / hyper.eta0
    b = 4.0 * hyper.noise_coeff * m * rho_max * concentration
    return a, b


def brute_force_rounds(hyper: HyperParams, partition: ClassPartition, stringencies, t_max: int, chunk: int = 1 << 20) -> int:
    """Exhaustive argmin of a / sqrt(T) + b sqrt(T) over T in 1..t_max (test oracle).

    Evaluates the objective shifted by its constant minimum 2 sqrt(ab),
    (sqrt(a) - sqrt(bT))^2 / sqrt(T), which stays resolvable in double
    precision when the optimum is large and the curve is flat.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    a, b = horizon_objective_coeffs(hyper, partition, stringencies)
    ra, rb = math.sqrt(a), math.sqrt(b)
    best_t, best_v = 1, math.inf
    for lo in range(1, t_max + 1, chunk):
        t = np.arange(lo, min(lo + chunk, t_max + 1), dtype=float)
        st = np.sqrt(t)
        values = (ra - rb * st) ** 2 / st
        j = int(np.argmin(values))
        if values[j] < best_v:
            best_t, best_v = lo + j, float(values[j])
    return best_t
