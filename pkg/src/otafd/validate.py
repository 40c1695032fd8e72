"""Self-check suite run by `otafd validate`."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import learner
from .channel import ChannelRealization
from .distill import estimate_knowledge, ota_aggregate
from .horizon import HyperParams, brute_force_rounds, optimal_rounds
from .instances import random_instance
from .privacy import SIMPLEX_DIAMETER, dp_margin, required_noise_per_class
from .transceiver import (
    CASE_ARTIFICIAL_NOISE,
    CASE_CHANNEL_NOISE,
    ClassPartition,
    TransceiverDesign,
    design_round,
    optimal_p1,
    phi1,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured:.3e} tolerance={self.tolerance:.1e} {self.detail}".rstrip()


def dp_equality_residual(design: TransceiverDesign, channel: ChannelRealization, rounds: int, rho) -> float:
    """Largest |margin| / required over classes that rely on artificial noise."""
    k = design.num_classes
    live = design.case == CASE_ARTIFICIAL_NOISE
    if not live.any():
        return 0.0
    margin = dp_margin(design, channel, rounds, k, rho)
    required = required_noise_per_class(design, channel, rounds, k, rho)
    return float(np.max(np.abs(margin[live]) / required[live]))


def check_simplex_diameter(rng, pairs: int = 100_000) -> CheckResult:
    k = rng.integers(2, 11, pairs)
    worst = 0.0
    for kk in np.unique(k):
        n = int(np.sum(k == kk))
        alpha = np.full(kk, 0.05)
        a = rng.dirichlet(alpha, n)
        b = rng.dirichlet(alpha, n)
        worst = max(worst, float(np.max(np.linalg.norm(a - b, axis=1))))
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    vertex = float(np.linalg.norm(e1 - e2))
    ok = worst <= SIMPLEX_DIAMETER + 1e-12 and vertex == SIMPLEX_DIAMETER
    return CheckResult("simplex diameter", ok, worst - SIMPLEX_DIAMETER, 1e-12, f"vertex pair={vertex!r}")


def check_codesign(rng, instances: int = 300) -> list[CheckResult]:
    """Alignment, DP equality / slack, and peak-power feasibility over random instances."""
    align = dp_eq = power = case1_slack = 0.0
    case1_noise = 0.0
    peak_gap = 0.0
    for _ in range(instances):
        inst = random_instance(rng)
        d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
        scale = np.einsum("jk,jkd->kd", inst.partition.class_shares(), inst.knowledge)
        ref = inst.partition.device_weights() @ np.linalg.norm(scale, axis=1)
        ref = np.where(ref > 0, ref, 1.0)
        align = max(align, float(np.max(phi1(d, inst.channel, inst.partition, inst.knowledge) / ref)))
        dp_eq = max(dp_eq, dp_equality_residual(d, inst.channel, inst.rounds, inst.stringencies))
        power = max(power, float(np.max(d.power_used() / inst.powers[:, None] - 1.0)))
        c1 = d.case == CASE_CHANNEL_NOISE
        if c1.any():
            m = dp_margin(d, inst.channel, inst.rounds, inst.num_classes, inst.stringencies)
            case1_slack = min(case1_slack, float(np.min(m[c1])))
            case1_noise = max(case1_noise, float(np.max(d.p2_mag[:, c1])))
        for kk in np.flatnonzero(d.case == CASE_ARTIFICIAL_NOISE):
            gap = _unconstrained_peak_gap(d, inst, kk)
            if gap is not None:
                peak_gap = max(peak_gap, gap)
    return [
        CheckResult("phi1 alignment (relative)", align <= 1e-9, align, 1e-9),
        CheckResult("DP equality in artificial-noise classes", dp_eq <= 1e-9, dp_eq, 1e-9),
        CheckResult(
            "channel-noise classes: P2 = 0 and margin >= 0",
            case1_noise == 0.0 and case1_slack >= 0.0,
            max(case1_noise, -case1_slack),
            0.0,
        ),
        CheckResult("peak power feasibility", power <= 1e-9, power, 1e-9),
        CheckResult("peak power attained on unconstrained lambda", peak_gap <= 1e-9, peak_gap, 1e-9),
    ]


def unconstrained_branch(design: TransceiverDesign, channel: ChannelRealization, partition: ClassPartition, powers, kk: int) -> bool:
    """True when lambda^2 of class kk came from the pooled-power term (all devices at peak)."""
    k = partition.num_classes
    c = partition.class_shares()[:, kk] ** 2 / k
    reach = channel.gains * np.asarray(powers)
    holders = c > 0
    cap = float(np.min(reach[holders] / c[holders]))
    return design.lam[kk] ** 2 < cap * (1 - 1e-12)


def _unconstrained_peak_gap(d, inst, kk):
    if not unconstrained_branch(d, inst.channel, inst.partition, inst.powers, kk):
        return None
    used = d.power_used()[:, kk]
    return float(np.max(np.abs(used / inst.powers - 1.0)))


def check_lambda_negative_control(rng) -> CheckResult:
    """Rescaling lambda (with P1 re-aligned) but keeping P2 must break the DP equality."""
    for _ in range(1000):
        inst = random_instance(rng, max_devices=10, max_classes=5)
        d = design_round(inst.rounds, inst.channel, inst.partition, inst.powers, inst.stringencies)
        if np.any(d.case == CASE_ARTIFICIAL_NOISE):
            break
    else:
        return CheckResult("negative control: perturbed lambda detected", False, 0.0, 1e-9, "no artificial-noise instance")
    lam = d.lam * 1.1
    bad = TransceiverDesign(optimal_p1(inst.partition, inst.channel, lam), d.p2_mag, lam, d.case)
    residual = dp_equality_residual(bad, inst.channel, inst.rounds, inst.stringencies)
    return CheckResult("negative control: perturbed lambda detected", residual > 1e-9, residual, 1e-9)


def check_gradients(rng, instances: int = 50) -> CheckResult:
    worst = 0.0
    for n in range(instances):
        k = int(rng.integers(2, 5))
        d = int(rng.integers(1, 6))
        arch = learner.Architecture(d, k, None if n % 2 == 0 else int(rng.integers(2, 5)))
        if arch.dim > 100:
            arch = learner.Architecture(d, k, None)
        params = learner.ModelParams(rng.normal(size=arch.dim), arch)
        x = rng.normal(size=(6, d))
        v = rng.integers(1, k + 1, 6)
        r = rng.normal(size=(k, k))
        gamma = float(rng.uniform(0, 2))
        worst = max(worst, gradient_check(params, x, v, r, gamma))
    return CheckResult("gradient vs central differences", worst <= 1e-5, worst, 1e-5)


def gradient_check(params, x, v, r, gamma, step: float = 1e-5) -> float:
    """Max per-coordinate relative error |g - fd| / max(|g|, |fd|, 1e-8)."""
    g = learner.gradient(params, x, v, r, gamma)
    fd = np.zeros_like(g)
    for j in range(g.size):
        up = params.theta.copy()
        dn = params.theta.copy()
        up[j] += step
        dn[j] -= step
        fd[j] = (
            learner.loss(learner.ModelParams(up, params.arch), x, v, r, gamma)
            - learner.loss(learner.ModelParams(dn, params.arch), x, v, r, gamma)
        ) / (2 * step)
    return float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)))


def random_hyper_instance(rng):
    m = int(rng.integers(2, 20))
    k = int(rng.integers(2, 10))
    counts = rng.integers(1, 50, (m, k))
    rho = 10 ** rng.uniform(-3, 0, m)
    hyper = HyperParams(
        gamma=float(rng.uniform(0.05, 1.0)),
        eta0=float(10 ** rng.uniform(-2.5, -1.5)),
        l1=float(rng.uniform(1, 10)),
        l2=float(rng.uniform(0.5, 2)),
        grad_bound=1.0,
        f_max=rng.uniform(0.5, 3.0, m),
    )
    return hyper, ClassPartition(counts), rho


def check_horizon(rng, instances: int = 20) -> CheckResult:
    worst = 0
    for _ in range(instances):
        hyper, part, rho = random_hyper_instance(rng)
        t_star = optimal_rounds(hyper, part, rho)
        oracle = brute_force_rounds(hyper, part, rho, 2 * t_star + 10)
        worst = max(worst, abs(t_star - oracle))
    worked = HyperParams(gamma=1.0, eta0=0.01, l1=1.0, l2=1.0, grad_bound=1.0, f_max=np.ones(2))
    t_worked = optimal_rounds(worked, ClassPartition([[1, 1], [1, 1]]), [0.2, 0.1])
    ok = worst <= 1 and t_worked == 12500
    return CheckResult("optimal rounds vs brute force", ok, float(worst), 1.0, f"worked instance T*={t_worked}")


def check_estimator(rng, instances: int = 50) -> CheckResult:
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, max_devices=20, max_classes=8)
        ch = ChannelRealization(inst.channel.coeffs, 0.0)
        rho = np.zeros_like(inst.stringencies)
        d = design_round(inst.rounds, ch, inst.partition, inst.powers, rho)
        k = inst.num_classes
        x = np.stack([(d.p1[i][:, None] * math.sqrt(k) * inst.knowledge[i]).reshape(-1) for i in range(ch.num_devices)])
        est = estimate_knowledge(ota_aggregate(x, ch, rng), d.lam)
        target = np.einsum("jk,jkd->kd", inst.partition.class_shares(), inst.knowledge)
        active = inst.partition.active
        worst = max(worst, float(np.max(np.abs(est[active] - target[active]), initial=0.0)))
    return CheckResult("noise-free estimator equals weighted average", worst <= 1e-12, worst, 1e-12)


CHECKS: list[Callable] = [
    check_simplex_diameter,
    check_codesign,
    check_lambda_negative_control,
    check_gradients,
    check_horizon,
    check_estimator,
]


def run_validate(seed: int = 0, echo: Callable[[str], None] | None = print) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    start = time.perf_counter()
    for check in CHECKS:
        out = check(rng)
        for res in out if isinstance(out, list) else [out]:
            results.append(res)
            if echo:
                echo(res.line())
    if echo:
        n_ok = sum(r.passed for r in results)
        echo(f"{n_ok}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    return results
