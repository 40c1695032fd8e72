"""One federated-distillation round end to end, and full training runs.

Random streams are derived from the master seed by purpose so that results do
not depend on the order in which devices are processed:

    (0, 0, i)   initial parameters of device i
    (t, 0)      channel realization of round t
    (t, 1, i)   artificial noise of device i in round t
    (t, 2)      receiver noise of round t
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import learner
from .channel import ChannelRealization, DeviceGeometry, ideal_channel, realize_round
from .data import LabeledDataset
from .horizon import HyperParams, optimal_rounds
from .learner import Architecture, ModelParams
from .privacy import dp_margin, required_noise_per_class
from .transceiver import CASE_INACTIVE, ClassPartition, TransceiverDesign, design_round, phi1, phi2

DEFAULT_SLOT_SECONDS = 3.6e-6
CSV_COLUMNS = (
    "round",
    "mean_phi1",
    "mean_phi2",
    "mean_train_loss",
    "test_accuracy",
    "min_dp_margin",
    "uplink_time_s",
)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class RoundRecord:
    round: int
    phi1: np.ndarray
    phi2: np.ndarray
    train_loss: np.ndarray
    test_accuracy: float
    device_accuracy: np.ndarray
    dp_margin: np.ndarray
    power_used: np.ndarray
    estimator_output: np.ndarray
    grad_norm: np.ndarray
    case: np.ndarray


@dataclass
class TrainingSetup:
    """Resolved inputs of a training run.

    `geometries` of None selects the unit-gain ideal channel.  `rounds` is an
    integer or "auto"; for "auto" the horizon is committed before round 1
    using f_max = each device's initial loss unless `f_max` is given.
    """

    devices: list[LabeledDataset]
    test: LabeledDataset
    num_classes: int
    arch: Architecture
    powers: np.ndarray
    stringencies: np.ndarray
    noise_var: float
    geometries: list[DeviceGeometry] | None
    gamma: float
    eta0: float
    rounds: int | str
    l1: float = 10.0
    l2: float = 1.0
    grad_bound: float = 10.0
    f_max: Sequence[float] | None = None
    rounds_cap: int | None = None
    init_scale: float = 0.01
    slot_seconds: float = DEFAULT_SLOT_SECONDS
    check_constraints: bool = True

    def __post_init__(self):
        m = len(self.devices)
        if m == 0:
            raise ValueError("at least one device is required")
        self.powers = np.broadcast_to(np.asarray(self.powers, dtype=float), (m,)).copy()
        self.stringencies = np.asarray(self.stringencies, dtype=float).reshape(m)
        if self.geometries is not None and len(self.geometries) != m:
            raise ValueError("one geometry per device is required")

    @property
    def partition(self) -> ClassPartition:
        return ClassPartition(np.stack([d.class_counts(self.num_classes) for d in self.devices]))


@dataclass
class TrainingLog:
    records: list[RoundRecord]
    rounds: int
    config_digest: str = ""
    wall_clock_s: float = 0.0
    final_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    num_classes: int = 1
    slot_seconds: float = DEFAULT_SLOT_SECONDS
    final_params: list[ModelParams] = field(default_factory=list)

    @property
    def final_mean_accuracy(self) -> float:
        return float(np.mean(self.final_accuracy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.config_digest:
            buf.write(f"# config_digest: {self.config_digest}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in self.records:
            w.writerow(
                [rec.round]
                + [
                    f"{v:.17g}"
                    for v in (
                        np.mean(rec.phi1),
                        np.mean(rec.phi2),
                        np.mean(rec.train_loss),
                        rec.test_accuracy,
                        np.min(rec.dp_margin),
                        uplink_time(rec.round, self.num_classes, self.slot_seconds),
                    )
                ]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "rounds": self.rounds,
            "final_accuracy": self.final_mean_accuracy,
            "final_device_accuracy": [float(a) for a in self.final_accuracy],
            "total_uplink_time_s": uplink_time(self.rounds, self.num_classes, self.slot_seconds),
            "wall_clock_s": self.wall_clock_s,
        }


def uplink_time(rounds: int, num_classes: int, slot_seconds: float = DEFAULT_SLOT_SECONDS) -> float:
    """K^2 analog slots per round, each lasting `slot_seconds`."""
    if rounds < 1 or num_classes < 1:
        raise ValueError("rounds and num_classes must be >= 1")
    return num_classes**2 * rounds * slot_seconds


def local_knowledge(params: ModelParams, dataset: LabeledDataset, num_classes: int):
    """Per-class mean soft prediction over the device's samples.

    Returns (knowledge of shape (K, K), present mask); absent classes are zero rows.
    """
    out = np.zeros((num_classes, num_classes))
    present = np.zeros(num_classes, dtype=bool)
    if len(dataset) == 0:
        return out, present
    probs = learner.forward(params, dataset.features)
    for k in range(num_classes):
        mask = dataset.labels == k + 1
        if mask.any():
            out[k] = probs[mask].mean(axis=0)
            present[k] = True
    return out, present


def encode_signal(knowledge, p1, p2, rng: np.random.Generator) -> np.ndarray:
    """Length-K^2 transmit vector: block k is P1^k sqrt(K) q^k + P2^k m^k, m ~ N(0, I)."""
    q = np.asarray(knowledge, dtype=float)
    k = q.shape[0]
    p1 = np.asarray(p1, dtype=complex).reshape(k, 1)
    p2 = np.asarray(p2, dtype=complex).reshape(k, 1)
    m = rng.standard_normal((k, k))
    return (p1 * math.sqrt(k) * q + p2 * m).reshape(-1)


def ota_aggregate(signals, channel: ChannelRealization, rng: np.random.Generator) -> np.ndarray:
    """Superposition sum_i h_i x_i plus real AWGN of variance sigma_n^2."""
    x = np.asarray(signals, dtype=complex)
    if x.ndim != 2 or x.shape[0] != channel.num_devices:
        raise ValueError(f"expected ({channel.num_devices}, K^2) signals, got {x.shape}")
    noise = rng.normal(0.0, math.sqrt(channel.noise_var), x.shape[1])
    return channel.coeffs @ x + noise


def estimate_knowledge(received, lam) -> np.ndarray:
    """Real part of each class block divided by its normalization scalar."""
    lam = np.asarray(lam, dtype=float)
    k = lam.size
    y = np.asarray(received).reshape(k, k)
    return np.real(y) / lam[:, None]


def _round_channel(setup: TrainingSetup, seed: int, t: int) -> ChannelRealization:
    if setup.geometries is None:
        return ideal_channel(len(setup.devices), setup.noise_var)
    return realize_round(setup.geometries, setup.noise_var, stream(seed, t, 0))


def run_round(
    params: list[ModelParams],
    setup: TrainingSetup,
    rounds: int,
    t: int,
    seed: int,
    partition: ClassPartition | None = None,
) -> tuple[list[ModelParams], RoundRecord]:
    if not 1 <= t <= rounds:
        raise ValueError(f"round {t} outside 1..{rounds}")
    k = setup.num_classes
    m = len(setup.devices)
    partition = setup.partition if partition is None else partition

    channel = _round_channel(setup, seed, t)
    design = design_round(rounds, channel, partition, setup.powers, setup.stringencies, k)

    knowledge = np.zeros((m, k, k))
    for i in range(m):
        knowledge[i], _ = local_knowledge(params[i], setup.devices[i], k)

    p2 = design.p2(channel)
    signals = np.stack([encode_signal(knowledge[i], design.p1[i], p2[i], stream(seed, t, 1, i)) for i in range(m)])
    received = ota_aggregate(signals, channel, stream(seed, t, 2))
    targets = estimate_knowledge(received, design.lam)
    inactive = design.case == CASE_INACTIVE
    targets[inactive] = 1.0 / k

    exact = np.einsum("jk,jkd->kd", partition.class_shares(), knowledge)
    exact[inactive] = 1.0 / k

    new_params, losses, grad_norms, accs = [], np.zeros(m), np.zeros(m), np.zeros(m)
    for i, (p, ds) in enumerate(zip(params, setup.devices)):
        losses[i] = learner.loss(p, ds.features, ds.labels, targets, setup.gamma)
        grad = learner.gradient(p, ds.features, ds.labels, targets, setup.gamma)
        grad_norms[i] = np.linalg.norm(learner.gradient(p, ds.features, ds.labels, exact, setup.gamma))
        updated = learner.sgd_step(p, grad, t, setup.eta0)
        new_params.append(updated)
        accs[i] = learner.evaluate(updated, setup.test.features, setup.test.labels)

    margin = dp_margin(design, channel, rounds, k, setup.stringencies)
    power = design.power_used()
    if setup.check_constraints:
        _assert_constraints(design, margin, power, setup.powers, channel, rounds, k, setup.stringencies)

    record = RoundRecord(
        round=t,
        phi1=phi1(design, channel, partition, knowledge),
        phi2=phi2(design, channel, partition, k),
        train_loss=losses,
        test_accuracy=float(np.mean(accs)),
        device_accuracy=accs,
        dp_margin=margin,
        power_used=power,
        estimator_output=targets,
        grad_norm=grad_norms,
        case=design.case.copy(),
    )
    return new_params, record


def _assert_constraints(design: TransceiverDesign, margin, power, powers, channel, rounds, k, rho):
    if np.any(power > powers[:, None] * (1 + 1e-9) + 1e-300):
        raise AssertionError("peak transmit power exceeded")
    scale = np.maximum(required_noise_per_class(design, channel, rounds, k, rho), channel.noise_var)
    if np.any(margin < -1e-9 * np.maximum(scale, 1e-300)):
        raise AssertionError(f"DP condition violated: margin {margin.min()}")


def initial_params(setup: TrainingSetup, seed: int) -> list[ModelParams]:
    return [learner.init_params(setup.arch, stream(seed, 0, 0, i), setup.init_scale) for i in range(len(setup.devices))]


def initial_losses(setup: TrainingSetup, params: list[ModelParams]) -> np.ndarray:
    """Loss of each device's initial model against uniform targets (f_max proxy)."""
    k = setup.num_classes
    uniform = np.full((k, k), 1.0 / k)
    return np.array([learner.loss(p, d.features, d.labels, uniform, setup.gamma) for p, d in zip(params, setup.devices)])


def resolve_rounds(setup: TrainingSetup, params: list[ModelParams]) -> int:
    if setup.rounds != "auto":
        rounds = int(setup.rounds)
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        return rounds
    f_max = initial_losses(setup, params) if setup.f_max is None else np.asarray(setup.f_max, dtype=float)
    hyper = HyperParams(setup.gamma, setup.eta0, setup.l1, setup.l2, setup.grad_bound, f_max)
    rounds = optimal_rounds(hyper, setup.partition, setup.stringencies)
    if setup.rounds_cap is not None:
        rounds = min(rounds, setup.rounds_cap)
    return rounds


def run_training(setup: TrainingSetup, seed: int, config_digest: str = "") -> TrainingLog:
    start = time.perf_counter()
    params = initial_params(setup, seed)
    rounds = resolve_rounds(setup, params)
    partition = setup.partition
    records = []
    for t in range(1, rounds + 1):
        params, rec = run_round(params, setup, rounds, t, seed, partition)
        records.append(rec)
    return TrainingLog(
        records=records,
        rounds=rounds,
        config_digest=config_digest,
        wall_clock_s=time.perf_counter() - start,
        final_accuracy=records[-1].device_accuracy.copy(),
        num_classes=setup.num_classes,
        slot_seconds=setup.slot_seconds,
        final_params=params,
    )
