"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .channel import ChannelRealization
from .config import ConfigError, ExperimentConfig, json_schema, load_config, resolve
from .distill import initial_losses, initial_params
from .horizon import HyperParams, UnboundedHorizon, brute_force_rounds, continuous_optimal_rounds, optimal_rounds
from .privacy import PrivacyRequirement, dp_margin, stringencies
from .transceiver import ClassPartition, DegenerateChannelError, design_round, threshold_rounds, class_thresholds

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2

# brute-force horizon search is skipped beyond this many candidates
ORACLE_LIMIT = 20_000_000


def _load(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return load_config(args.config)


def cmd_simulate(args) -> int:
    from .experiment import run_simulate

    cfg = _load(args)
    paths = run_simulate(cfg, args.out, args.seed, args.replications)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import run_sweep_epsilon

    cfg = _load(args)
    try:
        grid = [float(v) for v in args.grid.split(",")]
    except ValueError:
        raise ConfigError(f"--grid: cannot parse {args.grid!r}") from None
    out = args.out if args.out is not None else cfg.output.dir
    try:
        result = run_sweep_epsilon(cfg, grid, args.delta, args.seed, args.replications, out)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    sys.stdout.write(result.aggregate_csv())
    return EXIT_OK


def _complex_list(values) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, (list, tuple)):
            out.append(complex(float(v[0]), float(v[1])))
        else:
            out.append(complex(float(v)))
    return np.array(out, dtype=complex)


def design_from_snapshot(snap: dict) -> dict:
    """One-shot design for a channel snapshot.

    Snapshot keys: rounds, noise_var, channel ([re, im] pairs or reals),
    counts (devices x classes), powers (scalar or list), and either
    stringencies or privacy ([{epsilon, delta}] per device).
    """
    try:
        rounds = int(snap["rounds"])
        channel = ChannelRealization(_complex_list(snap["channel"]), float(snap["noise_var"]))
        part = ClassPartition(np.asarray(snap["counts"]))
        powers = np.broadcast_to(np.asarray(snap["powers"], dtype=float), (part.num_devices,))
        if "stringencies" in snap:
            rho = np.asarray(snap["stringencies"], dtype=float)
        else:
            sizes = part.device_totals
            rho = stringencies(
                PrivacyRequirement(float(p["epsilon"]), float(p["delta"]), int(b)) for p, b in zip(snap["privacy"], sizes)
            )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad channel snapshot: {err}") from None
    k = part.num_classes
    try:
        d = design_round(rounds, channel, part, powers, rho)
    except (DegenerateChannelError, ValueError) as err:
        raise ConfigError(str(err)) from None
    t0 = threshold_rounds(channel, powers, k, rho)
    return {
        "rounds": rounds,
        "num_classes": k,
        "case": d.case.tolist(),
        "lambda": d.lam.tolist(),
        "p1": [[[z.real, z.imag] for z in row] for row in d.p1],
        "p2_mag": d.p2_mag.tolist(),
        "power_used": d.power_used().tolist(),
        "dp_margin": dp_margin(d, channel, rounds, k, rho).tolist(),
        "threshold_rounds": None if math.isinf(t0) else t0,
        "class_thresholds": [None if math.isinf(v) else v for v in class_thresholds(channel, part, powers, rho)],
    }


def cmd_design(args) -> int:
    if args.config is None:
        raise ConfigError("design needs --config <channel snapshot JSON>")
    try:
        snap = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read snapshot: {err}") from None
    print(json.dumps(design_from_snapshot(snap), indent=2))
    return EXIT_OK


def horizon_report(cfg: ExperimentConfig, seed: int) -> dict:
    setup, _ = resolve(cfg, seed)
    f_max = setup.f_max
    if f_max is None:
        f_max = initial_losses(setup, initial_params(setup, seed))
    hyper = HyperParams(setup.gamma, setup.eta0, setup.l1, setup.l2, setup.grad_bound, np.asarray(f_max))
    part = setup.partition
    try:
        t_hat = continuous_optimal_rounds(hyper, part, setup.stringencies)
    except UnboundedHorizon as err:
        return {"T_star": None, "T_hat": None, "oracle": None, "reason": str(err)}
    t_star = optimal_rounds(hyper, part, setup.stringencies)
    t_max = 2 * t_star + 10
    oracle = brute_force_rounds(hyper, part, setup.stringencies, t_max) if t_max <= ORACLE_LIMIT else None
    return {"T_star": t_star, "T_hat": t_hat, "oracle": oracle, "oracle_t_max": t_max, "f_max": [float(v) for v in f_max]}


def cmd_horizon(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds.master if args.seed is None else args.seed
    print(json.dumps(horizon_report(cfg, seed), indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_validate

    results = run_validate(seed=0 if args.seed is None else args.seed)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def cmd_schema(args) -> int:
    print(json.dumps(json_schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otafd", description="DP over-the-air federated distillation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True, reps=True):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        if out:
            p.add_argument("--out", help="output directory")
        if reps:
            p.add_argument("--replications", type=int, help="number of replications")

    p = sub.add_parser("simulate", help="run training and write per-replication CSV/JSON")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", help="one-shot transceiver design from a channel snapshot JSON")
    common(p, out=False, reps=False)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("horizon", help="print the optimal number of rounds and its brute-force check")
    common(p, out=False, reps=False)
    p.set_defaults(func=cmd_horizon)

    p = sub.add_parser("sweep-epsilon", help="sweep a uniform epsilon and aggregate phi2 / accuracy")
    common(p)
    p.add_argument("--grid", default="0.001,0.0025,0.005,0.01,0.025,0.05,0.1", help="comma-separated increasing epsilons")
    p.add_argument("--delta", type=float, default=1e-11)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run the invariant self-check suite")
    common(p, out=False, reps=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
