"""mbsfn-abot command line.

    mbsfn-abot generate-topology --config configs/defaults.yml
    mbsfn-abot outage-map --config configs/outage_map.yml [--topology FILE]
    mbsfn-abot abot-sweep --config configs/rate_sweep.yml --threads 0
    mbsfn-abot mc-validate --config configs/mc_validate.yml

Exit codes: 0 success, 2 config or usage error, 3 infeasible packing,
4 kernel validation failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from .audit import write_run_record
from .config import RunConfig, load_config
from .errors import MbsfnError, ValidationFailedError
from .export import write_curve, write_outage_map, write_shadowing, write_validation
from .metrics import (
    abot,
    build_scene,
    edge_contrast,
    realization_seeds,
    supported_rate,
    sweep_series,
    threshold_to_rate,
)
from .oracle import random_instances, validate_kernel
from .topology import build_partition, place_base_stations, read_topology, write_topology

logger = logging.getLogger("mbsfn_abot")

Details = dict[str, Any]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# COMMANDS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def cmd_generate_topology(config: RunConfig, args: argparse.Namespace) -> Details:
    net = config.network
    topology_seed, _ = realization_seeds(config.experiment.seed, 0)
    topology = place_base_stations(net.station_count, net.d_net, net.r_bs, topology_seed, max_attempts=net.max_attempts)
    partition = build_partition(topology, net.d_sfn, net.d_max)
    path = write_topology(topology, _out_dir(config) / "topology.txt")
    min_gap = topology.min_separation()
    print(
        f"stations={topology.count} density={topology.density:.6g} min_distance={min_gap:.6g} "
        f"areas={partition.occupied_areas()} -> {path}"
    )
    return {
        "path": str(path),
        "stations": topology.count,
        "density": topology.density,
        "min_distance": min_gap,
        "areas": partition.occupied_areas(),
    }


def cmd_outage_map(config: RunConfig, args: argparse.Namespace) -> Details:
    topology_seed, shadowing_seed = realization_seeds(config.experiment.seed, 0)
    topology = read_topology(args.topology) if args.topology else None
    scene = build_scene(config, topology_seed, shadowing_seed, topology=topology, eval_only=False)
    outages = scene.outage_map(config.radio.beta, config.radio.gamma)

    out = _out_dir(config)
    eps_hat = config.experiment.eps_hat
    path = write_outage_map(outages, eps_hat, out / "outage-map.csv")
    if "shadowing" in config.output.formats:
        write_shadowing(scene.shadowing, out / "shadowing.csv")

    fraction = abot(outages, eps_hat)
    contrast = edge_contrast(outages)
    rate = threshold_to_rate(config.radio.beta)
    logger.info("kernel diagnostics: %s", outages.summary())
    print(
        f"rate={rate:.6g} abot={fraction:.6f} edge_mean={contrast.boundary_mean:.6f} "
        f"interior_mean={contrast.interior_mean:.6f} -> {path}"
    )
    return {
        "path": str(path),
        "rate": rate,
        "abot": fraction,
        "edge_mean": contrast.boundary_mean,
        "interior_mean": contrast.interior_mean,
        "diagnostics": dict(outages.diagnostics),
    }


def cmd_abot_sweep(config: RunConfig, args: argparse.Namespace) -> Details:
    curves = sweep_series(config, workers=args.threads)
    out = _out_dir(config)
    target = config.experiment.target_abot
    files = []
    rates: dict[str, float | None] = {}
    for curve in curves:
        detail, summary = write_curve(curve, out)
        files.extend([str(detail), str(summary)])
        name = curve.label or curve.axis
        means = ", ".join(f"{v:g}:{m:.4f}" for v, m in zip(curve.values, curve.means, strict=True))
        print(f"[{name}] {means}")
        if curve.axis == "rate":
            rate = supported_rate(curve, target)
            rates[name] = rate
            shown = "none" if rate is None else f"{rate:g}"
            print(f"[{name}] supported rate at abot >= {target:g}: {shown}")
    return {
        "files": files,
        "supported_rate": rates,
        "skipped": {curve.label or curve.axis: curve.skipped for curve in curves},
    }


def cmd_mc_validate(config: RunConfig, args: argparse.Namespace) -> Details:
    exp = config.experiment
    instances = random_instances(exp.instances, exp.seed)
    records = validate_kernel(instances, exp.trials, exp.seed, workers=args.threads)
    path = write_validation(records, _out_dir(config) / "mc-validate.csv")
    failed = [r for r in records if not r.passed]
    worst = max((r.error for r in records), default=0.0)
    passed = len(records) - len(failed)
    print(f"{passed}/{len(records)} instances pass (max |closed form - MC| = {worst:.4g}) -> {path}")
    for r in failed:
        print(
            f"FAIL instance {r.index}: combining={r.problem.combining} interfering={r.problem.interfering} "
            f"beta={r.problem.beta!r} gamma={r.problem.gamma!r} mc_seed={r.mc.seed} "
            f"closed_form={r.closed_form!r} mc={r.mc.estimate!r}",
            file=sys.stderr,
        )
    if failed:
        raise ValidationFailedError(f"{len(failed)} of {len(records)} instances failed; see {path}")
    return {"path": str(path), "instances": len(records), "max_error": worst}


COMMANDS: dict[str, tuple[Callable[[RunConfig, argparse.Namespace], Details], str]] = {
    "generate-topology": (cmd_generate_topology, "place stations and write the topology file"),
    "outage-map": (cmd_outage_map, "outage probability at every grid point"),
    "abot-sweep": (cmd_abot_sweep, "mean ABOT along the configured sweep axis"),
    "mc-validate": (cmd_mc_validate, "randomized closed-form vs Monte Carlo check"),
}


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# ENTRY POINT
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--out", type=Path, help="override output.directory")
    common.add_argument("--threads", type=int, default=1, help="parallel workers, 0 = one per CPU")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="mbsfn-abot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        command = sub.add_parser(name, parents=[common], help=help_text)
        if name == "outage-map":
            command.add_argument("--topology", type=Path, help="topology file from generate-topology")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads < 0:
        logger.error("--threads must be >= 0")
        return 2
    if args.threads == 0:
        args.threads = os.cpu_count() or 1

    handler, _ = COMMANDS[args.command]
    config: RunConfig | None = None
    start = time.perf_counter()
    try:
        config = _apply_overrides(load_config(args.config), args)
        details = handler(config, args)
    except MbsfnError as e:
        logger.error("%s: %s", type(e).__name__, e)
        _record(config, args.command, "failed", {"error": str(e), "exit_code": e.exit_code}, start)
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        _record(config, args.command, "failed", {"error": str(e), "exit_code": 1}, start)
        return 1
    _record(config, args.command, "success", details, start)
    return 0


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates: dict[str, Any] = {}
    if args.seed is not None:
        updates["experiment.seed"] = args.seed
    if args.out is not None:
        updates["output.directory"] = str(args.out)
    return config.with_values(updates) if updates else config


def _out_dir(config: RunConfig) -> Path:
    config.output.directory.mkdir(parents=True, exist_ok=True)
    return config.output.directory


def _record(config: RunConfig | None, command: str, status: str, details: Details, start: float) -> None:
    if config is None:
        return
    metrics = {"wall_time_s": round(time.perf_counter() - start, 3)}
    if "diagnostics" in details:
        metrics.update(details["diagnostics"])
    write_run_record(config.output.audit_dir, command, status, config.audit_view(), details, metrics)


if __name__ == "__main__":
    sys.exit(main())
