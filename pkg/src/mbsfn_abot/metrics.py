"""Outage maps, area below an outage threshold (ABOT) and the realization sweeps."""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .channel import ChannelProfile, ShadowingField, build_profile, generate_shadowing
from .config import AXES, RunConfig
from .errors import ConfigError, NumericalInstabilityError, PackingInfeasibleError
from .oracle import mc_outage
from .outage import OutageProblem, conditional_outage, outage_batch
from .topology import (
    EvaluationGrid,
    MbsfnPartition,
    NetworkTopology,
    build_partition,
    evaluation_grid,
    place_base_stations,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

MC_FALLBACK_TRIALS = 200_000
SCENE_INDEPENDENT_AXES = frozenset({"rate", "eps_hat"})


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# RATE <-> THRESHOLD
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def rate_to_threshold(rate: float) -> float:
    """SINR threshold whose Shannon capacity log2(1 + beta) equals `rate`."""
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    return float(2.0**rate - 1.0)


def threshold_to_rate(beta: float) -> float:
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    return math.log2(1.0 + beta)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# OUTAGE MAPS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True, eq=False)
class OutageMap:
    """Outage probability per grid point of one realization."""

    grid: EvaluationGrid
    epsilon: FloatArray
    serving_area: npt.NDArray[np.int64]
    counts: npt.NDArray[np.int64]
    topology_seed: int
    shadowing_seed: int
    beta: float
    gamma: float
    diagnostics: Mapping[str, int] = field(default_factory=dict)

    @property
    def eval_mask(self) -> BoolArray:
        return self.grid.eval_mask()

    def below_threshold(self, eps_hat: float) -> BoolArray:
        return np.asarray(self.epsilon < eps_hat, dtype=np.bool_)

    def summary(self) -> str:
        parts = [f"{key}={value}" for key, value in sorted(self.diagnostics.items())]
        return f"{self.grid.size} points; " + (", ".join(parts) if parts else "no kernel diagnostics")


def outage_problem(profile: ChannelProfile, point: int, beta: float, gamma: float) -> OutageProblem:
    """The kernel input at one grid point."""
    budget = profile.budget(point)
    interfering = budget.interfering
    return OutageProblem.build(
        [(budget.omega[i], budget.shapes[i]) for i in budget.combining],
        [(budget.omega[i], budget.shapes[i]) for i in interfering],
        beta,
        gamma,
    )


def outage_map(
    topology: NetworkTopology,
    partition: MbsfnPartition,
    profile: ChannelProfile,
    beta: float,
    gamma: float,
    *,
    grid: EvaluationGrid,
    shadowing_seed: int = 0,
) -> OutageMap:
    """Conditional outage at every grid point; points with no combining station get 1.

    The vectorised series evaluation covers most points. Points it flags are
    recomputed in extended precision, and if that is still out of range, by
    Monte Carlo.
    """
    if profile.omega.shape != (grid.size, topology.count) or partition.area_of_station.size != topology.count:
        raise ValueError("profile, grid, partition and topology disagree in shape")

    batch = outage_batch(profile.omega, profile.shapes, profile.links.combining, beta, gamma)
    epsilon = batch.values.copy()
    diagnostics: Counter[str] = Counter()
    diagnostics["empty_combining"] = int(batch.empty.sum())

    suspect = np.flatnonzero(batch.suspect)
    for point in suspect:
        problem = outage_problem(profile, int(point), beta, gamma)
        try:
            epsilon[point] = conditional_outage(problem, extended=True, method="series")
            diagnostics["extended_precision"] += 1
        except NumericalInstabilityError as e:
            logger.warning("point %d unstable in extended precision (%.3g); using Monte Carlo", point, e.value)
            epsilon[point] = mc_outage(problem, MC_FALLBACK_TRIALS, int(point)).estimate
            diagnostics["monte_carlo"] += 1

    trusted = ~batch.suspect & ~batch.empty
    diagnostics["clamped"] = int(np.count_nonzero(trusted & ((epsilon < 0.0) | (epsilon > 1.0))))
    epsilon = np.clip(epsilon, 0.0, 1.0)
    epsilon[batch.empty] = 1.0

    if suspect.size:
        logger.debug("%d of %d points re-evaluated outside the batch path", suspect.size, grid.size)
    return OutageMap(
        grid=grid,
        epsilon=epsilon,
        serving_area=profile.links.serving_area,
        counts=profile.counts,
        topology_seed=topology.seed,
        shadowing_seed=int(shadowing_seed),
        beta=float(beta),
        gamma=float(gamma),
        diagnostics={key: value for key, value in diagnostics.items() if value},
    )


def abot(outages: OutageMap, eps_hat: float) -> float:
    """Fraction of evaluation-square points with outage probability below `eps_hat`."""
    if not 0 < eps_hat < 1:
        raise ValueError(f"eps_hat must lie in (0, 1), got {eps_hat}")
    inside = outages.epsilon[outages.eval_mask]
    return float(np.count_nonzero(inside < eps_hat) / inside.size)


def mean_abot(values: Sequence[float] | FloatArray) -> float:
    if len(values) == 0:
        raise ValueError("mean_abot needs at least one value")
    return math.fsum(values) / len(values)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# AREA BOUNDARIES
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def area_boundary_mask(outages: OutageMap, width: float) -> BoolArray:
    """Points within `width` of a change of serving area between lattice neighbours."""
    areas = outages.serving_area.reshape(outages.grid.shape)
    edge = np.zeros(areas.shape, dtype=bool)
    horizontal = areas[:, 1:] != areas[:, :-1]
    vertical = areas[1:, :] != areas[:-1, :]
    edge[:, 1:] |= horizontal
    edge[:, :-1] |= horizontal
    edge[1:, :] |= vertical
    edge[:-1, :] |= vertical
    if not edge.any():
        return np.zeros(outages.grid.size, dtype=np.bool_)
    distance = ndimage.distance_transform_edt(~edge, sampling=outages.grid.spacing)
    return np.asarray((distance <= width).ravel(), dtype=np.bool_)


@dataclass(frozen=True)
class EdgeContrast:
    boundary_mean: float
    interior_mean: float
    boundary_points: int
    interior_points: int

    @property
    def difference(self) -> float:
        return self.boundary_mean - self.interior_mean


def edge_contrast(outages: OutageMap, width: float = 0.5) -> EdgeContrast:
    """Mean outage near area boundaries against the interior, over the evaluation square."""
    near = area_boundary_mask(outages, width)
    inside = outages.eval_mask
    boundary = outages.epsilon[near & inside]
    interior = outages.epsilon[~near & inside]
    return EdgeContrast(
        float(boundary.mean()) if boundary.size else math.nan,
        float(interior.mean()) if interior.size else math.nan,
        int(boundary.size),
        int(interior.size),
    )


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# SCENES
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def realization_seeds(master: int, realization: int) -> tuple[int, int]:
    """(topology seed, shadowing seed) of one realization, independent of the sweep value."""
    state = np.random.SeedSequence(master, spawn_key=(realization,)).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


@dataclass(frozen=True, eq=False)
class Scene:
    topology: NetworkTopology
    partition: MbsfnPartition
    grid: EvaluationGrid
    shadowing: ShadowingField
    profile: ChannelProfile

    def outage_map(self, beta: float, gamma: float) -> OutageMap:
        return outage_map(
            self.topology,
            self.partition,
            self.profile,
            beta,
            gamma,
            grid=self.grid,
            shadowing_seed=self.shadowing.seed,
        )


def build_scene(
    config: RunConfig,
    topology_seed: int,
    shadowing_seed: int,
    *,
    topology: NetworkTopology | None = None,
    eval_only: bool = True,
) -> Scene:
    """Stations, areas, shadowing and link profile of one realization."""
    net = config.network
    if topology is None:
        topology = place_base_stations(
            net.station_count, net.d_net, net.r_bs, topology_seed, max_attempts=net.max_attempts
        )
    partition = build_partition(topology, net.d_sfn, net.d_max)
    grid = evaluation_grid(topology.d_net, config.grid.spacing, min(config.grid.eval_side, topology.d_net))
    if eval_only:
        grid = grid.eval_only()
    ch = config.channel
    shadowing = generate_shadowing(grid, topology, ch.sigma_s_db, ch.d_corr, shadowing_seed)
    profile = build_profile(grid, topology, partition, shadowing, ch.alpha, ch.d0, ch.fading_radius(topology.r_bs))
    return Scene(topology, partition, grid, shadowing, profile)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# SWEEPS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True)
class AbotCurve:
    """ABOT per axis value: the completed (realization, value) samples and their mean."""

    axis: str
    values: tuple[float, ...]
    samples: tuple[tuple[tuple[int, float], ...], ...]
    realizations: int
    label: str = ""

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(mean_abot([a for _, a in s]) if s else math.nan for s in self.samples)

    @property
    def skipped(self) -> int:
        return sum(self.realizations - len(s) for s in self.samples)


def supported_rate(curve: AbotCurve, target: float) -> float | None:
    """Largest swept rate whose mean ABOT still reaches `target`."""
    if curve.axis != "rate":
        raise ValueError(f"supported_rate needs a rate sweep, got axis {curve.axis!r}")
    meeting = [r for r, m in zip(curve.values, curve.means, strict=True) if not math.isnan(m) and m >= target]
    return max(meeting) if meeting else None


def sweep(config: RunConfig, *, workers: int = 1, label: str = "") -> AbotCurve:
    """ABOT for every axis value over `experiment.realizations` realizations.

    Realization t uses the same topology and shadowing seeds for every axis
    value. A realization that cannot be packed is skipped for that value.
    """
    axis = config.experiment.axis
    values = config.experiment.values
    if axis is None:
        raise ConfigError("experiment.axis is required for a sweep")
    if not values:
        raise ConfigError("experiment.values must not be empty")
    count = config.experiment.realizations
    jobs = range(count)

    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_realization, [config] * count, jobs))
    else:
        results = [_realization(config, t) for t in jobs]

    samples: list[list[tuple[int, float]]] = [[] for _ in values]
    for t, row in enumerate(results):
        for i, value in enumerate(row):
            if value is not None:
                samples[i].append((t, value))
    curve = AbotCurve(axis, values, tuple(tuple(s) for s in samples), count, label)
    if curve.skipped:
        logger.warning("%s: %d (realization, value) pairs skipped on infeasible packing", label or axis, curve.skipped)
    return curve


def sweep_series(config: RunConfig, *, workers: int = 1) -> list[AbotCurve]:
    """One curve per `experiment.series` combination."""
    curves = []
    for label, series_config in config.series_configs():
        logger.info("sweeping %s over %s [%s]", config.experiment.axis, series_config.experiment.values, label or "-")
        curves.append(sweep(series_config, workers=workers, label=label))
    return curves


def _realization(config: RunConfig, t: int) -> list[float | None]:
    axis = config.experiment.axis
    assert axis is not None  # nosec: B101
    topology_seed, shadowing_seed = realization_seeds(config.experiment.seed, t)
    values = config.experiment.values
    gamma = config.radio.gamma

    if axis in SCENE_INDEPENDENT_AXES:
        try:
            scene = build_scene(config, topology_seed, shadowing_seed)
        except PackingInfeasibleError as e:
            logger.warning("realization %d skipped: %s", t, e)
            return [None] * len(values)
        if axis == "rate":
            eps_hat = config.experiment.eps_hat
            return [abot(scene.outage_map(rate_to_threshold(v), gamma), eps_hat) for v in values]
        outages = scene.outage_map(config.radio.beta, gamma)
        return [abot(outages, v) for v in values]

    row: list[float | None] = []
    for value in values:
        varied = config.with_values({AXES[axis]: value})
        try:
            scene = build_scene(varied, topology_seed, shadowing_seed)
        except PackingInfeasibleError as e:
            logger.warning("realization %d skipped at %s=%s: %s", t, axis, value, e)
            row.append(None)
            continue
        row.append(abot(scene.outage_map(varied.radio.beta, gamma), varied.experiment.eps_hat))
    logger.debug("realization %d done", t)
    return row
