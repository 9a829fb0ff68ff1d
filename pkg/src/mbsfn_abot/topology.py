"""Network topology: base-station placement, MBSFN areas and the evaluation grid.

Stations are placed by uniform clustering (sequential uniform placement with a
hard exclusion radius), MBSFN areas are the stations nearest each anchor of a
hexagonal lattice, and every location is served by the area of its nearest
station. Ties are always broken towards the lowest index.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist, pdist

from .errors import EmptyCombiningSetError, PackingInfeasibleError, TopologyFormatError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

DEFAULT_MAX_ATTEMPTS = 10_000
DEFAULT_D_MAX = 5.0
FORMAT_TAG = "mbsfn-topology v1"

# Lattice membership tolerance (relative to the arena side).
_EDGE_TOL = 1e-9


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# DOMAIN TYPES
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """One realization of the base-station layout."""

    stations: FloatArray
    d_net: float
    r_bs: float
    seed: int

    def __post_init__(self) -> None:
        stations = np.array(self.stations, dtype=np.float64).reshape(-1, 2)
        stations.setflags(write=False)
        object.__setattr__(self, "stations", stations)

    @property
    def count(self) -> int:
        return int(self.stations.shape[0])

    @property
    def density(self) -> float:
        return self.count / self.d_net**2

    def min_separation(self) -> float:
        """Smallest pairwise station distance (inf for a single station)."""
        if self.count < 2:
            return math.inf
        return float(pdist(self.stations).min())


@dataclass(frozen=True, eq=False)
class MbsfnPartition:
    """Hexagonal anchors and the station → area assignment."""

    anchors: FloatArray
    d_sfn: float
    area_of_station: IntArray
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self) -> None:
        anchors = np.array(self.anchors, dtype=np.float64).reshape(-1, 2)
        area = np.array(self.area_of_station, dtype=np.int64)
        anchors.setflags(write=False)
        area.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "area_of_station", area)

    @property
    def area_count(self) -> int:
        return int(self.anchors.shape[0])

    def occupied_areas(self) -> int:
        """Number of areas that received at least one station."""
        return int(np.unique(self.area_of_station).size)


@dataclass(frozen=True)
class EvaluationGrid:
    """Regular square lattice of receiver locations centred on the arena.

    Points are ordered row-major (x fastest): index j = iy * nx + ix.
    """

    origin: tuple[float, float]
    spacing: float
    nx: int
    ny: int
    d_net: float
    eval_side: float
    _points: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        xs = self.origin[0] + self.spacing * np.arange(self.nx)
        ys = self.origin[1] + self.spacing * np.arange(self.ny)
        gx, gy = np.meshgrid(xs, ys)
        points = np.column_stack((gx.ravel(), gy.ravel()))
        points.setflags(write=False)
        object.__setattr__(self, "_points", points)

    @property
    def points(self) -> FloatArray:
        return self._points

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def center(self) -> tuple[float, float]:
        return (self.d_net / 2.0, self.d_net / 2.0)

    def eval_mask(self) -> BoolArray:
        """Points inside the central evaluation square."""
        half = self.eval_side / 2.0 + _EDGE_TOL * max(self.d_net, 1.0)
        cx, cy = self.center
        inside = (np.abs(self.points[:, 0] - cx) <= half) & (np.abs(self.points[:, 1] - cy) <= half)
        return np.asarray(inside, dtype=np.bool_)

    def eval_only(self) -> EvaluationGrid:
        """The sub-lattice covering just the evaluation square."""
        n_half = _half_count(self.eval_side, self.spacing)
        cx, cy = self.center
        origin = (cx - n_half * self.spacing, cy - n_half * self.spacing)
        return EvaluationGrid(origin, self.spacing, 2 * n_half + 1, 2 * n_half + 1, self.d_net, self.eval_side)


def _half_count(side: float, spacing: float) -> int:
    return int(math.floor(side / (2.0 * spacing) + 1e-9))


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# PLACEMENT AND PARTITIONING
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def place_base_stations(
    count: int,
    d_net: float,
    r_bs: float,
    seed: int,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> NetworkTopology:
    """Place `count` stations one at a time, rejecting draws within r_bs of an accepted station."""
    if count < 1:
        raise ValueError(f"station count must be >= 1, got {count}")
    if d_net <= 0 or r_bs < 0:
        raise ValueError(f"need d_net > 0 and r_bs >= 0, got d_net={d_net}, r_bs={r_bs}")

    rng = np.random.default_rng(seed)
    stations = np.empty((count, 2), dtype=np.float64)
    rejected_total = 0
    for i in range(count):
        for attempt in range(max_attempts):
            candidate = rng.uniform(0.0, d_net, size=2)
            if i == 0 or r_bs == 0.0:
                break
            gaps = np.hypot(*(stations[:i] - candidate).T)
            if gaps.min() >= r_bs:
                break
            rejected_total += 1
        else:
            raise PackingInfeasibleError(i, count, d_net, r_bs, max_attempts)
        stations[i] = candidate
        logger.debug("station %d placed after %d attempts", i, attempt + 1)

    logger.debug("placed %d stations (%d rejections, seed=%d)", count, rejected_total, seed)
    return NetworkTopology(stations, float(d_net), float(r_bs), int(seed))


def hex_grid_centers(d_net: float, d_sfn: float) -> FloatArray:
    """Hexagonal anchor lattice with spacing d_sfn, centred on the arena.

    Odd rows are shifted by d_sfn/2; anchors are kept within a half-spacing
    margin around the arena.
    """
    if d_sfn <= 0:
        raise ValueError(f"d_sfn must be positive, got {d_sfn}")
    center = d_net / 2.0
    reach = d_net / 2.0 + d_sfn / 2.0 + _EDGE_TOL * max(d_net, d_sfn)
    row_pitch = d_sfn * math.sqrt(3.0) / 2.0

    anchors: list[tuple[float, float]] = []
    rows = int(math.floor(reach / row_pitch))
    for i in range(-rows, rows + 1):
        offset = d_sfn / 2.0 if i % 2 else 0.0
        k_lo = math.ceil((-reach - offset) / d_sfn)
        k_hi = math.floor((reach - offset) / d_sfn)
        for k in range(k_lo, k_hi + 1):
            anchors.append((center + offset + k * d_sfn, center + i * row_pitch))
    return np.asarray(anchors, dtype=np.float64)


def assign_mbsfn_areas(
    topology: NetworkTopology,
    anchors: Sequence[Sequence[float]] | FloatArray,
    *,
    d_sfn: float | None = None,
    d_max: float = DEFAULT_D_MAX,
) -> MbsfnPartition:
    """Assign each station to its nearest anchor (lowest anchor index on ties)."""
    anchor_arr = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    if anchor_arr.shape[0] < 1:
        raise ValueError("at least one anchor is required")
    # argmin returns the first minimum, which is the lowest index on exact ties.
    area = np.argmin(cdist(topology.stations, anchor_arr), axis=1).astype(np.int64)
    if d_sfn is None:
        d_sfn = _nearest_spacing(anchor_arr)
    return MbsfnPartition(anchor_arr.copy(), float(d_sfn), area, float(d_max))


def build_partition(topology: NetworkTopology, d_sfn: float, d_max: float = DEFAULT_D_MAX) -> MbsfnPartition:
    return assign_mbsfn_areas(topology, hex_grid_centers(topology.d_net, d_sfn), d_sfn=d_sfn, d_max=d_max)


def _nearest_spacing(anchors: FloatArray) -> float:
    if anchors.shape[0] < 2:
        return math.inf
    return float(pdist(anchors).min())


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# SERVING AREA AND COMBINING SETS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def nearest_station(point: Sequence[float] | FloatArray, topology: NetworkTopology) -> int:
    gaps = np.hypot(*(topology.stations - np.asarray(point, dtype=np.float64)).T)
    return int(np.argmin(gaps))


def serving_area(point: Sequence[float] | FloatArray, topology: NetworkTopology, partition: MbsfnPartition) -> int:
    """Area of the nearest station, i.e. of the radio cell containing the point."""
    if topology.count == 0:
        raise ValueError("topology has no stations")
    return int(partition.area_of_station[nearest_station(point, topology)])


def combining_set(
    point: Sequence[float] | FloatArray, topology: NetworkTopology, partition: MbsfnPartition
) -> IntArray:
    """Indices of same-area stations strictly closer than d_max."""
    area = serving_area(point, topology, partition)
    gaps = np.hypot(*(topology.stations - np.asarray(point, dtype=np.float64)).T)
    members = np.flatnonzero((partition.area_of_station == area) & (gaps < partition.d_max))
    if members.size == 0:
        raise EmptyCombiningSetError(f"no station of area {area} within d_max={partition.d_max} of {tuple(point)}")
    return members.astype(np.int64)


@dataclass(frozen=True, eq=False)
class LinkGeometry:
    """Vectorised serving-area and combining-set resolution for many points."""

    distances: FloatArray
    nearest: IntArray
    serving_area: IntArray
    combining: BoolArray

    @property
    def combining_counts(self) -> IntArray:
        return np.asarray(self.combining.sum(axis=1), dtype=np.int64)


def resolve_links(points: FloatArray, topology: NetworkTopology, partition: MbsfnPartition) -> LinkGeometry:
    distances = cdist(points, topology.stations)
    nearest = np.argmin(distances, axis=1).astype(np.int64)
    area = partition.area_of_station[nearest]
    same_area = partition.area_of_station[np.newaxis, :] == area[:, np.newaxis]
    combining = same_area & (distances < partition.d_max)
    return LinkGeometry(distances, nearest, np.asarray(area, dtype=np.int64), combining)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# EVALUATION GRID
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def evaluation_grid(d_net: float, spacing: float, eval_side: float) -> EvaluationGrid:
    """Lattice of pitch `spacing` over the arena with a central evaluation square."""
    if not 0 < spacing <= d_net:
        raise ValueError(f"need 0 < spacing <= d_net, got spacing={spacing}, d_net={d_net}")
    if not 0 < eval_side <= d_net:
        raise ValueError(f"need 0 < eval_side <= d_net, got eval_side={eval_side}, d_net={d_net}")
    n_half = _half_count(d_net, spacing)
    c = d_net / 2.0
    origin = (c - n_half * spacing, c - n_half * spacing)
    return EvaluationGrid(origin, float(spacing), 2 * n_half + 1, 2 * n_half + 1, float(d_net), float(eval_side))


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# PERSISTENCE
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def write_topology(topology: NetworkTopology, path: Path) -> Path:
    """Write the versioned plain-text topology format."""
    lines = [
        f"{FORMAT_TAG} M={topology.count} d_net={topology.d_net!r} r_bs={topology.r_bs!r} seed={topology.seed}",
    ]
    lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in topology.stations)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_topology(path: Path) -> NetworkTopology:
    text = path.read_text(encoding="ascii").splitlines()
    if not text or not text[0].startswith(FORMAT_TAG + " "):
        raise TopologyFormatError(f"{path}: missing '{FORMAT_TAG}' header")

    header: dict[str, str] = {}
    for token in text[0][len(FORMAT_TAG) :].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise TopologyFormatError(f"{path}: malformed header token {token!r}")
        header[key] = value
    try:
        count = int(header["M"])
        d_net = float(header["d_net"])
        r_bs = float(header["r_bs"])
        seed = int(header["seed"])
    except (KeyError, ValueError) as e:
        raise TopologyFormatError(f"{path}: bad header ({e})") from e

    rows = [line.split() for line in text[1:] if line.strip()]
    if len(rows) != count or any(len(r) != 2 for r in rows):
        raise TopologyFormatError(f"{path}: expected {count} 'x y' rows, found {len(rows)}")
    try:
        stations = np.array([[float(x), float(y)] for x, y in rows], dtype=np.float64).reshape(count, 2)
    except ValueError as e:
        raise TopologyFormatError(f"{path}: bad coordinate ({e})") from e
    return NetworkTopology(stations, d_net, r_bs, seed)
