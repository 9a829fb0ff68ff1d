"""Per-link propagation: path loss, shadowing fields, Nakagami shapes and normalized powers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, overload

import numpy as np
import numpy.typing as npt
from scipy import fft as sp_fft
from scipy import linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import cdist

from .errors import CovarianceFactorizationError, EmptyCombiningSetError
from .topology import EvaluationGrid, LinkGeometry, MbsfnPartition, NetworkTopology, resolve_links

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
ShapeArray = npt.NDArray[np.int8]

DEFAULT_D0 = 0.01
DENSE_POINT_LIMIT = 4_000
LN2 = math.log(2.0)

# Circulant embedding pads by this many decorrelation lengths (covariance 2**-20 there).
_EMBED_REACH = 20.0
_NEG_EIGEN_TOL = 1e-3

ShadowingMethod = Literal["auto", "dense", "lattice"]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# PATH LOSS AND FADING SHAPES
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@overload
def path_loss(d: float, d0: float, alpha: float) -> float: ...
@overload
def path_loss(d: FloatArray, d0: float, alpha: float) -> FloatArray: ...
def path_loss(d: float | FloatArray, d0: float, alpha: float) -> float | FloatArray:
    """Power-law attenuation (d/d0)^-alpha, clamped to 1 inside d0."""
    if d0 <= 0:
        raise ValueError(f"d0 must be positive, got {d0}")
    if alpha < 2:
        raise ValueError(f"alpha must be >= 2, got {alpha}")
    ratio = np.maximum(np.asarray(d, dtype=np.float64) / d0, 1.0)
    gain = ratio**-alpha
    if np.ndim(gain) == 0:
        return float(gain)
    return np.asarray(gain, dtype=np.float64)


def nakagami_shape(d: float, r_f: float) -> int:
    """Distance-dependent Nakagami shape: 3 within r_f/2, 2 within r_f, else 1 (r_f = 0 is pure Rayleigh)."""
    if r_f <= 0:
        return 1
    if d <= r_f / 2.0:
        return 3
    if d <= r_f:
        return 2
    return 1


def nakagami_shapes(distances: FloatArray, r_f: float) -> ShapeArray:
    shapes = np.ones(distances.shape, dtype=np.int8)
    if r_f <= 0:
        return shapes
    shapes[distances <= r_f] = 2
    shapes[distances <= r_f / 2.0] = 3
    return shapes


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# CORRELATED SHADOWING
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True, eq=False)
class ShadowingField:
    """Shadowing factors in dB, one row per station, one column per grid point."""

    values: FloatArray
    points: FloatArray
    sigma_s_db: float
    d_corr: float
    seed: int
    method: str

    def __post_init__(self) -> None:
        self.values.setflags(write=False)


def exponential_correlation(lag: FloatArray | float, d_corr: float) -> FloatArray:
    """Normalized autocorrelation exp(-|lag| ln2 / d_corr); equals 1/2 at d_corr."""
    return np.asarray(np.exp(-np.abs(np.asarray(lag, dtype=np.float64)) * LN2 / d_corr), dtype=np.float64)


def station_rng(seed: int, station: int) -> np.random.Generator:
    """Independent generator for one station, derived from (seed, station)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(station,)))


def generate_shadowing(
    grid: EvaluationGrid,
    topology: NetworkTopology,
    sigma_s_db: float,
    d_corr: float,
    seed: int,
    *,
    method: ShadowingMethod = "auto",
) -> ShadowingField:
    """Draw an independent Gaussian field per station with exponential covariance.

    Grids up to DENSE_POINT_LIMIT points use an exact Cholesky factorization;
    larger grids (or a failed factorization under "auto") use circulant
    embedding on a regular lattice.
    """
    if sigma_s_db < 0:
        raise ValueError(f"sigma_s must be >= 0 dB, got {sigma_s_db}")
    if d_corr <= 0:
        raise ValueError(f"d_corr must be positive, got {d_corr}")

    count = topology.count
    if sigma_s_db == 0.0:
        values = np.zeros((count, grid.size), dtype=np.float64)
        return ShadowingField(values, grid.points, 0.0, float(d_corr), int(seed), "none")

    if method == "dense" or (method == "auto" and grid.size <= DENSE_POINT_LIMIT):
        try:
            values = _dense_fields(grid.points, count, sigma_s_db, d_corr, seed)
            return ShadowingField(values, grid.points, float(sigma_s_db), float(d_corr), int(seed), "dense")
        except CovarianceFactorizationError:
            if method == "dense":
                raise
            logger.warning("dense shadowing factorization failed on %d points; using lattice synthesis", grid.size)

    values = _lattice_fields(grid, count, sigma_s_db, d_corr, seed)
    return ShadowingField(values, grid.points, float(sigma_s_db), float(d_corr), int(seed), "lattice")


def _dense_fields(points: FloatArray, count: int, sigma_s_db: float, d_corr: float, seed: int) -> FloatArray:
    cov = sigma_s_db**2 * exponential_correlation(cdist(points, points), d_corr)
    try:
        lower = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as e:
        raise CovarianceFactorizationError(f"Cholesky failed on {points.shape[0]} points: {e}") from e
    if not np.all(np.isfinite(lower)):
        raise CovarianceFactorizationError("Cholesky factor is not finite")

    white = np.column_stack([station_rng(seed, i).standard_normal(points.shape[0]) for i in range(count)])
    return np.ascontiguousarray((lower @ white).T)


def _lattice_fields(grid: EvaluationGrid, count: int, sigma_s_db: float, d_corr: float, seed: int) -> FloatArray:
    pitch = max(grid.spacing, d_corr / 2.0)
    if pitch == grid.spacing:
        nx, ny = grid.nx, grid.ny
    else:
        nx = math.ceil((grid.nx - 1) * grid.spacing / pitch - 1e-9) + 1
        ny = math.ceil((grid.ny - 1) * grid.spacing / pitch - 1e-9) + 1

    embedding = _CirculantEmbedding(nx, ny, pitch, sigma_s_db, d_corr)
    values = np.empty((count, grid.size), dtype=np.float64)
    if pitch == grid.spacing:
        for i in range(count):
            values[i] = embedding.sample(station_rng(seed, i)).ravel()
        return values

    logger.debug("interpolating shadowing from %dx%d lattice (pitch %.4g) to %.4g", nx, ny, pitch, grid.spacing)
    xs = grid.origin[0] + pitch * np.arange(nx)
    ys = grid.origin[1] + pitch * np.arange(ny)
    targets = np.column_stack((grid.points[:, 1], grid.points[:, 0]))
    for i in range(count):
        coarse = embedding.sample(station_rng(seed, i))
        interp = RegularGridInterpolator((ys, xs), coarse, method="linear", bounds_error=False, fill_value=None)
        values[i] = interp(targets)
    return values


class _CirculantEmbedding:
    """FFT synthesis of a stationary field on an ny x nx lattice."""

    def __init__(self, nx: int, ny: int, pitch: float, sigma_s_db: float, d_corr: float) -> None:
        pad = math.ceil(_EMBED_REACH * d_corr / pitch) + 1
        self.nx, self.ny = nx, ny
        self.n1 = sp_fft.next_fast_len(nx + pad)
        self.n2 = sp_fft.next_fast_len(ny + pad)

        i1 = np.arange(self.n1)
        i2 = np.arange(self.n2)
        lag_x = np.minimum(i1, self.n1 - i1) * pitch
        lag_y = np.minimum(i2, self.n2 - i2) * pitch
        first_row = sigma_s_db**2 * exponential_correlation(np.hypot(lag_y[:, None], lag_x[None, :]), d_corr)

        eigen = np.real(sp_fft.fft2(first_row))
        if eigen.min() < -_NEG_EIGEN_TOL * eigen.max():
            raise CovarianceFactorizationError(
                f"circulant embedding {self.n2}x{self.n1} is not positive semi-definite "
                f"(min eigenvalue {eigen.min():.3g})"
            )
        if eigen.min() < 0:
            # Rescale the clipped spectrum so the marginal variance is preserved.
            clipped = np.maximum(eigen, 0.0)
            eigen = clipped * (eigen.sum() / clipped.sum())
        self.sqrt_eigen = np.sqrt(eigen)

    def sample(self, rng: np.random.Generator) -> FloatArray:
        shape = (self.n2, self.n1)
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        field = np.real(sp_fft.fft2(self.sqrt_eigen * noise)) / math.sqrt(self.n1 * self.n2)
        return np.ascontiguousarray(field[: self.ny, : self.nx])


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# NORMALIZED POWERS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def normalized_power(
    xi_db: FloatArray | float, d: FloatArray | float, count: int, alpha: float, d0: float
) -> FloatArray:
    """Omega = 10^(xi/10) * max(d, d0)^-alpha / N.

    Gamma is the SNR at unit distance, so the clamped path loss is rescaled
    by d0^-alpha back to arena units.
    """
    distances = np.asarray(d, dtype=np.float64)
    gain = np.power(10.0, np.asarray(xi_db, dtype=np.float64) / 10.0)
    return np.asarray(gain * path_loss(distances, d0, alpha) * d0**-alpha / count, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LinkBudget:
    """Normalized powers, shapes and combining set seen from one grid point."""

    omega: FloatArray
    shapes: ShapeArray
    combining: IntArray
    distances: FloatArray

    @property
    def interfering(self) -> IntArray:
        mask = np.ones(self.omega.shape[0], dtype=bool)
        mask[self.combining] = False
        return np.flatnonzero(mask).astype(np.int64)


def normalized_powers(
    point_index: int,
    topology: NetworkTopology,
    partition: MbsfnPartition,
    shadowing: ShadowingField,
    alpha: float,
    d0: float,
    *,
    r_f: float = 0.0,
) -> LinkBudget:
    """Omega for every station at one grid point, with its combining set and shapes."""
    point = shadowing.points[point_index]
    links = resolve_links(point[np.newaxis, :], topology, partition)
    members = np.flatnonzero(links.combining[0]).astype(np.int64)
    if members.size == 0:
        raise EmptyCombiningSetError(f"grid point {point_index} has no admissible combining station")
    distances = links.distances[0]
    omega = normalized_power(shadowing.values[:, point_index], distances, int(members.size), alpha, d0)
    return LinkBudget(omega, nakagami_shapes(distances, r_f), members, distances)


@dataclass(frozen=True, eq=False)
class ChannelProfile:
    """Link quantities for every (grid point, station) pair of one realization."""

    links: LinkGeometry
    shapes: ShapeArray
    omega: FloatArray
    alpha: float
    d0: float
    r_f: float

    @property
    def counts(self) -> IntArray:
        return self.links.combining_counts

    @property
    def empty(self) -> npt.NDArray[np.bool_]:
        return np.asarray(self.counts == 0, dtype=np.bool_)

    def budget(self, point: int) -> LinkBudget:
        members = np.flatnonzero(self.links.combining[point]).astype(np.int64)
        if members.size == 0:
            raise EmptyCombiningSetError(f"grid point {point} has no admissible combining station")
        return LinkBudget(self.omega[point], self.shapes[point], members, self.links.distances[point])


def build_profile(
    grid: EvaluationGrid,
    topology: NetworkTopology,
    partition: MbsfnPartition,
    shadowing: ShadowingField,
    alpha: float,
    d0: float,
    r_f: float,
) -> ChannelProfile:
    if shadowing.values.shape != (topology.count, grid.size):
        raise ValueError(
            f"shadowing field shape {shadowing.values.shape} does not match ({topology.count}, {grid.size})"
        )
    links = resolve_links(grid.points, topology, partition)
    counts = np.maximum(links.combining_counts, 1)
    omega = normalized_power(shadowing.values.T, links.distances, 1, alpha, d0) / counts[:, np.newaxis]
    return ChannelProfile(links, nakagami_shapes(links.distances, r_f), omega, float(alpha), float(d0), float(r_f))
