"""Independent references for the outage kernel.

`mc_outage` simulates the fading directly; `convolution_cdf` integrates the
gamma densities of the interference-free case numerically. Neither shares
code with the closed form.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import signal, stats

from .errors import GridResolutionError, NumericalInstabilityError
from .outage import OutageProblem, conditional_outage

logger = logging.getLogger(__name__)

BLOCK_TRIALS = 65_536
CONVOLUTION_TOL = 1e-7
_START_INTERVALS = 64
_MAX_HALVINGS = 14


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# MONTE CARLO
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    trials: int
    seed: int

    @classmethod
    def from_count(cls, outages: int, trials: int, seed: int) -> McEstimate:
        p = outages / trials
        return cls(p, math.sqrt(p * (1.0 - p) / trials), trials, seed)


def mc_outage(problem: OutageProblem, trials: int, seed: int, *, workers: int = 1) -> McEstimate:
    """Fraction of simulated fading draws with SINR <= beta.

    Trials run in fixed blocks, each with its own child seed, so the result
    depends only on (seed, trials) and not on `workers`.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    sizes = [min(BLOCK_TRIALS, trials - start) for start in range(0, trials, BLOCK_TRIALS)]

    def run(block: int) -> int:
        return _count_outages(problem, sizes[block], seed, block)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outages = sum(pool.map(run, range(len(sizes))))
    else:
        outages = sum(run(block) for block in range(len(sizes)))
    return McEstimate.from_count(int(outages), trials, seed)


def _count_outages(problem: OutageProblem, size: int, seed: int, block: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    wanted = _received_power(problem.combining, size, rng)
    unwanted = _received_power(problem.interfering, size, rng)
    return int(np.count_nonzero(wanted <= problem.beta * (problem.noise + unwanted)))


def _received_power(links: Sequence[tuple[float, int]], size: int, rng: np.random.Generator) -> np.ndarray:
    if not links:
        return np.zeros(size)
    omega = np.array([o for o, _ in links], dtype=np.float64)
    shape = np.array([m for _, m in links], dtype=np.float64)
    # Unit-mean gains: Gamma(m, 1/m).
    gains = rng.gamma(shape, 1.0 / shape, size=(size, len(links)))
    return gains @ omega


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# NUMERICAL CONVOLUTION
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def convolution_cdf(
    combining: Sequence[tuple[float, int]],
    beta: float,
    z: float,
    *,
    tol: float = CONVOLUTION_TOL,
    max_halvings: int = _MAX_HALVINGS,
) -> float:
    """P[sum_k g_k Omega_k / beta <= z] by trapezoidal convolution of gamma densities.

    Step halving with Richardson extrapolation until two successive
    extrapolated values agree within `tol`.
    """
    if not combining:
        raise ValueError("combining set must be nonempty")
    if z <= 0:
        return 0.0
    terms = [(int(m), omega / (beta * m)) for omega, m in combining]
    if len(terms) == 1:
        m, eta = terms[0]
        return float(stats.gamma.cdf(z, a=m, scale=eta))

    intervals = _START_INTERVALS
    coarse = _trapezoid_cdf(terms, z, intervals)
    previous: float | None = None
    for _ in range(max_halvings):
        intervals *= 2
        fine = _trapezoid_cdf(terms, z, intervals)
        extrapolated = (4.0 * fine - coarse) / 3.0
        if previous is not None and abs(extrapolated - previous) < tol:
            logger.debug("convolution converged at %d intervals", intervals)
            return min(max(extrapolated, 0.0), 1.0)
        previous, coarse = extrapolated, fine
    raise GridResolutionError(f"convolution did not reach {tol:g} within {max_halvings} halvings (z={z!r})")


def _trapezoid_cdf(terms: Sequence[tuple[int, float]], z: float, intervals: int) -> float:
    x = np.linspace(0.0, z, intervals + 1)
    h = z / intervals
    density = stats.gamma.pdf(x, a=terms[0][0], scale=terms[0][1])
    for m, eta in terms[1:-1]:
        density = _trapezoid_convolve(density, stats.gamma.pdf(x, a=m, scale=eta), h)
    m, eta = terms[-1]
    tail = stats.gamma.cdf(z - x, a=m, scale=eta)
    integrand = density * tail
    return float(h * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1])))


def _trapezoid_convolve(f: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    full = signal.fftconvolve(f, g)[: f.size]
    # Trapezoid end corrections at x_0 and x_n.
    return h * (full - 0.5 * (f[0] * g + g[0] * f))


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# RANDOMIZED KERNEL VALIDATION
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True)
class ValidationRecord:
    index: int
    problem: OutageProblem
    closed_form: float
    mc: McEstimate

    @property
    def tolerance(self) -> float:
        return max(0.01, 3.0 * self.mc.stderr)

    @property
    def error(self) -> float:
        return abs(self.closed_form - self.mc.estimate)

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def random_instances(count: int, seed: int, *, max_stations: int = 8, max_shape: int = 3) -> list[OutageProblem]:
    """Instances with 1-3 combining links, up to `max_stations` links in total,
    Omega log-uniform over three decades, beta in [0.1, 10], Gamma in [1, 100]."""
    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(count):
        n_comb = int(rng.integers(1, 4))
        n_int = int(rng.integers(0, max_stations - n_comb + 1))
        omega = 10.0 ** rng.uniform(-1.5, 1.5, size=n_comb + n_int)
        shapes = rng.integers(1, max_shape + 1, size=n_comb + n_int)
        links = [(float(o), int(m)) for o, m in zip(omega, shapes, strict=True)]
        beta = float(10.0 ** rng.uniform(-1.0, 1.0))
        gamma = float(10.0 ** rng.uniform(0.0, 2.0))
        problems.append(OutageProblem.build(links[:n_comb], links[n_comb:], beta, gamma))
    return problems


def instance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, dtype=np.uint64)[0])


def validate_kernel(
    instances: Sequence[OutageProblem], trials: int, seed: int, *, workers: int = 1
) -> list[ValidationRecord]:
    records = []
    for index, problem in enumerate(instances):
        try:
            closed = conditional_outage(problem)
        except NumericalInstabilityError:
            logger.info("instance %d: retrying in extended precision", index)
            try:
                closed = conditional_outage(problem, extended=True)
            except NumericalInstabilityError as exc:
                logger.error("instance %d: closed form unstable in extended precision (%r)", index, exc.value)
                closed = math.nan
        estimate = mc_outage(problem, trials, instance_seed(seed, index), workers=workers)
        record = ValidationRecord(index, problem, closed, estimate)
        if not record.passed:
            logger.warning(
                "instance %d failed: closed form %.6f vs MC %.6f (tolerance %.4f)",
                index,
                closed,
                estimate.estimate,
                record.tolerance,
            )
        records.append(record)
    return records
