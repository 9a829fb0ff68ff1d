"""Exact conditional outage probability of an MRC-combined MBSFN receiver.

The decision statistic is the combined signal (a sum of independent gamma
variables with scales eta_k = Omega_k / (beta m_k)) minus the interference.
Its cdf at the inverse SNR is the outage probability. The signal transform
prod_q (1 + eta_q s)^-r_q is expanded in partial fractions; the coefficients
Xi(k, n) weight a gamma cdf of order n per pole, and averaging each pole over
the interference produces the weak-composition sums of gamma-ratio terms.

Two algebraic forms of the same sums are provided: the composition form
(the literal expansion, used as the reference) and the series form, which
builds the same coefficients from power sums. `outage_batch` is the series
form vectorised over many grid points.
"""

from __future__ import annotations

import contextlib
import itertools
import logging
import math
import sys
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any, Literal

import mpmath
import numpy as np
import numpy.typing as npt

from .errors import ComplexityGuardError, DegenerateScalesError, NumericalInstabilityError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

COMPOSITION_LIMIT = 10_000_000
# Relative gap below which two scales are the same number up to rounding.
ROUND_TOL = 8 * sys.float_info.epsilon
MERGE_TOL = 1e-12
PERTURBATION = 1e-9
RANGE_TOL = 1e-6
CONDITION_LIMIT = 1e10
EXTENDED_DPS = 60

# Elements per (points x poles x stations) block in the batch evaluator.
_BATCH_BUDGET = 2_000_000

Method = Literal["compositions", "series"]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# DOMAIN TYPES
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True)
class OutageProblem:
    """Outage question at one location: (Omega, m) per combining and interfering link."""

    combining: tuple[tuple[float, int], ...]
    interfering: tuple[tuple[float, int], ...]
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.combining:
            raise ValueError("combining set must be nonempty")
        for omega, m in (*self.combining, *self.interfering):
            if not omega > 0:
                raise ValueError(f"normalized power must be positive, got {omega}")
            if int(m) != m or m < 1:
                raise ValueError(f"Nakagami shape must be a positive integer, got {m}")
        if not self.beta > 0 or not self.gamma > 0:
            raise ValueError(f"need beta > 0 and gamma > 0, got beta={self.beta}, gamma={self.gamma}")

    @classmethod
    def build(
        cls,
        combining: Sequence[tuple[float, int]],
        interfering: Sequence[tuple[float, int]],
        beta: float,
        gamma: float,
    ) -> OutageProblem:
        return cls(
            tuple((float(o), int(m)) for o, m in combining),
            tuple((float(o), int(m)) for o, m in interfering),
            float(beta),
            float(gamma),
        )

    @property
    def noise(self) -> float:
        """Gamma^-1, the point at which the decision-statistic cdf is evaluated."""
        return 0.0 if math.isinf(self.gamma) else 1.0 / self.gamma

    def rescaled(self, factor: float) -> OutageProblem:
        """Every Omega times `factor`, Gamma^-1 times `factor`."""
        return OutageProblem(
            tuple((o * factor, m) for o, m in self.combining),
            tuple((o * factor, m) for o, m in self.interfering),
            self.beta,
            self.gamma / factor,
        )


@dataclass(frozen=True)
class XiInput:
    """Arguments of one partial-fraction coefficient; k is 1-based."""

    k: int
    n: int
    shapes: tuple[int, ...]
    scales: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.shapes) != len(self.scales) or not self.shapes:
            raise ValueError("shapes and scales must be nonempty and of equal length")
        if not 1 <= self.k <= len(self.shapes):
            raise ValueError(f"pole index {self.k} out of range")
        if any(r < 1 for r in self.shapes) or any(not eta > 0 for eta in self.scales):
            raise ValueError("shapes must be positive integers and scales positive")
        if not 1 <= self.n <= self.shapes[self.k - 1]:
            raise ValueError(f"pole order {self.n} outside 1..{self.shapes[self.k - 1]}")


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# ARITHMETIC BACKENDS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


class _Arith:
    """Double precision with math.fsum, or mpmath at EXTENDED_DPS digits."""

    def __init__(self, extended: bool) -> None:
        self.extended = extended

    def context(self) -> contextlib.AbstractContextManager[Any]:
        return mpmath.workdps(EXTENDED_DPS) if self.extended else contextlib.nullcontext()

    def num(self, x: float) -> Any:
        return mpmath.mpf(x) if self.extended else float(x)

    def exp(self, x: Any) -> Any:
        return mpmath.exp(x) if self.extended else math.exp(x)

    def log(self, x: Any) -> Any:
        return mpmath.log(x) if self.extended else math.log(x)

    def log1p(self, x: Any) -> Any:
        return mpmath.log1p(x) if self.extended else math.log1p(x)

    def lgamma(self, x: float) -> Any:
        return mpmath.loggamma(x) if self.extended else math.lgamma(x)

    def factorial(self, k: int) -> Any:
        return mpmath.factorial(k) if self.extended else math.factorial(k)

    def fsum(self, terms: Iterator[Any] | list[Any]) -> Any:
        return mpmath.fsum(terms) if self.extended else math.fsum(terms)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# COMBINATORICS AND SCALE MERGING
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def composition_count(total: int, parts: int) -> int:
    if parts == 0:
        return 1 if total == 0 else 0
    return math.comb(total + parts - 1, parts - 1)


def weak_compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All non-negative integer vectors of length `parts` summing to `total`."""
    if total < 0 or parts < 0:
        raise ValueError(f"need total >= 0 and parts >= 0, got {total}, {parts}")
    count = composition_count(total, parts)
    if count > COMPOSITION_LIMIT:
        raise ComplexityGuardError(f"{count} compositions of {total} into {parts} parts exceeds {COMPOSITION_LIMIT}")
    return _compositions(total, parts)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # Each multiset of `total` part indices is one composition.
    for picks in itertools.combinations_with_replacement(range(parts), total):
        vector = [0] * parts
        for i in picks:
            vector[i] += 1
        yield tuple(vector)


def merge_equal_scales(combining: Sequence[tuple[float, int]], beta: float) -> list[tuple[float, int]]:
    """Collapse combining links to distinct gamma poles (eta, r).

    Links whose eta = Omega / (beta m) agree to within ROUND_TOL (relative)
    add their shapes and keep the scale of the first link in the group.
    Remaining scales closer than MERGE_TOL are pushed PERTURBATION apart.
    First appearance order is kept.
    """
    links = [(omega / (beta * m), int(m)) for omega, m in combining]
    groups: list[list[int]] = []
    for i in sorted(range(len(links)), key=lambda i: links[i][0]):
        if groups and links[i][0] - links[groups[-1][0]][0] <= ROUND_TOL * links[groups[-1][0]][0]:
            groups[-1].append(i)
        else:
            groups.append([i])
    groups.sort(key=min)
    items = [(links[min(group)][0], sum(links[i][1] for i in group)) for group in groups]

    adjusted = [eta for eta, _ in items]
    previous: float | None = None
    for i in sorted(range(len(items)), key=lambda i: items[i][0]):
        eta = items[i][0]
        if previous is not None and eta - previous <= MERGE_TOL * previous:
            eta = previous * (1.0 + PERTURBATION)
            logger.debug("perturbed near-equal scale %r to %r", items[i][0], eta)
        adjusted[i] = eta
        previous = eta
    return [(eta, r) for eta, (_, r) in zip(adjusted, items, strict=True)]


def _check_distinct(scales: Sequence[float]) -> None:
    ordered = sorted(scales)
    for lo, hi in itertools.pairwise(ordered):
        if hi - lo <= MERGE_TOL * lo:
            raise DegenerateScalesError(f"scales {lo!r} and {hi!r} coincide")


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# PARTIAL-FRACTION COEFFICIENTS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def xi(term: XiInput, *, extended: bool = False) -> float:
    """Partial-fraction coefficient of (1 + eta_k s)^-n in prod_q (1 + eta_q s)^-r_q."""
    _check_distinct(term.scales)
    ops = _Arith(extended)
    with ops.context():
        return float(_xi_compositions(term.k - 1, term.n, term.shapes, term.scales, ops))


def _pole_prefactor(
    k: int, shapes: Sequence[int], scales: Sequence[float], ops: _Arith
) -> tuple[int, Any, list[tuple[int, Any]]]:
    """Sign and log-magnitude of prod_{q != k} (1 - eta_q/eta_k)^-r_q, plus the series ratios.

    Around x = 1 + eta_k s each other factor is (1 - eta_q/eta_k)^-r_q (1 - c_q x)^-r_q
    with c_q = eta_q / (eta_q - eta_k).
    """
    eta_k = ops.num(scales[k])
    sign = 1
    log_mag = ops.num(0.0)
    ratios: list[tuple[int, Any]] = []
    for q, (r_q, eta_q) in enumerate(zip(shapes, scales, strict=True)):
        if q == k:
            continue
        eta = ops.num(eta_q)
        a = 1 - eta / eta_k
        log_mag -= r_q * ops.log(abs(a))
        if a < 0 and r_q % 2:
            sign = -sign
        ratios.append((r_q, eta / (eta - eta_k)))
    return sign, log_mag, ratios


def _xi_compositions(k: int, n: int, shapes: Sequence[int], scales: Sequence[float], ops: _Arith) -> Any:
    sign, log_pref, ratios = _pole_prefactor(k, shapes, scales, ops)
    terms = []
    for vector in weak_compositions(shapes[k] - n, len(ratios)):
        log_term = log_pref
        term_sign = sign
        for (r_q, c_q), j in zip(ratios, vector, strict=True):
            if j == 0:
                continue
            log_term += ops.lgamma(r_q + j) - ops.lgamma(r_q) - ops.lgamma(j + 1) + j * ops.log(abs(c_q))
            if c_q < 0 and j % 2:
                term_sign = -term_sign
        terms.append(term_sign * ops.exp(log_term))
    return ops.fsum(terms)


def _exp_series(power_sums: Sequence[Any], degree: int, ops: _Arith) -> list[Any]:
    """Taylor coefficients of exp(sum_p A_p x^p) up to `degree` (power_sums[p-1] = A_p)."""
    coeffs = [ops.num(1.0)]
    for t in range(1, degree + 1):
        coeffs.append(ops.fsum([p * power_sums[p - 1] * coeffs[t - p] for p in range(1, t + 1)]) / t)
    return coeffs


def _xi_series(k: int, shapes: Sequence[int], scales: Sequence[float], ops: _Arith) -> list[Any]:
    """[Xi(k, 1), ..., Xi(k, r_k)] from power sums of the series ratios."""
    sign, log_pref, ratios = _pole_prefactor(k, shapes, scales, ops)
    degree = shapes[k] - 1
    sums = [ops.fsum([r_q * c_q**p for r_q, c_q in ratios]) / p for p in range(1, degree + 1)]
    series = _exp_series(sums, degree, ops)
    scale = sign * ops.exp(log_pref)
    return [scale * series[shapes[k] - n] for n in range(1, shapes[k] + 1)]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# CONDITIONAL OUTAGE (SCALAR)
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def conditional_outage(problem: OutageProblem, *, extended: bool = False, method: Method = "compositions") -> float:
    """P[SINR <= beta | Omega], clamped to [0, 1].

    Raises NumericalInstabilityError when the unclamped value leaves
    [-RANGE_TOL, 1 + RANGE_TOL]; rerun with extended=True in that case.
    """
    value = raw_outage(problem, extended=extended, method=method)
    if not (-RANGE_TOL <= value <= 1.0 + RANGE_TOL):
        raise NumericalInstabilityError(value)
    return min(max(value, 0.0), 1.0)


def raw_outage(problem: OutageProblem, *, extended: bool = False, method: Method = "compositions") -> float:
    """Unclamped closed-form value."""
    ops = _Arith(extended)
    poles = merge_equal_scales(problem.combining, problem.beta)
    shapes = [r for _, r in poles]
    scales = [eta for eta, _ in poles]
    with ops.context():
        z = ops.num(problem.noise)
        interferers = [(ops.num(omega) / m, m) for omega, m in problem.interfering]
        terms = []
        for k, (eta_k, r_k) in enumerate(poles):
            eta = ops.num(eta_k)
            x = z / eta
            if method == "compositions":
                weights = [_xi_compositions(k, n, shapes, scales, ops) for n in range(1, r_k + 1)]
                coeff = [_interference_compositions(t, eta, interferers, ops) for t in range(r_k)]
            else:
                weights = _xi_series(k, shapes, scales, ops)
                coeff = _interference_series(r_k - 1, eta, interferers, ops)
            decay = ops.exp(-x)
            for n in range(1, r_k + 1):
                inner = ops.fsum(
                    [x ** (mu - t) / ops.factorial(mu - t) * coeff[t] for mu in range(n) for t in range(mu + 1)]
                )
                terms.append(weights[n - 1] * (1 - decay * inner))
        return float(ops.fsum(terms))


def _interference_compositions(t: int, eta: Any, interferers: Sequence[tuple[Any, int]], ops: _Arith) -> Any:
    """Sum over weak compositions l of t of prod_i Gamma(l_i + m_i)/(l_i! Gamma(m_i)) rho^l (1 + rho)^-(m + l)."""
    rhos = [theta / eta for theta, _ in interferers]
    base = ops.fsum([-m * ops.log1p(rho) for rho, (_, m) in zip(rhos, interferers, strict=True)])
    terms = []
    for vector in weak_compositions(t, len(interferers)):
        log_term = base
        for rho, (_, m), ell in zip(rhos, interferers, vector, strict=True):
            if ell == 0:
                continue
            log_term += ops.lgamma(ell + m) - ops.lgamma(m) - ops.lgamma(ell + 1)
            log_term += ell * (ops.log(rho) - ops.log1p(rho))
        terms.append(ops.exp(log_term))
    return ops.fsum(terms)


def _interference_series(degree: int, eta: Any, interferers: Sequence[tuple[Any, int]], ops: _Arith) -> list[Any]:
    """Same sums for t = 0..degree, via prod_i (1 + rho_i)^-m_i (1 - w_i x)^-m_i."""
    rhos = [theta / eta for theta, _ in interferers]
    base = ops.exp(ops.fsum([-m * ops.log1p(rho) for rho, (_, m) in zip(rhos, interferers, strict=True)]))
    ws = [(rho / (1 + rho), m) for rho, (_, m) in zip(rhos, interferers, strict=True)]
    sums = [ops.fsum([m * w**p for w, m in ws]) / p for p in range(1, degree + 1)]
    return [base * c for c in _exp_series(sums, degree, ops)]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# BATCH EVALUATION
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Unclamped values per point and the points the vectorised path could not trust."""

    values: FloatArray
    suspect: BoolArray
    empty: BoolArray


def outage_batch(
    omega: FloatArray,
    shapes: npt.NDArray[np.integer[Any]],
    combining: BoolArray,
    beta: float,
    gamma: float,
) -> BatchResult:
    """Series-form outage for many points at once.

    Rows are grid points, columns stations. Points without a combining
    station get the value 1 and are flagged empty. Points flagged suspect
    (colliding scales, large coefficients, out-of-range or non-finite
    values) must be re-evaluated through `conditional_outage`.
    """
    points, stations = omega.shape
    counts = combining.sum(axis=1)
    empty = counts == 0
    values = np.ones(points, dtype=np.float64)
    suspect = np.zeros(points, dtype=np.bool_)
    width = int(counts.max()) if points else 0
    if width == 0:
        return BatchResult(values, suspect, np.asarray(empty, dtype=np.bool_))

    z = 0.0 if math.isinf(gamma) else 1.0 / gamma
    chunk = max(1, _BATCH_BUDGET // (width * max(stations, 1)))
    active = np.flatnonzero(~empty)
    for start in range(0, active.size, chunk):
        rows = active[start : start + chunk]
        chunk_values, chunk_suspect = _batch_block(omega[rows], shapes[rows], combining[rows], beta, z, width)
        values[rows] = chunk_values
        suspect[rows] = chunk_suspect
    return BatchResult(values, suspect, np.asarray(empty, dtype=np.bool_))


def _batch_block(
    omega: FloatArray,
    shapes: npt.NDArray[np.integer[Any]],
    combining: BoolArray,
    beta: float,
    z: float,
    width: int,
) -> tuple[FloatArray, BoolArray]:
    m = shapes.astype(np.float64)

    # Poles: combining links first (stable), padded with r = 0.
    order = np.argsort(~combining, axis=1, kind="stable")[:, :width]
    valid = np.take_along_axis(combining, order, axis=1)
    eta = np.where(valid, np.take_along_axis(omega, order, axis=1) / (beta * np.take_along_axis(m, order, axis=1)), 1.0)
    r = np.where(valid, np.take_along_axis(shapes, order, axis=1), 0).astype(np.int64)
    r_max = int(r.max())
    degree = r_max - 1

    ordered = np.sort(np.where(valid, eta, np.inf), axis=1)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # Padded columns are inf; inf - inf is masked out below.
        gaps = ordered[:, 1:] - ordered[:, :-1]
        collide = np.any((gaps <= MERGE_TOL * ordered[:, :-1]) & np.isfinite(ordered[:, 1:]), axis=1)

        # Xi: axis 1 is the pole k, axis 2 the other pole q.
        ratio = eta[:, np.newaxis, :] / eta[:, :, np.newaxis]
        others = valid[:, np.newaxis, :] & valid[:, :, np.newaxis] & ~np.eye(width, dtype=bool)[np.newaxis]
        a = np.where(others, 1.0 - ratio, 1.0)
        c = np.where(others, ratio / (ratio - 1.0), 0.0)
        r_q = np.where(others, r[:, np.newaxis, :], 0).astype(np.float64)
        log_pref = -np.sum(r_q * np.log(np.abs(a)), axis=2)
        flips = np.sum(np.where(a < 0, r_q, 0.0), axis=2).astype(np.int64) % 2
        scale = np.where(flips == 1, -1.0, 1.0) * np.exp(log_pref)
        xi_series = np.stack(
            _exp_series_array([np.sum(r_q * c**p, axis=2) / p for p in range(1, degree + 1)], degree, eta.shape),
            axis=2,
        )

        # Interference: rho_{k,i} = (Omega_i / m_i) / eta_k over non-combining stations.
        m_int = np.where(combining, 0.0, m)
        theta = omega / m
        rho = theta[:, np.newaxis, :] / eta[:, :, np.newaxis]
        log_c0 = -np.sum(m_int[:, np.newaxis, :] * np.log1p(rho), axis=2)
        w = rho / (1.0 + rho)
        int_series = _exp_series_array(
            [np.sum(m_int[:, np.newaxis, :] * w**p, axis=2) / p for p in range(1, degree + 1)],
            degree,
            eta.shape,
        )

        x = z / eta
        decay = np.exp(-x + log_c0)
        total = np.zeros(eta.shape[0], dtype=np.float64)
        magnitude = np.zeros(eta.shape[0], dtype=np.float64)
        cumulative = np.zeros_like(eta)
        for n in range(1, r_max + 1):
            mu = n - 1
            cumulative = cumulative + sum(
                x ** (mu - t) / math.factorial(mu - t) * int_series[t] for t in range(mu + 1)
            )
            has_order = valid & (r >= n)
            index = np.clip(r - n, 0, degree)
            coefficient = np.take_along_axis(xi_series, index[..., np.newaxis], axis=2)[..., 0]
            weight = np.where(has_order, scale * coefficient, 0.0)
            total += np.sum(weight * (1.0 - decay * cumulative), axis=1, where=has_order)
            magnitude += np.sum(np.abs(weight), axis=1, where=has_order)

    suspect = (
        collide
        | ~np.isfinite(total)
        | (magnitude > CONDITION_LIMIT)
        | (total < -RANGE_TOL)
        | (total > 1.0 + RANGE_TOL)
    )
    return total, np.asarray(suspect, dtype=np.bool_)


def _exp_series_array(power_sums: list[FloatArray], degree: int, shape: tuple[int, ...]) -> list[FloatArray]:
    coeffs: list[FloatArray] = [np.ones(shape, dtype=np.float64)]
    for t in range(1, degree + 1):
        coeffs.append(sum(p * power_sums[p - 1] * coeffs[t - p] for p in range(1, t + 1)) / t)
    return coeffs
