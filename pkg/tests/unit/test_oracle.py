import math

import numpy as np
import pytest
from scipy import stats

from mbsfn_abot import oracle
from mbsfn_abot.errors import GridResolutionError, NumericalInstabilityError
from mbsfn_abot.oracle import (
    McEstimate,
    _received_power,
    convolution_cdf,
    instance_seed,
    mc_outage,
    random_instances,
    validate_kernel,
)
from mbsfn_abot.outage import OutageProblem, conditional_outage

RAYLEIGH = OutageProblem.build([(1.0, 1)], [], 1.0, 10.0)


# ============================================================================
# MONTE CARLO
# ============================================================================


def test_mc_single_rayleigh_source():
    estimate = mc_outage(RAYLEIGH, 1_000_000, 17)
    assert abs(estimate.estimate - 0.0951626) <= 4.0 * estimate.stderr
    assert estimate.trials == 1_000_000
    assert estimate.seed == 17


def test_mc_tiny_threshold_never_outages():
    problem = OutageProblem.build([(1.0, 1)], [(0.5, 2)], 1e-12, 10.0)
    assert mc_outage(problem, 100_000, 3).estimate == 0.0


def test_mc_deterministic_replay():
    first = mc_outage(RAYLEIGH, 50_000, 99)
    second = mc_outage(RAYLEIGH, 50_000, 99)
    assert first == second


def test_mc_independent_of_worker_count():
    """Blocks carry their own child seeds, so threads do not change the count."""
    problem = OutageProblem.build([(1.0, 2), (0.3, 1)], [(0.5, 1)], 1.0, 10.0)
    serial = mc_outage(problem, 200_000, 5, workers=1)
    threaded = mc_outage(problem, 200_000, 5, workers=4)
    assert serial.estimate == threaded.estimate


def test_mc_stderr_shrinks_with_trials():
    errors = [mc_outage(RAYLEIGH, n, 8).stderr for n in (1_000, 10_000, 100_000)]
    assert errors[0] > errors[1] > errors[2]
    for coarse, fine in zip(errors, errors[1:], strict=False):
        assert 2.0 < coarse / fine < 5.0


def test_mc_estimate_stderr_formula():
    estimate = McEstimate.from_count(250, 1000, 0)
    assert estimate.estimate == 0.25
    assert estimate.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 1000))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_mc_fading_gains_have_unit_mean(m):
    draws = _received_power([(1.0, m)], 100_000, np.random.default_rng(m))
    assert abs(draws.mean() - 1.0) <= 3.0 * math.sqrt(1.0 / m) / math.sqrt(draws.size)


def test_mc_rejects_zero_trials():
    with pytest.raises(ValueError):
        mc_outage(RAYLEIGH, 0, 1)


# ============================================================================
# NUMERICAL CONVOLUTION
# ============================================================================


def test_convolution_single_exponential():
    assert convolution_cdf([(2.0, 1)], 1.5, 0.8) == pytest.approx(1.0 - math.exp(-1.5 * 0.8 / 2.0), abs=1e-12)


def test_convolution_at_zero():
    assert convolution_cdf([(1.0, 1), (2.0, 2)], 1.0, 0.0) == 0.0


def test_convolution_equal_scales_is_gamma_two():
    value = convolution_cdf([(1.0, 1), (1.0, 1)], 1.0, 1.5)
    assert value == pytest.approx(stats.gamma.cdf(1.5, a=2), abs=1e-6)


def test_convolution_three_terms_against_gamma_three():
    value = convolution_cdf([(1.0, 1), (1.0, 1), (1.0, 1)], 1.0, 2.0)
    assert value == pytest.approx(stats.gamma.cdf(2.0, a=3), abs=1e-6)


def test_convolution_budget_exhausted():
    with pytest.raises(GridResolutionError):
        convolution_cdf([(1.0, 1), (0.5, 2)], 1.0, 2.0, tol=1e-30, max_halvings=3)


def test_closed_form_agrees_with_convolution():
    """Interference-free closed form vs numerical convolution, merged scales included."""
    rng = np.random.default_rng(21)
    instances = [
        [(1.0, 1), (1.0, 1)],
        [(1.0, 1), (2.0, 2)],
        [(0.6, 3), (0.2, 1), (0.6, 3)],
    ]
    while len(instances) < 20:
        count = int(rng.integers(1, 5))
        shapes = rng.integers(1, 4, size=count)
        etas = np.sort(10.0 ** rng.uniform(-0.5, 0.5, size=count))
        if count > 1 and np.min(etas[1:] / etas[:-1]) < 1.2:
            continue
        instances.append([(float(e * m), int(m)) for e, m in zip(etas, shapes, strict=True)])

    for combining in instances:
        z = float(rng.uniform(0.5, 3.0))
        closed = conditional_outage(OutageProblem.build(combining, [], 1.0, 1.0 / z))
        assert convolution_cdf(combining, 1.0, z) == pytest.approx(closed, abs=1e-6)


# ============================================================================
# RANDOMIZED KERNEL VALIDATION
# ============================================================================


def test_random_instances_respect_ranges():
    problems = random_instances(200, 4)
    for p in problems:
        assert 1 <= len(p.combining) <= 3
        assert len(p.combining) + len(p.interfering) <= 8
        for omega, m in (*p.combining, *p.interfering):
            assert 10**-1.5 <= omega <= 10**1.5
            assert 1 <= m <= 3
        assert 0.1 <= p.beta <= 10.0
        assert 1.0 <= p.gamma <= 100.0


def test_random_instances_reproducible():
    assert random_instances(10, 4) == random_instances(10, 4)
    assert random_instances(10, 4) != random_instances(10, 5)


def test_instance_seed_distinct_per_index():
    seeds = {instance_seed(7, i) for i in range(50)}
    assert len(seeds) == 50
    assert instance_seed(7, 3) == instance_seed(7, 3)


def test_validate_kernel_fifty_instances_pass():
    records = validate_kernel(random_instances(50, 7), 100_000, 7)
    assert len(records) == 50
    failing = [r.index for r in records if not r.passed]
    assert failing == []
    assert all(r.tolerance >= 0.01 for r in records)


def test_validate_kernel_records_unstable_closed_form(monkeypatch):
    def unstable(problem, *, extended=False, method="compositions"):
        raise NumericalInstabilityError(27.7)

    monkeypatch.setattr(oracle, "conditional_outage", unstable)
    records = validate_kernel([RAYLEIGH], 10_000, 3)
    assert math.isnan(records[0].closed_form)
    assert not records[0].passed


def test_validate_kernel_rounding_equal_scales():
    problem = OutageProblem.build([(0.6, 3), (0.2, 1), (0.6, 3)], [], 1.0, 1.0 / 1.7)
    record = validate_kernel([problem], 100_000, 11)[0]
    assert record.closed_form == pytest.approx(stats.gamma.cdf(1.7, a=7, scale=0.2), abs=1e-12)
    assert record.passed
