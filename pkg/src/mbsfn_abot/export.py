"""Plot-ready CSV files.

Header first, fixed column order, floats written with repr so reruns are
byte-identical and locale plays no part.
"""

from __future__ import annotations

import csv
import logging
import re
from collections.abc import Iterable, Sequence
from pathlib import Path

from .channel import ShadowingField
from .metrics import AbotCurve, OutageMap
from .oracle import ValidationRecord

logger = logging.getLogger(__name__)

OUTAGE_MAP_HEADER = ("x", "y", "epsilon", "area_index", "below_threshold")
CURVE_HEADER = ("axis_value", "realization", "abot")
SUMMARY_HEADER = ("axis_value", "mean_abot")
VALIDATION_HEADER = (
    "index",
    "combining",
    "interfering",
    "beta",
    "gamma",
    "closed_form",
    "mc_estimate",
    "stderr",
    "tolerance",
    "passed",
)
SHADOWING_HEADER = ("station", "point", "xi_db")


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.debug("wrote %s", path)
    return path


def _num(value: float) -> str:
    return repr(float(value))


def series_slug(label: str) -> str:
    """File-name-safe form of a series label ('' stays '')."""
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def write_outage_map(outages: OutageMap, eps_hat: float, path: Path) -> Path:
    below = outages.below_threshold(eps_hat)
    rows = (
        (_num(x), _num(y), _num(e), int(a), int(b))
        for (x, y), e, a, b in zip(outages.grid.points, outages.epsilon, outages.serving_area, below, strict=True)
    )
    return _write(path, OUTAGE_MAP_HEADER, rows)


def write_curve(curve: AbotCurve, directory: Path, stem: str = "abot") -> tuple[Path, Path]:
    """Per-realization and mean CSVs of one curve; series curves get the label in the file name."""
    slug = series_slug(curve.label)
    base = f"{stem}-{slug}" if slug else stem
    detail = _write(
        directory / f"{base}.csv",
        CURVE_HEADER,
        ((_num(v), t, _num(a)) for v, samples in zip(curve.values, curve.samples, strict=True) for t, a in samples),
    )
    summary = _write(
        directory / f"{base}-summary.csv",
        SUMMARY_HEADER,
        ((_num(v), _num(m)) for v, m in zip(curve.values, curve.means, strict=True)),
    )
    return detail, summary


def _links(links: Sequence[tuple[float, int]]) -> str:
    return ";".join(f"{omega!r}:{m}" for omega, m in links)


def write_validation(records: Sequence[ValidationRecord], path: Path) -> Path:
    rows = (
        (
            r.index,
            _links(r.problem.combining),
            _links(r.problem.interfering),
            _num(r.problem.beta),
            _num(r.problem.gamma),
            _num(r.closed_form),
            _num(r.mc.estimate),
            _num(r.mc.stderr),
            _num(r.tolerance),
            int(r.passed),
        )
        for r in records
    )
    return _write(path, VALIDATION_HEADER, rows)


def write_shadowing(field: ShadowingField, path: Path) -> Path:
    stations, points = field.values.shape
    rows = ((s, p, _num(field.values[s, p])) for s in range(stations) for p in range(points))
    return _write(path, SHADOWING_HEADER, rows)
