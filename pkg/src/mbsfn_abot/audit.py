"""JSON run records.

One record per CLI command, written outside the output directory so that
outputs stay reproducible byte for byte.
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

UTC = timezone.utc

logger = logging.getLogger(__name__)


def write_run_record(
    audit_dir: Path,
    command: str,
    status: str,
    config: dict[str, Any],
    details: dict[str, Any],
    metrics: dict[str, Any] | None = None,
) -> Path | None:
    """Write a structured run record and return its path, or None if the directory is unwritable."""
    now = datetime.now(UTC)
    stamp = now.strftime("%Y%m%dT%H%M%S%fZ")
    record = {
        "timestamp": now.isoformat(),
        "command": command,
        "status": status,
        "config": config,
        "details": details,
        "metrics": metrics or {},
    }
    try:
        audit_dir.mkdir(parents=True, exist_ok=True)
        path = audit_dir / f"{command}-{stamp}.json"
        suffix = 1
        while path.exists():
            path = audit_dir / f"{command}-{stamp}-{suffix}.json"
            suffix += 1
        with path.open("w", encoding="utf-8") as f:
            json.dump(record, f, indent=2, sort_keys=True, default=str)
    except OSError as e:
        logger.warning("could not write run record to %s: %s", audit_dir, e)
        return None

    logger.info("Run record written to %s", path)
    return path
