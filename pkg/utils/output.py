"""
Result writers: a CSV table with one header line plus a JSON sidecar holding
everything needed to replay the run.
"""
import csv
import json
import logging
import os
import subprocess
from datetime import datetime, timezone

import numpy as np

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"


def version_string():
    """`git describe` of the working tree, or the package version outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe unavailable: {e}")
    return PACKAGE_VERSION


def _plain(value):
    """Convert numpy / complex values into JSON-friendly ones."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if hasattr(value, "model_dump"):
        return _plain(value.model_dump(mode="json"))
    return value


def write_csv(path, header, rows):
    """Write rows under a one-line header; floats use repr so reruns are byte-stable."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def sidecar_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def write_sidecar(csv_path, metadata):
    """Write the JSON sidecar next to ``csv_path``."""
    payload = {
        "version": version_string(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    payload.update(_plain(metadata))
    path = sidecar_path(csv_path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return path
