"""
File I/O for everything a run leaves behind.

Every write goes to a temporary file in the target directory first and is then
moved into place with ``os.replace``, so readers never see half-written files.
"""

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import joblib
import numpy as np
import pandas as pd

from core.exceptions import ArtifactError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CREATED_WITH = "stealthlab"


@contextmanager
def atomic_path(path):
    """Yield a temporary path that replaces ``path`` on clean exit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path, data) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Path(path)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"cannot read JSON file {path}: {e}") from e


def write_csv(path, frame: pd.DataFrame, float_format="%.10g") -> Path:
    with atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False, float_format=float_format, lineterminator="\n")
    return Path(path)


def read_csv(path, required_columns=()) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError(f"cannot read CSV file {path}: {e}") from e
    missing = [c for c in required_columns if c not in frame.columns]
    if missing:
        raise ArtifactError(f"{path} lacks columns: {', '.join(missing)}")
    return frame


def write_arrays(path, **arrays) -> Path:
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            np.savez_compressed(fh, **arrays)
    return Path(path)


def read_arrays(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as data:
            return {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise ArtifactError(f"cannot read array file {path}: {e}") from e


# ──────────────────────────────────────────────
# Model artifacts
# ──────────────────────────────────────────────


def save_model(path, kind: str, payload, seed) -> Path:
    envelope = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "seed": seed,
        "created_with": CREATED_WITH,
        "payload": payload,
    }
    with atomic_path(path) as tmp:
        joblib.dump(envelope, tmp, compress=3)
    logger.info(f"Wrote {kind} artifact to {path}")
    return Path(path)


def load_model(path, expected_kind=None) -> dict:
    try:
        envelope = joblib.load(path)
    except Exception as e:
        raise ArtifactError(f"cannot load model artifact {path}: {e}") from e

    if not isinstance(envelope, dict) or "kind" not in envelope or "payload" not in envelope:
        raise ArtifactError(f"{path} is not a lab model artifact")
    if envelope.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(
            f"{path} has format version {envelope.get('format_version')}, "
            f"expected {FORMAT_VERSION}"
        )
    if expected_kind is not None and envelope["kind"] != expected_kind:
        raise ArtifactError(f"{path} holds a {envelope['kind']!r} artifact, expected {expected_kind!r}")
    return envelope
