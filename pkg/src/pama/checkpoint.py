"""Checkpoint container: a zip of named float arrays (numpy .npz) plus a
JSON metadata record.  Layout is documented in docs/checkpoint-format.md
so other implementations can reload it."""

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(RuntimeError):
    pass


class CheckpointIncompatible(CheckpointError):
    """Profile / stage-count / version mismatch against the running model."""


def save_container(path, arrays: dict, meta: dict) -> None:
    """Atomically write named arrays + metadata; no partial files."""
    path = Path(path)
    meta = dict(meta)
    meta.setdefault("format_version", FORMAT_VERSION)
    buf = io.BytesIO()
    np.savez(buf, **{META_KEY: np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8)}, **arrays)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path):
    """Read (arrays, meta); truncated or malformed files raise
    CheckpointError without yielding partial state."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            if META_KEY not in z:
                raise CheckpointError(f"{path}: missing metadata record")
            meta = json.loads(bytes(z[META_KEY].tobytes()).decode())
            arrays = {k: z[k] for k in z.files if k != META_KEY}
    except (OSError, ValueError, KeyError, json.JSONDecodeError,
            zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointIncompatible(
            f"{path}: format version {version} but this build reads "
            f"version {FORMAT_VERSION}")
    return arrays, meta
