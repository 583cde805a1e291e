"""Versioned JSON checkpoints.

Arrays are stored as base64 of their little-endian float64 bytes with the shape alongside,
so a load gives back bit-identical values. Keys are sorted, making the file itself
byte-identical for identical state.
"""
import base64
import json
import logging

import numpy as np

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _encode(value):
    if isinstance(value, np.ndarray):
        data = np.ascontiguousarray(value, dtype="<f8")
        return {"__array__": base64.b64encode(data.tobytes()).decode("ascii"), "shape": list(data.shape)}
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__array__" in value:
            try:
                raw = base64.b64decode(value["__array__"], validate=True)
                return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(value["shape"])
            except (ValueError, TypeError) as e:
                raise CheckpointError(f"corrupt array payload: {e}") from None
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def dumps_checkpoint(agent_state, rng_states=None, metadata=None):
    document = {
        "version": CHECKPOINT_VERSION,
        "agent": _encode(agent_state),
        "rng": _encode(rng_states or {}),
        "metadata": _encode(metadata or {}),
    }
    return json.dumps(document, sort_keys=True, indent=1, allow_nan=True) + "\n"


def save_checkpoint(path, agent_state, rng_states=None, metadata=None):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_checkpoint(agent_state, rng_states, metadata))
    logger.info("checkpoint written to %s", path)


def loads_checkpoint(text):
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e}") from None
    if not isinstance(document, dict) or document.get("version") != CHECKPOINT_VERSION:
        found = document.get("version") if isinstance(document, dict) else None
        raise CheckpointError(f"unsupported checkpoint version {found!r}, expected {CHECKPOINT_VERSION}")
    return _decode(document["agent"]), _decode(document.get("rng", {})), _decode(document.get("metadata", {}))


def load_checkpoint(path):
    """Returns (agent state, rng states, metadata)."""
    with open(path, "r", encoding="utf-8") as f:
        return loads_checkpoint(f.read())
