"""Checkpoint file: magic, versioned JSON manifest, little-endian fp64 payload.

Layout::

    b"TSFUSECK" | u32 format version | u64 manifest bytes | manifest (UTF-8 JSON) | payload

The manifest echoes the experiment config, the prompt text, the normalization
statistics and, per parameter, name/shape/frozen/offset/sha256. The payload is
every parameter's data in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .model import PromptFusionModel
from .series import NormStats

MAGIC = b"TSFUSECK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQ")


class CheckpointError(ValueError):
    pass


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def save_checkpoint(model: PromptFusionModel, path: str | Path) -> None:
    entries, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "frozen": bool(p.frozen),
                        "offset": offset, "nbytes": len(raw), "sha256": _sha(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    stats = getattr(model, "stats", None)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "prompt_text": model.prompt_text,
        "context": getattr(model, "context", None),
        "norm": None if stats is None else {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        "params": entries,
        "payload_sha256": _sha(payload),
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_checkpoint(path: str | Path) -> tuple[dict, bytes]:
    """Validated (manifest, payload); raises CheckpointError on any corruption."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    version, mlen = _HEADER.unpack_from(data, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} "
                              f"(expected {FORMAT_VERSION})")
    pos += _HEADER.size
    try:
        manifest = json.loads(data[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    payload = data[pos + mlen:]
    if _sha(payload) != manifest.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    return manifest, payload


def _tensor(entry: dict, payload: bytes) -> np.ndarray:
    raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
    if _sha(raw) != entry["sha256"]:
        raise CheckpointError(f"checksum mismatch for parameter {entry['name']}")
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def load_checkpoint(path: str | Path, model: PromptFusionModel | None = None) -> PromptFusionModel:
    """Restore a model; with ``model`` given, load into it (shapes must agree)."""
    manifest, payload = read_checkpoint(path)
    if model is None:
        cfg = ExperimentConfig.from_dict(manifest["config"])
        model = PromptFusionModel(cfg, manifest["prompt_text"])
    own = dict(model.named_parameters())
    stored = {e["name"]: e for e in manifest["params"]}
    missing = sorted(set(own) - set(stored))
    extra = sorted(set(stored) - set(own))
    if missing or extra:
        raise CheckpointError(f"parameter set differs: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in own.items():
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"shape mismatch for parameter {name}: checkpoint "
                                  f"{tuple(e['shape'])} vs model {p.shape}")
        if bool(e["frozen"]) != p.frozen:
            raise CheckpointError(f"frozen flag mismatch for parameter {name}")
    for name, p in own.items():
        p.data = _tensor(stored[name], payload)
        p.grad = None
    if manifest.get("norm") is not None:
        model.stats = NormStats(np.array(manifest["norm"]["mean"]), np.array(manifest["norm"]["std"]))
    if manifest.get("context") is not None:
        model.context = int(manifest["context"])
    model.reset_cache()
    return model


def import_backbone(model: PromptFusionModel, path: str | Path) -> None:
    """Copy ``backbone.*`` weights from a checkpoint into a model (shapes must match)."""
    if model.backbone is None:
        raise CheckpointError("model has no backbone to import into")
    manifest, payload = read_checkpoint(path)
    stored = {e["name"]: e for e in manifest["params"]}
    for name, p in model.named_parameters():
        if not name.startswith("backbone."):
            continue
        if name not in stored:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"shape mismatch for parameter {name}: checkpoint "
                                  f"{tuple(e['shape'])} vs model {p.shape}")
        p.data = _tensor(e, payload)
    model.reset_cache()
