"""JSON checkpoints for the autoencoder and the diffusion model.

Arrays are stored row-major as Python floats, whose ``repr`` round-trips
exactly, so save -> load is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .autoencoder import AutoencoderConfig, AutoencoderParams
from .diffusion import DenoiserParams, DiffusionConfig
from .errors import SchemaError, UntrainedModelError

SCHEMA_VERSION = 1


def _arrays_to_doc(arrays: dict[str, np.ndarray]) -> dict[str, Any]:
    return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for k, v in arrays.items()}


def _arrays_from_doc(doc: dict[str, Any]) -> dict[str, np.ndarray]:
    return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc.items()}


def checkpoint_dict(params: AutoencoderParams | DenoiserParams, extra: dict[str, Any] | None = None) -> dict[str, Any]:
    meta = params.meta()
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if isinstance(params, AutoencoderParams):
        doc["kind"] = "autoencoder"
    else:
        doc["kind"] = "diffusion"
        doc["gamma1"] = meta.pop("gamma1")
        doc["gamma2"] = meta.pop("gamma2")
        doc["schedule"] = meta.pop("schedule")
    doc["config"] = meta.pop("config")
    doc["meta"] = meta
    if extra:
        doc.update(extra)
    doc["arrays"] = _arrays_to_doc(params.arrays)
    return doc


def save_checkpoint(params: AutoencoderParams | DenoiserParams, path: str | Path,
                    extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(params, extra), separators=(",", ":")) + "\n")
    return path


def params_from_dict(doc: dict[str, Any]) -> AutoencoderParams | DenoiserParams:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported checkpoint schema_version {doc.get('schema_version')!r}")
    arrays = _arrays_from_doc(doc["arrays"])
    meta = doc.get("meta", {})
    if doc.get("kind") == "autoencoder":
        return AutoencoderParams(AutoencoderConfig(**doc["config"]), int(meta["feature_dim"]), arrays,
                                 list(meta.get("loss_trace", [])))
    if doc.get("kind") == "diffusion":
        return DenoiserParams(DiffusionConfig(**doc["config"]), int(meta["latent_dim"]),
                              int(meta["feature_dim"]), arrays, bool(meta.get("trained", False)),
                              list(meta.get("loss_trace", [])), float(meta.get("latent_scale", 1.0)))
    raise SchemaError(f"unknown checkpoint kind {doc.get('kind')!r}")


def load_checkpoint(path: str | Path, kind: str | None = None):
    path = Path(path)
    if not path.exists():
        if kind == "diffusion":
            raise UntrainedModelError(f"no diffusion checkpoint at {path}")
        raise UntrainedModelError(f"no checkpoint at {path}")
    doc = json.loads(path.read_text())
    if kind is not None and doc.get("kind") != kind:
        raise SchemaError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    return params_from_dict(doc)
