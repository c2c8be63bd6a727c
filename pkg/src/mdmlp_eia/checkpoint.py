"""Binary checkpoint container and its human-readable sidecar.

Layout::

    b"MDMLPCKP"            8-byte magic
    uint32 LE              format version
    uint64 LE              manifest length in bytes
    manifest               UTF-8 JSON (sorted keys): config, parameter names, shapes, offsets
    payload                little-endian float64 arrays, row-major, in manifest order
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import ModelConfig, param_shapes

MAGIC = b"MDMLPCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """The file is not a readable checkpoint or does not match its config."""


def save_checkpoint(path, params: Mapping[str, np.ndarray], cfg: ModelConfig, extra: dict | None = None) -> Path:
    path = Path(path)
    names = sorted(params)
    entries, offset = [], 0
    for name in names:
        arr = np.asarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "config": dataclasses.asdict(cfg),
        "extra": extra or {},
        "params": entries,
        "payload_bytes": offset,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    write_sidecar(path.with_suffix(path.suffix + ".txt"), params, cfg)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        manifest = json.loads(raw[_HEADER.size : _HEADER.size + n])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    payload = raw[_HEADER.size + n :]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    cfg = ModelConfig(**manifest["config"])
    expected = param_shapes(cfg)
    params = {}
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        if expected.get(e["name"]) != shape:
            raise CheckpointError(f"{path}: parameter {e['name']} has shape {shape}, config expects {expected.get(e['name'])}")
        count = int(np.prod(shape, dtype=np.int64))
        params[e["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"]).astype(np.float64).reshape(shape)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    return params, cfg, manifest["extra"]


def write_sidecar(path, params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    groups: dict[str, int] = {}
    for name, arr in params.items():
        group = name.split(".")[0]
        groups[group] = groups.get(group, 0) + int(np.asarray(arr).size)
    n1, n2, n3 = cfg.widths()
    lines = [
        f"capacity = {cfg.capacity} (cof={cfg.cof}, n1={n1}, n2={n2}, n3={n3})",
        f"total_parameters = {sum(groups.values())}",
    ]
    lines += [f"group.{g} = {groups[g]}" for g in sorted(groups)]
    lines += [f"param.{k} = {'x'.join(map(str, np.shape(params[k])))}" for k in sorted(params)]
    Path(path).write_text("\n".join(lines) + "\n")
