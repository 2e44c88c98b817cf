"""Single-file weight container.

Layout: a UTF-8 JSON manifest, one NUL byte, then the raw little-endian
float32 blobs back to back. The manifest maps each tensor name to
``{"dtype", "shape", "offset", "length"}`` (offsets relative to the first
blob byte) and carries the model config under the ``__metadata__`` key.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import (
    MissingWeightError,
    TruncatedWeightError,
    UnknownWeightError,
    WeightFileError,
    WeightShapeError,
)
from .model import Model, ModelConfig, assemble_model, model_param_shapes

METADATA_KEY = "__metadata__"
FORMAT_NAME = "inceptionnext-weights"
FORMAT_VERSION = 1


def save_weights(model: Model, path) -> None:
    manifest = {METADATA_KEY: {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                               "config": model.cfg.to_dict()}}
    blobs = []
    offset = 0
    for name, array in model.state_dict().items():
        data = np.ascontiguousarray(array, dtype="<f4").tobytes()
        manifest[name] = {"dtype": "float32", "shape": list(array.shape),
                          "offset": offset, "length": len(data)}
        blobs.append(data)
        offset += len(data)
    header = json.dumps(manifest).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(b"\0")
        for data in blobs:
            f.write(data)
    os.replace(tmp, path)


def read_manifest(path) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\0")
    if sep < 0:
        raise WeightFileError(f"{path}: no manifest separator found")
    try:
        manifest = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: unreadable manifest ({exc})") from exc
    return manifest, raw[sep + 1:]


def load_weights(path) -> Model:
    manifest, payload = read_manifest(path)
    meta = manifest.pop(METADATA_KEY, None)
    if not meta or meta.get("format") != FORMAT_NAME:
        raise WeightFileError(f"{path}: not an {FORMAT_NAME} file")
    cfg = ModelConfig.from_dict(meta["config"])
    expected = model_param_shapes(cfg)

    for name in manifest:
        if name not in expected:
            raise UnknownWeightError(name)
    arrays = {}
    for name, shape in expected.items():
        entry = manifest.get(name)
        if entry is None:
            raise MissingWeightError(name)
        if entry.get("dtype") != "float32":
            raise WeightFileError(f"{name}: unsupported dtype {entry.get('dtype')!r}")
        if tuple(entry["shape"]) != shape:
            raise WeightShapeError(name, shape, entry["shape"])
        start, length = int(entry["offset"]), int(entry["length"])
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise WeightFileError(f"{name}: byte length {length} does not match shape {shape}")
        if start < 0 or start + length > len(payload):
            raise TruncatedWeightError(
                f"{name}: blob [{start}, {start + length}) runs past end of file ({len(payload)} bytes)"
            )
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=length // 4,
                                     offset=start).astype(np.float32).reshape(shape)
    return assemble_model(cfg, arrays)
