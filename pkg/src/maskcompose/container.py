"""Versioned binary container for worlds, models and codebooks.

Layout (all integers little-endian):

    magic   4 bytes  "DCW1"
    version u32
    count   u32      number of sections
    then per section:
        name_len u32, name (utf-8)
        meta_len u32, meta (canonical JSON: sorted keys, no spaces)
        data_len u64, data (raw bytes)

Numeric arrays travel as raw little-endian buffers with dtype and shape in
the section's meta, so identical inputs always produce identical bytes.
dump_text renders any container as a human-readable listing for debugging.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .codec import Codebook
from .countmodel import CountModel
from .errors import ValidationError
from .worlds import FactorizedWorld, SceneWorld, WorldJoint

MAGIC = b"DCW1"
VERSION = 1

_DTYPES = {"int16": np.int16, "int64": np.int64, "float64": np.float64}


@dataclass
class Section:
    name: str
    meta: dict
    data: bytes


def _canonical_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path: str, sections: list[Section]):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(sections)))
    for s in sections:
        name = s.name.encode("utf-8")
        meta = _canonical_json(s.meta)
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<I", len(meta)))
        buf.write(meta)
        buf.write(struct.pack("<Q", len(s.data)))
        buf.write(s.data)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_container(path: str) -> list[Section]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValidationError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported container version {version}")
    pos = 12
    out = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (meta_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        meta = json.loads(raw[pos : pos + meta_len])
        pos += meta_len
        (data_len,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        data = raw[pos : pos + data_len]
        pos += data_len
        if len(data) != data_len:
            raise ValidationError(f"section {name!r} is truncated")
        out.append(Section(name, meta, data))
    if pos != len(raw):
        raise ValidationError(f"{len(raw) - pos} trailing bytes after last section")
    return out


def array_section(name: str, arr: np.ndarray, extra: dict | None = None) -> Section:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.name not in _DTYPES:
        raise ValidationError(f"unsupported array dtype {arr.dtype}")
    meta = {"dtype": arr.dtype.name, "shape": list(arr.shape)}
    if extra:
        meta.update(extra)
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return Section(name, meta, little.tobytes())


def section_array(s: Section) -> np.ndarray:
    dtype = _DTYPES[s.meta["dtype"]]
    arr = np.frombuffer(s.data, dtype=np.dtype(dtype).newbyteorder("<"))
    return arr.reshape(s.meta["shape"]).astype(dtype)


def dump_text(path: str) -> str:
    """Human-readable listing of a container's sections."""
    lines = [f"DCW1 v{VERSION}: {path}"]
    for s in read_container(path):
        meta = json.dumps(s.meta, sort_keys=True)
        lines.append(f"  [{s.name}] {len(s.data)} bytes  meta={meta}")
        if "dtype" in s.meta:
            arr = section_array(s)
            flat = np.asarray(arr).ravel()
            head = ", ".join(f"{v:.6g}" for v in flat[:8])
            more = " ..." if flat.size > 8 else ""
            lines.append(f"    values: {head}{more}")
    return "\n".join(lines)


# world <-> container ---------------------------------------------------------

def save_world(path: str, world: WorldJoint, extra: list[Section] | None = None):
    sections = [Section("world", world.params(), b"")]
    if isinstance(world, FactorizedWorld):
        sections.append(array_section("prior_tables", world.prior_tables))
        for name in sorted(world.table_conditions):
            tables = world.table_conditions[name]
            cells = sorted(tables)
            stacked = np.stack([tables[c] for c in cells])
            sections.append(
                array_section(
                    f"condition/{name}", stacked, {"cells": [int(c) for c in cells]}
                )
            )
    write_container(path, sections + list(extra or []))


def load_world(path: str) -> WorldJoint:
    sections = {s.name: s for s in read_container(path)}
    if "world" not in sections:
        raise ValidationError("container has no world section")
    params = dict(sections["world"].meta)
    kind = params.pop("kind", None)
    if kind == "scene":
        return SceneWorld(**params)
    if kind == "factorized":
        prior = section_array(sections["prior_tables"])
        world = FactorizedWorld(
            params["grid_w"], params["grid_h"], params["vocab_size"], prior
        )
        for name, s in sections.items():
            if name.startswith("condition/"):
                stacked = section_array(s)
                world.add_condition(
                    name.split("/", 1)[1],
                    {int(c): stacked[i] for i, c in enumerate(s.meta["cells"])},
                )
        return world
    raise ValidationError(f"unknown world kind {kind!r}")


# count model <-> container ---------------------------------------------------

def save_count_model(
    path: str, model: CountModel, extra: list[Section] | None = None
):
    keys = sorted(model.counts, key=repr)
    stacked = (
        np.stack([model.counts[k] for k in keys])
        if keys
        else np.zeros((0, model.vocab_size), dtype=np.int64)
    )
    meta = {
        "grid_w": model.grid_w,
        "grid_h": model.grid_h,
        "vocab_size": model.vocab_size,
        "alpha": model.alpha,
        "dropout_prob": model.dropout_prob,
        "n_samples": model.n_samples,
        "rng_seed": model.rng_seed,
    }
    sections = [
        Section("count_model", meta, b""),
        Section("bucket_keys", {"count": len(keys)}, _encode_keys(keys)),
        array_section("bucket_counts", stacked),
    ]
    write_container(path, sections + list(extra or []))


def _encode_keys(keys: list[tuple]) -> bytes:
    # (pos, signature tuple, condition key tuple) with mixed int/str leaves
    return _canonical_json([[k[0], list(k[1]), list(k[2])] for k in keys])


def _deep_tuple(value):
    if isinstance(value, list):
        return tuple(_deep_tuple(v) for v in value)
    return value


def _decode_keys(data: bytes) -> list[tuple]:
    out = []
    for pos, sig, ckey in json.loads(data):
        out.append((int(pos), tuple(int(v) for v in sig), _deep_tuple(ckey)))
    return out


def load_count_model(path: str) -> CountModel:
    sections = {s.name: s for s in read_container(path)}
    if "count_model" not in sections:
        raise ValidationError("container has no count_model section")
    meta = sections["count_model"].meta
    model = CountModel(
        grid_w=meta["grid_w"],
        grid_h=meta["grid_h"],
        vocab_size=meta["vocab_size"],
        alpha=meta["alpha"],
        dropout_prob=meta["dropout_prob"],
        n_samples=meta["n_samples"],
        rng_seed=meta["rng_seed"],
    )
    keys = _decode_keys(sections["bucket_keys"].data)
    counts = section_array(sections["bucket_counts"])
    for i, key in enumerate(keys):
        model.counts[key] = counts[i].copy()
    return model


# codebook <-> container ------------------------------------------------------

def save_codebook(path: str, cb: Codebook, extra: list[Section] | None = None):
    meta = {"patch_h": cb.patch_h, "patch_w": cb.patch_w, "channels": cb.channels}
    sections = [
        Section("codebook", meta, b""),
        array_section("entries", cb.entries),
        array_section("objective_history", np.asarray(cb.objective_history, dtype=np.float64)),
    ]
    write_container(path, sections + list(extra or []))


def load_codebook(path: str) -> Codebook:
    sections = {s.name: s for s in read_container(path)}
    if "codebook" not in sections:
        raise ValidationError("container has no codebook section")
    meta = sections["codebook"].meta
    history = tuple(float(v) for v in section_array(sections["objective_history"]))
    return Codebook(
        entries=section_array(sections["entries"]),
        patch_h=meta["patch_h"],
        patch_w=meta["patch_w"],
        channels=meta["channels"],
        objective_history=history,
    )
