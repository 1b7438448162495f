"""Portable on-disk formats.

Configs and quantization schemes are human-readable JSON (floats round-trip
bit-exactly via repr). Tensor-bearing objects (networks, decomposed layers,
tile dumps) use a compact tagged binary bundle: magic "PQNB", u16 version,
u32 JSON-meta length, the JSON meta, then raw little-endian tensor data in
the order listed in the meta's tensor index. Timeline logs are CSV (one row
per step per variant) plus JSON with full repair-event detail.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

from .crossbar import AnalogTile
from .network import ConvLayer, DenseLayer, Network
from .quantize import BinSet, DecomposedLayer, QuantizationScheme, build_sq
from .repair import TimelineLog

BUNDLE_MAGIC = b"PQNB"
BUNDLE_VERSION = 1
SCHEME_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class SerializationError(ValueError):
    pass


def atomic_write(path, data: bytes):
    """Write-temp-then-rename so readers never see partial files."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(meta: dict, key: str, ctx: str):
    if key not in meta:
        raise SerializationError(f"{ctx}: missing field {key!r}")
    return meta[key]


# -- tagged binary bundle ----------------------------------------------------

def write_bundle(path, meta: dict, tensors: dict):
    index = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        tag = "f8" if arr.dtype.kind == "f" else "i8"
        arr = arr.astype(_DTYPES[tag], copy=False)
        index.append({"name": name, "dtype": tag, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    full_meta = dict(meta, tensors=index)
    mj = json.dumps(full_meta, sort_keys=True).encode()
    out = BUNDLE_MAGIC + struct.pack("<HI", BUNDLE_VERSION, len(mj)) + mj + b"".join(blobs)
    atomic_write(path, out)


def read_bundle(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != BUNDLE_MAGIC:
        raise SerializationError(f"{path}: bad magic {raw[:4]!r}")
    version, mlen = struct.unpack("<HI", raw[4:10])
    if version != BUNDLE_VERSION:
        raise SerializationError(f"{path}: unsupported bundle version {version}")
    meta = json.loads(raw[10 : 10 + mlen])
    offset = 10 + mlen
    tensors = {}
    for entry in _require(meta, "tensors", path):
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise SerializationError(f"{path}: truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return meta, tensors


# -- network -----------------------------------------------------------------

def save_network(path, net: Network):
    meta = {"kind": "network", "rng_seed": net.rng_seed, "layers": []}
    tensors = {}
    for k, lay in enumerate(net.layers):
        rec = {"kind": lay.kind, "activation": lay.activation}
        if lay.kind == "conv":
            rec["kh"], rec["kw"] = lay.kh, lay.kw
        meta["layers"].append(rec)
        tensors[f"w{k}"] = lay.w
        tensors[f"b{k}"] = lay.b
    write_bundle(path, meta, tensors)


def load_network(path) -> Network:
    meta, tensors = read_bundle(path)
    if _require(meta, "kind", path) != "network":
        raise SerializationError(f"{path}: not a network bundle (kind={meta['kind']!r})")
    layers = []
    for k, rec in enumerate(_require(meta, "layers", path)):
        w, b = tensors[f"w{k}"], tensors[f"b{k}"]
        if rec["kind"] == "conv":
            layers.append(ConvLayer(w=w, b=b, kh=rec["kh"], kw=rec["kw"],
                                    activation=rec["activation"]))
        else:
            layers.append(DenseLayer(w=w, b=b, activation=rec["activation"]))
    return Network(layers, rng_seed=_require(meta, "rng_seed", path))


# -- quantization scheme -----------------------------------------------------

def scheme_to_dict(scheme: QuantizationScheme) -> dict:
    return {
        "format_version": SCHEME_VERSION,
        "pos": {"base": scheme.pos.base, "multiples": list(scheme.pos.multiples)},
        "neg": {"base": scheme.neg.base, "multiples": list(scheme.neg.multiples)},
        "delta_write": scheme.delta_write,
        "epsilon_read": scheme.epsilon_read,
        "achieved_error": scheme.achieved_error,
        "digest": scheme.digest(),
    }


def scheme_from_dict(d: dict) -> QuantizationScheme:
    version = _require(d, "format_version", "scheme")
    if version != SCHEME_VERSION:
        raise SerializationError(f"scheme: unsupported format_version {version}")
    pos = BinSet(_require(d["pos"], "base", "scheme.pos"), tuple(d["pos"]["multiples"]))
    neg = BinSet(_require(d["neg"], "base", "scheme.neg"), tuple(d["neg"]["multiples"]))
    scheme = build_sq(pos, neg, _require(d, "delta_write", "scheme"),
                      _require(d, "epsilon_read", "scheme"))
    scheme.achieved_error = d.get("achieved_error", float("nan"))
    if "digest" in d and d["digest"] != scheme.digest():
        raise SerializationError("scheme: digest mismatch after load")
    return scheme


def save_scheme(path, scheme: QuantizationScheme):
    atomic_write(path, (json.dumps(scheme_to_dict(scheme), indent=2) + "\n").encode())


def load_scheme(path) -> QuantizationScheme:
    with open(path) as f:
        return scheme_from_dict(json.load(f))


# -- decomposed layers -------------------------------------------------------

def save_decomposed(path, layers, scheme_digest: str):
    meta = {"kind": "decomposed", "scheme_digest": scheme_digest,
            "errors": [lay.achieved_error for lay in layers], "count": len(layers)}
    tensors = {}
    for k, lay in enumerate(layers):
        tensors[f"m_pos{k}"] = lay.m_pos
        tensors[f"m_neg{k}"] = lay.m_neg
    write_bundle(path, meta, tensors)


def load_decomposed(path):
    meta, tensors = read_bundle(path)
    if _require(meta, "kind", path) != "decomposed":
        raise SerializationError(f"{path}: not a decomposed-layer bundle")
    layers = [
        DecomposedLayer(tensors[f"m_pos{k}"], tensors[f"m_neg{k}"], meta["errors"][k])
        for k in range(_require(meta, "count", path))
    ]
    return layers, _require(meta, "scheme_digest", path)


# -- tile dumps --------------------------------------------------------------

def save_tiles(path, tiles):
    meta = {"kind": "tiles", "count": len(tiles),
            "scales": [t.scale for t in tiles], "w_ranges": [t.w_range for t in tiles]}
    tensors = {}
    for k, t in enumerate(tiles):
        for name in ("g_pos", "g_neg", "nu_pos", "nu_neg", "t_prog", "baseline_probe",
                     "target_g_pos", "target_g_neg"):
            tensors[f"{name}{k}"] = getattr(t, name)
        if t.target_m_pos is not None:
            tensors[f"target_m_pos{k}"] = t.target_m_pos
            tensors[f"target_m_neg{k}"] = t.target_m_neg
    write_bundle(path, meta, tensors)


def load_tiles(path):
    meta, tensors = read_bundle(path)
    if _require(meta, "kind", path) != "tiles":
        raise SerializationError(f"{path}: not a tile bundle")
    tiles = []
    for k in range(_require(meta, "count", path)):
        tiles.append(
            AnalogTile(
                g_pos=tensors[f"g_pos{k}"], g_neg=tensors[f"g_neg{k}"],
                nu_pos=tensors[f"nu_pos{k}"], nu_neg=tensors[f"nu_neg{k}"],
                t_prog=tensors[f"t_prog{k}"], scale=meta["scales"][k],
                w_range=meta["w_ranges"][k],
                target_g_pos=tensors[f"target_g_pos{k}"],
                target_g_neg=tensors[f"target_g_neg{k}"],
                target_m_pos=tensors.get(f"target_m_pos{k}"),
                target_m_neg=tensors.get(f"target_m_neg{k}"),
                baseline_probe=tensors[f"baseline_probe{k}"],
            )
        )
    return tiles


# -- timeline logs -----------------------------------------------------------

def timeline_csv_bytes(log: TimelineLog) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TimelineLog.COLUMNS)
    for row in log.rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                         for c in TimelineLog.COLUMNS])
    return buf.getvalue().encode()


def save_timeline(csv_path, json_path, log: TimelineLog):
    atomic_write(csv_path, timeline_csv_bytes(log))
    atomic_write(json_path, (json.dumps(
        {"rows": log.rows, "events": log.events}, indent=2) + "\n").encode())


def load_timeline(csv_path, json_path=None) -> TimelineLog:
    log = TimelineLog()
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != TimelineLog.COLUMNS:
            raise SerializationError(f"{csv_path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            log.rows.append({
                "t": float(rec["t"]), "variant": rec["variant"],
                "accuracy": float(rec["accuracy"]), "f1": float(rec["f1"]),
                "probe_error": float(rec["probe_error"]),
                "repaired": int(rec["repaired"]), "pulses": int(rec["pulses"]),
                "irreversible": int(rec["irreversible"]),
            })
    if json_path is not None:
        with open(json_path) as f:
            log.events = json.load(f)["events"]
    return log
