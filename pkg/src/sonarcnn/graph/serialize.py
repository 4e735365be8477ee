"""Binary model file: structure header plus float32 weight blobs.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"SONARCNN"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header (sorted keys, no whitespace)
    20+H    ...   weight blobs, float32 little-endian, C order; nodes in
                  header order, keys in the order listed per node
    end-32  32    SHA-256 digest of every preceding byte

The header records ``meta``, ``output``, ``aliases``, ``has_weights`` and
``nodes``; each node entry holds ``name``, ``kind``, ``inputs``, ``attrs``
and ``weights`` (a list of ``[key, shape]`` pairs).
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .ir import LayerNode, ModelGraph, infer_shapes, param_shapes

MAGIC = b"SONARCNN"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DIGEST = 32
_DTYPE = np.dtype("<f4")


class FormatError(ValueError):
    """The byte stream is not a valid model file."""


class VersionMismatchError(FormatError):
    pass


class TruncatedStreamError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _tupled(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _tupled(v) for k, v in value.items()}
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def serialize(graph: ModelGraph) -> bytes:
    shapes = graph.shapes()
    entries = []
    blobs = []
    for n in graph.nodes:
        pshapes = param_shapes(n, [shapes[i] for i in n.inputs])
        entries.append({
            "name": n.name,
            "kind": n.kind,
            "inputs": list(n.inputs),
            "attrs": _jsonable(dict(n.attrs)),
            "weights": [[k, list(s)] for k, s in pshapes.items()],
        })
        if graph.weights is not None:
            for key, shp in pshapes.items():
                arr = graph.weights[n.name][key]
                if arr.shape != tuple(shp):
                    raise FormatError(f"{n.name}/{key}: weight shape {arr.shape} != {shp}")
                blobs.append(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    header = {
        "meta": _jsonable(graph.meta),
        "output": graph.output,
        "aliases": dict(sorted(graph.aliases.items())),
        "has_weights": graph.weights is not None,
        "nodes": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def _expected_length(head_len: int, header: dict) -> int:
    n = 0
    if header.get("has_weights"):
        n = sum(math.prod(s) for e in header["nodes"] for _, s in e["weights"])
    return _PREAMBLE.size + head_len + 4 * n + _DIGEST


def _declared_length(data: bytes, head_len: int):
    try:
        header = json.loads(data[_PREAMBLE.size:_PREAMBLE.size + head_len].decode("utf-8"))
        return _expected_length(head_len, header)
    except (ValueError, KeyError, TypeError):
        return None


def deserialize(data: bytes) -> ModelGraph:
    if len(data) < _PREAMBLE.size + _DIGEST:
        raise TruncatedStreamError(f"stream of {len(data)} bytes is too short for a model file")
    magic, version, head_len = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("not a model file (bad magic)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        expected = _declared_length(data, head_len)
        if expected is not None and len(data) < expected:
            raise TruncatedStreamError(f"stream truncated: {len(data)} bytes, header declares {expected}")
        raise ChecksumError("checksum mismatch; file is corrupted")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model file version {version}, this reader supports {FORMAT_VERSION}")
    header = json.loads(body[_PREAMBLE.size:_PREAMBLE.size + head_len].decode("utf-8"))
    if len(data) != _expected_length(head_len, header):
        raise FormatError("stream length does not match its header")

    nodes = [LayerNode(e["name"], e["kind"], tuple(e["inputs"]), _tupled(e["attrs"])) for e in header["nodes"]]
    graph = ModelGraph(tuple(nodes), header["output"], dict(header["aliases"]), None, header["meta"])
    if header["has_weights"]:
        offset = _PREAMBLE.size + head_len
        store = {}
        for e in header["nodes"]:
            if not e["weights"]:
                continue
            w = {}
            for key, shp in e["weights"]:
                count = math.prod(shp)
                arr = np.frombuffer(body, dtype=_DTYPE, count=count, offset=offset).reshape(shp)
                w[key] = arr.astype(np.float32)
                offset += 4 * count
            store[e["name"]] = w
        graph.weights = store
    infer_shapes(graph)
    return graph


def save(graph: ModelGraph, path) -> None:
    Path(path).write_bytes(serialize(graph))


def load(path) -> ModelGraph:
    return deserialize(Path(path).read_bytes())
