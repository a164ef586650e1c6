"""Bit-exact persistence for checkpoints and search histories.

Checkpoint container: magic ``SNFG`` | u32 format version (LE) | u64 metadata
length (LE) | canonical JSON metadata | raw little-endian tensor payloads.
The metadata carries a tensor directory (name -> dtype, shape, offset,
length); offsets are relative to the payload section. Histories are
append-only JSON lines, one serialized evaluation record per line.
"""

from __future__ import annotations

import json
import os
import struct
import warnings

import numpy as np

from .archspace import ArchGenome, ModelDims, parse_genome
from .elastic_net import BlockWeights, SupernetWeights, parameter_tensors
from .linas import EvalRecord, SearchHistory
from .quant import QuantizedBlock, QuantizedSubnet, QuantizedTensor

MAGIC = b"SNFG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DTYPES = {"float32": np.float32, "float16": np.float16, "int8": np.int8}


def _canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _tensor_directory(tensors: dict[str, np.ndarray]):
    directory = {}
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {arr.dtype.name} for {name!r}")
        length = arr.nbytes
        directory[name] = {
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "length": length,
        }
        offset += length
    return directory, offset


def _write_container(meta: dict, tensors: dict[str, np.ndarray], path: str) -> None:
    directory, total = _tensor_directory(tensors)
    meta = dict(meta, tensors=directory)
    blob = _canonical_json(meta)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for arr in tensors.values():
                fh.write(np.ascontiguousarray(arr, dtype=f"<{arr.dtype.str[1:]}").tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _supernet_tensors(weights: SupernetWeights) -> dict[str, np.ndarray]:
    return parameter_tensors(weights)


def _quantized_tensors(qs: QuantizedSubnet) -> dict[str, np.ndarray]:
    out = {
        "token_embedding": qs.token_embedding,
        "position_embedding": qs.position_embedding,
    }
    for i, b in enumerate(qs.blocks):
        p = f"blocks.{i}."
        for fname in ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"):
            qt: QuantizedTensor = getattr(b, fname)
            out[p + fname + ".values"] = qt.values
            out[p + fname + ".scales"] = qt.scales
        out[p + "attn_norm"] = b.attn_norm
        out[p + "mlp_norm"] = b.mlp_norm
    out["final_norm"] = qs.final_norm
    out["head"] = qs.head
    return out


def save_checkpoint(model: SupernetWeights | QuantizedSubnet, path: str, seed: int | None = None) -> None:
    """Persist a supernet or quantized subnet; load_checkpoint round-trips bitwise."""
    if isinstance(model, SupernetWeights):
        meta = {
            "kind": "supernet",
            "precision": "fp32",
            "dims": model.dims.to_json_dict(),
            "max_seq": model.max_seq,
            "seed": seed,
        }
        _write_container(meta, _supernet_tensors(model), path)
    elif isinstance(model, QuantizedSubnet):
        meta = {
            "kind": "quantized",
            "precision": "int8+fp32",
            "dims": model.dims.to_json_dict(),
            "phenotype": list(model.phenotype),
            "seed": seed,
        }
        _write_container(meta, _quantized_tensors(model), path)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")


def _read_container(path: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"failed reading checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported checkpoint version {version} (supported: {FORMAT_VERSION})"
        )
    meta_end = _HEADER.size + meta_len
    if meta_end > len(raw):
        raise ValueError(f"{path}: metadata length {meta_len} out of bounds")
    meta = json.loads(raw[_HEADER.size:meta_end])
    payload = raw[meta_end:]

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for name, entry in meta["tensors"].items():
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise ValueError(f"{path}: unsupported dtype {entry['dtype']!r} for {name!r}")
        shape = tuple(entry["shape"])
        offset, length = entry["offset"], entry["length"]
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if length != expected:
            raise ValueError(
                f"{path}: tensor {name!r} length {length} != shape product {expected}"
            )
        if offset < 0 or offset + length > len(payload):
            raise ValueError(f"{path}: tensor {name!r} payload out of bounds")
        spans.append((offset, offset + length, name))
        arr = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<"), count=length // np.dtype(dtype).itemsize, offset=offset)
        tensors[name] = arr.astype(dtype, copy=True).reshape(shape)
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise ValueError(f"{path}: tensors {name_a!r} and {name_b!r} overlap")
    return meta, tensors


def load_checkpoint(path: str) -> SupernetWeights | QuantizedSubnet:
    """Reconstruct the exact object written by save_checkpoint."""
    meta, tensors = _read_container(path)
    dims = ModelDims.from_json_dict(meta["dims"])
    if meta["kind"] == "supernet":
        blocks = []
        for i in range(dims.max_layers):
            p = f"blocks.{i}."
            blocks.append(
                BlockWeights(
                    wq=tensors[p + "wq"],
                    wk=tensors[p + "wk"],
                    wv=tensors[p + "wv"],
                    wo=tensors[p + "wo"],
                    attn_norm=tensors[p + "attn_norm"],
                    mlp_norm=tensors[p + "mlp_norm"],
                    w_gate=tensors[p + "w_gate"],
                    w_up=tensors[p + "w_up"],
                    w_down=tensors[p + "w_down"],
                )
            )
        return SupernetWeights(
            dims=dims,
            max_seq=meta["max_seq"],
            token_embedding=tensors["token_embedding"],
            position_embedding=tensors["position_embedding"],
            blocks=blocks,
            final_norm=tensors["final_norm"],
            head=tensors["head"],
        )
    if meta["kind"] == "quantized":
        pheno = tuple(meta["phenotype"])
        blocks = []
        for i in range(len(pheno)):
            p = f"blocks.{i}."
            fields = {}
            for fname in ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"):
                values = tensors[p + fname + ".values"]
                fields[fname] = QuantizedTensor(
                    values=values,
                    scales=tensors[p + fname + ".scales"],
                    shape=(int(values.shape[0]), int(values.shape[1])),
                )
            blocks.append(
                QuantizedBlock(
                    **fields,
                    attn_norm=tensors[p + "attn_norm"],
                    mlp_norm=tensors[p + "mlp_norm"],
                )
            )
        return QuantizedSubnet(
            dims=dims,
            phenotype=pheno,
            token_embedding=tensors["token_embedding"],
            position_embedding=tensors["position_embedding"],
            blocks=blocks,
            final_norm=tensors["final_norm"],
            head=tensors["head"],
        )
    raise ValueError(f"{path}: unknown checkpoint kind {meta['kind']!r}")


def _record_to_json(record: EvalRecord) -> str:
    doc = {
        "genome": record.genome.to_text(),
        "size_bytes": record.size_bytes,
        "accuracy": record.accuracy,
        "measured": record.measured,
        "round": record.round_index,
        "seed": record.seed,
        "timestamp": record.timestamp,
    }
    if record.throughput_tok_per_s is not None:
        doc["throughput_tok_per_s"] = record.throughput_tok_per_s
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _record_from_json(doc: dict) -> EvalRecord:
    return EvalRecord(
        genome=parse_genome(doc["genome"]),
        size_bytes=doc["size_bytes"],
        accuracy=doc["accuracy"],
        measured=doc["measured"],
        round_index=doc["round"],
        seed=doc["seed"],
        timestamp=doc["timestamp"],
        throughput_tok_per_s=doc.get("throughput_tok_per_s"),
    )


def append_history(record: EvalRecord, path: str) -> None:
    """Append one record as a single JSON line (one write, flushed)."""
    line = _record_to_json(record) + "\n"
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
    except OSError as exc:
        raise OSError(f"failed appending history {path}: {exc}") from exc


def load_history(path: str) -> SearchHistory:
    """Read a history file; a trailing unterminated partial line is dropped
    with a warning (interrupted append), while any newline-terminated bad
    line is a hard error naming the line number."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"failed reading history {path}: {exc}") from exc
    terminated = text.endswith("\n")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    history = SearchHistory()
    for i, line in enumerate(lines, start=1):
        try:
            doc = json.loads(line)
            record = _record_from_json(doc)
        except (ValueError, KeyError, TypeError) as exc:
            if i == len(lines) and not terminated:
                warnings.warn(f"{path}: dropping trailing partial line {i}")
                break
            raise ValueError(f"{path}: malformed history line {i}") from exc
        history.records.append(record)
    return history
