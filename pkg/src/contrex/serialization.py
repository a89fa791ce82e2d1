"""Versioned binary persistence for every trained component.

One container format for all artifacts: a magic header with format version,
artifact kind, and a SHA-256 checksum of the body, followed by a JSON
metadata block and named float64 arrays (little-endian, row-major). Integers
and structure live in the metadata; weights live in the arrays.
"""

import json
import struct

import numpy as np

from .errors import ParseError
from .numeric import RngState

MAGIC = b"CREX"
FORMAT_VERSION = 1


def write_blob(path, kind, meta, arrays):
    """arrays: list of (name, ndarray) pairs, written as float64 LE."""
    body = bytearray()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta_bytes))
    body += meta_bytes
    body += struct.pack("<I", len(arrays))
    payloads = []
    for name, arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        body += struct.pack("<H", len(name_b))
        body += name_b
        body += struct.pack("<B", a.ndim)
        for d in a.shape:
            body += struct.pack("<I", d)
        payloads.append(a.tobytes())
    for p in payloads:
        body += p
    import hashlib

    digest = hashlib.sha256(bytes(body)).digest()
    kind_b = kind.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<H", len(kind_b)))
        fh.write(kind_b)
        fh.write(digest)
        fh.write(bytes(body))


def read_blob(path, expect_kind=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a contrex artifact (bad magic)")
    try:
        return _parse_blob(path, raw, expect_kind)
    except (struct.error, IndexError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: truncated or malformed artifact: {exc}") from exc


def _parse_blob(path, raw, expect_kind):
    at = 4
    (version,) = struct.unpack_from("<I", raw, at)
    at += 4
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    (kind_len,) = struct.unpack_from("<H", raw, at)
    at += 2
    kind = raw[at : at + kind_len].decode("utf-8")
    at += kind_len
    digest = raw[at : at + 32]
    at += 32
    body = raw[at:]
    import hashlib

    if hashlib.sha256(body).digest() != digest:
        raise ParseError(f"{path}: checksum mismatch, file corrupted")
    if expect_kind is not None and kind != expect_kind:
        raise ParseError(f"{path}: expected kind {expect_kind!r}, found {kind!r}")
    at = 0
    (meta_len,) = struct.unpack_from("<I", body, at)
    at += 4
    meta = json.loads(body[at : at + meta_len].decode("utf-8"))
    at += meta_len
    (n_arrays,) = struct.unpack_from("<I", body, at)
    at += 4
    specs = []
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", body, at)
        at += 2
        name = body[at : at + name_len].decode("utf-8")
        at += name_len
        (ndim,) = struct.unpack_from("<B", body, at)
        at += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", body, at)
            at += 4
            shape.append(d)
        specs.append((name, tuple(shape)))
    arrays = {}
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=at).reshape(shape)
        arrays[name] = arr.astype(np.float64)
        at += count * 8
    return kind, meta, arrays


# -- component-level persistence ---------------------------------------------

def save_encoder(params, path):
    meta = {
        "vocab_size": params.vocab_size, "dim": params.dim,
        "n_heads": params.n_heads, "n_layers": params.n_layers,
        "max_len": params.max_len, "ffn_hidden": params.ffn_hidden,
        "query_pooling": params.query_pooling,
        "prefix_layers": list(params.prefix_layers),
        "frozen": params.frozen,
    }
    write_blob(path, "encoder", meta, list(params.arrays()))


def load_encoder(path):
    from .attention import EncoderParams

    _, meta, arrays = read_blob(path, expect_kind="encoder")
    params = EncoderParams(
        meta["vocab_size"], meta["dim"], meta["n_heads"], meta["n_layers"],
        meta["max_len"], RngState(0), ffn_hidden=meta["ffn_hidden"],
        query_pooling=meta["query_pooling"],
        prefix_layers=tuple(meta["prefix_layers"]),
    )
    for name, arr in params.arrays():
        if name not in arrays or arrays[name].shape != arr.shape:
            raise ParseError(f"{path}: missing or misshapen array {name!r}")
        arr[...] = arrays[name]
    if meta.get("frozen", True):
        params.freeze()
    return params


def save_pool(pool, path):
    meta = {
        "task_id": pool.task_id, "pool_size": pool.pool_size, "top_k": pool.top_k,
        "dim": pool.dim, "prompt_length": pool.prompt_length,
        "surrogate_weight": pool.surrogate_weight,
        "relation_ids": list(pool.relation_ids) if pool.relation_ids else None,
        "frozen": pool.frozen,
    }
    write_blob(path, "pool", meta, list(pool.arrays()))


def load_pool(path):
    from .prompt_pool import PromptPool

    _, meta, arrays = read_blob(path, expect_kind="pool")
    pool = PromptPool(
        meta["task_id"], meta["pool_size"], meta["top_k"], meta["dim"], RngState(0),
        prompt_length=meta["prompt_length"], surrogate_weight=meta["surrogate_weight"],
        relation_ids=meta["relation_ids"],
    )
    for name, arr in pool.arrays():
        if name not in arrays or arrays[name].shape != arr.shape:
            raise ParseError(f"{path}: missing or misshapen array {name!r}")
        arr[...] = arrays[name]
    if meta.get("frozen"):
        pool.freeze()
    return pool


def _mixture_arrays(prefix, mixture):
    yield f"{prefix}.weights", mixture.weights
    for i, c in enumerate(mixture.components):
        yield f"{prefix}.mu{i}", c.mu
        yield f"{prefix}.sigma{i}", c.sigma


def _mixture_from(prefix, meta_block, arrays):
    from .replay import LatentGaussian, LatentMixture

    weights = arrays[f"{prefix}.weights"]
    comps = [
        LatentGaussian(arrays[f"{prefix}.mu{i}"], arrays[f"{prefix}.sigma{i}"],
                       ridge=meta_block["ridge"])
        for i in range(len(weights))
    ]
    return LatentMixture(weights, comps)


def save_store(store, path, ridge):
    meta = {"relations": store.relations(), "ridge": ridge}
    arrays = []
    for r in store.relations():
        arrays.extend(_mixture_arrays(f"r{r}.q", store.query_model(r)))
        arrays.extend(_mixture_arrays(f"r{r}.z", store.prompted_model(r)))
    write_blob(path, "store", meta, arrays)


def load_store(path):
    from .replay import LatentGaussianStore

    _, meta, arrays = read_blob(path, expect_kind="store")
    store = LatentGaussianStore()
    for r in meta["relations"]:
        store.add(r, _mixture_from(f"r{r}.q", meta, arrays),
                  _mixture_from(f"r{r}.z", meta, arrays))
    return store


def save_head(head, path):
    meta = {"input_dim": head.input_dim, "hidden_dim": head.hidden_dim,
            "n_out": head.n_out}
    write_blob(path, "head", meta, list(head.arrays()))


def load_head(path):
    from .heads import ClassifierHead

    _, meta, arrays = read_blob(path, expect_kind="head")
    head = ClassifierHead(meta["input_dim"], meta["n_out"], RngState(0),
                          hidden_dim=meta["hidden_dim"])
    for name in ("w1", "b1", "w2", "b2"):
        setattr(head, name, arrays[name].copy())
    return head
