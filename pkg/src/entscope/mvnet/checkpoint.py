"""Binary checkpoint format.

Layout::

    b"ENTSCOPE-CKPT\\n"
    <one JSON header line>\\n
    W1 b1 W2 b2 W3 b3 as raw little-endian arrays (dtype from the header)
    32-byte SHA-256 digest of everything above

The header carries the schema version, ``n``, ``C``, ``H1``, ``H2``, the
input width, the dtype, the class-table hash and free-form ``meta``.
"""

import hashlib
import json

import numpy as np

from .network import ModelParams

MAGIC = b"ENTSCOPE-CKPT\n"
CHECKPOINT_SCHEMA = 1


class CheckpointError(ValueError):
    pass


class ClassTableMismatch(CheckpointError):
    pass


def save_checkpoint(path, params, class_table_hash, n, meta=None):
    dtype = np.dtype(params.dtype).newbyteorder("<")
    h1, h2 = params.hidden
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "n": int(n),
        "C": int(params.num_classes),
        "H1": int(h1),
        "H2": int(h2),
        "D": int(params.input_dim),
        "dtype": dtype.str,
        "class_table_hash": class_table_hash,
        "shapes": {name: list(a.shape) for name, a in params.items()},
        "meta": meta or {},
    }
    body = MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n"
    body += b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in params.arrays())
    with open(path, "wb") as f:
        f.write(body + hashlib.sha256(body).digest())


def read_checkpoint(path):
    """Return ``(params, header)`` after verifying magic and checksum."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 32:
        raise CheckpointError(f"{path}: not an entscope checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or tampered file)")
    end = body.index(b"\n", len(MAGIC))
    header = json.loads(body[len(MAGIC):end])
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: unsupported checkpoint schema {header.get('schema')!r}")
    dtype = np.dtype(header["dtype"])
    offset, arrays = end + 1, []
    for name in ModelParams.NAMES:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        a = np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(shape)
        arrays.append(a.astype(dtype.newbyteorder("="), copy=True))
        offset += count * dtype.itemsize
    if offset != len(body):
        raise CheckpointError(f"{path}: payload size does not match header")
    return ModelParams(*arrays), header


def load_checkpoint(path, expected_class_hash=None):
    """Load parameters, refusing a checkpoint built for another class table."""
    params, header = read_checkpoint(path)
    if expected_class_hash is not None and header["class_table_hash"] != expected_class_hash:
        raise ClassTableMismatch(
            f"{path}: checkpoint class table {header['class_table_hash'][:12]} does not match "
            f"dataset class table {expected_class_hash[:12]}")
    return params
