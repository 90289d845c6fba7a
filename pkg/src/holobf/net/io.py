"""CMWT weights container: magic, version, then named 4-D float64 tensors until EOF."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import BadMagic, SchemaMismatch, TruncatedPayload
from . import tensor as T
from .models import Params

CMWT_MAGIC = b"CMWT"
CMWT_VERSION = 1


def save_weights(params: Params) -> bytes:
    out = [struct.pack("<4sI", CMWT_MAGIC, CMWT_VERSION)]
    for name, t in params.items():
        v = t.value if isinstance(t, T.Tensor4) else np.asarray(t)
        shape = tuple(v.shape) + (1,) * (4 - v.ndim)
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<4I", *shape))
        out.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(out)


def load_weights(buf: bytes) -> Params:
    if buf[:4] != CMWT_MAGIC:
        raise BadMagic("not a CMWT weights file")
    if len(buf) < 8:
        raise TruncatedPayload("CMWT header is truncated")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CMWT_VERSION:
        raise SchemaMismatch(f"unsupported CMWT version {version}")
    pos = 8
    params: Params = {}
    while pos < len(buf):
        if pos + 2 > len(buf):
            raise TruncatedPayload("truncated tensor name length")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n + 16 > len(buf):
            raise TruncatedPayload("truncated tensor header")
        name = buf[pos:pos + n].decode()
        pos += n
        shape = struct.unpack_from("<4I", buf, pos)
        pos += 16
        count = int(np.prod(shape))
        if pos + 8 * count > len(buf):
            raise TruncatedPayload(f"tensor {name} payload is truncated")
        v = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
        params[name] = T.param(v)
    return params


def write_weights(path, params: Params) -> None:
    with open(path, "wb") as f:
        f.write(save_weights(params))


def read_weights(path) -> Params:
    with open(path, "rb") as f:
        return load_weights(f.read())
