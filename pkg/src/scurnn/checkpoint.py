"""Binary checkpoint container.

Layout (little-endian)::

    b"SCUR" | version u32 | n u32 | m u32 | p u32
    repeated: name_len u32 | name bytes (utf-8) | count u64 | count x float64

Arrays are stored flattened in a fixed order; shapes follow from n, m, p.
"""

from __future__ import annotations

import struct

import numpy as np

from .cayley import SkewHermitianParam, UnitaryDiag
from .rnn import ScuRnnParams

MAGIC = b"SCUR"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class CheckpointError(ValueError):
    """Checkpoint is malformed or does not fit the requested model shape."""


def _arrays(params: ScuRnnParams) -> list[tuple[str, np.ndarray]]:
    return [
        ("a_x", params.a.x_lower),
        ("a_y", params.a.y_lower),
        ("theta", params.theta.theta),
        ("u_re", params.u_re),
        ("u_im", params.u_im),
        ("v", params.v),
        ("b", params.b),
        ("c", params.c),
        ("h0_re", params.h0_re),
        ("h0_im", params.h0_im),
    ]


def _shapes(n: int, m: int, p: int) -> dict[str, tuple[int, ...]]:
    return {
        "a_x": (n * (n - 1) // 2,),
        "a_y": (n * (n + 1) // 2,),
        "theta": (n,),
        "u_re": (n, m),
        "u_im": (n, m),
        "v": (p, 2 * n),
        "b": (n,),
        "c": (p,),
        "h0_re": (n,),
        "h0_im": (n,),
    }


def dumps(params: ScuRnnParams) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, params.n, params.m, params.p)]
    for name, arr in _arrays(params):
        raw = name.encode("utf-8")
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<Q", flat.size))
        chunks.append(flat.tobytes())
    return b"".join(chunks)


def loads(data: bytes, expect: tuple[int, int, int] | None = None) -> ScuRnnParams:
    """Decode a checkpoint; ``expect`` = (n, m, p) enforces the model shape."""
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint truncated in header")
    magic, version, n, m, p = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if expect is not None and tuple(expect) != (n, m, p):
        raise CheckpointError(f"checkpoint has (n, m, p) = {(n, m, p)}, config wants {tuple(expect)}")

    shapes = _shapes(n, m, p)
    found: dict[str, np.ndarray] = {}
    pos = _HEADER.size
    try:
        while pos < len(data):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (count,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            end = pos + 8 * count
            if end > len(data):
                raise CheckpointError(f"array {name!r} truncated")
            found[name] = np.frombuffer(data[pos:end], dtype="<f8").astype(np.float64)
            pos = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint body: {exc}") from exc

    if set(found) != set(shapes):
        raise CheckpointError(f"checkpoint arrays {sorted(found)} != expected {sorted(shapes)}")
    arrays = {}
    for name, shape in shapes.items():
        if found[name].size != int(np.prod(shape)):
            raise CheckpointError(f"array {name!r} has {found[name].size} values, expected shape {shape}")
        arrays[name] = found[name].reshape(shape)
    return ScuRnnParams(
        SkewHermitianParam(n, arrays.pop("a_x"), arrays.pop("a_y")),
        UnitaryDiag(arrays.pop("theta")),
        **arrays,
    )


def save(path, params: ScuRnnParams) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path, expect: tuple[int, int, int] | None = None) -> ScuRnnParams:
    with open(path, "rb") as fh:
        return loads(fh.read(), expect)
