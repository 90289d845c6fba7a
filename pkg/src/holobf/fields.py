"""Optical field and image containers, plus their on-disk formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    InvalidField,
    NonFiniteValue,
    SchemaMismatch,
    ShrinkNotAllowed,
    TruncatedPayload,
    ZeroBackground,
)

CFLD_MAGIC = b"CFLD"
CFLD_VERSION = 1
_CFLD_HEADER = struct.Struct("<4sIIIddd")


@dataclass(frozen=True)
class OpticalParams:
    wavelength_um: float = 0.85
    pixel_pitch_um: float = 1.12
    refractive_index: float = 1.0

    def __post_init__(self):
        if not self.wavelength_um > 0:
            raise InvalidField(f"wavelength_um must be > 0, got {self.wavelength_um}")
        if not self.pixel_pitch_um > 0:
            raise InvalidField(f"pixel_pitch_um must be > 0, got {self.pixel_pitch_um}")
        if not self.refractive_index >= 1:
            raise InvalidField(f"refractive_index must be >= 1, got {self.refractive_index}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ComplexField:
    """2D complex amplitude, ``data[y, x]``, sampled at ``params.pixel_pitch_um``."""

    data: np.ndarray
    params: OpticalParams = dc_field(default_factory=OpticalParams)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2 or min(data.shape) < 2:
            raise InvalidField(f"field must be 2D with sides >= 2, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("field contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> ComplexField:
        return ComplexField(data, self.params)

    def __eq__(self, other):
        if not isinstance(other, ComplexField):
            return NotImplemented
        return self.params == other.params and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class RealImage:
    """Row-major, channel-interleaved real image stored as ``data[y, x, c]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3) or min(data.shape[:2]) < 1:
            raise InvalidField(f"image must be HxW or HxWx{{1,3}}, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("image contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """The single channel as an HxW array."""
        if self.channels != 1:
            raise InvalidField("plane is only defined for single-channel images")
        return self.data[:, :, 0]

    def __eq__(self, other):
        if not isinstance(other, RealImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class ZStack:
    planes: tuple
    z_positions_um: tuple

    def __post_init__(self):
        planes = tuple(self.planes)
        z = tuple(float(v) for v in self.z_positions_um)
        if len(planes) != len(z):
            raise InvalidField(f"{len(planes)} planes but {len(z)} z positions")
        if any(b <= a for a, b in zip(z, z[1:])):
            raise InvalidField("z_positions_um must be strictly increasing")
        if planes and len({p.data.shape for p in planes}) != 1:
            raise InvalidField("all planes in a ZStack must share dimensions")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "z_positions_um", z)

    def __len__(self):
        return len(self.planes)


def intensity(field: ComplexField) -> RealImage:
    d = field.data
    return RealImage(d.real * d.real + d.imag * d.imag)


def amplitude(field: ComplexField) -> RealImage:
    return RealImage(np.abs(field.data))


def normalize_background(img: RealImage) -> RealImage:
    m = float(np.mean(img.data))
    if m <= 1e-15:
        raise ZeroBackground(f"image mean {m:g} is not positive")
    return RealImage(img.data / m)


def field_energy(field: ComplexField) -> float:
    d = field.data
    return float(np.sum(d.real * d.real + d.imag * d.imag))


def pad_to(field: ComplexField, w: int, h: int, fill: complex = 0) -> ComplexField:
    """Center ``field`` on a ``w`` x ``h`` grid filled with ``fill``."""
    if w < field.width or h < field.height:
        raise ShrinkNotAllowed(f"cannot pad {field.width}x{field.height} down to {w}x{h}")
    out = np.full((h, w), fill, dtype=np.complex128)
    y0, x0 = (h - field.height) // 2, (w - field.width) // 2
    out[y0:y0 + field.height, x0:x0 + field.width] = field.data
    return field.with_data(out)


def crop_center(field: ComplexField, w: int, h: int) -> ComplexField:
    """Inverse of :func:`pad_to`."""
    if w > field.width or h > field.height:
        raise InvalidField(f"cannot crop {field.width}x{field.height} to {w}x{h}")
    y0, x0 = (field.height - h) // 2, (field.width - w) // 2
    return field.with_data(field.data[y0:y0 + h, x0:x0 + w])


def border_mean(data: np.ndarray) -> complex:
    ring = np.concatenate([data[0, :], data[-1, :], data[1:-1, 0], data[1:-1, -1]])
    return complex(ring.mean())


# ---------------------------------------------------------------------------
# .cfld


def save_cfld(field: ComplexField) -> bytes:
    p = field.params
    header = _CFLD_HEADER.pack(
        CFLD_MAGIC, CFLD_VERSION, field.width, field.height,
        p.wavelength_um, p.pixel_pitch_um, p.refractive_index,
    )
    payload = np.ascontiguousarray(field.data, dtype="<c16").tobytes()
    return header + payload


def load_cfld(buf: bytes) -> ComplexField:
    if len(buf) < 4 or buf[:4] != CFLD_MAGIC:
        raise BadMagic("not a CFLD file")
    if len(buf) < _CFLD_HEADER.size:
        raise TruncatedPayload("CFLD header is truncated")
    _, version, w, h, wl, pitch, n = _CFLD_HEADER.unpack_from(buf)
    if version != CFLD_VERSION:
        raise SchemaMismatch(f"unsupported CFLD version {version}")
    need = _CFLD_HEADER.size + w * h * 16
    if len(buf) < need:
        raise TruncatedPayload(f"CFLD payload has {len(buf) - _CFLD_HEADER.size} bytes, header claims {w * h * 16}")
    data = np.frombuffer(buf, dtype="<c16", count=w * h, offset=_CFLD_HEADER.size).reshape(h, w)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("CFLD payload contains non-finite values")
    return ComplexField(data.astype(np.complex128), OpticalParams(wl, pitch, n))


def write_cfld(path, field: ComplexField) -> None:
    with open(path, "wb") as f:
        f.write(save_cfld(field))


def read_cfld(path) -> ComplexField:
    with open(path, "rb") as f:
        return load_cfld(f.read())


# ---------------------------------------------------------------------------
# 16-bit PGM / PPM


def save_pnm(img: RealImage) -> bytes:
    """Binary P5 (1 channel) or P6 (3 channels), maxval 65535, mapped from [0, max]."""
    d = img.data
    if np.any(d < 0):
        raise InvalidField("PNM export needs a nonnegative image")
    peak = float(d.max())
    scaled = np.zeros_like(d) if peak == 0 else np.rint(d / peak * 65535.0)
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n65535\n" % (img.width, img.height)
    return header + scaled.astype(">u2").tobytes()


def load_pnm(buf: bytes) -> RealImage:
    """Read a 16-bit P5/P6 written by :func:`save_pnm`; values come back in [0, 1]."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagic("not a binary PGM/PPM file")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    w, h, maxval = (int(t) for t in tokens)
    c = 1 if magic == b"P5" else 3
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h * c
    if len(buf) - pos < count * np.dtype(dtype).itemsize:
        raise TruncatedPayload("PNM payload is truncated")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.float64) / maxval
    return RealImage(data.reshape(h, w, c))


def write_pnm(path, img: RealImage) -> None:
    with open(path, "wb") as f:
        f.write(save_pnm(img))


def read_pnm(path) -> RealImage:
    with open(path, "rb") as f:
        return load_pnm(f.read())


def stack_of(images: Sequence[RealImage], z_um: Sequence[float]) -> ZStack:
    return ZStack(tuple(images), tuple(z_um))
