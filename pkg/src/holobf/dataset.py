"""Paired (back-propagated field, bright-field) patch corpus and its .ppds container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BadCode, BadMagic, NoPatches, SchemaMismatch, ShapeMismatch, TruncatedPayload
from .fields import ComplexField, RealImage
from .simulate import derive_rng

PPDS_MAGIC = b"PPDS"
PPDS_VERSION = 1
BACKGROUND_LEVEL = 0.98
BACKGROUND_FRACTION = 0.99
BACKGROUND_DROP = 0.9


def encode_field(f: ComplexField | np.ndarray) -> np.ndarray:
    """(2, H, W) real/imag channels with the global phase referenced to the field mean.

    Back-propagation to depth z multiplies the whole field by exp(i 2 pi n z / lambda);
    removing the phase of the mean makes the encoding independent of that carrier.
    """
    d = f.data if isinstance(f, ComplexField) else np.asarray(f, dtype=np.complex128)
    m = d.mean()
    if abs(m) > 0:
        d = d * (np.conj(m) / abs(m))
    return np.stack([d.real, d.imag])


def target_array(img: RealImage) -> np.ndarray:
    """(3, H, W) view of an RGB image."""
    if img.channels != 3:
        raise ShapeMismatch("bright-field targets must have 3 channels")
    return np.ascontiguousarray(np.moveaxis(img.data, -1, 0))


@dataclass(eq=False)
class PairedPatch:
    input: np.ndarray    # (2, S, S)
    target: np.ndarray   # (3, S, S) in [0, 1]
    z_um: float
    crop_xy: tuple
    source_id: int = 0

    @property
    def size(self) -> int:
        return self.input.shape[-1]

    def same_as(self, other: PairedPatch) -> bool:
        return (np.array_equal(self.input, other.input) and np.array_equal(self.target, other.target)
                and self.z_um == other.z_um and tuple(self.crop_xy) == tuple(other.crop_xy))


@dataclass(eq=False)
class PairedPatchSet:
    patches: list
    split: dict = field(default_factory=lambda: {"train": [], "val": [], "test": []})

    @property
    def patch_size(self) -> int:
        return self.patches[0].size if self.patches else 0

    def __len__(self):
        return len(self.patches)

    def same_as(self, other: PairedPatchSet) -> bool:
        return (len(self) == len(other)
                and all(a.same_as(b) for a, b in zip(self.patches, other.patches))
                and all(list(self.split[k]) == list(other.split[k]) for k in ("train", "val", "test")))


# ---------------------------------------------------------------------------
# extraction


def crop_grid(size: int, patch: int, stride: int) -> list[int]:
    if patch > size or stride < 1:
        return []
    return list(range(0, size - patch + 1, stride))


def is_background(target: np.ndarray) -> bool:
    bright = np.all(target > BACKGROUND_LEVEL, axis=0)
    return bright.mean() >= BACKGROUND_FRACTION


def make_split(n: int, seed: int) -> dict:
    order = derive_rng(seed, "split").permutation(n)
    n_val = int(round(0.1 * n))
    n_test = int(round(0.1 * n))
    n_train = n - n_val - n_test
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }


def extract_pairs(bp_fields: Sequence[ComplexField], bf_planes: Sequence[RealImage],
                  z_um: Sequence[float], patch_size: int = 64, stride: int = 32, seed: int = 0,
                  drop_probability: float = BACKGROUND_DROP) -> PairedPatchSet:
    """Raster-order crops of each (field, image) plane pair, dropping most pure-background crops."""
    if not (len(bp_fields) == len(bf_planes) == len(z_um)):
        raise ShapeMismatch("bp_fields, bf_planes and z_um must have equal length")
    rng = derive_rng(seed, "background_drop")
    patches = []
    for src, (f, img, z) in enumerate(zip(bp_fields, bf_planes, z_um)):
        if (f.height, f.width) != (img.height, img.width):
            raise ShapeMismatch(f"plane {src}: field {f.width}x{f.height} vs image {img.width}x{img.height}")
        x_all = encode_field(f)
        y_all = target_array(img)
        for y0 in crop_grid(f.height, patch_size, stride):
            for x0 in crop_grid(f.width, patch_size, stride):
                t = y_all[:, y0:y0 + patch_size, x0:x0 + patch_size]
                if is_background(t) and rng.random() < drop_probability:
                    continue
                patches.append(PairedPatch(
                    np.ascontiguousarray(x_all[:, y0:y0 + patch_size, x0:x0 + patch_size]),
                    np.ascontiguousarray(t), float(z), (x0, y0), src))
    if not patches:
        raise NoPatches(f"no {patch_size}px patches at stride {stride}")
    return PairedPatchSet(patches, make_split(len(patches), seed))


def merge(sets: Sequence[PairedPatchSet], seed: int) -> PairedPatchSet:
    patches = [p for s in sets for p in s.patches]
    if not patches:
        raise NoPatches("nothing to merge")
    return PairedPatchSet(patches, make_split(len(patches), seed))


# ---------------------------------------------------------------------------
# dihedral augmentation


def _transform(a: np.ndarray, code: int) -> np.ndarray:
    if code >= 4:
        a = a[..., ::-1]
    return np.ascontiguousarray(np.rot90(a, code % 4, axes=(-2, -1)))


def inverse_code(code: int) -> int:
    return code if code >= 4 else (4 - code) % 4


def augment_arrays(x: np.ndarray, y: np.ndarray, code: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= code < 8:
        raise BadCode(f"augmentation code must be in [0, 8), got {code}")
    return _transform(x, code), _transform(y, code)


def augment(p: PairedPatch, code: int) -> PairedPatch:
    """Code ``r + 4*f``: optional horizontal flip, then ``r`` quarter turns."""
    x, y = augment_arrays(p.input, p.target, code)
    return PairedPatch(x, y, p.z_um, p.crop_xy, p.source_id)


# ---------------------------------------------------------------------------
# .ppds


def save_dataset(ds: PairedPatchSet) -> bytes:
    S = ds.patch_size
    out = [struct.pack("<4sIII", PPDS_MAGIC, PPDS_VERSION, len(ds), S)]
    for p in ds.patches:
        if p.size != S:
            raise ShapeMismatch("all patches in a set must share one size")
        out.append(struct.pack("<dII", p.z_um, int(p.crop_xy[0]), int(p.crop_xy[1])))
        # channel-interleaved, row-major
        out.append(np.ascontiguousarray(np.moveaxis(p.input, 0, -1), dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(np.moveaxis(p.target, 0, -1), dtype="<f8").tobytes())
    for k in ("train", "val", "test"):
        idx = np.asarray(ds.split[k], dtype="<u4")
        out.append(struct.pack("<I", len(idx)))
        out.append(idx.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayload(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).astype(dtype.lstrip("<"))


def load_dataset(buf: bytes) -> PairedPatchSet:
    r = _Reader(buf)
    if buf[:4] != PPDS_MAGIC:
        raise BadMagic("not a PPDS file")
    _, version, count, S = r.unpack("<4sIII")
    if version != PPDS_VERSION:
        raise SchemaMismatch(f"unsupported PPDS version {version}")
    patches = []
    for _ in range(count):
        z, cx, cy = r.unpack("<dII")
        x = r.array("<f8", 2 * S * S).reshape(S, S, 2)
        y = r.array("<f8", 3 * S * S).reshape(S, S, 3)
        patches.append(PairedPatch(np.ascontiguousarray(np.moveaxis(x, -1, 0)),
                                   np.ascontiguousarray(np.moveaxis(y, -1, 0)), z, (cx, cy)))
    split = {}
    for k in ("train", "val", "test"):
        (n,) = r.unpack("<I")
        split[k] = [int(i) for i in r.array("<u4", n)]
    return PairedPatchSet(patches, split)


def write_dataset(path, ds: PairedPatchSet) -> None:
    with open(path, "wb") as f:
        f.write(save_dataset(ds))


def read_dataset(path) -> PairedPatchSet:
    with open(path, "rb") as f:
        return load_dataset(f.read())
