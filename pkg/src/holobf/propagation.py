"""Band-limited angular spectrum propagation and digital refocusing."""

from __future__ import annotations

from enum import Enum
from typing import Sequence

import numpy as np

from .errors import BadZList, EmptyZList, InvalidField
from .fields import (
    ComplexField,
    OpticalParams,
    RealImage,
    border_mean,
    crop_center,
    normalize_background,
    pad_to,
)

MAX_ABS_Z_UM = 1e7


class Evanescent(str, Enum):
    ZERO = "zero"
    DECAY = "decay"


def frequency_grid(w: int, h: int, pitch_um: float) -> tuple[np.ndarray, np.ndarray]:
    """Spatial frequencies in cycles/um, unshifted (wraparound) order, shaped (h, w)."""
    fx = np.fft.fftfreq(w, d=pitch_um)
    fy = np.fft.fftfreq(h, d=pitch_um)
    return np.meshgrid(fx, fy)


def transfer_function(z_um: float, params: OpticalParams, w: int, h: int,
                      evanescent: Evanescent | str = Evanescent.ZERO) -> np.ndarray:
    """Angular spectrum kernel H(fx, fy) for a propagation distance ``z_um``."""
    if w < 2 or h < 2:
        raise InvalidField(f"grid must be at least 2x2, got {w}x{h}")
    if not abs(z_um) < MAX_ABS_Z_UM:
        raise InvalidField(f"|z| must be < {MAX_ABS_Z_UM:g} um, got {z_um}")
    evanescent = Evanescent(evanescent)
    fx, fy = frequency_grid(w, h, params.pixel_pitch_um)
    kmax2 = (params.refractive_index / params.wavelength_um) ** 2
    arg = kmax2 - fx * fx - fy * fy
    band = arg > 0
    H = np.zeros((h, w), dtype=np.complex128)
    H[band] = np.exp(2j * np.pi * z_um * np.sqrt(arg[band]))
    if evanescent is Evanescent.DECAY:
        H[~band] = np.exp(-2 * np.pi * abs(z_um) * np.sqrt(-arg[~band]))
    return H


def propagate(field: ComplexField, z_um: float, evanescent: Evanescent | str = Evanescent.ZERO,
              pad: bool = True) -> ComplexField:
    """Propagate ``field`` by ``z_um`` (negative for back-propagation).

    With ``pad`` the field is embedded in a grid twice its size, filled with the
    mean of its border pixels, so circular wraparound does not fold energy back
    into the window. The result is cropped to the original size.
    """
    if z_um == 0:
        return field
    work = field
    if pad:
        work = pad_to(field, 2 * field.width, 2 * field.height, border_mean(field.data))
    H = transfer_function(z_um, field.params, work.width, work.height, evanescent)
    out = work.with_data(np.fft.ifft2(np.fft.fft2(work.data) * H))
    if pad:
        out = crop_center(out, field.width, field.height)
    return out


def back_propagate(hologram: RealImage, z_um: float, params: OpticalParams,
                   evanescent: Evanescent | str = Evanescent.ZERO) -> ComplexField:
    """Refocus a recorded in-line hologram to the plane ``z_um`` above the sensor."""
    if hologram.channels != 1:
        raise InvalidField("hologram must be single-channel")
    amp = np.sqrt(normalize_background(hologram).plane)
    return propagate(ComplexField(amp.astype(np.complex128), params), -z_um, evanescent)


def zscan(hologram: RealImage, z_list: Sequence[float], params: OpticalParams,
          evanescent: Evanescent | str = Evanescent.ZERO) -> list[ComplexField]:
    z_list = [float(z) for z in z_list]
    if not z_list:
        raise EmptyZList("z_list is empty")
    if any(b <= a for a, b in zip(z_list, z_list[1:])):
        raise BadZList("z_list must be strictly increasing")
    return [back_propagate(hologram, z, params, evanescent) for z in z_list]


def gradient_magnitude(a: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(np.asarray(a, dtype=np.float64))
    return np.hypot(gx, gy)


def focus_metric(img: RealImage | np.ndarray) -> float:
    """Tamura coefficient sqrt(std/mean) of the gradient-magnitude image."""
    a = img.plane if isinstance(img, RealImage) else np.asarray(img, dtype=np.float64)
    g = gradient_magnitude(a)
    m = g.mean()
    if m <= 0:
        return 0.0
    return float(np.sqrt(g.std() / m))
