"""Synthetic pollen phantoms, in-line hologram recording and bright-field rendering.

Depth convention: a particle's ``z_um`` is its distance above the sensor, so the
same number is the back-propagation distance that refocuses it and the
bright-field focus position that images it sharply. Illumination enters as a
unit plane wave at ``z2_um`` above the sensor and crosses the object planes in
order of decreasing depth.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BadGeometry, InvalidField
from .fields import ComplexField, OpticalParams, RealImage, ZStack, intensity
from .propagation import frequency_grid, propagate

PLANE_TOL_UM = 0.25
# Sensor full scale, relative to the unit plane-wave background.
FULL_SCALE = 2.0


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    """Independent stream per (seed, operation tag)."""
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode())])


@dataclass(frozen=True)
class Grid:
    width: int = 512
    height: int = 512
    params: OpticalParams = field(default_factory=OpticalParams)

    @property
    def extent_um(self) -> tuple[float, float]:
        p = self.params.pixel_pitch_um
        return (self.width - 1) * p, (self.height - 1) * p


@dataclass(frozen=True)
class Particle:
    x_um: float
    y_um: float
    z_um: float
    radius_um: float
    amplitude: float = 0.0
    phase_rad: float = 0.0
    rgb: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius_um > 0:
            raise InvalidField(f"particle radius must be > 0, got {self.radius_um}")
        if not 0 <= self.amplitude <= 1:
            raise InvalidField(f"amplitude transmittance must be in [0, 1], got {self.amplitude}")
        if len(self.rgb) != 3 or not all(0 <= c <= 1 for c in self.rgb):
            raise InvalidField(f"rgb must be three values in [0, 1], got {self.rgb}")
        object.__setattr__(self, "rgb", tuple(float(c) for c in self.rgb))


@dataclass(frozen=True)
class PhantomSpec:
    particles: tuple = ()
    volume_thickness_um: float = 800.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))

    def check_fov(self, grid: Grid) -> None:
        xmax, ymax = grid.extent_um
        for p in self.particles:
            if not (0 <= p.x_um <= xmax and 0 <= p.y_um <= ymax):
                raise BadGeometry(f"particle at ({p.x_um}, {p.y_um}) um lies outside the field of view")

    def plane_depths(self) -> list[float]:
        """Distinct object-plane depths, particles within PLANE_TOL_UM share a plane."""
        depths: list[float] = []
        for z in sorted(p.z_um for p in self.particles):
            if not depths or z - depths[-1] > PLANE_TOL_UM:
                depths.append(z)
        return depths


@dataclass(frozen=True)
class SensorSpec:
    bit_depth: int = 10
    read_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.bit_depth <= 16:
            raise InvalidField(f"bit_depth must be in [1, 16], got {self.bit_depth}")
        if self.read_noise_std < 0:
            raise InvalidField("read_noise_std must be >= 0")


@dataclass(frozen=True)
class BrightfieldSpec:
    numerical_aperture: float = 0.75
    z_positions_um: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "z_positions_um", tuple(float(z) for z in self.z_positions_um))
        if not self.numerical_aperture > 0:
            raise InvalidField("numerical_aperture must be > 0")


# ---------------------------------------------------------------------------
# object model


def _pixel_coords(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    p = grid.params.pixel_pitch_um
    x = np.arange(grid.width) * p
    y = np.arange(grid.height) * p
    return x[None, :], y[:, None]


def disk_mask(p: Particle, grid: Grid) -> np.ndarray:
    """Disk indicator with a raised-cosine edge one pixel wide."""
    x, y = _pixel_coords(grid)
    r = np.hypot(x - p.x_um, y - p.y_um)
    t = (r - p.radius_um) / grid.params.pixel_pitch_um
    out = 0.5 * (1.0 - np.sin(np.pi * np.clip(t, -0.5, 0.5)))
    return out


def build_object_plane(spec: PhantomSpec, z_um: float, grid: Grid) -> ComplexField:
    t = np.ones((grid.height, grid.width), dtype=np.complex128)
    for p in spec.particles:
        if abs(p.z_um - z_um) <= PLANE_TOL_UM:
            d = disk_mask(p, grid)
            t *= (1.0 - (1.0 - p.amplitude) * d) * np.exp(1j * p.phase_rad * d)
    return ComplexField(t, grid.params)


def sensor_field(spec: PhantomSpec, z2_um: float, grid: Grid) -> ComplexField:
    """Complex field reaching the sensor, before detection."""
    if not z2_um > 0:
        raise BadGeometry(f"z2_um must be > 0, got {z2_um}")
    for p in spec.particles:
        if p.z_um > z2_um or p.z_um < 0:
            raise BadGeometry(f"particle depth {p.z_um} um is outside [0, z2={z2_um}] um")
    spec.check_fov(grid)
    u = ComplexField(np.ones((grid.height, grid.width), dtype=np.complex128), grid.params)
    here = z2_um
    for z in sorted(spec.plane_depths(), reverse=True):
        u = propagate(u, here - z)
        u = u.with_data(u.data * build_object_plane(spec, z, grid).data)
        here = z
    return propagate(u, here)


def record_hologram(spec: PhantomSpec, sensor: SensorSpec, z2_um: float, grid: Grid) -> RealImage:
    I = intensity(sensor_field(spec, z2_um, grid)).plane / FULL_SCALE
    if sensor.read_noise_std > 0:
        I = I + derive_rng(sensor.seed, "read_noise").normal(0.0, sensor.read_noise_std, I.shape)
    levels = 2 ** sensor.bit_depth - 1
    q = np.rint(np.clip(I, 0.0, 1.0) * levels) / levels
    return RealImage(q * FULL_SCALE)


# ---------------------------------------------------------------------------
# bright-field


def _check_na(bf: BrightfieldSpec, params: OpticalParams) -> None:
    if not 0 < bf.numerical_aperture < params.refractive_index:
        raise InvalidField(f"NA must be in (0, n={params.refractive_index})")


def _psf_wrapped(na: float, defocus_um: float, grid: Grid) -> np.ndarray:
    """Unit-sum incoherent PSF with its peak at pixel (0, 0)."""
    params = grid.params
    fx, fy = frequency_grid(grid.width, grid.height, params.pixel_pitch_um)
    f2 = fx * fx + fy * fy
    pupil = (f2 <= (na / params.wavelength_um) ** 2).astype(np.complex128)
    if defocus_um != 0:
        kz = np.sqrt(np.maximum((params.refractive_index / params.wavelength_um) ** 2 - f2, 0.0))
        pupil *= np.exp(2j * np.pi * defocus_um * kz)
    a = np.fft.ifft2(pupil)
    psf = a.real ** 2 + a.imag ** 2
    return psf / psf.sum()


def incoherent_psf(bf: BrightfieldSpec, defocus_um: float, grid: Grid) -> RealImage:
    """Defocused incoherent PSF, centered at pixel (height//2, width//2)."""
    _check_na(bf, grid.params)
    return RealImage(np.fft.fftshift(_psf_wrapped(bf.numerical_aperture, defocus_um, grid)))


def render_brightfield(spec: PhantomSpec, bf: BrightfieldSpec, z_focus_um: float, grid: Grid) -> RealImage:
    _check_na(bf, grid.params)
    spec.check_fov(grid)
    atten = np.zeros((grid.height, grid.width, 3))
    for z in spec.plane_depths():
        members = [p for p in spec.particles if abs(p.z_um - z) <= PLANE_TOL_UM]
        planes = np.zeros((3, grid.height, grid.width))
        for p in members:
            d = disk_mask(p, grid)
            for c in range(3):
                planes[c] += (1.0 - p.amplitude) * (1.0 - p.rgb[c]) * d
        otf = np.fft.fft2(_psf_wrapped(bf.numerical_aperture, z - z_focus_um, grid))
        blurred = np.fft.ifft2(np.fft.fft2(planes, axes=(1, 2)) * otf, axes=(1, 2)).real
        atten += np.moveaxis(blurred, 0, -1)
    return RealImage(np.clip(1.0 - atten, 0.0, 1.0))


def render_stack(spec: PhantomSpec, bf: BrightfieldSpec, grid: Grid) -> ZStack:
    z = bf.z_positions_um
    if any(b <= a for a, b in zip(z, z[1:])):
        raise InvalidField("bright-field z positions must be strictly increasing")
    return ZStack(tuple(render_brightfield(spec, bf, zf, grid) for zf in z), z)


# ---------------------------------------------------------------------------
# phantom generation and text format

# Two pollen-like species: small absorbing yellow-brown grains and larger,
# mostly transparent white grains with a stronger phase delay. Grains tens of
# microns thick delay the near-infrared wave by radians, which bright field
# cannot see but the hologram does.
SPECIES = {
    "ragweed": dict(radius_um=(5.5, 7.5), amplitude=0.25, phase_rad=1.5, rgb=(0.80, 0.60, 0.25)),
    "bermuda": dict(radius_um=(9.0, 11.0), amplitude=0.45, phase_rad=2.2, rgb=(0.95, 0.95, 0.92)),
}


def species_of(p: Particle) -> str | None:
    for name, s in SPECIES.items():
        if tuple(p.rgb) == tuple(s["rgb"]):
            return name
    return None


def generate_phantom(seed: int, count: int, grid: Grid, z_range_um: tuple[float, float],
                     margin_um: float = 15.0, min_gap_um: float = 4.0,
                     volume_thickness_um: float = 800.0) -> PhantomSpec:
    """Random non-overlapping two-species phantom.

    ``z_range_um`` bounds particle depths; use equal bounds for a single
    (2D substrate) layer.
    """
    rng = derive_rng(seed, "phantom")
    xmax, ymax = grid.extent_um
    names = sorted(SPECIES)
    particles: list[Particle] = []
    tries = 0
    while len(particles) < count and tries < 200 * max(count, 1):
        tries += 1
        s = SPECIES[names[int(rng.integers(len(names)))]]
        r = float(rng.uniform(*s["radius_um"]))
        x = float(rng.uniform(margin_um, xmax - margin_um))
        y = float(rng.uniform(margin_um, ymax - margin_um))
        z = float(rng.uniform(*z_range_um)) if z_range_um[1] > z_range_um[0] else float(z_range_um[0])
        if any(np.hypot(x - q.x_um, y - q.y_um) < r + q.radius_um + min_gap_um for q in particles):
            continue
        particles.append(Particle(x, y, z, r, s["amplitude"], s["phase_rad"], s["rgb"]))
    return PhantomSpec(tuple(particles), volume_thickness_um, seed)


def format_phantom(spec: PhantomSpec) -> str:
    lines = ["PHANTOM v1"]
    for p in spec.particles:
        vals = (p.x_um, p.y_um, p.z_um, p.radius_um, p.amplitude, p.phase_rad, *p.rgb)
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def parse_phantom(text: str, seed: int = 0, volume_thickness_um: float = 800.0) -> PhantomSpec:
    from .errors import BadMagic

    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or lines[0] != "PHANTOM v1":
        raise BadMagic("phantom file must start with 'PHANTOM v1'")
    particles = []
    for i, ln in enumerate(lines[1:], start=2):
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split(",")
        if len(parts) != 9:
            raise InvalidField(f"line {i}: expected 9 comma-separated values, got {len(parts)}")
        x, y, z, r, a, phi, R, G, B = (float(v) for v in parts)
        particles.append(Particle(x, y, z, r, a, phi, (R, G, B)))
    return PhantomSpec(tuple(particles), volume_thickness_um, seed)
