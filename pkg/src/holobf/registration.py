"""Lateral and axial registration of back-propagated holograms to bright-field stacks.

Shift convention used throughout: ``phase_correlate(a, b)`` returns ``d`` such
that ``b(x) ~= a(x - d)``, i.e. the content of ``a`` moved by ``+d``.
``warp_affine(img, t)`` moves the content at ``p`` to ``t @ p``, so
``warp_affine(a, translation(d))`` reproduces that same shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import (
    DegenerateGeometry,
    DegenerateInput,
    NoOverlap,
    NoValidBlocks,
    ShapeMismatch,
    SingularTransform,
)
from .fields import RealImage, ZStack
from .propagation import focus_metric, gradient_magnitude

PEAK_THRESHOLD = 0.05
# blocks hold few frequency bins, so their spectral weight is wider than the full-frame default
BLOCK_SPECTRAL_SIGMA = 0.15
BLOCK_ITERATIONS = 2


def _plane(img) -> np.ndarray:
    if isinstance(img, RealImage):
        if img.channels == 1:
            return img.plane
        return img.data[:, :, 1]
    return np.asarray(img, dtype=np.float64)


# ---------------------------------------------------------------------------
# transforms


@dataclass(frozen=True, eq=False)
class AffineTransform2D:
    """2x3 matrix ``[[a11, a12, tx], [a21, a22, ty]]`` acting on (x, y) pixel coordinates."""

    matrix: np.ndarray
    residual_rms: float = 0.0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(2, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> AffineTransform2D:
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]))

    @classmethod
    def translation(cls, dx: float, dy: float) -> AffineTransform2D:
        return cls(np.array([[1.0, 0, dx], [0, 1.0, dy]]))

    @classmethod
    def similarity(cls, angle_deg: float, scale: float, dx: float, dy: float) -> AffineTransform2D:
        c, s = np.cos(np.radians(angle_deg)) * scale, np.sin(np.radians(angle_deg)) * scale
        return cls(np.array([[c, -s, dx], [s, c, dy]]))

    @property
    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    def inverse(self) -> AffineTransform2D:
        if abs(self.det) <= 1e-6:
            raise SingularTransform(f"affine determinant {self.det:g} is not invertible")
        return AffineTransform2D(np.linalg.inv(self.homogeneous())[:2])

    def compose(self, then: AffineTransform2D) -> AffineTransform2D:
        """Transform applying ``self`` first and ``then`` second."""
        return AffineTransform2D((then.homogeneous() @ self.homogeneous())[:2])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-block (dx, dy) at block centers; ``valid`` marks blocks measured directly."""

    centers_x: np.ndarray
    centers_y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    peak: np.ndarray
    valid: np.ndarray
    block_size: int

    def to_csv(self) -> str:
        rows = ["bx,by,dx,dy,peak"]
        for j, by in enumerate(self.centers_y):
            for i, bx in enumerate(self.centers_x):
                rows.append(f"{bx!r},{by!r},{self.dx[j, i]!r},{self.dy[j, i]!r},{self.peak[j, i]!r}")
        return "\n".join(rows) + "\n"

    def dense(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear interpolation of the block displacements to every pixel."""
        from scipy.interpolate import RegularGridInterpolator

        xs, ys = np.arange(width, dtype=float), np.arange(height, dtype=float)
        cx, cy = np.asarray(self.centers_x, float), np.asarray(self.centers_y, float)
        out = []
        for comp in (self.dx, self.dy):
            if len(cx) == 1 and len(cy) == 1:
                out.append(np.full((height, width), float(comp[0, 0])))
                continue
            # clamp query points to the hull of block centers (edge replication)
            qx = np.clip(xs, cx[0], cx[-1])
            qy = np.clip(ys, cy[0], cy[-1])
            gx = cx if len(cx) > 1 else np.array([cx[0] - 1, cx[0] + 1])
            gy = cy if len(cy) > 1 else np.array([cy[0] - 1, cy[0] + 1])
            vals = comp
            if len(cx) == 1:
                vals = np.repeat(vals, 2, axis=1)
            if len(cy) == 1:
                vals = np.repeat(vals, 2, axis=0)
            interp = RegularGridInterpolator((gy, gx), vals)
            Y, X = np.meshgrid(qy, qx, indexing="ij")
            out.append(interp(np.stack([Y.ravel(), X.ravel()], axis=1)).reshape(height, width))
        return out[0], out[1]


# ---------------------------------------------------------------------------
# interpolation


def _bilinear(a: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``a`` at fractional (xs, ys) with border replication."""
    h, w = a.shape[:2]
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2 if h > 1 else 0)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if a.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_affine(img: RealImage, t: AffineTransform2D) -> RealImage:
    """``out(x) = img(t^-1 x)``, bilinear, border replicated."""
    inv = t.inverse().matrix
    h, w = img.height, img.width
    Y, X = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * X + inv[0, 1] * Y + inv[0, 2]
    sy = inv[1, 0] * X + inv[1, 1] * Y + inv[1, 2]
    return RealImage(_bilinear(img.data, sx, sy))


def warp_displacement(img: RealImage, field: DisplacementField) -> RealImage:
    """``out(x) = img(x + d(x))`` with ``d`` interpolated from the block field."""
    h, w = img.height, img.width
    dx, dy = field.dense(w, h)
    Y, X = np.mgrid[0:h, 0:w].astype(np.float64)
    return RealImage(_bilinear(img.data, X + dx, Y + dy))


# ---------------------------------------------------------------------------
# phase correlation


def _parabolic_offset(ym: float, y0: float, yp: float) -> float:
    denom = ym - 2 * y0 + yp
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / denom, -0.5, 0.5))


def _correlation_surface(a: np.ndarray, b: np.ndarray, spectral_sigma: float, window: bool) -> np.ndarray:
    if window:
        win = hann2d(*a.shape)
        a = (a - a.mean()) * win
        b = (b - b.mean()) * win
    h, w = a.shape
    cross = np.fft.fft2(a) * np.conj(np.fft.fft2(b))
    mag = np.abs(cross)
    R = np.divide(cross, mag, out=np.zeros_like(cross), where=mag > 0)
    weight = np.ones_like(mag)
    if spectral_sigma:
        fx = np.fft.fftfreq(w)[None, :]
        fy = np.fft.fftfreq(h)[:, None]
        weight = np.exp(-(fx * fx + fy * fy) / (2 * spectral_sigma ** 2))
    return np.fft.ifft2(R * weight).real / weight.mean()


def _peak_offset(corr: np.ndarray, log_fit: bool) -> tuple[float, float, float]:
    h, w = corr.shape
    iy, ix = np.unravel_index(int(np.argmax(corr)), corr.shape)
    peak = float(corr[iy, ix])

    def fit(vm, v0, vp):
        if log_fit and min(vm, v0, vp) > 0:
            return _parabolic_offset(np.log(vm), np.log(v0), np.log(vp))
        return _parabolic_offset(vm, v0, vp)

    px = ix + fit(corr[iy, (ix - 1) % w], peak, corr[iy, (ix + 1) % w])
    py = iy + fit(corr[(iy - 1) % h, ix], peak, corr[(iy + 1) % h, ix])
    # the surface peaks at -d; unwrap to a signed shift
    px = px - w if px > w / 2 else px
    py = py - h if py > h / 2 else py
    return -px + 0.0, -py + 0.0, peak


def phase_correlate(a, b, spectral_sigma: float = 0.05, window: bool = True,
                    refine: bool = True) -> tuple[float, float, float]:
    """Shift ``(dx, dy, peak)`` of ``b`` relative to ``a`` from the normalized cross-power spectrum.

    The cross-power spectrum is weighted by a Gaussian in normalized frequency
    (``spectral_sigma``, cycles/pixel) so the correlation peak is Gaussian
    shaped, and the 3-point parabolic fit per axis is done on the log of the
    peak samples. Weights are normalized so a perfect match gives ``peak == 1``.

    With ``window`` both images are mean-subtracted and Hann windowed. With
    ``refine`` the integer part of the first estimate is undone by a circular
    roll of ``b`` and the residual is measured again, which removes the bias
    the window introduces for large shifts.
    """
    a = _plane(a)
    b = _plane(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateInput("phase correlation needs non-constant images")
    log_fit = bool(spectral_sigma)
    dx, dy, peak = _peak_offset(_correlation_surface(a, b, spectral_sigma, window), log_fit)
    if refine:
        nx, ny = int(round(dx)), int(round(dy))
        if nx or ny:
            b2 = np.roll(b, (-ny, -nx), axis=(0, 1))
            rx, ry, peak = _peak_offset(_correlation_surface(a, b2, spectral_sigma, window), log_fit)
            dx, dy = nx + rx, ny + ry
        else:
            dx, dy = float(dx), float(dy)
    return dx, dy, float(np.clip(peak, 0.0, 1.0))


def hann2d(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


# ---------------------------------------------------------------------------
# affine fit


def estimate_affine(point_pairs: Sequence) -> AffineTransform2D:
    """Least-squares affine mapping ``src -> dst``; pairs are ``((sx, sy), (dx, dy))``."""
    pairs = np.asarray(point_pairs, dtype=np.float64).reshape(-1, 2, 2)
    if len(pairs) < 3:
        raise DegenerateGeometry(f"need at least 3 point pairs, got {len(pairs)}")
    src, dst = pairs[:, 0], pairs[:, 1]
    centered = src - src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateGeometry("source points are collinear")
    # solve in centered coordinates for conditioning, then shift back
    A = np.hstack([centered, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(A, dst, rcond=None)
    lin = sol[:2].T
    trans = sol[2] - lin @ src.mean(axis=0)
    m = np.hstack([lin, trans[:, None]])
    resid = dst - (src @ lin.T + trans)
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    t = AffineTransform2D(m, rms)
    if abs(t.det) <= 1e-6:
        raise DegenerateGeometry("fitted affine is singular")
    return t


# ---------------------------------------------------------------------------
# block matching


def _block_grid(h: int, w: int, bs: int) -> tuple[list[int], list[int]]:
    ny, nx = h // bs, w // bs
    oy, ox = (h - ny * bs) // 2, (w - nx * bs) // 2
    return [ox + i * bs for i in range(nx)], [oy + j * bs for j in range(ny)]


def block_shifts(a, b, block_size: int, search_radius: float):
    """Hann-windowed phase correlation over non-overlapping blocks.

    Each block's estimate is refined by resampling ``b`` at the current shift
    and correlating the residual, which removes most of the window bias.
    """
    a = _plane(a)
    b = _plane(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    if block_size < 16:
        raise ShapeMismatch(f"block_size must be >= 16, got {block_size}")
    xs, ys = _block_grid(*a.shape, block_size)
    shape = (len(ys), len(xs))
    dx, dy, peak = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    for j, y0 in enumerate(ys):
        for i, x0 in enumerate(xs):
            pa = a[y0:y0 + block_size, x0:x0 + block_size]
            pb = b[y0:y0 + block_size, x0:x0 + block_size]
            if np.ptp(pa) < 1e-12 or np.ptp(pb) < 1e-12:
                continue
            sx, sy, pk = phase_correlate(pa, pb, BLOCK_SPECTRAL_SIGMA)
            for _ in range(BLOCK_ITERATIONS - 1):
                if abs(sx) > search_radius or abs(sy) > search_radius:
                    break
                Y, X = np.mgrid[y0:y0 + block_size, x0:x0 + block_size].astype(np.float64)
                pr = map_coordinates(b, [Y + sy, X + sx], order=3, mode="nearest")
                if np.ptp(pr) < 1e-12:
                    break
                rx, ry, pk = phase_correlate(pa, pr, BLOCK_SPECTRAL_SIGMA)
                sx, sy = sx + rx, sy + ry
            peak[j, i] = pk
            if pk >= PEAK_THRESHOLD and abs(sx) <= search_radius and abs(sy) <= search_radius:
                dx[j, i], dy[j, i], valid[j, i] = sx, sy, True
    cx = np.array(xs, float) + (block_size - 1) / 2
    cy = np.array(ys, float) + (block_size - 1) / 2
    return cx, cy, dx, dy, peak, valid


def local_refine(a, b, block_size: int = 32, search_radius: float = 4.0) -> DisplacementField:
    """Per-block shift of ``b`` relative to ``a``; invalid blocks take their nearest valid neighbour's value."""
    cx, cy, dx, dy, peak, valid = block_shifts(a, b, block_size, search_radius)
    if not valid.any():
        raise NoValidBlocks("no block reached the correlation peak threshold")
    vj, vi = np.nonzero(valid)
    for j, i in zip(*np.nonzero(~valid)):
        k = int(np.argmin((vj - j) ** 2 + (vi - i) ** 2))
        dx[j, i], dy[j, i] = dx[vj[k], vi[k]], dy[vj[k], vi[k]]
    return DisplacementField(cx, cy, dx, dy, peak, valid, block_size)


# ---------------------------------------------------------------------------
# cross-modality preprocessing and the global -> affine -> local chain


def registration_features(img) -> np.ndarray:
    """Mean-normalized gradient magnitude; uses the green channel of RGB images."""
    a = _plane(img)
    m = a.mean()
    if m > 0:
        a = a / m
    return gradient_magnitude(a)


@dataclass(frozen=True)
class RegistrationResult:
    global_shift: tuple
    affine: AffineTransform2D
    displacement: DisplacementField
    rms_stages: dict

    def report_csv(self) -> str:
        rows = ["stage,param,value"]
        rows.append(f"global,dx,{float(self.global_shift[0])!r}")
        rows.append(f"global,dy,{float(self.global_shift[1])!r}")
        for name, v in zip(("a11", "a12", "tx", "a21", "a22", "ty"), self.affine.matrix.ravel()):
            rows.append(f"affine,{name},{float(v)!r}")
        rows.append(f"affine,residual_rms,{float(self.affine.residual_rms)!r}")
        valid = self.displacement.valid
        rows.append(f"local,valid_blocks,{int(valid.sum())}")
        rows.append(f"local,total_blocks,{valid.size}")
        for stage, v in self.rms_stages.items():
            rows.append(f"rms,{stage},{float(v)!r}")
        rows.append("affine_matrix," + ",".join(repr(float(v)) for v in self.affine.matrix.ravel()))
        return "\n".join(rows) + "\n"


def _rms(a: np.ndarray, b: np.ndarray, margin: int) -> float:
    sl = (slice(margin, -margin or None), slice(margin, -margin or None))
    return float(np.sqrt(np.mean((a[sl] - b[sl]) ** 2)))


def fit_affine_robust(src: np.ndarray, dst: np.ndarray, rounds: int = 3) -> AffineTransform2D:
    """Least-squares affine with iterative rejection of pairs beyond 3x the median residual."""
    keep = np.ones(len(src), dtype=bool)
    t = estimate_affine(np.stack([src, dst], axis=1))
    for _ in range(rounds):
        resid = np.hypot(*(t.apply(src) - dst).T)
        cut = max(3.0 * np.median(resid[keep]), 0.25)
        new_keep = resid <= cut
        if new_keep.sum() < 3 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
        t = estimate_affine(np.stack([src[keep], dst[keep]], axis=1))
    return t


def register(reference, moving, block_size: int = 32, search_radius: float = 4.0,
             affine_block: int = 32, margin: int = 8) -> RegistrationResult:
    """Align ``moving`` onto ``reference``: global shift, then affine, then local blocks.

    Both inputs are converted with :func:`registration_features` before any
    correlation, which makes hologram amplitude and bright-field images
    comparable despite their inverted contrast. A stage whose correction would
    raise the feature RMS difference is skipped (its transform stays identity).
    """
    fa = registration_features(reference)
    fb = registration_features(moving)
    mov = RealImage(fb)
    rms = {"initial": _rms(fa, fb, margin)}

    gx, gy, _ = phase_correlate(fa, fb)
    shift = AffineTransform2D.translation(-gx, -gy)
    f1 = warp_affine(mov, shift).plane
    rms["global"] = _rms(fa, f1, margin)
    if rms["global"] > rms["initial"]:
        gx, gy, shift, f1 = 0.0, 0.0, AffineTransform2D.identity(), fb
        rms["global"] = rms["initial"]

    cx, cy, dx, dy, _, valid = block_shifts(fa, f1, affine_block, affine_block / 4)
    affine, f2 = shift, f1
    if valid.sum() >= 3:
        X, Y = np.meshgrid(cx, cy)
        src = np.stack([X[valid] + dx[valid], Y[valid] + dy[valid]], axis=1)
        dst = np.stack([X[valid], Y[valid]], axis=1)
        try:
            cand = shift.compose(fit_affine_robust(src, dst))
            f_cand = warp_affine(mov, cand).plane
            if _rms(fa, f_cand, margin) <= rms["global"]:
                affine, f2 = cand, f_cand
        except DegenerateGeometry:
            pass
    rms["affine"] = _rms(fa, f2, margin)

    disp = local_refine(fa, f2, block_size, search_radius)
    f3 = warp_displacement(RealImage(f2), disp).plane
    rms["local"] = _rms(fa, f3, margin)
    if rms["local"] > rms["affine"]:
        zero = np.zeros_like(disp.dx)
        disp = DisplacementField(disp.centers_x, disp.centers_y, zero, zero.copy(), disp.peak,
                                 np.zeros_like(disp.valid), disp.block_size)
        rms["local"] = rms["affine"]
    return RegistrationResult((gx, gy), affine, disp, rms)


def apply_registration(img: RealImage, result: RegistrationResult) -> RealImage:
    return warp_displacement(warp_affine(img, result.affine), result.displacement)


# ---------------------------------------------------------------------------
# axial matching


def _ncc(p: np.ndarray, q: np.ndarray) -> float:
    # profiles flat to rounding carry no alignment information
    if np.ptp(p) <= 1e-12 * np.abs(p).max() or np.ptp(q) <= 1e-12 * np.abs(q).max():
        return 0.0
    p = p - p.mean()
    q = q - q.mean()
    den = np.sqrt((p * p).sum() * (q * q).sum())
    return float((p * q).sum() / den) if den > 0 else 0.0


def axial_match(bp_stack: Sequence, bf_stack: ZStack, bp_z_um: Sequence[float] | None = None,
                min_overlap: int = 3) -> tuple[float, list[tuple[int, int]]]:
    """Integer-plane axial offset between a refocused hologram stack and a bright-field stack.

    Returns ``(z_offset_um, pairing)``: bright-field plane ``k`` at ``z`` pairs
    with the back-propagated plane nearest ``z + z_offset_um``; ``pairing``
    lists ``(bf_index, bp_index)``.
    """
    if len(bp_stack) == 0 or len(bf_stack) == 0:
        raise NoOverlap("both stacks must be nonempty")
    bf_z = np.asarray(bf_stack.z_positions_um)
    bp_z = np.asarray(bp_z_um if bp_z_um is not None else bf_z, dtype=float)
    if len(bp_z) != len(bp_stack):
        raise NoOverlap("bp z list length does not match the stack")
    step = float(np.median(np.diff(bf_z))) if len(bf_z) > 1 else 1.0
    m_bp = np.array([focus_metric(_plane(p)) for p in bp_stack])
    m_bf = np.array([focus_metric(_plane(p)) for p in bf_stack.planes])

    def pairs_for(offset_um: float):
        out = []
        for k, z in enumerate(bf_z):
            j = int(np.argmin(np.abs(bp_z - (z + offset_um))))
            if abs(bp_z[j] - (z + offset_um)) <= 0.5 * step + 1e-9:
                out.append((k, j))
        return out

    span = len(bf_z) + len(bp_z)
    best = None
    for s in sorted(range(-span, span + 1), key=lambda s: (abs(s), s)):
        pairs = pairs_for(s * step)
        if len(pairs) < min_overlap:
            continue
        k, j = np.array(pairs).T
        score = _ncc(m_bf[k], m_bp[j])
        if best is None or score > best[0] + 1e-12:
            best = (score, s * step, pairs)
    if best is None:
        raise NoOverlap(f"no offset leaves {min_overlap} or more paired planes")
    return best[1], best[2]
