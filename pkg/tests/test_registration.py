import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import map_coordinates, shift as nd_shift

from holobf.errors import DegenerateGeometry, DegenerateInput, NoOverlap, NoValidBlocks, SingularTransform
from holobf.fields import RealImage, ZStack
from holobf.registration import (
    AffineTransform2D,
    apply_registration,
    axial_match,
    estimate_affine,
    local_refine,
    phase_correlate,
    register,
    warp_affine,
    warp_displacement,
)

from oracles import smooth_warp, textured_image

TEX = textured_image(128, 128, seed=3)


def test_phase_correlate_identity_and_constant():
    dx, dy, peak = phase_correlate(TEX, TEX)
    assert abs(dx) < 1e-9 and abs(dy) < 1e-9 and peak > 0.99
    with pytest.raises(DegenerateInput):
        phase_correlate(np.ones((32, 32)), TEX[:32, :32])


def test_phase_correlate_subpixel():
    # b(x) = a(x - d) via Fourier shift, an exact oracle for band-limited content
    big = textured_image(256, 256, seed=11)
    b = nd_shift(big, (-4.7, 10.3), order=5, mode="wrap")
    dx, dy, _ = phase_correlate(big, b)
    assert abs(dx - 10.3) <= 0.05 and abs(dy + 4.7) <= 0.05


@given(st.integers(-12, 12), st.integers(-12, 12))
def test_phase_correlate_integer_shift(sx, sy):
    b = np.roll(TEX, (sy, sx), axis=(0, 1))
    dx, dy, _ = phase_correlate(TEX, b)
    assert abs(dx - sx) < 0.02 and abs(dy - sy) < 0.02


def test_affine_algebra():
    t = AffineTransform2D.similarity(3.0, 1.02, 4.0, -2.0)
    ident = t.compose(t.inverse())
    assert np.allclose(ident.matrix, AffineTransform2D.identity().matrix, atol=1e-12)
    pts = np.array([[1.0, 2.0], [30.0, -4.0]])
    u = AffineTransform2D.translation(1, 1)
    assert np.allclose(t.compose(u).apply(pts), u.apply(t.apply(pts)))
    with pytest.raises(SingularTransform):
        AffineTransform2D(np.array([[1.0, 2, 0], [2, 4, 0]])).inverse()


def test_estimate_affine_recovers_similarity():
    truth = AffineTransform2D.similarity(0.7, 0.98, 5.5, -3.25)
    src = np.random.default_rng(0).uniform(0, 500, (50, 2))
    t = estimate_affine(np.stack([src, truth.apply(src)], axis=1))
    assert np.allclose(t.matrix, truth.matrix, atol=1e-9)
    assert t.residual_rms < 1e-9


def test_estimate_affine_degenerate():
    with pytest.raises(DegenerateGeometry):
        estimate_affine([((0, 0), (1, 1)), ((1, 1), (2, 2))])
    line = [((k, 2 * k), (k + 1, 2 * k)) for k in range(6)]
    with pytest.raises(DegenerateGeometry):
        estimate_affine(line)


def test_warp_affine_identity_and_shift():
    img = RealImage(TEX)
    assert np.allclose(warp_affine(img, AffineTransform2D.identity()).plane, TEX, atol=1e-12)
    out = warp_affine(img, AffineTransform2D.translation(3, -2)).plane
    # out(x) = img(x - t)
    assert np.allclose(out[10:-10, 10:-10], TEX[12:-8, 7:-13], atol=1e-12)


def test_warp_round_trip():
    t = AffineTransform2D.similarity(2.0, 1.0, 1.5, 0.5)
    img = RealImage(TEX)
    back = warp_affine(warp_affine(img, t), t.inverse()).plane
    m = 16
    # interpolation loss: 1% RMS of the [0, 1] intensity range
    assert np.sqrt(np.mean((back[m:-m, m:-m] - TEX[m:-m, m:-m]) ** 2)) < 0.01


def test_local_refine_zero_field():
    f = local_refine(TEX, TEX, 32, 4.0)
    assert f.valid.all()
    assert np.max(np.abs(f.dx)) < 1e-9 and np.max(np.abs(f.dy)) < 1e-9
    assert f.to_csv().splitlines()[0] == "bx,by,dx,dy,peak"


def test_local_refine_smooth_warp():
    a = textured_image(256, 256, seed=5)
    dx, dy = smooth_warp(256, 256, 2.0, seed=1)
    Y, X = np.mgrid[0:256, 0:256].astype(float)
    # b(x) = a(x - d(x))
    b = map_coordinates(a, [Y - dy, X - dx], order=3, mode="nearest")
    f = local_refine(a, b, 32, 4.0)
    iy = np.round(f.centers_y).astype(int)
    ix = np.round(f.centers_x).astype(int)
    truth_x = dx[np.ix_(iy, ix)]
    truth_y = dy[np.ix_(iy, ix)]
    inner = (slice(1, -1), slice(1, -1))
    err = np.hypot(f.dx - truth_x, f.dy - truth_y)[inner]
    assert np.max(err) <= 0.2
    # applying the field undoes the warp in the interior
    fixed = warp_displacement(RealImage(b), f).plane
    assert np.abs(fixed - a)[48:-48, 48:-48].mean() < np.abs(b - a)[48:-48, 48:-48].mean() / 3


def test_local_refine_constant_raises():
    with pytest.raises(NoValidBlocks):
        local_refine(np.ones((64, 64)), np.ones((64, 64)), 32, 4.0)


def test_register_reduces_rms_monotonically():
    a = textured_image(256, 256, seed=9)
    t = AffineTransform2D.similarity(0.3, 1.0, 3.2, -1.7)
    b = warp_affine(RealImage(a), t)
    res = register(RealImage(a), b)
    rms = res.rms_stages
    assert rms["global"] <= rms["initial"]
    assert rms["affine"] <= rms["global"]
    assert rms["local"] <= rms["affine"]
    assert rms["local"] < 0.3 * rms["initial"]
    assert res.report_csv().startswith("stage,param,value\n")
    aligned = apply_registration(b, res).plane
    m = 24
    assert np.abs(aligned - a)[m:-m, m:-m].mean() < 0.02


def _stack_from_metric(values, z):
    """Planes whose focus metric grows with ``values`` (sharper texture blend)."""
    base = textured_image(48, 48, seed=2, sigma=1.0)
    blur = textured_image(48, 48, seed=2, sigma=6.0)
    planes = [RealImage(v * base + (1 - v) * blur + 1.0) for v in values]
    return ZStack(tuple(planes), tuple(z))


def test_axial_match_examples():
    z = [0.5 * k for k in range(11)]
    prof = np.exp(-((np.arange(11) - 5) / 2.0) ** 2)
    bf = _stack_from_metric(prof, z)
    off, pairs = axial_match(bf.planes, bf)
    assert off == 0 and pairs == [(k, k) for k in range(11)]
    # bp stack where focus sits two planes later: bf plane k pairs with bp plane k + 2
    shifted = _stack_from_metric(np.exp(-((np.arange(11) - 7) / 2.0) ** 2), z)
    off, pairs = axial_match(shifted.planes, bf)
    assert off == pytest.approx(1.0)
    assert pairs[0] == (0, 2)


def test_axial_match_flat_profile_prefers_zero_and_no_overlap():
    z = [0.5 * k for k in range(5)]
    flat = _stack_from_metric([0.5] * 5, z)
    off, _ = axial_match(flat.planes, flat)
    assert off == 0
    with pytest.raises(NoOverlap):
        axial_match(flat.planes[:2], flat, bp_z_um=[100.0, 100.5])
