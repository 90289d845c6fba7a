import numpy as np
import pytest

from holobf.errors import BadGeometry, BadMagic
from holobf.fields import OpticalParams, amplitude, intensity
from holobf.propagation import back_propagate, focus_metric, propagate
from holobf.simulate import (
    BrightfieldSpec,
    Grid,
    Particle,
    PhantomSpec,
    SensorSpec,
    build_object_plane,
    format_phantom,
    generate_phantom,
    incoherent_psf,
    parse_phantom,
    record_hologram,
    render_brightfield,
    render_stack,
    sensor_field,
)

GRID = Grid(128, 128, OpticalParams(0.85, 1.12, 1.0))
NOISELESS = SensorSpec(bit_depth=16, read_noise_std=0.0)


def test_empty_object_plane_is_unit():
    f = build_object_plane(PhantomSpec(), 10.0, GRID)
    assert np.array_equal(f.data, np.ones((128, 128)))


def test_opaque_disk_profile():
    p = Particle(70.0, 70.0, 10.0, 10.0, 0.0, 0.0)
    t = build_object_plane(PhantomSpec((p,)), 10.0, GRID).data
    r = np.hypot(*(np.mgrid[0:128, 0:128] * 1.12 - 70.0))
    assert np.all(t[r < 10 - 0.56] == 0)
    assert np.all(t[r > 10 + 0.56] == 1)
    edge = t[np.abs(r - 10) < 0.5].real
    assert np.all((edge > 0) & (edge < 1))


def test_disjoint_particles_multiply():
    a = Particle(30.0, 30.0, 5.0, 8.0, 0.3, 1.0)
    b = Particle(100.0, 90.0, 5.1, 6.0, 0.6, -0.5)
    both = build_object_plane(PhantomSpec((a, b)), 5.0, GRID).data
    ta = build_object_plane(PhantomSpec((a,)), 5.0, GRID).data
    tb = build_object_plane(PhantomSpec((b,)), 5.0, GRID).data
    assert np.allclose(both, ta * tb, atol=1e-15)
    # b is within the +-0.25 um plane tolerance, a particle 1 um away is not
    far = Particle(100.0, 30.0, 6.0, 6.0, 0.0, 0.0)
    assert np.array_equal(build_object_plane(PhantomSpec((a, b, far)), 5.0, GRID).data, both)


def test_empty_hologram_is_constant():
    h = record_hologram(PhantomSpec(), SensorSpec(bit_depth=10), 500.0, GRID)
    assert h.channels == 1
    assert np.ptp(h.plane) == 0


def test_bit_depth_one_gives_two_levels():
    spec = PhantomSpec((Particle(70.0, 70.0, 200.0, 8.0, 0.2, 0.5),))
    h = record_hologram(spec, SensorSpec(bit_depth=1, read_noise_std=0.01, seed=3), 500.0, GRID)
    assert len(np.unique(h.plane)) <= 2


def test_particle_deeper_than_z2_rejected():
    spec = PhantomSpec((Particle(70.0, 70.0, 600.0, 5.0),))
    with pytest.raises(BadGeometry):
        record_hologram(spec, NOISELESS, 500.0, GRID)


def test_single_scatterer_rings_follow_propagation_oracle():
    x0 = y0 = 64 * 1.12
    p = Particle(x0, y0, 150.0, 3.0, 0.7, 0.0)
    holo = record_hologram(PhantomSpec((p,)), NOISELESS, 500.0, GRID).plane
    # oracle: transmission at the particle plane propagated straight to the sensor
    t = build_object_plane(PhantomSpec((p,)), 150.0, GRID)
    oracle = intensity(propagate(t, 150.0)).plane
    assert np.allclose(holo, oracle, atol=1e-4)
    # rings centred on the particle: radial profile oscillates around the background
    prof = holo[64, 64:120]
    crossings = np.sum(np.diff(np.sign(prof - np.median(holo))) != 0)
    assert crossings >= 4
    assert np.allclose(holo[64, 64 + 10], holo[64, 64 - 10], atol=1e-3)
    assert np.allclose(holo[64 + 10, 64], holo[64, 64 + 10], atol=1e-3)


def test_multi_plane_order_matches_manual_chain():
    a = Particle(50.0, 50.0, 300.0, 6.0, 0.4, 0.3)
    b = Particle(90.0, 80.0, 200.0, 5.0, 0.6, 0.8)
    spec = PhantomSpec((a, b))
    u = propagate(build_object_plane(spec, 300.0, GRID), 100.0)
    u = u.with_data(u.data * build_object_plane(spec, 200.0, GRID).data)
    u = propagate(u, 200.0)
    assert np.allclose(intensity(sensor_field(spec, 500.0, GRID)).plane, intensity(u).plane, atol=1e-9)


def test_psf_normalization_and_shape():
    bf = BrightfieldSpec(0.3)
    for d in (0.0, 5.0, -20.0):
        assert abs(incoherent_psf(bf, d, GRID).data.sum() - 1) < 1e-12
    psf0 = incoherent_psf(bf, 0.0, GRID).plane
    assert np.unravel_index(np.argmax(psf0), psf0.shape) == (64, 64)
    assert np.allclose(psf0[64, 64 + 5], psf0[64 + 5, 64])
    assert incoherent_psf(bf, 5.0, GRID).plane.max() < psf0.max()
    with pytest.raises(Exception):
        incoherent_psf(BrightfieldSpec(1.2), 0.0, GRID)


def test_brightfield_examples():
    bf = BrightfieldSpec(0.75)
    assert np.array_equal(render_brightfield(PhantomSpec(), bf, 0.0, GRID).data, np.ones((128, 128, 3)))
    p = Particle(70.0, 70.0, 100.0, 10.0, 0.0, 0.0, (1.0, 1.0, 1.0))
    img = render_brightfield(PhantomSpec((p,)), bf, 100.0, GRID).data
    assert np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 1], img[..., 2])
    grey = Particle(70.0, 70.0, 100.0, 10.0, 0.0, 0.0, (0.5, 0.5, 0.5))
    sharp = render_brightfield(PhantomSpec((grey,)), bf, 100.0, GRID).data[..., 1]
    soft = render_brightfield(PhantomSpec((grey,)), bf, 60.0, GRID).data[..., 1]
    assert focus_metric(soft) < focus_metric(sharp)
    grad = lambda a: np.hypot(*np.gradient(a)).max()
    assert grad(soft) < grad(sharp)


def test_brightfield_linear_in_absorbance():
    bf = BrightfieldSpec(0.75)
    one = Particle(70.0, 70.0, 100.0, 10.0, 0.8, 0.0, (0.2, 0.5, 0.9))
    two = Particle(70.0, 70.0, 100.0, 10.0, 0.6, 0.0, (0.2, 0.5, 0.9))
    a1 = 1 - render_brightfield(PhantomSpec((one,)), bf, 90.0, GRID).data
    a2 = 1 - render_brightfield(PhantomSpec((two,)), bf, 90.0, GRID).data
    assert np.allclose(a2, 2 * a1, atol=1e-12)


def test_render_stack():
    zs = [90 + 0.5 * k for k in range(81)]
    small = Grid(96, 96, GRID.params)
    spec_small = PhantomSpec((Particle(50.0, 50.0, 100.0, 8.0, 0.2, 0.0, (0.8, 0.6, 0.2)),))
    st = render_stack(spec_small, BrightfieldSpec(0.75, zs), small)
    assert len(st) == 81 and st.z_positions_um[1] - st.z_positions_um[0] == 0.5
    assert len(render_stack(spec_small, BrightfieldSpec(0.75, [3.0]), small)) == 1
    with pytest.raises(Exception):
        render_stack(spec_small, BrightfieldSpec(0.75, [3.0, 1.0]), small)


def test_coherent_fringes_exceed_incoherent_background():
    a = Particle(70.0, 70.0, 300.0, 6.0, 0.3, 0.0, (0.8, 0.6, 0.25))
    b = Particle(95.0, 60.0, 240.0, 8.0, 0.3, 0.0, (0.8, 0.6, 0.25))
    spec = PhantomSpec((a, b))
    holo = record_hologram(spec, NOISELESS, 500.0, GRID)
    amp = amplitude(back_propagate(holo, 300.0, GRID.params)).plane
    bf = render_brightfield(spec, BrightfieldSpec(0.75), 300.0, GRID).data[..., 1]
    Y, X = np.mgrid[0:128, 0:128] * 1.12
    ring = (np.hypot(X - 70, Y - 70) > 8) & (np.hypot(X - 70, Y - 70) < 20)
    assert amp[ring].std() >= 2 * bf[ring].std()


def test_phantom_text_round_trip():
    spec = generate_phantom(7, 10, GRID, (100.0, 200.0))
    assert len(spec.particles) == 10
    text = format_phantom(spec)
    assert text.startswith("PHANTOM v1\n")
    assert parse_phantom(text).particles == spec.particles
    assert generate_phantom(7, 10, GRID, (100.0, 200.0)) == spec
    with pytest.raises(BadMagic):
        parse_phantom("PHANTOM v2\n")
