"""Command line entry point: ``holobf <subcommand> [--config PATH] [--out DIR] ...``.

Every subcommand writes its artifacts under ``--out`` together with
``config.txt`` (the fully resolved configuration) and ``manifest.json``
(input hashes, config hash, versions, timestamp). Errors are reported as a
single ``ERROR: <code>: <msg>`` line on stderr with exit code 1 for invalid
input and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import BadMagic, ConfigError, HoloError
from .fields import (
    ComplexField,
    RealImage,
    amplitude,
    load_cfld,
    load_pnm,
    write_cfld,
    write_pnm,
)

CONFIG_NAME = "config.txt"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RunConfig:
    grid: int = 256
    pitch_um: float = 1.12
    wavelength_um: float = 0.85
    refractive_index: float = 1.0
    z2_um: float = 500.0
    numerical_aperture: float = 0.75
    bit_depth: int = 10
    read_noise_std: float = 0.002
    seed: int = 1
    particles: int = 14
    z_min_um: float = 250.0
    z_max_um: float = 350.0
    n_phantoms: int = 10
    patch_size: int = 64
    stride: int = 32
    block_size: int = 32
    search_radius: float = 4.0
    base_width: int = 16
    depth: int = 3
    d_layers: int = 3
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 3e-4
    lambda_l1: float = 100.0
    lambda_adv: float = 1.0
    val_every: int = 100

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @property
    def params(self):
        from .fields import OpticalParams

        return OpticalParams(self.wavelength_um, self.pitch_um, self.refractive_index)

    @property
    def grid_spec(self):
        from .simulate import Grid

        return Grid(self.grid, self.grid, self.params)

    def pipeline(self):
        from .pipeline import PipelineConfig

        return PipelineConfig(
            grid=self.grid, pitch_um=self.pitch_um, wavelength_um=self.wavelength_um,
            refractive_index=self.refractive_index, z2_um=self.z2_um,
            numerical_aperture=self.numerical_aperture, bit_depth=self.bit_depth,
            read_noise_std=self.read_noise_std, n_phantoms=self.n_phantoms,
            particles_per_phantom=self.particles, layer_depth_um=(self.z_min_um, self.z_max_um),
            patch_size=self.patch_size, stride=self.stride, seed=self.seed,
            base_width=self.base_width, depth=self.depth, d_layers=self.d_layers, steps=self.steps,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            lambda_l1=self.lambda_l1, lambda_adv=self.lambda_adv)


def _coerce(name: str, raw: str, kind):
    try:
        if kind in (int, "int"):
            return int(raw, 0)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    """``key=value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


# ---------------------------------------------------------------------------
# input readers that check the magic first


def _read(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file not found: {path}")
    return p.read_bytes()


def read_field(path) -> ComplexField:
    buf = _read(path)
    if buf[:4] != b"CFLD":
        raise BadMagic(f"{path}: not a .cfld file")
    return load_cfld(buf)


def read_image(path) -> RealImage:
    """A hologram or bright-field image: PGM/PPM, or the real part of a .cfld."""
    buf = _read(path)
    if buf[:4] == b"CFLD":
        return RealImage(load_cfld(buf).data.real.copy())
    if buf[:2] in (b"P5", b"P6"):
        return load_pnm(buf)
    raise BadMagic(f"{path}: expected CFLD or binary PGM/PPM")


def read_ppds(path):
    from .dataset import load_dataset

    return load_dataset(_read(path))


def read_cmwt(path):
    from .net.io import load_weights

    return load_weights(_read(path))


def read_phantom(path, seed: int):
    from .simulate import parse_phantom

    return parse_phantom(_read(path).decode("utf-8"), seed=seed)


# ---------------------------------------------------------------------------
# output bookkeeping


class Run:
    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> str:
        self.inputs[str(path)] = hashlib.sha256(_read(path)).hexdigest()
        return str(path)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self) -> None:
        (self.out / CONFIG_NAME).write_text(self.cfg.to_text())
        manifest = {
            "command": self.command,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "config_sha256": self.cfg.digest(),
            "versions": {"holobf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        (self.out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _z_list(args) -> list[float]:
    if getattr(args, "z", None):
        return [float(z) for z in args.z]
    if args.z_count is not None:
        return [args.z_start + k * args.z_step for k in range(args.z_count)]
    return []


def _z_manifest(zs) -> str:
    return "index,z_um\n" + "".join(f"{k},{z!r}\n" for k, z in enumerate(zs))


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(run: Run, args) -> None:
    from .simulate import format_phantom, generate_phantom

    c = run.cfg
    spec = generate_phantom(c.seed, c.particles, c.grid_spec, (c.z_min_um, c.z_max_um))
    run.path("phantom.txt").write_text(format_phantom(spec))
    print(f"phantom: {len(spec.particles)} particles")


def cmd_record(run: Run, args) -> None:
    """Hologram of a phantom, plus bright-field planes when z positions are given."""
    from .simulate import BrightfieldSpec, SensorSpec, record_hologram, render_stack

    c = run.cfg
    spec = read_phantom(run.input(args.phantom), c.seed)
    holo = record_hologram(spec, SensorSpec(c.bit_depth, c.read_noise_std, c.seed), c.z2_um, c.grid_spec)
    write_cfld(run.path("hologram.cfld"), ComplexField(holo.plane, c.params))
    write_pnm(run.path("hologram.pgm"), holo)
    zs = _z_list(args)
    if zs:
        stack = render_stack(spec, BrightfieldSpec(c.numerical_aperture, zs), c.grid_spec)
        for k, img in enumerate(stack.planes):
            write_pnm(run.path(f"brightfield_{k:03d}.ppm"), img)
        run.path("brightfield.csv").write_text(_z_manifest(zs))
    print(f"record: hologram {c.grid}x{c.grid}, {len(zs)} bright-field planes")


def cmd_backprop(run: Run, args) -> None:
    from .propagation import back_propagate

    if args.z is None or len(args.z) != 1:
        raise ConfigError("backprop needs exactly one --z")
    holo = read_image(run.input(args.hologram))
    f = back_propagate(holo, float(args.z[0]), run.cfg.params)
    write_cfld(run.path("field.cfld"), f)
    write_pnm(run.path("amplitude.pgm"), amplitude(f))
    print(f"backprop: z = {args.z[0]} um")


def cmd_zscan(run: Run, args) -> None:
    from .propagation import zscan

    holo = read_image(run.input(args.hologram))
    zs = _z_list(args)
    stack = zscan(holo, zs, run.cfg.params)
    for k, f in enumerate(stack):
        write_cfld(run.path(f"plane_{k:03d}.cfld"), f)
    run.path("zscan.csv").write_text(_z_manifest(zs))
    print(f"zscan: {len(stack)} planes")


def cmd_register(run: Run, args) -> None:
    from .registration import apply_registration, register

    ref = read_image(run.input(args.reference))
    if Path(args.reference).read_bytes()[:4] == b"CFLD":
        ref = amplitude(read_field(args.reference))
    mov = read_image(run.input(args.moving))
    res = register(ref, mov, run.cfg.block_size, run.cfg.search_radius)
    run.path("registration.csv").write_text(res.report_csv())
    run.path("displacement.csv").write_text(res.displacement.to_csv())
    aligned = apply_registration(mov, res)
    write_pnm(run.path("aligned.ppm" if aligned.channels == 3 else "aligned.pgm"), aligned)
    print("register: " + ", ".join(f"{k} {v:.4g}" for k, v in res.rms_stages.items()))


def cmd_make_dataset(run: Run, args) -> None:
    """Simulate the phantom corpus from the config and write the paired patch set."""
    from .dataset import write_dataset
    from .pipeline import build_corpus

    corpus = build_corpus(run.cfg.pipeline())
    write_dataset(run.path("dataset.ppds"), corpus.dataset)
    rows = ["phantom,affine_rms,local_rms,axial_offset_um"]
    for i, (reg, off) in enumerate(zip(corpus.registrations, corpus.axial_offsets_um)):
        rows.append(f"{i},{reg.rms_stages['affine']!r},{reg.rms_stages['local']!r},{off!r}")
    run.path("registration.csv").write_text("\n".join(rows) + "\n")
    s = corpus.dataset.split
    print(f"make-dataset: {len(corpus.dataset)} patches "
          f"(train {len(s['train'])}, val {len(s['val'])}, test {len(s['test'])})")


def cmd_train(run: Run, args) -> None:
    from .net.io import write_weights
    from .net.train import train

    c = run.cfg
    ds = read_ppds(run.input(args.dataset))
    p = c.pipeline()
    tcfg = replace(p.train_config(), val_every=c.val_every)

    def progress(step, lg, ld, val):
        print(f"step {step} loss_g {lg:.4f} loss_d {ld:.4f} val_l1 {val}", flush=True)

    res = train(ds, p.generator_config(), p.discriminator_config(), tcfg, progress=progress)
    write_weights(run.path("weights.cmwt"), res.weights())
    run.path("history.csv").write_text(res.history.to_csv())
    print(f"train: {c.steps} steps")


def cmd_infer(run: Run, args) -> None:
    """Bright-field-equivalent images for saved fields, or for a virtual z-scan of a hologram."""
    from .net.infer import infer
    from .propagation import zscan

    weights = read_cmwt(run.input(args.weights))
    if args.hologram:
        zs = _z_list(args)
        planes = zscan(read_image(run.input(args.hologram)), zs, run.cfg.params)
        run.path("outputs.csv").write_text(_z_manifest(zs))
    elif args.field:
        planes = [read_field(run.input(p)) for p in args.field]
    else:
        raise ConfigError("infer needs --field or --hologram")
    for k, f in enumerate(planes):
        write_pnm(run.path(f"output_{k:03d}.ppm"), infer(weights, f, run.cfg.patch_size))
    print(f"infer: {len(planes)} images")


def cmd_eval(run: Run, args) -> None:
    """Metrics of the generator against the input baseline over one split of a dataset."""
    from . import metrics
    from .net.models import config_from_params
    from .net.train import predict
    from .pipeline import input_amplitude_rgb

    weights = read_cmwt(run.input(args.weights))
    ds = read_ppds(run.input(args.dataset))
    gcfg = config_from_params(weights)
    idx = list(ds.split[args.split])
    if not idx:
        raise ConfigError(f"split {args.split!r} is empty")
    x = np.stack([ds.patches[i].input for i in idx])
    out = predict(weights, gcfg, x)
    reports = []
    for k, i in enumerate(idx):
        t = np.moveaxis(ds.patches[i].target, 0, -1)
        base = np.moveaxis(input_amplitude_rgb(x[k]), 0, -1)
        reports.append(metrics.report(str(i), "input", base, t))
        reports.append(metrics.report(str(i), "output", np.moveaxis(out[k], 0, -1), t))
    run.path("metrics.csv").write_text(metrics.reports_csv(reports))
    s_in = np.mean([r.ssim for r in reports[0::2]])
    s_out = np.mean([r.ssim for r in reports[1::2]])
    print(f"eval: {len(idx)} patches, ssim input {s_in:.4f} output {s_out:.4f}")


def selftest_checks() -> list[tuple[str, bool, str]]:
    from .fields import OpticalParams
    from .net import tensor as T
    from .net.gradcheck import gradient_check
    from .propagation import propagate
    from .registration import phase_correlate

    rng = np.random.default_rng(0)
    results = []

    n = 64
    spec = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    f = np.fft.fftfreq(n)
    spec[np.hypot(*np.meshgrid(f, f)) > 0.125] = 0
    u = ComplexField(1 + np.fft.ifft2(spec), OpticalParams())
    err = np.max(np.abs(propagate(propagate(u, 100.0, pad=False), -100.0, pad=False).data - u.data))
    results.append(("propagation round trip", err < 1e-9, f"max err {err:.2e}"))

    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal((3, 1, 1, 1))
    e = gradient_check(lambda t: T.conv2d(t[0], t[1], t[2]), [x, w, b])
    results.append(("conv2d gradient", e < 1e-5, f"rel err {e:.2e}"))
    e = gradient_check(lambda t: T.tanh_out(T.upsample_nearest(t[0])), [x])
    results.append(("activation/upsample gradient", e < 1e-5, f"rel err {e:.2e}"))

    from scipy.ndimage import gaussian_filter, shift as nd_shift

    img = gaussian_filter(rng.random((128, 128)), 2.0)
    moved = nd_shift(img, (-4.7, 10.3), order=5, mode="wrap")
    dx, dy, _ = phase_correlate(img, moved)
    err = max(abs(dx - 10.3), abs(dy + 4.7))
    results.append(("registration subpixel shift", err < 0.05, f"err {err:.3f} px"))
    return results


def cmd_selftest(run: Run | None, args) -> int:
    results = selftest_checks()
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {
    "phantom": cmd_phantom,
    "record": cmd_record,
    "backprop": cmd_backprop,
    "zscan": cmd_zscan,
    "register": cmd_register,
    "make-dataset": cmd_make_dataset,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--patch-size", type=int)
    common.add_argument("--steps", type=int)

    zflags = _Parser(add_help=False)
    zflags.add_argument("--z", type=float, action="append", help="depth in um (repeatable)")
    zflags.add_argument("--z-start", type=float, default=0.0)
    zflags.add_argument("--z-step", type=float, default=0.5)
    zflags.add_argument("--z-count", type=int)

    parser = _Parser(prog="holobf", description="Hologram to bright-field cross-modality pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("phantom", parents=[common], help="generate a random phantom")
    p = sub.add_parser("record", parents=[common, zflags], help="simulate hologram and bright-field planes")
    p.add_argument("--phantom", required=True)
    p = sub.add_parser("backprop", parents=[common, zflags], help="refocus a hologram to one depth")
    p.add_argument("--hologram", required=True)
    p = sub.add_parser("zscan", parents=[common, zflags], help="refocus a hologram to many depths")
    p.add_argument("--hologram", required=True)
    p = sub.add_parser("register", parents=[common], help="align a bright-field image to a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--moving", required=True)
    sub.add_parser("make-dataset", parents=[common], help="simulate the paired patch corpus")
    p = sub.add_parser("train", parents=[common], help="train the generator")
    p.add_argument("--dataset", required=True)
    p = sub.add_parser("infer", parents=[common, zflags], help="run the generator on fields")
    p.add_argument("--weights", required=True)
    p.add_argument("--field", action="append")
    p.add_argument("--hologram")
    p = sub.add_parser("eval", parents=[common], help="metrics over a dataset split")
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    sub.add_parser("selftest", parents=[common], help="quick correctness checks")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = parse_config(_read(args.config).decode("utf-8"), cfg)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.patch_size is not None:
        over["patch_size"] = args.patch_size
    if args.steps is not None:
        over["steps"] = args.steps
    return replace(cfg, **over)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "selftest":
            return cmd_selftest(None, args)
        cfg = resolve_config(args)
        run = Run(args.command, cfg, Path(args.out))
        if args.config:
            run.input(args.config)
        COMMANDS[args.command](run, args)
        run.finish()
        return 0
    except HoloError as e:
        print(f"ERROR: {e.code}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"ERROR: IoError: {e}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as e:
        print(f"ERROR: InvalidValue: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
