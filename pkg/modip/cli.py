"""Command line entry point: ``modip <command> [flags]``.

Exit codes: 0 success, 1 invalid configuration or flags, 2 runtime failure
(divergence, numerical breakdown, I/O).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import setproctitle
from pydantic import ValidationError

from modip import settings
from modip.errors import ConfigError, GridMismatchError, ModipError
from modip.models.common import parse_triple
from modip.models.configs import (
    DEFAULT_SNAPSHOTS,
    DEFAULT_STOP_REL_TOL,
    AdamConfig,
    CuboidSpec,
    DfoConfig,
    InputKind,
    LesionSpec,
    Mode,
    NetworkConfig,
    ReconConfig,
)
from modip.models.volume import GridSpec, Mask, ScalarVolume, working_dtype
from modip.services import gradcheck
from modip.services.dipole import build_kernel
from modip.services.manifest import Manifest, manifest_path_for, run_manifest
from modip.services.metrics import region_report, table_regions
from modip.services.phantom import (
    DEFAULT_NOISE_FRACTION,
    add_lesion,
    cuboid_phantom,
    lesion_mask,
    noise_std_for,
    regrid,
    simulate_field,
)
from modip.services.reconstructor import Snapshot, reconstruct
from modip.services.volume_io import (
    read_params,
    read_volume,
    render_slice,
    write_losses_csv,
    write_params,
    write_pgm,
    write_volume,
)
from modip.utils import setup_logs, time_it

logger = logging.getLogger("modip.cli")

MAX_CUBOID_SIDE = 64


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad flags as ConfigError instead of exiting; long flags must be spelled out"""

    def __init__(self, *args, allow_abbrev: bool = False, **kwargs):
        super().__init__(*args, allow_abbrev=allow_abbrev, **kwargs)

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def int_triple(value: str):
    return parse_triple(value, int)


def float_triple(value: str):
    return parse_triple(value, float)


def float_pair(value: str) -> tuple[float, float]:
    parts = value.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 2 comma-separated values, got {value!r}")
    return float(parts[0]), float(parts[1])


def int_pair(value: str) -> tuple[int, int]:
    lo, hi = float_pair(value)
    return int(lo), int(hi)


def int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _recorded_b0(path) -> tuple[float, ...] | None:
    """B0 direction as typed by the user when the file was made, if its manifest says"""
    manifest = manifest_path_for(path)
    if not manifest.is_file():
        return None
    return Manifest.read(manifest).b0_raw


def _read_on_grid(path, grid: GridSpec, dtype) -> ScalarVolume:
    """Masks and references are matched by matrix; the geometry labels follow the field"""
    volume = read_volume(path).astype(dtype)
    if volume.grid.matrix != grid.matrix:
        raise GridMismatchError(str(path), volume.grid.matrix, grid.matrix)
    return ScalarVolume(grid, volume.values)


def _write_manifest(output, manifest: Manifest):
    path = manifest_path_for(output)
    manifest.write(path)
    logger.debug(f"Manifest written to {path}")


def _geometry_args(parser: argparse.ArgumentParser, grid_default=None):
    if grid_default is not None:
        parser.add_argument(
            "--grid", type=int_triple, default=grid_default, help="matrix size Mx,My,Mz"
        )
    parser.add_argument(
        "--voxel", type=float_triple, default=None, help="voxel size in mm (1,1,1)"
    )
    parser.add_argument(
        "--b0", type=float_triple, default=None, help="B0 direction (0,0,1)"
    )


def _grid(args) -> GridSpec:
    return GridSpec(
        matrix=args.grid,
        voxel_mm=args.voxel or (1.0, 1.0, 1.0),
        b0_dir=args.b0 or (0.0, 0.0, 1.0),
    )


def cmd_phantom_cuboids(args) -> int:
    grid = _grid(args)
    side_range = args.side_range or (1, min(MAX_CUBOID_SIDE, *grid.matrix))
    spec = CuboidSpec(
        count=args.count,
        side_range=side_range,
        chi_range=args.chi_range,
        grid=grid,
        seed=args.seed,
    )
    chi = cuboid_phantom(spec, working_dtype())
    write_volume(chi, args.output)
    _write_manifest(
        args.output,
        run_manifest(
            "phantom-cuboids",
            grid=grid,
            b0_raw=args.b0,
            outputs={"chi": str(args.output)},
            options={"cuboids": spec.model_dump(mode="json")},
        ),
    )
    logger.info(f"Cuboid phantom ({spec.count} cuboids) written to {args.output}")
    return 0


def cmd_phantom_lesion(args) -> int:
    if args.chi:
        chi = read_volume(args.chi).astype(working_dtype())
    else:
        chi = ScalarVolume.zeros(_grid(args))
    center = args.center or tuple(m // 2 for m in chi.grid.matrix)
    spec = LesionSpec(
        center=center,
        radius_mm=args.radius_mm,
        mean_ppm=args.mean,
        std_ppm=args.std,
        seed=args.seed,
    )
    outputs = {"chi": str(args.output)}
    write_volume(add_lesion(chi, spec), args.output)
    if args.lesion_mask:
        write_volume(lesion_mask(chi.grid, spec), args.lesion_mask, units="1")
        outputs["lesion_mask"] = str(args.lesion_mask)
    _write_manifest(
        args.output,
        run_manifest(
            "phantom-lesion",
            grid=chi.grid,
            inputs={"chi": str(args.chi)} if args.chi else {},
            outputs=outputs,
            options={"lesion": spec.model_dump(mode="json")},
        ),
    )
    logger.info(f"Lesion with {spec.radius_mm} mm radius written to {args.output}")
    return 0


def cmd_simulate(args) -> int:
    chi = read_volume(args.chi).astype(working_dtype())
    b0_raw = args.b0 or _recorded_b0(args.chi)
    chi = regrid(chi, args.voxel, args.b0)
    inputs = {"chi": str(args.chi)}
    mask = None
    if args.mask:
        mask = Mask.from_volume(_read_on_grid(args.mask, chi.grid, chi.dtype))
        inputs["mask"] = str(args.mask)
    noise_std = args.noise_std
    if noise_std is None:
        exact = simulate_field(chi, 0.0, args.seed)
        noise_std = noise_std_for(exact, mask, args.noise_frac)
    phi = simulate_field(chi, noise_std, args.seed)
    write_volume(phi, args.output)
    _write_manifest(
        args.output,
        run_manifest(
            "simulate",
            grid=chi.grid,
            b0_raw=b0_raw,
            inputs=inputs,
            outputs={"field": str(args.output)},
            options={"noise_std": noise_std, "seed": args.seed},
        ),
    )
    logger.info(f"Field simulated with noise std {noise_std:.4g} ppm -> {args.output}")
    return 0


def recon_config(args) -> ReconConfig:
    dfo = {"alpha": args.alpha}
    if args.dfo_steps is not None:
        dfo["n_steps"] = args.dfo_steps
    return ReconConfig(
        mode=args.method,
        input_kind=args.input,
        max_iters=args.iters,
        stop_rel_tol=args.stop_rel_tol,
        snapshot_iters=args.snapshots,
        network=NetworkConfig(
            depth=args.depth,
            base_channels=args.base_channels,
            seed=args.seed,
            norm_enabled=not args.no_norm,
        ),
        dfo=dfo,
        adam=AdamConfig(
            base_lr=args.lr, decay=args.lr_decay, decay_every=args.lr_decay_every
        ),
        seed=args.seed,
        stop_grad_dfo=args.stop_grad_dfo,
    )


def _recon_inputs(args) -> tuple[ReconConfig, dict[str, str]]:
    if args.from_manifest:
        manifest = Manifest.read(args.from_manifest)
        if manifest.recon is None:
            raise ConfigError(f"{args.from_manifest} does not describe a reconstruction")
        if args.precision is None:
            settings.PRECISION = manifest.environment.precision
        return manifest.recon, dict(manifest.inputs)
    named = {
        "field": args.field,
        "mask": args.mask,
        "truth": args.truth,
        "init_params": args.init_params,
    }
    return recon_config(args), {k: str(v) for k, v in named.items() if v}


@time_it
def cmd_recon(args) -> int:
    cfg, inputs = _recon_inputs(args)
    if "field" not in inputs:
        raise ConfigError("recon needs --field (or --from-manifest)")
    dtype = working_dtype()
    phi = read_volume(inputs["field"]).astype(dtype)
    if "mask" in inputs:
        mask = Mask.from_volume(_read_on_grid(inputs["mask"], phi.grid, dtype))
    else:
        mask = Mask.ones(phi.grid, dtype)
    truth = None
    if "truth" in inputs:
        truth = _read_on_grid(inputs["truth"], phi.grid, dtype)
    params = None
    if "init_params" in inputs:
        params = read_params(inputs["init_params"], dtype)

    out = Path(args.output)
    snapshots = out / "snapshots"
    snapshots.mkdir(parents=True, exist_ok=True)
    outputs = {}

    def save_snapshot(snapshot: Snapshot):
        path = snapshots / f"chi_{snapshot.iteration:04d}.qvol"
        write_volume(snapshot.chin, path)
        outputs[f"snapshot_{snapshot.iteration}"] = str(path)
        if snapshot.chi0 is not None:
            write_volume(snapshot.chi0, snapshots / f"chi0_{snapshot.iteration:04d}.qvol")

    chi, state = reconstruct(phi, mask, cfg, truth, params, save_snapshot)
    write_volume(chi, out / "chi.qvol")
    outputs["chi"] = str(out / "chi.qvol")
    if state.chi0 is not None:
        write_volume(state.chi0, out / "chi0.qvol")
        outputs["chi0"] = str(out / "chi0.qvol")
    write_losses_csv(state.history, out / "losses.csv", with_nrmse=truth is not None)
    outputs["losses"] = str(out / "losses.csv")
    if args.save_params and state.params is not None:
        write_params(state.params, args.save_params)
        outputs["params"] = str(args.save_params)

    last = state.history[-1]
    results = {
        "iterations": state.iteration,
        "stop_reason": state.stop_reason,
        "best_iteration": state.best_iteration,
        "final_loss": last.loss.total,
    }
    if last.nrmse is not None:
        results["final_nrmse"] = last.nrmse
    _write_manifest(
        out,
        run_manifest(
            "recon",
            cfg,
            grid=phi.grid,
            b0_raw=_recorded_b0(inputs["field"]),
            inputs=inputs,
            outputs=outputs,
            results=results,
        ),
    )
    logger.info(f"Reconstruction written to {out}")
    return 0


def cmd_eval(args) -> int:
    pred = read_volume(args.pred)
    truth = _read_on_grid(args.truth, pred.grid, pred.dtype)
    inputs = {"pred": str(args.pred), "truth": str(args.truth)}
    if args.mask:
        mask = Mask.from_volume(_read_on_grid(args.mask, pred.grid, pred.dtype))
        inputs["mask"] = str(args.mask)
    else:
        mask = Mask.ones(pred.grid, pred.dtype)
    lesion = None
    if args.lesion:
        lesion = Mask.from_volume(_read_on_grid(args.lesion, pred.grid, pred.dtype))
        inputs["lesion"] = str(args.lesion)
    report = region_report(pred, truth, table_regions(mask, lesion))

    print(f"{'region':<12}{'nrmse':>12}{'mean_ppm':>14}{'std_ppm':>14}{'count':>10}")
    for stats in report.regions:
        print(
            f"{stats.name:<12}{stats.nrmse:>12.6f}{stats.mean_ppm:>14.6f}"
            f"{stats.std_ppm:>14.6f}{stats.count:>10}"
        )
    if args.output:
        output = Path(args.output)
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        _write_manifest(
            output,
            run_manifest(
                "eval", grid=pred.grid, inputs=inputs, outputs={"report": str(output)}
            ),
        )
    return 0


def cmd_kernel(args) -> int:
    grid = _grid(args)
    kern = build_kernel(grid, working_dtype())
    write_volume(kern.as_volume(), args.output, units="1")
    _write_manifest(
        args.output,
        run_manifest(
            "kernel", grid=grid, b0_raw=args.b0, outputs={"kernel": str(args.output)}
        ),
    )
    return 0


def cmd_gradcheck(args) -> int:
    if args.size % 2:
        raise ConfigError(f"--size must be even for a depth-1 network, got {args.size}")
    results = gradcheck.run_all(args.size, args.base_channels, args.seed, args.probes)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(
            f"{result.name:<20} max_rel_error={result.max_rel_error:.3e} "
            f"threshold={result.threshold:g} {status}"
        )
    passed = all(result.passed for result in results)
    if not passed:
        logger.error("Gradient check failed")
    return 0 if passed else 2


def cmd_render(args) -> int:
    volume = read_volume(args.volume)
    index = args.index
    if index is None:
        index = volume.grid.matrix[args.axis] // 2
    window = args.window
    if window is None:
        peak = float(np.max(np.abs(volume.values))) or 1.0
        window = (-peak, peak)
    write_pgm(render_slice(volume, args.axis, index, window), args.output)
    _write_manifest(
        args.output,
        run_manifest(
            "render",
            grid=volume.grid,
            inputs={"volume": str(args.volume)},
            outputs={"slice": str(args.output)},
            options={"axis": args.axis, "index": index, "window": list(window)},
        ),
    )
    return 0


def build_parser() -> ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    common = ArgumentParser(add_help=False)
    common.add_argument(
        "--precision",
        choices=["f32", "f64"],
        default=None,
        help="working precision (MODIP_PRECISION, f64)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="FFT worker threads (MODIP_THREADS, 1)",
    )

    parser = ArgumentParser(
        prog="modip",
        description="Dipole inversion for quantitative susceptibility mapping",
        formatter_class=formatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        sub = commands.add_parser(
            name, parents=[common], help=help_text, formatter_class=formatter
        )
        sub.set_defaults(handler=handler)
        return sub

    sub = command("phantom-cuboids", cmd_phantom_cuboids, "random cuboid phantom")
    _geometry_args(sub, grid_default=(128, 128, 128))
    sub.add_argument("--count", type=int, default=800)
    sub.add_argument(
        "--side-range", type=int_pair, default=None, help="lo,hi voxels (1,64)"
    )
    sub.add_argument(
        "--chi-range",
        type=float_pair,
        default=(-0.02, 0.02),
        help="lo,hi ppm; write as --chi-range=-0.02,0.02",
    )
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("-o", "--output", type=Path, required=True)

    sub = command("phantom-lesion", cmd_phantom_lesion, "add a spherical lesion")
    sub.add_argument("--chi", type=Path, help="base volume (zeros on --grid if omitted)")
    _geometry_args(sub, grid_default=(128, 128, 128))
    sub.add_argument("--center", type=int_triple, help="voxel x,y,z (matrix centre)")
    sub.add_argument("--radius-mm", type=float, default=2.0)
    sub.add_argument("--mean", type=float, default=0.8, help="ppm")
    sub.add_argument("--std", type=float, default=0.05, help="ppm")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--lesion-mask", type=Path, help="also write the lesion region")
    sub.add_argument("-o", "--output", type=Path, required=True)

    sub = command("simulate", cmd_simulate, "forward-simulate a local field")
    sub.add_argument("--chi", type=Path, required=True)
    _geometry_args(sub)
    sub.add_argument("--mask", type=Path, help="region for the noise level")
    sub.add_argument("--noise-std", type=float, default=None, help="ppm")
    sub.add_argument(
        "--noise-frac",
        type=float,
        default=DEFAULT_NOISE_FRACTION,
        help="noise std as a fraction of the field std (without --noise-std)",
    )
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("-o", "--output", type=Path, required=True)

    sub = command("recon", cmd_recon, "reconstruct susceptibility from a field")
    sub.add_argument("--method", choices=[m.value for m in Mode], default="modip")
    sub.add_argument("--field", type=Path, help="local field volume (ppm)")
    sub.add_argument("--mask", type=Path, help="tissue mask (all ones if omitted)")
    sub.add_argument("--truth", type=Path, help="ground truth for per-iteration NRMSE")
    sub.add_argument("--iters", type=int, default=200)
    sub.add_argument(
        "--dfo-steps",
        type=int,
        default=None,
        help=f"DFO steps per iteration ({DfoConfig().n_steps} for modip, 0 for dip)",
    )
    sub.add_argument("--alpha", type=float, default=DfoConfig().alpha)
    sub.add_argument("--lr", type=float, default=AdamConfig().base_lr)
    sub.add_argument("--lr-decay", type=float, default=AdamConfig().decay)
    sub.add_argument("--lr-decay-every", type=int, default=AdamConfig().decay_every)
    sub.add_argument("--depth", type=int, default=1)
    sub.add_argument("--base-channels", type=int, default=32)
    sub.add_argument(
        "--no-norm", action="store_true", help="disable instance normalization"
    )
    sub.add_argument(
        "--input", choices=[k.value for k in InputKind], default=InputKind.field.value
    )
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument(
        "--stop-rel-tol",
        type=float,
        nargs="?",
        const=DEFAULT_STOP_REL_TOL,
        default=None,
        help=f"stop on a small relative loss change (bare flag: {DEFAULT_STOP_REL_TOL})",
    )
    sub.add_argument(
        "--snapshots",
        type=int_list,
        default=DEFAULT_SNAPSHOTS,
        help="comma-separated iterations to save",
    )
    sub.add_argument(
        "--stop-grad-dfo",
        action="store_true",
        help="treat the DFO steps as identity when back-propagating",
    )
    sub.add_argument("--save-params", type=Path, help="write the final network weights")
    sub.add_argument("--init-params", type=Path, help="start from saved weights")
    sub.add_argument("--from-manifest", type=Path, help="re-run a recorded reconstruction")
    sub.add_argument("-o", "--output", type=Path, required=True, help="output directory")

    sub = command("eval", cmd_eval, "region-wise NRMSE and statistics")
    sub.add_argument("--pred", type=Path, required=True)
    sub.add_argument("--truth", type=Path, required=True)
    sub.add_argument("--mask", type=Path)
    sub.add_argument("--lesion", type=Path, help="lesion mask for lesion/non-lesion rows")
    sub.add_argument("-o", "--output", type=Path, help="JSON report")

    sub = command("kernel", cmd_kernel, "write the dipole kernel")
    _geometry_args(sub, grid_default=(64, 64, 64))
    sub.add_argument("-o", "--output", type=Path, required=True)

    sub = command("gradcheck", cmd_gradcheck, "finite-difference gradient checks")
    sub.add_argument("--size", type=int, default=8)
    sub.add_argument("--base-channels", type=int, default=2)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--probes", type=int, default=None, help="coordinates per tensor")

    sub = command("render", cmd_render, "8-bit PGM slice of a volume")
    sub.add_argument("--volume", type=Path, required=True)
    sub.add_argument("--axis", type=int, choices=[0, 1, 2], default=2)
    sub.add_argument("--index", type=int, default=None, help="slice (middle)")
    sub.add_argument(
        "--window", type=float_pair, default=None, help="lo,hi ppm (+-max|value|)"
    )
    sub.add_argument("-o", "--output", type=Path, required=True)
    return parser


def apply_runtime_flags(args):
    if args.precision is not None:
        settings.PRECISION = args.precision
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        settings.THREADS = args.threads


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        apply_runtime_flags(args)
        setproctitle.setproctitle(f"modip {args.command}")
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        return 1
    except (ModipError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


def run():  # pragma: no cover
    setup_logs()
    sys.exit(main())
