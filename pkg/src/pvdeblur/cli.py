"""Command-line entry point: ``pvdeblur <command> ...``.

Every command exits 0 on success and 2 on usage or IO errors.  Diagnostics go
to stderr; data goes to files, or to stdout as CSV where noted.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .blurlab import (
    FOUR_PAIRS,
    PairSample,
    SceneSpec,
    calibrate_blur_invariant,
    lambda_grid,
    render_sequence,
)
from .imagecore import to_grayscale
from .metrics import (
    DEFAULT_RADIUS,
    aligned_metric,
    endpoint_error,
    frame_report,
    write_reports,
)
from .pipeline import PipelineConfig, deblur_sequence, stabilization_curve
from .pixelvolume import (
    build_naive_pixel_volume,
    build_pixel_volume,
    center_slice,
    ideal_warp,
    majority_warp,
    pv_statistics,
)
from .tvl1flow import FlowParams, estimate_flow
from .warp import backward_warp

log = logging.getLogger("pvdeblur")

GNUPLOT_TEMPLATE = """\
set datafile separator ','
set terminal pngcairo size 800,500
set output '{png}'
set xlabel 'frame index'
set ylabel 'mean aligned PSNR (dB)'
set key off
set grid
plot '{csv}' using 1:2 every ::1 with linespoints lw 2
"""


class UsageError(Exception):
    """Bad arguments or inputs detected after parsing."""


# ---------------------------------------------------------------------------
# helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _flow_params(args) -> FlowParams:
    return FlowParams(
        data_weight=args.data_weight,
        tightness=args.tightness,
        tau=args.tau,
        warps=args.warps,
        inner_iterations=args.inner_iterations,
        pyramid_levels=args.levels,
        zoom=args.zoom,
        median_radius=args.median_radius,
    )


def _out_path(args, what: str) -> Path:
    if not args.out:
        raise UsageError(f"--out is required for {what}")
    return Path(args.out)


def _parallel_map(fn, items, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


_SCENE_KEYS = {
    "seed": int,
    "width": int,
    "height": int,
    "sigma_tex": float,
    "frames": int,
    "substeps": int,
    "rotation": float,
    "jitter": float,
    "k": int,
    "margin": int,
}


def scene_specs_from_config(values: dict[str, str], seed: int | None = None) -> list[SceneSpec]:
    """Build one SceneSpec per requested sequence from ``key=value`` pairs.

    ``sequences=N`` renders N scenes with seeds ``seed, seed+1, ...``.
    """
    kwargs = {}
    n_seq = 1
    for key, raw in values.items():
        try:
            if key == "velocity":
                vx, vy = (float(v) for v in raw.split(","))
                kwargs["velocity"] = (vx, vy)
            elif key == "sequences":
                n_seq = int(raw)
            elif key in _SCENE_KEYS:
                kwargs[key] = _SCENE_KEYS[key](raw)
            else:
                raise UsageError(f"unknown config key {key!r}")
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {raw!r}") from exc
    if n_seq < 1:
        raise UsageError("sequences must be >= 1")
    if seed is not None:
        kwargs["seed"] = seed
    base = SceneSpec(**kwargs)
    return [replace(base, seed=base.seed + i) for i in range(n_seq)]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    values = io.read_keyvalue(args.config)
    specs = scene_specs_from_config(values, args.seed)
    out = _out_path(args, "synth")
    out.mkdir(parents=True, exist_ok=True)

    def render_one(item):
        idx, spec = item
        name = f"seq_{idx:03d}"
        seq = render_sequence(spec)
        entry = io.SequenceEntry(name, [], [], [])
        for sub in ("sharp", "blurred", "flow"):
            (out / name / sub).mkdir(parents=True, exist_ok=True)
        for t, (s, b) in enumerate(zip(seq.sharp, seq.blurred)):
            io.save_png(out / name / "sharp" / f"frame_{t:04d}.png", s)
            io.save_png(out / name / "blurred" / f"frame_{t:04d}.png", b)
            entry.sharp.append(f"{name}/sharp/frame_{t:04d}.png")
            entry.blurred.append(f"{name}/blurred/frame_{t:04d}.png")
        for t, flow in enumerate(seq.flows, start=1):
            io.write_flo(out / name / "flow" / f"flow_{t:04d}.flo", flow)
            entry.flows.append(f"{name}/flow/flow_{t:04d}.flo")
        return entry

    entries = _parallel_map(render_one, list(enumerate(specs)), args.threads)
    scene = dict(sorted(values.items()))
    if args.seed is not None:
        scene["seed"] = str(args.seed)
    io.write_manifest(out / "manifest.json", io.Manifest(entries, scene))
    log.info("wrote %d sequence(s) to %s", len(entries), out)
    return 0


def cmd_flow(args) -> int:
    target = to_grayscale(io.load_png(args.frame_a))
    reference = to_grayscale(io.load_png(args.frame_b))
    if target.shape != reference.shape:
        raise UsageError(f"frame sizes differ: {target.shape} vs {reference.shape}")
    flow = estimate_flow(target, reference, _flow_params(args))
    io.write_flo(_out_path(args, "flow"), flow)
    fields = [f"mean_abs_flow={np.hypot(flow[..., 0], flow[..., 1]).mean():.6f}"]
    if args.gt:
        gt = io.read_flo(args.gt)
        fields.append(f"epe={endpoint_error(flow, gt):.6f}")
    print(" ".join(fields))
    return 0


def cmd_warp(args) -> int:
    reference = io.load_png(args.reference)
    if args.gray:
        reference = to_grayscale(reference)
    flow = io.read_flo(args.flow)
    if flow.shape[:2] != reference.shape[:2]:
        raise UsageError("flow and reference differ in size")
    warped, mask = backward_warp(reference, flow)
    io.save_png(_out_path(args, "warp"), warped)
    print(f"valid_fraction={mask.mean():.6f}")
    return 0


def _pv_inputs(args):
    reference = to_grayscale(io.load_png(args.reference))
    flow = io.read_flo(args.flow)
    if flow.shape[:2] != reference.shape:
        raise UsageError("flow and reference differ in size")
    gt = None
    if args.gt:
        gt = to_grayscale(io.load_png(args.gt))
        if gt.shape != reference.shape:
            raise UsageError("ground truth and reference differ in size")
    return reference, flow, gt


def _single_k(args) -> int:
    if len(args.k) != 1:
        raise UsageError(f"pv {args.action} takes a single --k")
    return args.k[0]


def cmd_pv(args) -> int:
    for k in args.k:
        if k < 1 or k % 2 == 0:
            raise UsageError(f"--k must be odd and positive, got {k}")
    reference, flow, gt = _pv_inputs(args)

    if args.action in ("build", "naive"):
        k = _single_k(args)
        build = build_pixel_volume if args.action == "build" else build_naive_pixel_volume
        pv = build(reference, flow, k)
        io.write_pvol(_out_path(args, f"pv {args.action}"), pv)
        if args.center_png:
            io.save_png(args.center_png, center_slice(pv))
        return 0

    if args.action == "majority":
        frame, flag = majority_warp(build_pixel_volume(reference, flow, _single_k(args)))
        io.save_png(_out_path(args, "pv majority"), frame)
        print(f"majority_fraction={flag.mean():.6f}")
        return 0

    if gt is None:
        raise UsageError(f"pv {args.action} needs --gt")

    if args.action == "ideal":
        frame = ideal_warp(build_pixel_volume(reference, flow, _single_k(args)), gt)
        io.save_png(_out_path(args, "pv ideal"), frame)
        return 0

    # stats: one row per k
    tolerances = sorted(set(args.tolerances))
    header = ["k", "majority_fraction"]
    header += [f"accuracy_c{c}" for c in tolerances]
    header += [f"{region}_c{c}" for c in tolerances for region in ("correct", "wrong")]
    header += ["no_majority"]
    rows = []
    h, w = reference.shape
    for k in args.k:
        mask = None
        if args.border:
            b = args.border
            if 2 * b >= min(h, w):
                raise UsageError("--border leaves no pixels")
            mask = np.zeros((h, w), dtype=bool)
            mask[b:h - b, b:w - b] = True
        stats = pv_statistics(build_pixel_volume(reference, flow, k), gt, tolerances, mask)
        row = [k, f"{stats.majority_fraction:.6f}"]
        row += [f"{stats.accuracy[c]:.6f}" for c in tolerances]
        for c in tolerances:
            reg = stats.regions[c]
            row += [f"{reg.correct:.6f}", f"{reg.wrong:.6f}"]
        row.append(f"{stats.regions[tolerances[0]].none:.6f}")
        rows.append(row)
    _emit_csv(args.out, header, rows)
    return 0


def _emit_csv(path, header, rows) -> None:
    if path:
        fh = open(path, "w", newline="")
    else:
        fh = sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            fh.close()


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        k=args.pv_k,
        flow_params=_flow_params(args),
        deblurrer=args.deblurrer,
        sigma_c=args.sigma_c,
        radius=args.radius,
    )


def cmd_deblur(args) -> int:
    manifest = io.read_manifest(args.manifest)
    config = _pipeline_config(args)
    out = _out_path(args, "deblur")
    out.mkdir(parents=True, exist_ok=True)

    def run_one(entry: io.SequenceEntry):
        blurry = [io.load_png(manifest.resolve(p)) for p in entry.blurred]
        sharp = [io.load_png(manifest.resolve(p)) for p in entry.sharp] or None
        flows = [io.read_flo(manifest.resolve(p)) for p in entry.flows] or None
        result = deblur_sequence(blurry, config, sharp, flows)
        seq_dir = out / entry.name
        seq_dir.mkdir(parents=True, exist_ok=True)
        for t, est in enumerate(result.estimates):
            io.save_png(seq_dir / f"est_{t:04d}.png", est)
        input_psnr = []
        if sharp is not None:
            write_reports(seq_dir / "metrics.csv", result.reports)
            input_psnr = [aligned_metric(b, s, config.radius)[0] for b, s in zip(blurry, sharp)]
        return entry.name, result.reports, input_psnr

    results = _parallel_map(run_one, manifest.sequences, args.threads)

    with_gt = [r for r in results if r[1]]
    if not with_gt:
        log.warning("no sharp frames in manifest; metrics and stabilization curve skipped")
        return 0
    curve = stabilization_curve([r[1] for r in with_gt])
    _emit_csv(out / "stabilization.csv", ["frame_index", "mean_aligned_psnr", "sequences"],
              [(t, f"{v:.6f}", n) for t, v, n in curve])
    (out / "stabilization.gp").write_text(
        GNUPLOT_TEMPLATE.format(csv="stabilization.csv", png="stabilization.png")
    )
    for name, reports, inp in with_gt:
        print(f"{name}: input_aligned_psnr={np.mean(inp):.4f} "
              f"output_aligned_psnr={np.mean([r.aligned_psnr for r in reports]):.4f}")
    all_in = np.mean([v for r in with_gt for v in r[2]])
    all_out = np.mean([rep.aligned_psnr for r in with_gt for rep in r[1]])
    print(f"overall: input_aligned_psnr={all_in:.4f} output_aligned_psnr={all_out:.4f} "
          f"gain_db={all_out - all_in:.4f}")
    return 0


def cmd_eval(args) -> int:
    a_files = sorted(Path(args.dir_a).glob("*.png"))
    b_files = sorted(Path(args.dir_b).glob("*.png"))
    if not a_files:
        raise UsageError(f"no PNG files in {args.dir_a}")
    if len(a_files) != len(b_files):
        raise UsageError(f"{len(a_files)} frames in {args.dir_a} vs {len(b_files)} in {args.dir_b}")

    def score(item):
        t, (fa, fb) = item
        return frame_report(t, io.load_png(fa), io.load_png(fb), args.radius)

    reports = _parallel_map(score, list(enumerate(zip(a_files, b_files))), args.threads)
    write_reports(args.out or sys.stdout, reports)
    return 0


def cmd_calibrate(args) -> int:
    manifest = io.read_manifest(args.manifest)
    pairs = []
    for entry in manifest.sequences:
        if not entry.sharp:
            raise UsageError(f"sequence {entry.name!r} lacks sharp frames")
        sharp = [to_grayscale(io.load_png(manifest.resolve(p))) for p in entry.sharp]
        blur = [to_grayscale(io.load_png(manifest.resolve(p))) for p in entry.blurred]
        for t in range(1, len(sharp)):
            pairs.append(PairSample(sharp[t - 1], blur[t - 1], sharp[t], blur[t], np.zeros(sharp[t].shape + (2,))))
    if not pairs:
        raise UsageError("manifest holds no consecutive frame pairs")
    pair_types = FOUR_PAIRS if args.pairs == "four" else (("s", "s"),)
    grid = lambda_grid(args.lambdas, _flow_params(args))
    best, rows = calibrate_blur_invariant(pairs, grid, pair_types, workers=args.threads)
    header = ["index", "data_weight", "mean_loss"] + [f"loss_{a}{b}" for a, b in pair_types]
    table = [[r.index, r.params.data_weight, f"{r.mean_loss:.8f}"]
             + [f"{r.pair_losses[p]:.8f}" for p in pair_types] for r in rows]
    _emit_csv(args.out, header, table)
    print(f"selected data_weight={best.data_weight}", file=sys.stderr if not args.out else sys.stdout)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_flow_flags(p: argparse.ArgumentParser) -> None:
    d = FlowParams()
    g = p.add_argument_group("flow solver")
    g.add_argument("--lambda", dest="data_weight", type=float, default=d.data_weight,
                   help="data term weight on the 8-bit intensity scale")
    g.add_argument("--theta", dest="tightness", type=float, default=d.tightness)
    g.add_argument("--tau", type=float, default=d.tau)
    g.add_argument("--warps", type=int, default=d.warps)
    g.add_argument("--inner-iterations", type=int, default=d.inner_iterations)
    g.add_argument("--levels", type=int, default=None, help="pyramid levels (default: auto)")
    g.add_argument("--zoom", type=float, default=d.zoom)
    g.add_argument("--median-radius", type=int, default=d.median_radius)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads across sequences")
    common.add_argument("--seed", type=int, default=None, help="override the scene seed")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pvdeblur", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic blurred dataset")
    p.add_argument("config", help="key=value scene file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("flow", parents=[common], help="estimate flow from frame A to frame B")
    p.add_argument("frame_a", help="target (current) frame")
    p.add_argument("frame_b", help="reference (previous) frame")
    p.add_argument("--gt", help="ground-truth .flo to report EPE against")
    _add_flow_flags(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("warp", parents=[common], help="backward-warp a frame by a .flo")
    p.add_argument("reference")
    p.add_argument("flow")
    p.add_argument("--gray", action="store_true", help="convert the reference to grayscale first")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("pv", parents=[common], help="pixel volume tools")
    p.add_argument("action", choices=["build", "stats", "majority", "ideal", "naive"])
    p.add_argument("reference")
    p.add_argument("flow")
    p.add_argument("--k", type=_int_list, default=[5], help="window size, or a list for stats")
    p.add_argument("--gt", help="ground-truth sharp frame (stats, ideal)")
    p.add_argument("--tolerances", type=_int_list, default=[0, 2])
    p.add_argument("--border", type=int, default=0, help="exclude this many border pixels from stats")
    p.add_argument("--center-png", help="also export the centre slice (build, naive)")
    p.set_defaults(func=cmd_pv)

    p = sub.add_parser("deblur", parents=[common], help="run the recurrent pipeline on a manifest")
    p.add_argument("manifest")
    p.add_argument("--deblurrer", choices=["aggregate", "passthrough"], default="aggregate")
    p.add_argument("--pv-k", type=int, default=5)
    p.add_argument("--sigma-c", type=float, default=0.08)
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    _add_flow_flags(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", parents=[common], help="compare two frame directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", parents=[common], help="blur-invariant lambda grid search")
    p.add_argument("manifest")
    p.add_argument("--lambdas", type=_float_list, default=[0.05, 0.15, 0.5])
    p.add_argument("--pairs", choices=["four", "ss"], default="four")
    _add_flow_flags(p)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (UsageError, OSError, ValueError) as exc:
        print(f"pvdeblur {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
