"""Command-line entry point: convert, project, synth, compose, eval, metrics.

Reports are JSON on stdout (or ``--out``); human-readable summaries go to
stderr. Exit status: 0 success, 1 validation/usage error, 2 I/O or format
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .dataset import compose_manifest, load_sources
from .depthio import (DEFAULT_MAX_RANGE, QuantizedDepth, dequantize_depth, quantize_depth,
                      read_kitti_bin, read_pfm, read_png8, write_kitti_bin, write_pfm, write_png8,
                      write_rgb_png)
from .errors import FormatError, ValidationError
from .geometry import extrinsics_from_dict, load_calibration, project_cloud
from .metrics import LossWeights, SsimConfig, densedepth_terms, normalized_depth, pair_lidar_with_prediction, rel_error
from .synth import LidarConfig, default_camera, generate_frame, lidar_mount, load_pose, load_scene

log = logging.getLogger("synthdepth")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _positive(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}")
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {s!r}")
    return v


def _nonneg(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}")
    if not v >= 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be >= 0 and finite: {s!r}")
    return v


def _size(s: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {s!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {s!r}")
    return w, h


def _threads(s: str) -> int:
    n = int(s)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="synthdepth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="convert between PFM and 8-bit PNG depth")
    c.add_argument("mode", choices=["pfm-to-png8", "png8-to-pfm"])
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--max-range", type=_positive, default=DEFAULT_MAX_RANGE)

    pr = sub.add_parser("project", help="project a KITTI cloud into the image plane")
    pr.add_argument("--cloud", required=True)
    pr.add_argument("--calib", required=True)
    pr.add_argument("--z-min", type=_positive, default=0.01)
    pr.add_argument("--out")

    s = sub.add_parser("synth", help="render one synthetic frame")
    s.add_argument("--scene", required=True)
    s.add_argument("--pose", required=True, help="camera->world pose JSON")
    s.add_argument("--fov", type=float, default=57.0, help="horizontal field of view, degrees")
    s.add_argument("--size", type=_size, default=(640, 480))
    s.add_argument("--depth-mode", choices=["planar", "perspective"], default="perspective")
    s.add_argument("--max-range", type=_positive, default=DEFAULT_MAX_RANGE)
    s.add_argument("--lidar", action="store_true", help="also simulate a LiDAR sweep")
    s.add_argument("--channels", type=int, default=32)
    s.add_argument("--azimuth-step", type=_positive, default=0.2)
    s.add_argument("--elevation", type=float, nargs=2, default=(-25.0, 15.0), metavar=("MIN", "MAX"))
    s.add_argument("--lidar-extrinsics", help="LiDAR->camera extrinsics JSON (default: upright, co-located)")
    s.add_argument("--rgb", help="output RGB PNG")
    s.add_argument("--depth-pfm", help="output depth PFM")
    s.add_argument("--depth-png", help="output quantized depth PNG")
    s.add_argument("--cloud", help="output KITTI bin (implies --lidar)")
    s.add_argument("--calib", help="output calibration JSON")
    s.add_argument("--threads", type=_threads, default=1)

    m = sub.add_parser("compose", help="compose a dataset manifest")
    m.add_argument("--source", action="append", default=[], metavar="TAG=DIR", required=True)
    m.add_argument("--count", action="append", default=[], metavar="TAG=N")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")

    e = sub.add_parser("eval", help="relative distance error of predictions against LiDAR")
    e.add_argument("--pred", action="append", required=True, help="prediction PNG8 (repeatable)")
    e.add_argument("--cloud", action="append", required=True, help="KITTI bin, paired with --pred in order")
    e.add_argument("--calib", required=True)
    e.add_argument("--max-range", type=_positive, default=DEFAULT_MAX_RANGE)
    e.add_argument("--space", choices=["grayscale", "metric"], default="grayscale")
    e.add_argument("--min-depth", type=_nonneg, default=0.0,
                   help="ignore LiDAR points with camera depth at or below this (m)")
    e.add_argument("--threads", type=_threads, default=1)
    e.add_argument("--out")

    mt = sub.add_parser("metrics", help="DenseDepth loss terms between two depth images")
    mt.add_argument("truth")
    mt.add_argument("pred")
    mt.add_argument("--max-range", type=_positive, default=DEFAULT_MAX_RANGE)
    mt.add_argument("--lambda-depth", type=_nonneg, default=0.1)
    mt.add_argument("--window", type=int, default=11)
    mt.add_argument("--sigma", type=_positive, default=1.5)
    mt.add_argument("--out")
    return p


# -- helpers -----------------------------------------------------------------

def _read(path) -> bytes:
    return Path(path).read_bytes()


def _write(path, data: bytes) -> None:
    Path(path).write_bytes(data)


def _emit(report: dict, out) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_depth(path, max_range: float):
    data = _read(path)
    if data[:2] in (b"Pf", b"PF"):
        return read_pfm(data)
    if data[:4] == b"\x89PNG":
        return read_png8(data, default_max_range=max_range)
    raise FormatError(f"{path}: neither PFM nor PNG")


# -- subcommands -------------------------------------------------------------

def cmd_convert(a) -> int:
    if a.mode == "pfm-to-png8":
        q = quantize_depth(read_pfm(_read(a.input)), a.max_range)
        _write(a.output, write_png8(q))
        print(f"wrote {q.width}x{q.height} PNG8 (max range {q.max_range:g} m) to {a.output}", file=sys.stderr)
    else:
        m = dequantize_depth(read_png8(_read(a.input), default_max_range=a.max_range))
        _write(a.output, write_pfm(m))
        print(f"wrote {m.width}x{m.height} PFM to {a.output}", file=sys.stderr)
    return EXIT_OK


def cmd_project(a) -> int:
    cam, ext = load_calibration(a.calib)
    cloud = read_kitti_bin(_read(a.cloud))
    proj = project_cloud(cam, ext, cloud, z_min=a.z_min)
    _emit({"count": len(proj), "points": len(cloud),
           "projections": [{"index": i, "u": p.u, "v": p.v, "d": p.d} for i, p in proj]}, a.out)
    print(f"{len(proj)} of {len(cloud)} points land in the image", file=sys.stderr)
    return EXIT_OK


def cmd_synth(a) -> int:
    scene = load_scene(a.scene)
    pose = load_pose(a.pose)
    w, h = a.size
    cam = default_camera(w, h, a.fov)
    if a.lidar_extrinsics:
        try:
            ext = extrinsics_from_dict(json.loads(Path(a.lidar_extrinsics).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{a.lidar_extrinsics}: not valid JSON ({exc})") from exc
    else:
        ext = lidar_mount()
    cfg = LidarConfig(channels=a.channels, elevation_min=a.elevation[0], elevation_max=a.elevation[1],
                      azimuth_step=a.azimuth_step)
    want_lidar = a.lidar or a.cloud
    if not want_lidar:
        cfg = LidarConfig(channels=1, azimuth_step=360.0)
    frame = generate_frame(scene, cam, pose, ext, cfg, threads=a.threads)
    depth = frame.depth_planar if a.depth_mode == "planar" else frame.depth_perspective
    if a.rgb:
        _write(a.rgb, write_rgb_png(frame.rgb))
    if a.depth_pfm:
        _write(a.depth_pfm, write_pfm(depth))
    if a.depth_png:
        _write(a.depth_png, write_png8(quantize_depth(depth, a.max_range)))
    if a.cloud:
        _write(a.cloud, write_kitti_bin(frame.cloud))
    if a.calib:
        calib = frame.calibration()
        calib["depth_mode"] = a.depth_mode
        Path(a.calib).write_text(json.dumps(calib, sort_keys=True, indent=2) + "\n")
    print(f"rendered {w}x{h} {a.depth_mode} depth "
          f"[{float(depth.values.min()):.3f}, {float(depth.values.max()):.3f}] m"
          + (f", {len(frame.cloud)} LiDAR points" if want_lidar else ""), file=sys.stderr)
    return EXIT_OK


def _kv(items, what, conv):
    out = {}
    for s in items:
        k, sep, v = s.partition("=")
        if not sep:
            raise UsageError(f"{what} expects key=value, got {s!r}")
        try:
            out[k] = conv(v)
        except ValueError:
            raise UsageError(f"{what}: bad value in {s!r}")
    return out


def cmd_compose(a) -> int:
    counts = _kv(a.count, "--count", int)
    sources = load_sources(a.source)
    m = compose_manifest(sources, counts, a.seed)
    if a.out:
        Path(a.out).write_text(m.to_json())
    else:
        sys.stdout.write(m.to_json())
    print(f"manifest with {len(m)} entries (seed {a.seed})", file=sys.stderr)
    return EXIT_OK


def evaluate_pair(pred: QuantizedDepth, cloud, cam, ext, max_range: float, space: str,
                  min_depth: float = 0.0) -> dict:
    if (pred.width, pred.height) != (cam.width, cam.height):
        raise ValidationError(f"prediction is {pred.width}x{pred.height}, calibration expects "
                              f"{cam.width}x{cam.height}")
    proj = [(i, p) for i, p in project_cloud(cam, ext, cloud) if p.d > min_depth]
    samples = pair_lidar_with_prediction(pred, proj, max_range, space)
    rel = rel_error(samples) if len(samples) else None
    return {"rel": rel, "n": len(samples), "projected": len(proj), "points": len(cloud)}


def cmd_eval(a) -> int:
    if len(a.pred) != len(a.cloud):
        raise UsageError("--pred and --cloud must be given the same number of times")
    cam, ext = load_calibration(a.calib)

    def one(pair):
        pred_path, cloud_path = pair
        pred = read_png8(_read(pred_path), default_max_range=a.max_range)
        cloud = read_kitti_bin(_read(cloud_path))
        r = evaluate_pair(pred, cloud, cam, ext, a.max_range, a.space, a.min_depth)
        r.update(pred=str(pred_path), cloud=str(cloud_path))
        return r

    pairs = list(zip(a.pred, a.cloud))
    if a.threads > 1:
        with ThreadPoolExecutor(max_workers=a.threads) as ex:
            images = list(ex.map(one, pairs))
    else:
        images = [one(p) for p in pairs]
    rels = [im["rel"] for im in images if im["rel"] is not None]
    if not rels:
        raise ValidationError("no LiDAR point produced a valid pair")
    mean = sum(rels) / len(rels)
    _emit({"space": a.space, "max_range": a.max_range, "images": images,
           "rel": mean, "mean_rel": mean}, a.out)
    for im in images:
        rel = "n/a" if im["rel"] is None else f"{100 * im['rel']:.2f}%"
        print(f"{im['pred']}: rel {rel} over {im['n']} points", file=sys.stderr)
    print(f"mean rel {100 * mean:.2f}% over {len(rels)} image(s)", file=sys.stderr)
    return EXIT_OK


def cmd_metrics(a) -> int:
    truth = _load_depth(a.truth, a.max_range)
    pred = _load_depth(a.pred, a.max_range)
    y = normalized_depth(truth, a.max_range)
    yhat = normalized_depth(pred, a.max_range)
    terms = densedepth_terms(y, yhat, LossWeights(lambda_depth=a.lambda_depth),
                             SsimConfig(window=a.window, sigma=a.sigma))
    _emit(terms, a.out)
    print(", ".join(f"{k} {v:.6g}" for k, v in terms.items()), file=sys.stderr)
    return EXIT_OK


COMMANDS = {"convert": cmd_convert, "project": cmd_project, "synth": cmd_synth,
            "compose": cmd_compose, "eval": cmd_eval, "metrics": cmd_metrics}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"synthdepth {args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as e:
        print(f"synthdepth {args.command}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
