"""Batch command-line interface.

Four subcommands drive the pipeline without a UI: ``render`` one frame
from a volume, ``register`` two landmark files into a transform, ``score``
a needle in a saved session, ``serve`` the HTTP service. Exit codes: 0 on
success, 1 for processing failures (bad files, unknown ids), 2 for usage
errors; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import scene as _scene
from . import service as _service
from .errors import NeedleSimError
from .ingest import load_dicom_series, load_nrrd
from .registration import LandmarkSet, align
from .render import Camera, RenderSettings, SlicingPlane, render
from .transfer import TransferFunction1D

EXIT_OK = 0
EXIT_PROCESSING = 1
EXIT_USAGE = 2


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be WxH, got {text!r}")


def _parse_plane_spec(spec: str, index: int) -> SlicingPlane:
    """SPEC is kind:px,py,pz:nx,ny,nz[:res], e.g. cutout:0,0,0:0,0,1"""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError(
            f"plane spec needs kind:px,py,pz:nx,ny,nz[:res], got {spec!r}"
        )
    kind = parts[0].strip().lower()
    try:
        p = [float(v) for v in parts[1].split(",")]
        n = [float(v) for v in parts[2].split(",")]
        if len(p) != 3 or len(n) != 3:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad plane coordinates in {spec!r}")
    res = (256, 256)
    if len(parts) == 4:
        try:
            r = int(parts[3])
            res = (r, r)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad plane resolution in {spec!r}")
    return SlicingPlane(
        id=f"plane{index}", kind=kind, p_p=np.asarray(p), p_n=np.asarray(n),
        resolution=res,
    )


def _load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _cmd_render(args) -> int:
    volume_path = args.volume
    volume = (
        load_dicom_series(volume_path) if os.path.isdir(volume_path)
        else load_nrrd(volume_path)
    )
    tf = TransferFunction1D.from_dict(_load_json(args.tf))
    cam = _load_json(args.camera)
    cam["image_size"] = list(args.size)
    camera = Camera.from_dict(cam)
    settings = RenderSettings(
        method=args.method,
        iso_threshold=args.iso,
        step_mm=args.step_mm,
        lighting_enabled=not args.no_lighting,
    )
    image = render(volume, tf, settings, camera,
                   planes=[p for p in args.planes if p.kind == "cutout"],
                   tiles=args.tiles)
    image.save(args.out)
    return EXIT_OK


def _cmd_register(args) -> int:
    source = LandmarkSet.from_dict(_load_json(args.source_landmarks))
    target = LandmarkSet.from_dict(_load_json(args.target_landmarks))
    transform = align(source, target)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(transform.to_dict(), f, indent=2)
        f.write("\n")
    return EXIT_OK


def _cmd_score(args) -> int:
    session = _scene.load(args.session)
    report, crossings = _scene.score_needle(session, args.needle, args.acupoint)
    body = report.to_dict()
    body["crossings"] = [c.to_dict() for c in crossings]
    json.dump(body, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def _cmd_serve(args) -> int:
    try:
        _service.serve(bind=args.bind, data_root=args.data)
    except KeyboardInterrupt:
        return EXIT_OK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="needlesim",
        description="volume rendering, registration, needle scoring, HTTP service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="ray-cast one frame to PNG/PPM")
    p.add_argument("--volume", required=True, help="NRRD file or DICOM directory")
    p.add_argument("--tf", required=True, help="transfer function JSON")
    p.add_argument("--method", required=True, choices=("dvr", "mip", "iso"))
    p.add_argument("--iso", type=float, default=None, help="iso threshold")
    p.add_argument("--camera", required=True, help="camera JSON {position,target,up,fov}")
    p.add_argument("--size", required=True, type=_parse_size, help="WxH pixels")
    p.add_argument("--plane", action="append", default=[],
                   help="kind:px,py,pz:nx,ny,nz[:res]; repeatable")
    p.add_argument("--out", required=True, help="output image (.png or .ppm)")
    p.add_argument("--step-mm", type=float, default=None)
    p.add_argument("--tiles", type=int, default=1)
    p.add_argument("--no-lighting", action="store_true")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("register", help="align two six-landmark files")
    p.add_argument("--source-landmarks", required=True)
    p.add_argument("--target-landmarks", required=True)
    p.add_argument("--out", required=True, help="output transform JSON")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("score", help="score a needle in a saved session")
    p.add_argument("--session", required=True)
    p.add_argument("--needle", required=True)
    p.add_argument("--acupoint", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bind", default="127.0.0.1:8630")
    p.add_argument("--data", default=".", help="data root directory")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "render":
        if args.method == "iso" and args.iso is None:
            parser.error("--method iso requires --iso THRESHOLD")
        try:
            args.planes = [
                _parse_plane_spec(spec, i + 1) for i, spec in enumerate(args.plane)
            ]
        except argparse.ArgumentTypeError as e:
            parser.error(str(e))
    if args.command == "serve" and not os.path.isdir(args.data):
        parser.error(f"--data {args.data!r} is not a directory")

    try:
        return args.func(args)
    except NeedleSimError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROCESSING
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
