"""Command-line interface.

Subcommands: gen-data, train, reconstruct, evaluate, stats.  Exit
codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.  Identical argv + seed (at any --threads value) produce
byte-identical output files; --json adds a machine-readable summary
on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .config import parse_config
from .errors import DataError, NumericError, OoptError, UsageError
from .extraction import TriMesh, edge_adjacency_stats
from .fileio import load_geometry, store_geometry
from .geometry import PointCloud
from .metrics import compare
from .network import init_params, load_params, save_params
from .pipeline import reconstruct
from .training import (TrainConfig, default_training_meshes,
                       generate_training_mesh, load_training_meshes, train,
                       write_loss_trace)

_KIND_CYCLE = ("sphere", "torus", "rounded-box", "heightfield")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the CLI contract reserves 2
    # for data errors, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _threads_default() -> int:
    env = os.environ.get("OOPT_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"OOPT_THREADS must be an integer, got {env!r}") from None
    return 1


def _add(p, *args, **kw):
    p.add_argument(*args, **kw)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    top = _Parser(prog="oopt", description=__doc__.splitlines()[0],
                  formatter_class=fmt)
    top.add_argument("--version", action="version", version=f"oopt {__version__}")
    sub = top.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", formatter_class=fmt,
                       help="write synthetic near-uniform training meshes")
    _add(p, "--out", required=True, help="output directory for OBJ meshes")
    _add(p, "--count", type=int, default=20, help="number of meshes")
    _add(p, "--target-edge", type=float, default=0.15, help="target edge length")
    _add(p, "--seed", type=int, default=0, help="generation seed")
    _add(p, "--json", action="store_true", help="print a JSON summary")

    p = sub.add_parser("train", formatter_class=fmt,
                       help="train the triangle prediction network")
    _add(p, "--input", default=None,
         help="directory of training meshes (OBJ/PLY); omit for built-in synthetic set")
    _add(p, "--out", required=True, help="checkpoint output path")
    _add(p, "--steps", type=int, default=2000, help="training steps")
    _add(p, "--batch", type=int, default=512, help="sampled center points per step")
    _add(p, "--K", type=int, default=50, help="KNN neighborhood size")
    _add(p, "--lr", type=float, default=1e-3, help="learning rate")
    _add(p, "--optimizer", choices=("adam", "momentum"), default="adam",
         help="parameter update rule")
    _add(p, "--no-augment", action="store_true", help="disable augmentation")
    _add(p, "--seed", type=int, default=0, help="training seed")
    _add(p, "--loss-csv", default=None,
         help="loss trace path (default: <out>.loss.csv)")
    _add(p, "--json", action="store_true", help="print a JSON summary")

    p = sub.add_parser("reconstruct", formatter_class=fmt,
                       help="reconstruct a surface from a point cloud")
    _add(p, "--input", required=True, help="point cloud or mesh file (.xyz/.ply/.obj)")
    _add(p, "--params", required=True, help="trained network checkpoint")
    _add(p, "--out", required=True, help="output mesh path (.obj/.ply)")
    _add(p, "--config", default=None, help="key=value config file")
    _add(p, "--voxel", default=None, help="voxel size in input units, or 'auto'")
    _add(p, "--T", type=int, default=None, help="offset iterations (0 = forward only)")
    _add(p, "--K", type=int, default=None, help="KNN neighborhood size")
    _add(p, "--chunk", type=int, default=None, help="points per gradient chunk")
    _add(p, "--seed", type=int, default=None, help="run seed (recorded; pipeline is deterministic)")
    _add(p, "--threads", type=int, default=None,
         help="worker threads (default: OOPT_THREADS or 1)")
    _add(p, "--strict-manifold", action="store_true",
         help="post-process to 100%% edge-manifold output")
    _add(p, "--diagnostics", default=None,
         help="per-iteration CSV path (default: <out>.diagnostics.csv)")
    _add(p, "--json", action="store_true", help="print a JSON summary")

    p = sub.add_parser("evaluate", formatter_class=fmt,
                       help="compare a reconstruction against ground truth")
    _add(p, "--gt", required=True, help="ground-truth mesh")
    _add(p, "--pred", required=True, help="reconstructed mesh")
    _add(p, "--config", default=None, help="key=value config file (metric thresholds)")
    _add(p, "--samples", type=int, default=None, help="surface samples per mesh")
    _add(p, "--seed", type=int, default=None, help="sampling seed")
    _add(p, "--out", default=None, help="write the report as CSV here")
    _add(p, "--json", action="store_true", help="print a JSON summary")

    p = sub.add_parser("stats", formatter_class=fmt,
                       help="edge-adjacency histogram of a mesh")
    _add(p, "--input", required=True, help="mesh file")
    _add(p, "--out", default=None, help="write the histogram as CSV here")
    _add(p, "--json", action="store_true", help="print a JSON summary")
    return top


def _emit(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))


def _cmd_gen_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for i in range(args.count):
        kind = _KIND_CYCLE[i % len(_KIND_CYCLE)]
        mesh = generate_training_mesh(kind, target_edge=args.target_edge,
                                      seed=args.seed * 1000 + i)
        path = os.path.join(args.out, f"{i:03d}_{kind}.obj")
        store_geometry(mesh, path)
        paths.append(path)
    _emit(args, {"count": len(paths), "meshes": paths})
    if not args.json:
        print(f"wrote {len(paths)} meshes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    if args.input is None:
        meshes = default_training_meshes(seed=args.seed)
    else:
        meshes = load_training_meshes(args.input)
    cfg = TrainConfig(steps=args.steps, batch_points=args.batch, k=args.K,
                      lr=args.lr, optimizer=args.optimizer, seed=args.seed,
                      augment=not args.no_augment)
    params, trace = train(init_params(seed=args.seed), meshes, cfg)
    save_params(params, args.out)
    loss_csv = args.loss_csv or args.out + ".loss.csv"
    write_loss_trace(loss_csv, trace)
    final = trace[-1][1] if trace else float("nan")
    _emit(args, {"checkpoint": args.out, "loss_csv": loss_csv,
                 "steps": len(trace), "final_loss": final,
                 "meshes": len(meshes)})
    if not args.json:
        print(f"trained {len(trace)} steps on {len(meshes)} meshes; "
              f"final loss {final:.6f}; checkpoint {args.out}")
    return 0


def _load_cloud(path) -> PointCloud:
    obj = load_geometry(path)
    if isinstance(obj, TriMesh):
        return PointCloud(obj.vertices)
    return obj


def _write_diagnostics(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss", "lr", "applied_percent", "manifold_percent"])
        for r in rows:
            w.writerow([r.iteration, f"{r.loss:.8f}", f"{r.lr:.8f}",
                        f"{r.applied_percent:.4f}", f"{r.manifold_percent:.4f}"])


def _cmd_reconstruct(args) -> int:
    overrides = {}
    if args.voxel is not None:
        overrides["voxel"] = args.voxel
    if args.T is not None:
        overrides["T"] = args.T
    if args.K is not None:
        overrides["K"] = args.K
    if args.chunk is not None:
        overrides["chunk"] = args.chunk
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = parse_config(args.config, overrides)
    threads = args.threads if args.threads is not None else _threads_default()
    cloud = _load_cloud(args.input)
    params = load_params(args.params)
    result = reconstruct(cloud, params, cfg, threads=threads,
                         strict_manifold=args.strict_manifold)
    store_geometry(result.mesh, args.out)
    diag_path = args.diagnostics or args.out + ".diagnostics.csv"
    _write_diagnostics(diag_path, result.diagnostics)
    payload = dict(result.info)
    payload.update({"out": args.out, "diagnostics": diag_path,
                    "strict_manifold": bool(args.strict_manifold)})
    _emit(args, payload)
    if not args.json:
        print(f"reconstructed {result.info['n_faces']} faces from "
              f"{result.info['n_points']} points "
              f"({result.info['manifold_percent']:.2f}% manifold edges); "
              f"mesh {args.out}")
    return 0


def _require_mesh(path) -> TriMesh:
    obj = load_geometry(path)
    if not isinstance(obj, TriMesh) or obj.n_faces == 0:
        raise DataError(f"{path}: expected a triangle mesh with faces")
    return obj


def _cmd_evaluate(args) -> int:
    overrides = {}
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = parse_config(args.config, overrides)
    gt = _require_mesh(args.gt)
    pred = _require_mesh(args.pred)
    report = compare(gt, pred, n_samples=cfg.samples, seed=cfg.seed,
                     fscore_tau=cfg.fscore_tau, sharp_radius=cfg.sharp_radius,
                     sharp_angle=cfg.sharp_angle, ef1_tau=cfg.ef1_tau)
    if args.out:
        report.to_csv(args.out)
    if args.json:
        from .metrics import REPORT_COLUMNS
        _emit(args, dict(zip(REPORT_COLUMNS, report.scaled_values())))
    else:
        print(report.to_table())
    return 0


def _cmd_stats(args) -> int:
    mesh = _require_mesh(args.input)
    stats = edge_adjacency_stats(mesh.faces)
    hist = {int(k): int(v) for k, v in stats.histogram.items()}
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["adjacency", "count"])
            for adj in sorted(hist):
                w.writerow([adj, hist[adj]])
    if args.json:
        _emit(args, {"total_edges": stats.total_edges,
                     "manifold_percent": stats.manifold_percent,
                     "histogram": {str(k): v for k, v in sorted(hist.items())}})
    else:
        print("adjacency  count")
        for adj in sorted(hist):
            print(f"{adj:9d}  {hist[adj]}")
        print(f"manifold edges: {stats.manifold_percent:.2f}% "
              f"of {stats.total_edges}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"oopt {args.command}: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"oopt {args.command}: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"oopt {args.command}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
