"""
Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Machine-readable results go to stdout; the resolved configuration and logs go
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import io
from .config import FitConfig
from .engine import predict_trajectories
from .errors import DegenerateBlend, HimorError, NonFiniteLoss
from .initialize import init_first_level
from .metrics import DEFAULT_PCK_RATIO, clip_i, clip_t, epe, pck_t
from .optim import HISTORY_COLUMNS, fit, gradcheck
from .synthetic import PRESETS, gen_synthetic
from .tree import freeze_levels

log = logging.getLogger("himor")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def _report(kind: str, resolved: dict) -> None:
    print(json.dumps({"command": kind, **resolved}, sort_keys=True), file=sys.stderr)


def _positions_of(points) -> np.ndarray:
    return np.stack([p.position for p in points]) if points else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec_arg = args.spec
    if Path(spec_arg).is_file():
        spec = json.loads(Path(spec_arg).read_text())
    elif spec_arg in PRESETS:
        spec = PRESETS[spec_arg]()
    else:
        raise UsageError(f"--spec must be a file or one of {sorted(PRESETS)}")
    _report("generate", {"spec": spec, "seed": args.seed, "out": args.out})
    tracks, _ = gen_synthetic(spec, args.seed)
    io.save_tracks(tracks, args.out)
    return EXIT_OK


def cmd_init(args) -> int:
    _report("init", {"tracks": args.tracks, "nodes": args.nodes, "bases": args.bases,
                     "seed": args.seed, "out": args.out})
    tracks = io.load_tracks(args.tracks)
    tree = init_first_level(tracks, args.bases, args.nodes, args.seed)
    io.save_tree(tree, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    config = io.load_config(args.config) if args.config else FitConfig()
    if args.seed is not None:
        config.seed = args.seed
    _report("fit", {"tracks": args.tracks, "model": args.model, "out": args.out,
                    "history": args.history, "config": config.to_dict()})
    tracks = io.load_tracks(args.tracks)
    tree = io.load_tree(args.model) if args.model else None
    result = fit(tracks, config, tree=tree)
    io.save_tree(result.tree, args.out)
    if args.history:
        io.write_history_csv(result.history, args.history, HISTORY_COLUMNS)
    if result.history:
        log.info("final loss %.6g over %d steps", result.history[-1]["total"], len(result.history))
    return EXIT_OK


def cmd_eval(args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = set(names) - {"epe", "pck"}
    if bad:
        raise UsageError(f"unknown metrics: {sorted(bad)}")
    if (args.model is None) == (args.pred is None):
        raise UsageError("give exactly one of --model or --pred")
    _report("eval", {"model": args.model, "pred": args.pred, "tracks": args.tracks,
                     "metrics": names, "pck_ratio": args.pck_ratio, "skin_knn": args.skin_knn})
    gt = io.load_tracks(args.tracks)
    if args.model:
        tree = io.load_tree(args.model)
        pred = predict_trajectories(tree, gt.positions[:, tree.canonical_frame], args.skin_knn)
    else:
        pred = io.load_tracks(args.pred).positions
    out = {}
    if "epe" in names:
        out["epe"] = epe(pred, gt)
    if "pck" in names:
        out["pck_t"] = pck_t(pred, gt, args.pck_ratio)
    print(json.dumps(out))
    return EXIT_OK


def _parse_levels(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--active-levels expects a comma-separated list of integers, got {text!r}") from None


def _export(args, active) -> int:
    tree = io.load_tree(args.model)
    points = io.load_points(args.points, tree.canonical_frame)
    view = tree if active is None else freeze_levels(tree, active)
    traj = predict_trajectories(view, _positions_of(points), args.skin_knn)
    io.write_trajectories_csv(traj, args.out)
    return EXIT_OK


def cmd_decompose(args) -> int:
    active = _parse_levels(args.active_levels)
    _report("decompose", {"model": args.model, "points": args.points, "out": args.out,
                          "active_levels": active, "skin_knn": args.skin_knn})
    return _export(args, active)


def cmd_export(args) -> int:
    _report("export", {"model": args.model, "points": args.points, "out": args.out,
                       "skin_knn": args.skin_knn})
    return _export(args, None)


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    _report("gradcheck", {"seed": args.seed, "trials": args.trials, "h": 1e-5, "rtol": 1e-4, "atol": 1e-8})
    worst, failed = 0.0, []
    for k in range(args.trials):
        rep = gradcheck(args.seed + k)
        worst = max(worst, rep.max_rel_error)
        if not rep.ok:
            failed.append(args.seed + k)
            for line in rep.failures[:5]:
                log.error("seed %d: %s", args.seed + k, line)
    print(json.dumps({"trials": args.trials, "failed_seeds": failed, "max_rel_error": worst}))
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_embed_sim(args) -> int:
    if args.interval < 1:
        raise UsageError("--interval must be at least 1")
    _report("embed-sim", {"pred": args.pred, "gt": args.gt, "interval": args.interval})
    pred = io.load_embeddings(args.pred)
    gt = io.load_embeddings(args.gt)
    print(json.dumps({"clip_i": clip_i(pred, gt), "clip_t": clip_t(pred, args.interval)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="himor", description="Hierarchical motion trees for 3D point trajectories.")
    p.add_argument("--threads", type=int, default=1, help="worker threads (1 is the determinism reference)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize tracks from a scene description")
    g.add_argument("--spec", required=True, help=f"scene JSON file or preset ({', '.join(sorted(PRESETS))})")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("init", help="initialize a one-level tree from tracks")
    i.add_argument("--tracks", required=True)
    i.add_argument("--nodes", type=int, default=50)
    i.add_argument("--bases", type=int, default=10)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_init)

    f = sub.add_parser("fit", help="fit a motion tree to tracks")
    f.add_argument("--tracks", required=True)
    f.add_argument("--config")
    f.add_argument("--model", help="start from this tree instead of initializing")
    f.add_argument("--seed", type=int, help="override the config seed")
    f.add_argument("--out", required=True)
    f.add_argument("--history")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score predicted trajectories against tracks")
    e.add_argument("--model")
    e.add_argument("--pred", help="predicted tracks file instead of a model")
    e.add_argument("--tracks", required=True)
    e.add_argument("--metrics", default="epe,pck")
    e.add_argument("--pck-ratio", type=float, default=DEFAULT_PCK_RATIO)
    e.add_argument("--skin-knn", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    for name, fn, hint in (("decompose", cmd_decompose, "trajectories with some levels frozen"),
                           ("export", cmd_export, "skinned trajectories of points")):
        d = sub.add_parser(name, help=hint)
        d.add_argument("--model", required=True)
        d.add_argument("--points", required=True, help="points file, or a tracks file")
        d.add_argument("--out", required=True)
        d.add_argument("--skin-knn", type=int, default=4)
        if name == "decompose":
            d.add_argument("--active-levels", required=True, help="comma-separated levels, may be empty")
        d.set_defaults(func=fn)

    c = sub.add_parser("gradcheck", help="finite-difference check of loss gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=100)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("embed-sim", help="cosine-similarity scores of embedding files")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--interval", type=int, required=True)
    s.set_defaults(func=cmd_embed_sim)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"himor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("himor: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"himor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, DegenerateBlend) as exc:
        print(f"himor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HimorError, OSError, ValueError) as exc:
        print(f"himor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
