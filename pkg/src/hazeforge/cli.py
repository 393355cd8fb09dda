"""Command-line entry point: ``hazeforge {train,augment,render,eval,replay}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import core, pipeline
from .config import RunConfig, load_config
from .mappers import DepthProvider, vertical_ramp
from .scattering import compute_transmission, render_haze
from .training import checkpoint_id, load_checkpoint, train_panet

log = logging.getLogger("hazeforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_depth(spec: str) -> DepthProvider:
    """``ramp``, ``file:<dir>`` or ``plugin:<name>``."""
    kind, _, source = spec.partition(":")
    try:
        return DepthProvider(kind, source or None)
    except ValueError as err:
        raise UsageError(str(err)) from None


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.seed is not None:
        cfg.train.seed = args.seed
    root = args.data or cfg.data_root
    if root is None:
        raise UsageError("train: no dataset (pass --data or set [data] root)")
    depth = _parse_depth(args.depth) if args.depth else cfg.depth
    pairs = pipeline.ingest_dataset(root, args.layout or cfg.layout, cfg.list_file)
    result = train_panet(pairs, cfg.train.validate(cfg.mapper), cfg.mapper, depth, out_dir=args.out)
    path = Path(result["path"])
    final = result["history"][-1]
    print(f"checkpoint {path} id={checkpoint_id(path)} epochs={result['epoch']} loss={final['total']:.6f}")
    return 0


def cmd_augment(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    model, _ = load_checkpoint(args.checkpoint)
    if args.no_dhr:
        model.use_dhr = False
    if args.no_drm:
        model.use_drm = False
    depth = _parse_depth(args.depth) if args.depth else cfg.depth
    pairs = pipeline.ingest_dataset(args.data, args.layout, cfg.list_file)
    out = Path(args.out)
    manifest = pipeline.augment_dataset(
        pairs, model, cfg.policy, args.count, args.seed, out, depth,
        checkpoint_id=checkpoint_id(args.checkpoint),
        provenance={"checkpoint_path": str(Path(args.checkpoint).resolve()),
                    "data_root": str(Path(args.data).resolve()), "layout": args.layout,
                    "list_file": cfg.list_file},
    )
    print(f"wrote {len(manifest['entries'])} pairs to {out} (manifest {out / 'manifest.json'})")
    return 0


def _load_map(path: str) -> np.ndarray:
    if path.endswith(".png"):
        return core.load_gray(path)
    return core.load_param_map(path)


def cmd_render(args) -> int:
    clean = core.load_image(args.clean)
    h, w = clean.shape[:2]
    beta = core.DensityMap(np.broadcast_to(_load_map(args.beta), (h, w, 3)))
    A = core.AtmosphericMap(_load_map(args.airlight))
    depth = core.normalize_depth(_load_map(args.depth)) if args.depth else core.DepthMap(vertical_ramp(h, w))
    hazy = render_haze(clean, compute_transmission(beta, depth), A)
    core.save_image(args.out, hazy)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = pipeline.evaluate_dirs(args.a, args.b)
    table = pipeline.format_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def cmd_replay(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = pipeline.load_manifest(manifest_path)
    ckpt_path = args.checkpoint or manifest.get("checkpoint_path")
    data_root = args.data or manifest.get("data_root")
    if not ckpt_path or not data_root:
        raise UsageError("replay: manifest lacks checkpoint/data paths; pass --checkpoint and --data")
    if checkpoint_id(ckpt_path) != manifest["checkpoint_id"]:
        raise core.HazeForgeError(f"checkpoint {ckpt_path} does not match manifest id {manifest['checkpoint_id']}")
    model, _ = load_checkpoint(ckpt_path)
    model.use_drm = manifest["ablation"]["use_drm"]
    model.use_dhr = manifest["ablation"]["use_dhr"]
    pairs = pipeline.ingest_dataset(data_root, manifest.get("layout", "paired-dirs"), manifest.get("list_file"))
    out = Path(args.out) if args.out else manifest_path.parent
    mismatched = pipeline.replay(manifest, pairs, model, out)
    if mismatched:
        print(f"{len(mismatched)} files differ from the manifest, e.g. {mismatched[0]}", file=sys.stderr)
        return 2
    print(f"replayed {len(manifest['entries'])} entries into {out}; all bytes identical")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazeforge", description="Parameter-space haze augmentation for paired dehazing data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train the mappers and write a checkpoint")
    t.add_argument("--config", help="INI run configuration")
    t.add_argument("--data", help="dataset root (overrides [data] root)")
    t.add_argument("--layout", choices=("paired-dirs", "list-file"))
    t.add_argument("--depth", help="depth provider: ramp | file:<dir> | plugin:<name>")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="run", help="directory for checkpoint.pt and train_log.csv")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("augment", help="generate new hazy/clean pairs from a checkpoint")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--count", type=int, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="augmented")
    a.add_argument("--config", help="INI file supplying [policy] and [depth]")
    a.add_argument("--layout", default="paired-dirs", choices=("paired-dirs", "list-file"))
    a.add_argument("--depth", help="depth provider: ramp | file:<dir> | plugin:<name>")
    a.add_argument("--no-dhr", action="store_true", help="emit the physics render without refinement")
    a.add_argument("--no-drm", action="store_true", help="use provider depth without refinement")
    a.set_defaults(func=cmd_augment)

    r = sub.add_parser("render", help="physics-only render from explicit parameter maps")
    r.add_argument("--clean", required=True)
    r.add_argument("--beta", required=True, help="density map (.hfpm, 1 or 3 channels)")
    r.add_argument("--airlight", required=True, help="airlight map (.hfpm or grayscale .png)")
    r.add_argument("--depth", help="depth map (.hfpm or .png); default is a vertical ramp")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM between two image directories")
    e.add_argument("a")
    e.add_argument("b")
    e.add_argument("--out", help="also write the table here")
    e.set_defaults(func=cmd_eval)

    rp = sub.add_parser("replay", help="regenerate a manifest's images and check them byte for byte")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: alongside the manifest)")
    rp.add_argument("--checkpoint")
    rp.add_argument("--data")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("hazeforge: a subcommand is required")
        if getattr(args, "count", 1) < 1:
            raise UsageError("--count must be >= 1")
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except (core.HazeForgeError, ValueError, OSError) as err:
        print(f"hazeforge: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
