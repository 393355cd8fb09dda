"""Dataset ingestion, augmentation runs with replayable manifests, and image metrics."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import core, resampler
from .core import AugmentationSpec, HazePair
from .mappers import DepthProvider, PANet, drm_refine, hpm_estimate, phm_generate
from .rng import derive_seed
from .scattering import compute_transmission

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


# -- ingestion ----------------------------------------------------------------

def _images_by_stem(folder: Path) -> dict:
    if not folder.is_dir():
        return {}
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def _load(path: Path) -> core.Image:
    try:
        return core.load_image(path)
    except (OSError, ValueError) as err:
        raise core.HazeForgeError(f"cannot decode {path}: {err}") from None


def _load_depth(path: Optional[Path]):
    if path is None:
        return None
    raw = core.load_param_map(path) if path.suffix == ".hfpm" else core.load_gray(path)
    return core.normalize_depth(raw)


def ingest_dataset(root, layout: str = "paired-dirs", list_file: Optional[str] = None) -> list:
    """Load hazy/clean pairs, sorted by id.

    ``paired-dirs``: ``root/hazy/<id>.png`` matched to ``root/clean/<id>.png``
    by stem, with optional ``root/depth/<id>.{png,hfpm}``.
    ``list-file``: each non-blank line of ``list_file`` (default
    ``root/pairs.txt``) is ``hazy clean [depth]``, paths relative to root.
    """
    root = Path(root)
    if not root.is_dir():
        raise core.HazeForgeError(f"dataset root {root} does not exist")

    triples = []
    if layout == "paired-dirs":
        hazy = _images_by_stem(root / "hazy")
        clean = _images_by_stem(root / "clean")
        depth_dir = root / "depth"
        for stem in sorted(hazy):
            if stem not in clean:
                raise core.HazeForgeError(f"unmatched hazy image {stem!r}: no clean/{stem}.* found")
            depth = next((p for p in (depth_dir / f"{stem}.hfpm", depth_dir / f"{stem}.png") if p.exists()), None)
            triples.append((stem, hazy[stem], clean[stem], depth))
        extra = sorted(set(clean) - set(hazy))
        if extra:
            log.warning("ignoring %d clean images without a hazy partner: %s", len(extra), extra[:5])
    elif layout == "list-file":
        lf = Path(list_file) if list_file else root / "pairs.txt"
        if not lf.is_absolute() and not lf.exists():
            lf = root / lf
        for lineno, line in enumerate(lf.read_text().splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (2, 3):
                raise core.HazeForgeError(f"{lf}:{lineno}: expected 'hazy clean [depth]'")
            paths = [root / p for p in parts]
            for p in paths:
                if not p.exists():
                    raise core.HazeForgeError(f"{lf}:{lineno}: missing file {p}")
            triples.append((paths[0].stem, paths[0], paths[1], paths[2] if len(paths) == 3 else None))
        triples.sort(key=lambda x: x[0])
    else:
        raise ValueError(f"unknown layout {layout!r}")

    if not triples:
        raise core.HazeForgeError(f"no image pairs found under {root}")
    pairs = []
    for stem, hp, cp, dp in triples:
        pair = HazePair(hazy=_load(hp), clean=_load(cp), id=stem, depth=_load_depth(dp))
        pairs.append(core.validate_pair(pair))
    return pairs


# -- augmentation -------------------------------------------------------------

def worker_count(default: int = 1) -> int:
    env = os.environ.get("HAZEFORGE_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            log.warning("ignoring non-integer HAZEFORGE_THREADS=%r", env)
    return max(1, min(default, cap))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _SourceCache:
    """Per-pair estimates shared by every augmentation of that pair."""

    def __init__(self, model: PANet, depth_provider: DepthProvider):
        self.model = model
        self.provider = depth_provider

    def estimate(self, pair: HazePair):
        beta, A = hpm_estimate(pair.hazy, self.model.hpm)
        raw = self.provider.depth(pair.clean, pair.id, pair.depth)
        depth = drm_refine(raw, pair.clean, self.model.drm if self.model.use_drm else None)
        t = compute_transmission(beta, depth)
        return beta, A, depth, t


def render_entry(pair: HazePair, estimates, spec: AugmentationSpec, model: PANet,
                 haze_free_threshold: float = resampler.HAZE_FREE_THRESHOLD) -> np.ndarray:
    beta, A, depth, t = estimates
    beta2, A2 = resampler.apply_spec(spec, beta, A, t, haze_free_threshold)
    _, final = phm_generate(pair.clean, beta2, A2, depth, model.dhr if model.use_dhr else None)
    return final


def _entry_name(pair_id: str, k: int, strategy: str) -> str:
    return f"{pair_id}_aug{k}_{strategy}.png"


def _write_manifest(path: Path, manifest: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def augment_dataset(pairs: Sequence[HazePair], model: PANet, policy: resampler.SamplingPolicy,
                    count: int, seed: int, out_dir, depth_provider: Optional[DepthProvider] = None,
                    checkpoint_id: str = "", provenance: Optional[dict] = None,
                    workers: Optional[int] = None) -> dict:
    """Generate ``count`` new hazy/clean pairs and write ``manifest.json``.

    Sources are used round-robin.  Entry ``k`` draws its recipe from
    ``derive_seed(seed, k)`` only, so results do not depend on worker count.
    Images land in ``out_dir/hazy`` and ``out_dir/clean``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not pairs:
        raise ValueError("no source pairs")
    policy.validate()
    depth_provider = depth_provider or DepthProvider()
    out_dir = Path(out_dir)
    model.eval()

    manifest = {
        "version": MANIFEST_VERSION,
        "checkpoint_id": checkpoint_id,
        "seed": seed,
        "count": count,
        "policy": asdict(policy),
        "depth_provider": depth_provider.to_dict(),
        "ablation": {"use_drm": model.use_drm, "use_dhr": model.use_dhr},
        "status": "running",
        "entries": [],
        **(provenance or {}),
    }
    manifest_path = out_dir / "manifest.json"
    n = len(pairs)
    cache = _SourceCache(model, depth_provider)
    workers = workers or worker_count()

    def run(k):
        pair = pairs[k % n]
        entry_seed = derive_seed(seed, k)
        spec = resampler.sample_spec(policy, entry_seed)
        return k, pair, entry_seed, spec

    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(cache.estimate, pairs))
            jobs = list(pool.map(run, range(count)))

            def render(job):
                k, pair, _, spec = job
                return render_entry(pair, estimates[k % n], spec, model, policy.haze_free_threshold)

            # images are computed in parallel, written and recorded in index order
            for job, final in zip(jobs, pool.map(render, jobs)):
                k, pair, entry_seed, spec = job
                name = _entry_name(pair.id, k // n, spec.strategy)
                hazy_path = core.save_image(out_dir / "hazy" / name, final)
                clean_path = core.save_image(out_dir / "clean" / name, pair.clean)
                manifest["entries"].append({
                    "index": k,
                    "source_pair_id": pair.id,
                    "output_paths": {"hazy": f"hazy/{name}", "clean": f"clean/{name}"},
                    "spec": spec.to_dict(),
                    "rng_seed": entry_seed,
                    "sha256": {"hazy": _sha256(hazy_path), "clean": _sha256(clean_path)},
                })
    except OSError as err:
        manifest["status"] = "failed"
        manifest["error"] = str(err)
        try:
            _write_manifest(manifest_path, manifest)
        except OSError:
            log.error("could not flush partial manifest to %s", manifest_path)
        raise
    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    return manifest


def load_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise core.HazeForgeError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    return manifest


def policy_from_manifest(manifest: dict) -> resampler.SamplingPolicy:
    p = manifest["policy"]
    return resampler.SamplingPolicy(
        weights=dict(p["weights"]), alpha_range=tuple(p["alpha_range"]),
        gamma_range=tuple(p["gamma_range"]), eta_range=tuple(p["eta_range"]),
        fill_range=tuple(p["fill_range"]), haze_free_threshold=p["haze_free_threshold"])


def replay(manifest: dict, pairs: Sequence[HazePair], model: PANet, out_dir) -> list:
    """Regenerate every manifest entry into ``out_dir``.

    Each entry's recipe is re-derived from its recorded seed and must equal the
    recorded one.  Returns the relative paths whose bytes differ from the
    recorded hashes (empty on a faithful replay).
    """
    out_dir = Path(out_dir)
    policy = policy_from_manifest(manifest)
    provider = DepthProvider(**manifest["depth_provider"])
    by_id = {p.id: p for p in pairs}
    cache = _SourceCache(model, provider)
    estimates = {}
    mismatched = []
    for entry in manifest["entries"]:
        pair = by_id.get(entry["source_pair_id"])
        if pair is None:
            raise core.HazeForgeError(f"source pair {entry['source_pair_id']!r} not in dataset")
        spec = AugmentationSpec.from_dict(entry["spec"])
        if resampler.sample_spec(policy, entry["rng_seed"]) != spec:
            raise core.HazeForgeError(f"entry {entry['index']}: recorded spec does not match its seed")
        if pair.id not in estimates:
            estimates[pair.id] = cache.estimate(pair)
        final = render_entry(pair, estimates[pair.id], spec, model, policy.haze_free_threshold)
        paths = entry["output_paths"]
        written = {"hazy": core.save_image(out_dir / paths["hazy"], final),
                   "clean": core.save_image(out_dir / paths["clean"], pair.clean)}
        for role, path in written.items():
            if _sha256(path) != entry["sha256"][role]:
                mismatched.append(paths[role])
    return mismatched


# -- metrics ------------------------------------------------------------------

def _pair_arrays(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise core.ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images; ``inf`` when identical."""
    a, b = _pair_arrays(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


SSIM_WIN = 11
SSIM_SIGMA = 1.5


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.

    Only windows lying fully inside the image contribute.
    """
    a, b = _pair_arrays(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    c1, c2 = 0.01**2, 0.03**2
    r = SSIM_WIN // 2
    truncate = r / SSIM_SIGMA

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")[r:-r, r:-r]

    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def format_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def evaluate_dirs(dir_a, dir_b) -> list:
    """PSNR/SSIM for images with matching stems; last row is the mean."""
    a_imgs, b_imgs = _images_by_stem(Path(dir_a)), _images_by_stem(Path(dir_b))
    common = sorted(set(a_imgs) & set(b_imgs))
    if not common:
        raise core.HazeForgeError(f"no matching image names between {dir_a} and {dir_b}")
    rows = []
    for stem in common:
        a, b = _load(a_imgs[stem]), _load(b_imgs[stem])
        rows.append({"name": stem, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    rows.append({"name": "mean", "psnr": float(np.mean([r["psnr"] for r in rows])),
                 "ssim": float(np.mean([r["ssim"] for r in rows]))})
    return rows


def format_table(rows) -> str:
    lines = ["name,psnr,ssim"]
    lines += [f"{r['name']},{format_psnr(r['psnr'])},{r['ssim']:.6f}" for r in rows]
    return "\n".join(lines)
