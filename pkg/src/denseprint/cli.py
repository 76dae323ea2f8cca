"""Command-line workflows for the library: synthesis, enrollment, matching,
identification, training-pair generation, and evaluation.

Every command is deterministic given the same config file and seed.  Structured
outputs (manifests, match detail, evaluation summaries) embed a hash of the
effective configuration so artifacts can be traced back to the settings that
produced them.  Partial outputs are removed when a command fails, and a
command exits 0 only when its outputs were fully written.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import GrayImage, Minutia, SegMask, load_minutiae_text, save_minutiae_text
from .descriptor import (
    DescriptorConfig,
    DenseDescriptor,
    Template,
    load_template,
    save_template,
    template_from_bytes,
    template_to_bytes,
)
from .evalmetrics import (
    IdentificationRun,
    ScoreSets,
    cmc_curve,
    det_curve,
    tar_at_far,
    write_cmc_csv,
    write_det_csv,
)
from .losses import (
    LossConfig,
    cosface_loss,
    finite_diff_check,
    minutiae_loss,
    segmentation_loss,
    similarity_loss,
)
from .matcher import MatchConfig, identify, local_similarity, lsa_hungarian, match_score, select_nm
from .mcc import MccParams
from .minutiae_map import MapConfig, decode_map, encode_map
from .synth import (
    AugmentConfig,
    DistortionConfig,
    SynthFingerprint,
    enroll_template,
    estimate_fields,
    synth_fingerprint,
)
from .traingen import TrainGenConfig, generate_patch_pairs, select_mated_minutiae

TEMPLATE_SUFFIX = ".tpl"


class CliError(Exception):
    """User-facing failure: bad input, contract violation, inconsistent manifest."""


@dataclass(frozen=True)
class RunConfig:
    """Every module's knobs plus run-level plumbing, parseable from one JSON file.

    Precedence is flags > file > defaults; unknown keys anywhere in the file
    are rejected with the offending path named.
    """

    seed: int = 0
    workers: int = 1
    binary: bool = False
    synth_size: int = 448
    match: MatchConfig = field(default_factory=MatchConfig)
    mcc: MccParams = field(default_factory=MccParams)
    traingen: TrainGenConfig = field(default_factory=TrainGenConfig)
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    map: MapConfig = field(default_factory=MapConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.synth_size < 128:
            raise ValueError("synth_size must be >= 128")


def _build_section(cls, data, path: str):
    """Construct dataclass `cls` from a JSON object, recursing into nested
    config dataclasses and rejecting unknown keys with their full path."""
    if not isinstance(data, dict):
        raise CliError(f"config section '{path or '<root>'}' must be a JSON object")
    base = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise CliError(f"unknown config key '{where}'")
        default = getattr(base, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build_section(type(default), value, where)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        # replace() re-runs __post_init__, so section invariants are enforced
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config section '{path or '<root>'}': {exc}") from None


def load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"unreadable config {path}: {exc}") from None
        cfg = _build_section(RunConfig, data, "")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "binary", False):
        overrides["binary"] = True
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# file plumbing


class _OutputTracker:
    """Records files and directories a command creates so a failure can sweep
    the partial outputs away again."""

    def __init__(self):
        self._files: list[Path] = []
        self._dirs: list[Path] = []

    def mkdir(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            path.mkdir(parents=True)
            self._dirs.append(path)
        elif not path.is_dir():
            raise CliError(f"not a directory: {path}")
        return path

    def file(self, path) -> Path:
        path = Path(path)
        self._files.append(path)
        return path

    def discard(self) -> None:
        for path in reversed(self._files):
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        for path in reversed(self._dirs):
            try:
                path.rmdir()
            except OSError:
                pass  # non-empty or already gone; leave it


def save_gray_png(path, image) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_gray_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise CliError(f"unreadable image {path}: {exc}") from None


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"unreadable JSON {path}: {exc}") from None


def _require_out(args) -> Path:
    if not getattr(args, "out", None):
        raise CliError("--out is required for this command")
    return Path(args.out)


def _load_template_file(path) -> Template:
    try:
        return load_template(path)
    except FileNotFoundError:
        raise CliError(f"template not found: {path}") from None
    except (OSError, ValueError) as exc:
        raise CliError(f"unreadable template {path}: {exc}") from None


# ---------------------------------------------------------------------------
# input records


@dataclass(frozen=True)
class _ImageRecord:
    """Just enough of a fingerprint record for pair mining: raster, minutiae,
    segmentation mask."""

    image: GrayImage
    minutiae: object
    mask: SegMask


def _record_from_recipe(path: Path) -> SynthFingerprint:
    recipe = _read_json(path)
    if not isinstance(recipe, dict) or "seed" not in recipe:
        raise CliError(f"bad recipe {path}: expected an object with a 'seed' key")
    unknown = set(recipe) - {"seed", "size"}
    if unknown:
        raise CliError(f"bad recipe {path}: unknown keys {sorted(unknown)}")
    seed = recipe["seed"]
    seed = [int(s) for s in seed] if isinstance(seed, list) else int(seed)
    return synth_fingerprint(seed, size=int(recipe.get("size", 448)))


def _record_from_image(image_path, minutiae_path, mask_path, with_fields: bool):
    if minutiae_path is None:
        raise CliError("--minutiae is required when the input is an image")
    pixels = load_gray_png(image_path)
    try:
        minutiae = load_minutiae_text(minutiae_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"unreadable minutiae {minutiae_path}: {exc}") from None
    if mask_path is not None:
        mask_pixels = (load_gray_png(mask_path) >= 0.5).astype(np.float64)
        if mask_pixels.shape != pixels.shape:
            raise CliError("mask and image shapes differ")
    else:
        mask_pixels = np.ones_like(pixels)
    image = GrayImage(pixels)
    mask = SegMask(mask_pixels)
    if not with_fields:
        return _ImageRecord(image=image, minutiae=minutiae, mask=mask)
    orientation, period = estimate_fields(image, mask)
    return SynthFingerprint(
        image=image,
        minutiae=minutiae,
        orientation=orientation,
        period=period,
        mask=mask,
        model=None,
    )


def _load_pair_side(side, base: Path):
    """A pair manifest entry names one side either by recipe path or by an
    {image, minutiae[, mask]} object."""
    if isinstance(side, str):
        path = _resolve(base, side)
        if path.suffix != ".json":
            raise CliError(f"pair side '{side}' must be a .json recipe or an object")
        return _record_from_recipe(path)
    if isinstance(side, dict):
        unknown = set(side) - {"image", "minutiae", "mask"}
        if unknown or "image" not in side or "minutiae" not in side:
            raise CliError("pair side objects need 'image' and 'minutiae' (optional 'mask')")
        mask = _resolve(base, side["mask"]) if side.get("mask") else None
        return _record_from_image(
            _resolve(base, side["image"]), _resolve(base, side["minutiae"]), mask, with_fields=False
        )
    raise CliError("pair sides must be recipe paths or {image, minutiae} objects")


def _resolve(base: Path, p) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    if args.count < 0:
        raise CliError("--count must be >= 0")
    out = tracker.mkdir(_require_out(args))
    entries = []
    for idx in range(args.count):
        # per-fingerprint seed derives from (run seed, index) so one dataset
        # never repeats a finger and reruns are bit-identical
        fp = synth_fingerprint([cfg.seed, idx], size=cfg.synth_size)
        stem = f"fp_{idx:04d}"
        save_gray_png(tracker.file(out / f"{stem}.png"), fp.image.pixels)
        save_gray_png(tracker.file(out / f"{stem}.mask.png"), fp.mask.pixels)
        save_minutiae_text(tracker.file(out / f"{stem}.min.txt"), fp.minutiae)
        _write_json(tracker.file(out / f"{stem}.json"), {"seed": [cfg.seed, idx], "size": cfg.synth_size})
        entries.append(
            {
                "id": stem,
                "image": f"{stem}.png",
                "mask": f"{stem}.mask.png",
                "minutiae": f"{stem}.min.txt",
                "recipe": f"{stem}.json",
                "n_minutiae": len(fp.minutiae),
            }
        )
    manifest = {
        "config_hash": config_hash(cfg),
        "count": args.count,
        "entries": entries,
        "seed": cfg.seed,
        "size": cfg.synth_size,
    }
    _write_json(tracker.file(out / "manifest.json"), manifest)
    print(f"wrote {args.count} fingerprints to {out}")


def cmd_enroll(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    src = Path(args.input)
    if not src.exists():
        raise CliError(f"input not found: {src}")
    if src.suffix == ".json":
        fp = _record_from_recipe(src)
    else:
        fp = _record_from_image(src, args.minutiae, args.mask, with_fields=True)
    if len(fp.minutiae) == 0:
        raise CliError("no minutiae to enroll")
    template = enroll_template(fp, binary=cfg.binary, cfg=cfg.descriptor)
    out = tracker.file(_require_out(args))
    save_template(out, template)
    kind = "binary" if template.binary else "float"
    print(f"enrolled {len(template.records)} minutiae ({kind}) -> {out}")


def cmd_match(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    a = _load_template_file(args.template_a)
    b = _load_template_file(args.template_b)
    if a.channels != b.channels:
        raise CliError(f"channel count mismatch: {a.channels} vs {b.channels}")
    if a.binary != b.binary:
        raise CliError("format mismatch: one template is binary, the other float")
    result = match_score(a, b, cfg.match)
    selected = result.pairs[: result.n_m]
    print(f"gamma {result.score!r}")
    print(f"n_m {result.n_m}")
    for ia, ib, sim in selected:
        print(f"pair {ia} {ib} {float(sim)!r}")
    if args.out:
        detail = {
            "binary": a.binary,
            "channels": a.channels,
            "config_hash": config_hash(cfg),
            "gamma": result.score,
            "n_m": result.n_m,
            "pairs": [
                {"a": int(ia), "b": int(ib), "similarity": float(s)} for ia, ib, s in selected
            ],
        }
        _write_json(tracker.file(args.out), detail)


def _gallery_templates(gallery_dir: Path) -> tuple[list[str], list[Template]]:
    if not gallery_dir.is_dir():
        raise CliError(f"gallery directory not found: {gallery_dir}")
    paths = sorted(gallery_dir.glob(f"*{TEMPLATE_SUFFIX}"))
    if not paths:
        raise CliError(f"empty gallery: no *{TEMPLATE_SUFFIX} files in {gallery_dir}")
    return [p.stem for p in paths], [_load_template_file(p) for p in paths]


def _rank_against(probe: Template, ids: list[str], templates: list[Template], cfg: RunConfig):
    """Score probe vs every gallery template, ranked by score descending with
    id as the deterministic tiebreak."""
    for gid, t in zip(ids, templates):
        if t.channels != probe.channels or t.binary != probe.binary:
            raise CliError(f"gallery template '{gid}' is incompatible with the probe")
    scored = identify(probe, templates, cfg.match, workers=cfg.workers)
    rows = [(ids[i], float(s)) for i, s in scored]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


def cmd_identify(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    probe = _load_template_file(args.probe)
    ids, templates = _gallery_templates(Path(args.gallery))
    rows = _rank_against(probe, ids, templates, cfg)
    # repr() floats keep the CSV byte-identical across worker counts
    text = "\n".join(["id,score"] + [f"{gid},{score!r}" for gid, score in rows]) + "\n"
    if args.out:
        tracker.file(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_protocol(manifest, base: Path):
    if not isinstance(manifest, dict) or set(manifest) != {"gallery", "probes"}:
        raise CliError("protocol manifest must have exactly the keys 'gallery' and 'probes'")
    gallery = []
    seen = set()
    for entry in manifest["gallery"]:
        if not isinstance(entry, dict) or set(entry) != {"id", "template"}:
            raise CliError("gallery entries need exactly 'id' and 'template'")
        if entry["id"] in seen:
            raise CliError(f"duplicate gallery id '{entry['id']}'")
        seen.add(entry["id"])
        gallery.append((str(entry["id"]), _resolve(base, entry["template"])))
    probes = []
    for entry in manifest["probes"]:
        if not isinstance(entry, dict) or set(entry) != {"id", "template", "mate"}:
            raise CliError("probe entries need exactly 'id', 'template' and 'mate'")
        if entry["mate"] not in seen:
            raise CliError(f"probe '{entry['id']}' names unknown mate '{entry['mate']}'")
        probes.append((str(entry["id"]), _resolve(base, entry["template"]), str(entry["mate"])))
    if not gallery or not probes:
        raise CliError("protocol needs at least one gallery entry and one probe")
    # sorted processing makes the outputs independent of manifest order
    gallery.sort(key=lambda g: g[0])
    probes.sort(key=lambda p: p[0])
    return gallery, probes


def _run_protocol(probe_templates, mates, gal_ids, gal_templates, cfg, match_cfg):
    rankings = []
    genuine = []
    impostor = []
    run_cfg = dataclasses.replace(cfg, match=match_cfg)
    for probe, mate in zip(probe_templates, mates):
        rows = _rank_against(probe, gal_ids, gal_templates, run_cfg)
        rankings.append(tuple(gid for gid, _ in rows))
        for gid, score in rows:
            (genuine if gid == mate else impostor).append(score)
    return tuple(rankings), genuine, impostor


def cmd_evaluate(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    manifest_path = Path(args.manifest)
    gallery, probes = _parse_protocol(_read_json(manifest_path), manifest_path.parent)
    out = tracker.mkdir(_require_out(args))

    gal_ids = [g[0] for g in gallery]
    gal_templates = [_load_template_file(g[1]) for g in gallery]
    probe_templates = [_load_template_file(p[1]) for p in probes]
    mates = [p[2] for p in probes]

    rankings, genuine, impostor = _run_protocol(
        probe_templates, mates, gal_ids, gal_templates, cfg, cfg.match
    )
    # the run type wants integer gallery ids; map names to gallery indices
    idx = {gid: i for i, gid in enumerate(gal_ids)}
    run = IdentificationRun(
        rankings=tuple(tuple(idx[g] for g in r) for r in rankings),
        mates=tuple(idx[m] for m in mates),
    )
    curve = cmc_curve(run, max_rank=len(gal_ids))
    try:
        scores = ScoreSets(genuine=tuple(genuine), impostor=tuple(impostor))
        scores.require_nonempty()
    except ValueError as exc:
        raise CliError(f"protocol yields no usable score sets: {exc}") from None

    write_cmc_csv(tracker.file(out / "cmc.csv"), curve)
    write_det_csv(tracker.file(out / "det.csv"), det_curve(scores))
    summary = {
        "config_hash": config_hash(cfg),
        "counts": {
            "gallery": len(gal_ids),
            "genuine": len(genuine),
            "impostor": len(impostor),
            "probes": len(probes),
        },
        "rank1": float(curve[0]),
        "tar_at_far_0.001": tar_at_far(scores, 0.001),
        "tar_at_far_0.01": tar_at_far(scores, 0.01),
    }
    if args.with_normalization_ablation:
        ablated = dataclasses.replace(cfg.match, overlap_normalization=False)
        rankings2, _, _ = _run_protocol(
            probe_templates, mates, gal_ids, gal_templates, cfg, ablated
        )
        run2 = IdentificationRun(
            rankings=tuple(tuple(idx[g] for g in r) for r in rankings2),
            mates=tuple(idx[m] for m in mates),
        )
        summary["rank1_no_normalization"] = float(cmc_curve(run2, max_rank=len(gal_ids))[0])
    _write_json(tracker.file(out / "summary.json"), summary)
    print(f"rank1 {summary['rank1']!r}")
    print(f"tar_at_far_0.01 {summary['tar_at_far_0.01']!r}")
    if "rank1_no_normalization" in summary:
        print(f"rank1_no_normalization {summary['rank1_no_normalization']!r}")


def cmd_gen_pairs(args, tracker: _OutputTracker) -> None:
    cfg = load_run_config(args)
    manifest_path = Path(args.manifest)
    manifest = _read_json(manifest_path)
    if not isinstance(manifest, dict) or set(manifest) != {"pairs"} or not isinstance(manifest["pairs"], list):
        raise CliError("pair manifest must be an object with a single 'pairs' list")
    base = manifest_path.parent
    out = tracker.mkdir(_require_out(args))
    lines = []
    next_class = 0
    for k, entry in enumerate(manifest["pairs"]):
        if not isinstance(entry, dict) or set(entry) != {"a", "b"}:
            raise CliError(f"pair {k}: entries need exactly 'a' and 'b'")
        rec_a = _load_pair_side(entry["a"], base)
        rec_b = _load_pair_side(entry["b"], base)
        try:
            mated = select_mated_minutiae(rec_a, rec_b, cfg.traingen)
        except ValueError as exc:
            raise CliError(f"pair {k}: {exc}") from None
        patch_pairs = generate_patch_pairs(rec_a, rec_b, mated, cfg.traingen, start_class=next_class)
        for (patch_a, patch_b, class_id), pair in zip(patch_pairs, mated):
            name_a = f"pair_{class_id:05d}_a.png"
            name_b = f"pair_{class_id:05d}_b.png"
            save_gray_png(tracker.file(out / name_a), patch_a.image.pixels)
            save_gray_png(tracker.file(out / name_b), patch_b.image.pixels)
            ma = rec_a.minutiae[pair.index_a]
            mb = rec_b.minutiae[pair.index_b]
            lines.append(
                " ".join(
                    [str(class_id), name_a, name_b]
                    + [repr(float(v)) for v in (ma.x, ma.y, math.degrees(ma.theta))]
                    + [repr(float(v)) for v in (mb.x, mb.y, math.degrees(mb.theta))]
                )
            )
        next_class += len(patch_pairs)
    tracker.file(out / "pairs.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {next_class} patch pairs to {out}")


# ---------------------------------------------------------------------------
# selftest


def _check(name: str, ok: bool, detail: str = "") -> None:
    if not ok:
        print(f"FAIL {name} {detail}".rstrip())
        raise CliError(f"selftest failed: {name}")
    print(f"ok {name}")


def cmd_selftest(args, tracker: _OutputTracker) -> None:
    rng = np.random.default_rng(0)
    cfg = MatchConfig()

    table = {(20, 25): 8, (30, 30): 12, (10, 40): 4, (1000, 1000): 12}
    _check("pair-budget-table", all(select_nm(a, b, cfg) == nm for (a, b), nm in table.items()))

    ok = True
    for _ in range(50):
        n = int(rng.integers(2, 5))
        S = rng.standard_normal((n, n))
        best = max(sum(S[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        got = sum(S[i, j] for i, j in lsa_hungarian(S))
        ok = ok and abs(got - best) < 1e-12
    _check("assignment-optimality", ok)

    full = np.ones((8, 8))
    rec = DenseDescriptor(anchor=Minutia(0.0, 0.0, 0.0), features=rng.standard_normal((12, 8, 8)), mask=full)
    ref = math.sqrt(4096.0 / 1326.0)
    _check(
        "self-similarity-reference",
        abs(local_similarity(rec, rec, cfg) - ref) < 1e-9,
        f"want {ref}",
    )

    minutiae = tuple(
        Minutia(24.0 + 20.0 * i + rng.uniform(-3, 3), 30.0 + 15.0 * i, rng.uniform(-math.pi, math.pi))
        for i in range(5)
    )
    decoded = decode_map(encode_map(minutiae, MapConfig()))
    ok = len(decoded) == len(minutiae)
    for m in minutiae:
        best = min(decoded, key=lambda d: (d.x - m.x) ** 2 + (d.y - m.y) ** 2)
        delta = abs((best.theta - m.theta + math.pi) % (2 * math.pi) - math.pi)
        ok = ok and math.hypot(best.x - m.x, best.y - m.y) <= 1.0 and delta <= 0.1
    _check("map-round-trip", ok)

    records = tuple(
        DenseDescriptor(
            anchor=Minutia(float(i), 2.0 * i, 0.1 * i),
            features=rng.standard_normal((12, 8, 8)) * full,
            mask=full,
        )
        for i in range(3)
    )
    t = Template(records=records, channels=6, binary=False)
    blob = template_to_bytes(t)
    _check("serialization-round-trip", template_to_bytes(template_from_bytes(blob)) == blob)

    ok = True
    w = rng.standard_normal((5, 12))
    y = rng.integers(0, 5, size=4)

    def cos_fn(flat):
        loss, gf, _ = cosface_loss(flat.reshape(4, 12), y, w, with_grad=True)
        return loss, gf.reshape(-1)

    target = rng.uniform(0, 1, size=(6, 6))

    def seg_fn(flat):
        loss, g = segmentation_loss(flat.reshape(6, 6), target, with_grad=True)
        return loss, g.reshape(-1)

    def mnt_fn(flat):
        loss, g = minutiae_loss(flat.reshape(6, 6), target, with_grad=True)
        return loss, g.reshape(-1)

    f_r = rng.standard_normal((3, 4, 4))
    overlap = rng.random((4, 4)) < 0.6
    overlap[1, 2] = True

    def sim_fn(flat):
        loss, g = similarity_loss(flat.reshape(3, 4, 4), f_r, overlap, with_grad=True)
        return loss, g.reshape(-1)

    def gaussian(dim):
        return rng.standard_normal(dim)

    def probabilities(dim):
        # the cross-entropy clamps outside (0, 1), so probe strictly inside
        return rng.uniform(0.05, 0.95, size=dim)

    for fn, dim, eps, sample in (
        (cos_fn, 48, 1e-5, gaussian),
        (seg_fn, 36, 1e-6, probabilities),
        (mnt_fn, 36, 1e-4, gaussian),
        (sim_fn, 48, 1e-4, gaussian),
    ):
        for _ in range(5):
            ok = ok and finite_diff_check(fn, sample(dim), eps) < 1e-4
    _check("loss-gradients", ok)

    print("selftest: 6 checks passed")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config (unknown keys rejected)")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--workers", type=int, metavar="N", help="override the worker count")
    common.add_argument("--binary", action="store_true", help="use binarized descriptors")
    common.add_argument("--out", metavar="PATH", help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="denseprint",
        description="Fingerprint synthesis, descriptor templates, matching and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset into --out")
    p.add_argument("--count", type=int, required=True, help="number of fingerprints")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("enroll", parents=[common], help="build a template from a recipe or image")
    p.add_argument("input", help="recipe .json, or a grayscale image")
    p.add_argument("--minutiae", metavar="PATH", help="minutiae text file (image input)")
    p.add_argument("--mask", metavar="PATH", help="segmentation mask image (image input)")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("match", parents=[common], help="score two templates")
    p.add_argument("template_a")
    p.add_argument("template_b")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("identify", parents=[common], help="rank a gallery against one probe")
    p.add_argument("probe", help="probe template")
    p.add_argument("--gallery", required=True, metavar="DIR", help=f"directory of *{TEMPLATE_SUFFIX} files")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", parents=[common], help="run an identification protocol")
    p.add_argument("manifest", help="protocol manifest JSON")
    p.add_argument(
        "--with-normalization-ablation",
        action="store_true",
        help="also report rank1 with overlap normalization disabled",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-pairs", parents=[common], help="mine aligned training patch pairs")
    p.add_argument("manifest", help="pair manifest JSON")
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tracker = _OutputTracker()
    try:
        args.func(args, tracker)
    except CliError as exc:
        tracker.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        tracker.discard()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
