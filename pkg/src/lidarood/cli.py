"""Command-line pipeline driver.

Subcommands: ``synth`` (scene generation), ``raise`` (noise-based anomaly
augmentation), ``train``, ``score``, ``eval``, and ``export-map``. Every
artifact gets a ``.provenance`` sidecar recording the full configuration,
seeds, and package version (no timestamps or absolute paths, so artifacts
are reproducible byte-for-byte from their sidecars).

Exit codes: 0 on success, 1 on contract/data errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ContractError, FormatError, LabelMap, PointCloud, Role, ScoreField,
    load_labels, load_point_cloud, load_scores,
    save_labels, save_point_cloud, save_scores,
)
from .losses import LossConfig, Orientation
from .metrics import EvalConfig, evaluate_scenes, threshold_at_tpr, write_report
from .perlin import RaiseConfig, perlin_raise
from .scenes import SceneConfig, default_budget, default_class_spec, generate_scene, inject_eval_anomaly
from .scoring import ScoreMethod, reweighted_score, static_score
from .trainer import TrainConfig, extract_features, forward, load_checkpoint, save_checkpoint, train

__all__ = ["main", "PipelineConfig"]


# --------------------------------------------------------------------------
# flat "section.key = value" configuration with strict key validation
# --------------------------------------------------------------------------

_KNOWN_KEYS = {
    "scene.seed", "scene.extent", "scene.points", "scene.road_noise_sigma",
    "scene.count", "scene.anomalies",
    "raise.r_min", "raise.r_max", "raise.alpha", "raise.rho",
    "raise.eps", "raise.min_pts", "raise.seed",
    "train.lr", "train.epochs", "train.seed", "train.method", "train.prior",
    "train.raise_per_scan", "train.hidden", "train.latent_dim",
    "loss.beta", "loss.ood_weight", "loss.orientation",
    "eval.gamma", "eval.gamma_from_tpr", "eval.dbscan_eps", "eval.dbscan_min_pts",
    "score.method", "score.prior",
    "map.resolution",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated union of per-stage settings, serialized as flat
    ``section.key = value`` text. Unknown keys are rejected on parse."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in self.entries:
            if key not in _KNOWN_KEYS:
                raise ContractError(f"unknown config key {key!r}")

    def to_text(self) -> str:
        return "\n".join(f"{k} = {self.entries[k]}" for k in sorted(self.entries)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        entries = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ContractError(f"malformed config line {line!r}")
            entries[key.strip()] = value.strip()
        return cls(entries=entries)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _write_provenance(artifact: Path, cfg: PipelineConfig, command: str) -> None:
    side = artifact.with_name(artifact.name + ".provenance")
    lines = [
        f"command = {command}",
        f"config_digest = {cfg.digest()}",
        f"version = {__version__}",
    ]
    lines.extend(cfg.to_text().strip().splitlines())
    side.write_text("\n".join(sorted(lines)) + "\n", encoding="utf-8")


def _scene_stems(directory: Path, suffix: str) -> list[Path]:
    files = sorted(directory.glob(f"*{suffix}"))
    if not files:
        raise ContractError(f"no {suffix} files in {directory}")
    return files


def _load_dataset(directory: Path, spec) -> list[tuple[PointCloud, LabelMap]]:
    pairs = []
    for bin_path in _scene_stems(directory, ".bin"):
        label_path = bin_path.with_suffix(".label")
        if not label_path.exists():
            raise ContractError(f"missing label file for {bin_path.name}")
        pairs.append((load_point_cloud(bin_path), load_labels(label_path, spec)))
    return pairs


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(entries={
        "scene.seed": args.seed, "scene.extent": args.extent,
        "scene.points": args.points, "scene.count": args.scenes,
        "scene.anomalies": args.anomalies,
        "scene.road_noise_sigma": args.road_noise_sigma,
    })
    rng = np.random.default_rng(args.seed)
    for i in range(args.scenes):
        scene_cfg = SceneConfig(
            seed=int(rng.integers(2**63)), extent=args.extent,
            class_budget=default_budget(args.points),
            road_noise_sigma=args.road_noise_sigma,
        )
        cloud, labels = generate_scene(scene_cfg)
        if args.anomalies > 0:
            cloud, labels = inject_eval_anomaly(
                cloud, labels, scene_cfg, seed=int(rng.integers(2**63)),
                count=args.anomalies)
        save_point_cloud(cloud, out / f"scene_{i:03d}.bin")
        save_labels(labels, out / f"scene_{i:03d}.label")
    _write_provenance(out / "dataset", cfg, "synth")
    print(f"synth: wrote {args.scenes} scenes to {out}")
    return 0


def cmd_raise(args) -> int:
    spec = default_class_spec()
    src, out = Path(args.input), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(entries={
        "raise.r_min": args.r_min, "raise.r_max": args.r_max,
        "raise.alpha": args.alpha, "raise.rho": args.rho,
        "raise.eps": args.eps, "raise.min_pts": args.min_pts,
        "raise.seed": args.seed,
    })
    rng = np.random.default_rng(args.seed)
    n_raised = 0
    for bin_path in _scene_stems(src, ".bin"):
        cloud = load_point_cloud(bin_path)
        labels = load_labels(bin_path.with_suffix(".label"), spec)
        rcfg = RaiseConfig(
            r=float(rng.uniform(args.r_min, args.r_max)),
            alpha=args.alpha, rho=args.rho,
            dbscan_eps=args.eps, dbscan_min_pts=args.min_pts,
            seed=int(rng.integers(2**63)),
        )
        cloud, labels, report = perlin_raise(cloud, labels, spec, rcfg)
        n_raised += report.raised_count
        save_point_cloud(cloud, out / bin_path.name)
        save_labels(labels, out / bin_path.with_suffix(".label").name)
    _write_provenance(out / "dataset", cfg, "raise")
    print(f"raise: {n_raised} points raised across the set")
    return 0


def cmd_train(args) -> int:
    spec = default_class_spec(extended=True)
    method = ScoreMethod.parse(args.method)
    loss_cfg = LossConfig(beta=args.beta, ood_weight=args.ood_weight,
                          orientation=Orientation(args.orientation))
    tcfg = TrainConfig(
        lr=args.lr, epochs=args.epochs, seed=args.seed,
        raise_per_scan=args.raise_per_scan, loss=loss_cfg, method=method,
        hidden=args.hidden, latent_dim=args.latent_dim,
        use_prior=args.prior == "on",
    )
    scenes = _load_dataset(Path(args.data), spec)
    backbone, params, train_log = train(scenes, spec, tcfg)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, backbone, params)
    cfg = PipelineConfig(entries={
        "train.lr": args.lr, "train.epochs": args.epochs, "train.seed": args.seed,
        "train.method": method.value, "train.prior": args.prior,
        "train.raise_per_scan": args.raise_per_scan,
        "train.hidden": args.hidden, "train.latent_dim": args.latent_dim,
        "loss.beta": args.beta, "loss.ood_weight": args.ood_weight,
        "loss.orientation": args.orientation,
    })
    _write_provenance(ckpt, cfg, "train")
    for i, ep in enumerate(train_log.epochs):
        print(f"epoch {i}: total={ep.total:.4f} ce={ep.ce:.4f} "
              f"aux={ep.aux:.4f} void={ep.void:.4f} steps={ep.steps}")
    return 0


def _spec_for_checkpoint(backbone):
    spec = default_class_spec()
    if backbone.out_width == spec.num_classes:
        return spec
    if backbone.out_width == 2 * spec.num_classes:
        return default_class_spec(extended=True)
    raise ContractError(
        f"checkpoint output width {backbone.out_width} does not match the "
        f"synthetic class layout (expected {spec.num_classes} or {2 * spec.num_classes})")


def cmd_score(args) -> int:
    backbone, params = load_checkpoint(args.ckpt)
    spec = _spec_for_checkpoint(backbone)
    method = ScoreMethod.parse(args.method)
    if method.requires_extended and not spec.extended:
        raise ContractError("extended energy needs an extended checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(entries={"score.method": method.value, "score.prior": args.prior})
    for bin_path in _scene_stems(Path(args.data), ".bin"):
        cloud = load_point_cloud(bin_path)
        logits = forward(backbone, extract_features(cloud), spec)
        if args.prior == "on":
            scores = reweighted_score(logits, method, params)
        else:
            scores = ScoreField(scores=static_score(logits, method))
        save_scores(scores, out / (bin_path.stem + ".score"))
    _write_provenance(out / "scores", cfg, "score")
    print(f"score: wrote {method.value} scores to {out}")
    return 0


def cmd_eval(args) -> int:
    if args.gamma is None and args.gamma_from_tpr is None:
        raise UsageError("eval needs --gamma or --gamma-from-tpr")
    if args.gamma is not None and args.gamma_from_tpr is not None:
        raise UsageError("--gamma and --gamma-from-tpr are mutually exclusive")

    spec = default_class_spec()
    data = Path(args.data)
    label_dir = Path(args.labels) if args.labels else data
    score_dir = Path(args.scores)
    scenes = []
    for bin_path in _scene_stems(data, ".bin"):
        cloud = load_point_cloud(bin_path)
        labels = load_labels(label_dir / (bin_path.stem + ".label"), spec)
        scores = load_scores(score_dir / (bin_path.stem + ".score"))
        if scores.count != cloud.count:
            raise ContractError(f"score length mismatch for {bin_path.name}")
        scenes.append((cloud, labels, scores))

    if args.gamma_from_tpr is not None:
        pooled = ScoreField(scores=np.concatenate([s.scores for _, _, s in scenes]))
        pos = np.concatenate([
            np.isin(lbl.role, (Role.AUX_OOD, Role.REAL_OOD)) for _, lbl, _ in scenes])
        ignore = np.concatenate([lbl.role == Role.IGNORE for _, lbl, _ in scenes])
        gamma = threshold_at_tpr(pooled, pos, ignore, tpr=args.gamma_from_tpr)
        gamma_source = f"tpr={args.gamma_from_tpr}"
    else:
        gamma = args.gamma
        gamma_source = "fixed"

    ecfg = EvalConfig(gamma=gamma, dbscan_eps=args.eps, dbscan_min_pts=args.min_pts)
    results = evaluate_scenes(scenes, ecfg)
    report_cfg = {
        "gamma": gamma, "gamma_source": gamma_source,
        "dbscan_eps": args.eps, "dbscan_min_pts": args.min_pts,
        "iou_threshold": ecfg.iou_threshold, "version": __version__,
        "scenes": len(scenes),
    }
    write_report(results, report_cfg, args.report)
    for key in sorted(results):
        print(f"{key} = {results[key]:.6f}")
    return 0


def cmd_export_map(args) -> int:
    cloud = load_point_cloud(args.cloud)
    scores = load_scores(args.scores)
    if scores.count != cloud.count:
        raise ContractError("score length does not match the cloud")
    res = args.resolution
    if res < 2:
        raise ContractError("resolution must be >= 2")

    s = scores.scores
    span = s.max() - s.min() if s.size else 0.0
    norm = (s - s.min()) / span if span > 0 else np.zeros_like(s)
    norm = np.clip(norm, 0.0, 1.0)

    pts = cloud.points
    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    extent = np.maximum(hi - lo, 1e-9)
    cols = np.minimum((pts[:, 0] - lo[0]) / extent[0] * res, res - 1).astype(int)
    rows = np.minimum((pts[:, 1] - lo[1]) / extent[1] * res, res - 1).astype(int)
    grid = np.full((res, res), -1.0)
    np.maximum.at(grid, (rows, cols), norm)

    rgb = np.zeros((res, res, 3), dtype=np.uint8)
    filled = grid >= 0
    t = np.clip(grid, 0.0, 1.0)
    rgb[..., 0] = np.where(filled, np.round(255 * t), 0)
    rgb[..., 2] = np.where(filled, np.round(255 * (1.0 - t)), 0)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    raster = out.with_suffix(".ppm")
    with open(raster, "wb") as fh:
        fh.write(f"P6\n{res} {res}\n255\n".encode())
        fh.write(rgb[::-1].tobytes())  # north-up

    point_file = out.with_suffix(".xyzrgb")
    with open(point_file, "w", encoding="utf-8") as fh:
        for (x, y, z), t_i in zip(pts, norm):
            r = int(round(255 * t_i))
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} 0 {255 - r}\n")

    cfg = PipelineConfig(entries={"map.resolution": res})
    _write_provenance(raster, cfg, "export-map")
    print(f"export-map: wrote {raster} and {point_file}")
    return 0


# --------------------------------------------------------------------------
# parser and entry point
# --------------------------------------------------------------------------

class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarood", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic labeled scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points", type=int, default=20000)
    s.add_argument("--extent", type=float, default=12.0)
    s.add_argument("--anomalies", type=int, default=0,
                   help="held-out primitive anomalies per scene")
    s.add_argument("--road-noise-sigma", type=float, default=0.02)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("raise", help="apply the noise-based surface raise")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--r-min", type=float, default=0.75)
    s.add_argument("--r-max", type=float, default=1.5)
    s.add_argument("--alpha", type=float, default=0.4)
    s.add_argument("--rho", type=float, default=0.3)
    s.add_argument("--eps", type=float, default=0.3)
    s.add_argument("--min-pts", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_raise)

    s = sub.add_parser("train", help="train the backbone and prior network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--method", default="ee",
                   choices=["entropy", "energy", "ee", "maxlogit"])
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=2e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prior", choices=["on", "off"], default="on")
    s.add_argument("--raise-per-scan", type=int, default=1)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--latent-dim", type=int, default=16)
    s.add_argument("--beta", type=float, default=0.9)
    s.add_argument("--ood-weight", type=float, default=10000.0)
    s.add_argument("--orientation", choices=["id_low", "id_high"], default="id_low")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score scans with a trained checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", default="ee",
                   choices=["entropy", "energy", "ee", "maxlogit"])
    s.add_argument("--prior", choices=["on", "off"], default="on")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", help="point- and object-level evaluation")
    s.add_argument("--data", required=True, help="directory of .bin scans")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels", default=None,
                   help="directory of .label files (defaults to --data)")
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--gamma-from-tpr", type=float, default=None)
    s.add_argument("--eps", type=float, default=0.5)
    s.add_argument("--min-pts", type=int, default=5)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-map", help="score map raster + colored cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--scores", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=int, default=256)
    s.set_defaults(func=cmd_export_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
