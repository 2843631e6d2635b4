"""Experiment orchestration: staged train/attack/evaluate runs with a manifest
that makes every published number regenerable from config + seeds + data path.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifiers, diffusion, evaluation, gan, path_attack, vae
from .checkpointing import load_checkpoint
from .config import ExperimentConfig, load_config
from .data import load_dataset, make_scenario, person_id, training_set, validation_set, visible_pool
from .errors import ConfigError, PrerequisiteError
from .results import AttackResult, load_result, save_result

STAGES = ("data", "classifiers", "diffusion", "vae", "attacks", "eval")

# fixed derivation order; extending the list keeps earlier seeds stable
_SEED_STAGES = (
    "scenario",
    "cnn2",
    "vgg11",
    "diffusion",
    "vae",
    "gan",
    "path",
    "attack_diffusion",
    "attack_vae",
    "eval",
)


def seed_everything(master_seed: int) -> dict[str, int]:
    """Derive one independent seed per pipeline stage from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(len(_SEED_STAGES))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(_SEED_STAGES, children)}


def stage_seed(seed_map: dict[str, int], stage: str, index: int = 0) -> int:
    """Per-(stage, target) sub-seed, stable under target reordering."""
    return int(np.random.SeedSequence([seed_map[stage], index]).generate_state(1)[0])


@dataclass
class ArtifactStore:
    """Filesystem layout under `<root>/runs/<run_id>/` with checksummed manifests."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def create_run(self, run_id: str | None, master_seed: int) -> tuple[str, Path]:
        """Fresh run directory, or an append-only resume when `run_id` names an existing one."""
        if run_id is None:
            stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
            run_id = f"{stamp}-s{master_seed}"
        d = self.run_dir(run_id)
        for sub in ("checkpoints", "results", "reports", "figures"):
            (d / sub).mkdir(parents=True, exist_ok=True)
        return run_id, d


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(run_dir: Path, run_id: str, master_seed: int, seed_map: dict[str, int], stages) -> Path:
    lines = [
        f"run_id = {run_id}",
        f"master_seed = {master_seed}",
        f"stages = {','.join(stages)}",
        "config_snapshot = config.resolved.txt",
    ]
    lines += [f"seed.{name} = {value}" for name, value in sorted(seed_map.items())]
    manifest = run_dir / "manifest.txt"
    for f in sorted(run_dir.rglob("*")):
        if f.is_file() and f.name != "manifest.txt":
            lines.append(f"file.{f.relative_to(run_dir)} = {_sha256_file(f)}")
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _require(path: Path, what: str, stage: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"stage '{stage}' needs {what} at {path}; run the producing stage first")
    return path


def run_pipeline(
    cfg: ExperimentConfig,
    stages=STAGES,
    run_id: str | None = None,
    out_root: str | None = None,
) -> Path:
    """Execute the requested stages in dependency order inside one run directory."""
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; valid stages are {list(STAGES)}")
    stages = [s for s in STAGES if s in stages]

    master_seed = cfg["master_seed"]
    seed_map = seed_everything(master_seed)
    store = ArtifactStore(Path(out_root or cfg["out_root"]))
    run_id, run_dir = store.create_run(run_id, master_seed)

    snapshot_path = run_dir / "config.resolved.txt"
    if snapshot_path.exists():
        if snapshot_path.read_text() != cfg.snapshot():
            raise ConfigError(f"run {run_id!r} was created with a different config; refusing to mix")
    else:
        snapshot_path.write_text(cfg.snapshot())
    _refuse_existing_outputs(run_dir, stages)

    if not cfg["data"]:
        raise ConfigError("config key 'data' must point at the dataset")
    ds = load_dataset(cfg["data"])
    scenario = make_scenario(ds, seed_map["scenario"])

    if "data" in stages:
        _stage_data(run_dir, ds, scenario)
    if "classifiers" in stages:
        _stage_classifiers(cfg, run_dir, ds, scenario, seed_map)
    if "diffusion" in stages:
        _stage_diffusion(cfg, run_dir, ds, scenario, seed_map)
    if "vae" in stages:
        _stage_vae(cfg, run_dir, ds, scenario, seed_map)
    if "attacks" in stages:
        _stage_attacks(cfg, run_dir, ds, scenario, seed_map)
    if "eval" in stages:
        _stage_eval(cfg, run_dir, ds, scenario, seed_map)

    prior = _manifest_stages(run_dir)
    all_stages = [s for s in STAGES if s in set(prior) | set(stages)]
    write_manifest(run_dir, run_id, master_seed, seed_map, all_stages)
    return run_dir


_STAGE_OUTPUTS = {
    "data": ("scenario.json",),
    "classifiers": ("checkpoints/cnn2.npz", "checkpoints/vgg11.npz"),
    "diffusion": ("checkpoints/diffusion.npz",),
    "vae": ("checkpoints/vae.npz",),
    "eval": ("reports/report.csv",),
}


def _refuse_existing_outputs(run_dir: Path, stages) -> None:
    """Runs are append-only: a requested stage whose outputs exist is an error."""
    clashes = []
    for stage in stages:
        for rel in _STAGE_OUTPUTS.get(stage, ()):
            if (run_dir / rel).exists():
                clashes.append(f"{stage}: {rel}")
        if stage == "attacks":
            for d in (run_dir / "results").glob("*_person*"):
                clashes.append(f"attacks: results/{d.name}")
    if clashes:
        raise ConfigError(
            "refusing to overwrite existing stage outputs: " + "; ".join(sorted(set(clashes)))
        )


def _manifest_stages(run_dir: Path) -> list[str]:
    manifest = run_dir / "manifest.txt"
    if not manifest.exists():
        return []
    for line in manifest.read_text().splitlines():
        if line.startswith("stages = "):
            return line.split(" = ", 1)[1].split(",")
    return []


def _stage_data(run_dir: Path, ds, scenario) -> None:
    record = {
        "num_images": len(ds),
        "num_classes": ds.num_classes,
        "train_index": {str(k): list(v) for k, v in scenario.train_index.items()},
        "val_index": {str(k): list(v) for k, v in scenario.val_index.items()},
        "target_classes": sorted(scenario.target_classes),
        "visible_classes": sorted(scenario.visible_classes),
        "seed": scenario.seed,
    }
    (run_dir / "scenario.json").write_text(json.dumps(record, indent=2, sort_keys=True))


def _stage_classifiers(cfg, run_dir, ds, scenario, seed_map) -> None:
    train = training_set(ds, scenario)
    val = validation_set(ds, scenario)
    for arch in ("cnn2", "vgg11"):
        out = run_dir / "checkpoints" / f"{arch}.npz"
        ckpt, metrics = classifiers.train_classifier(cfg.classifier_spec(arch), train, val, seed_map[arch])
        ckpt.save(out)
        with open(run_dir / "reports" / f"{arch}_training.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_top1", "val_top1"])
            for i, (tr, va) in enumerate(zip(metrics["train_top1"], metrics["val_top1"]), start=1):
                writer.writerow([i, repr(tr), repr(va)])


def _stage_diffusion(cfg, run_dir, ds, scenario, seed_map) -> None:
    out = run_dir / "checkpoints" / "diffusion.npz"
    sched = diffusion.build_schedule(cfg["schedule.steps"], cfg["schedule.beta_start"], cfg["schedule.beta_end"])
    pool = visible_pool(ds, scenario)
    ckpt, trace = diffusion.train_diffusion(pool, sched, cfg.diffusion_config(), seed_map["diffusion"])
    ckpt.save(out)
    with open(run_dir / "reports" / "diffusion_training.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace, start=1):
            writer.writerow([i, repr(loss)])


def _stage_vae(cfg, run_dir, ds, scenario, seed_map) -> None:
    out = run_dir / "checkpoints" / "vae.npz"
    pool = visible_pool(ds, scenario)
    ckpt, trace = vae.train_vae(pool, cfg.vae_spec(), seed_map["vae"])
    ckpt.save(out)
    with open(run_dir / "reports" / "vae_training.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace, start=1):
            writer.writerow([i, repr(loss)])


def _stage_attacks(cfg, run_dir, ds, scenario, seed_map) -> None:
    ckpt_dir = run_dir / "checkpoints"
    vgg = load_checkpoint(_require(ckpt_dir / "vgg11.npz", "the attacked classifier", "attacks"))
    predictor = load_checkpoint(_require(ckpt_dir / "diffusion.npz", "the noise predictor", "attacks"))
    vae_ckpt = load_checkpoint(_require(ckpt_dir / "vae.npz", "the VAE", "attacks"))
    sched = diffusion.build_schedule(cfg["schedule.steps"], cfg["schedule.beta_start"], cfg["schedule.beta_end"])
    pool = visible_pool(ds, scenario)

    for target in cfg.target_classes:
        base = run_dir / "results"
        path = diffusion.sample_noise_path(
            (ds.height, ds.width), sched.steps, stage_seed(seed_map, "path", target)
        )
        res = path_attack.attack(
            vgg, predictor, sched, path, cfg.path_attack_config(target, stage_seed(seed_map, "attack_diffusion", target))
        )
        save_result(res, base / f"diffusion_person{person_id(target)}")

        res = gan.train_attack_gan(vgg, pool, cfg.gan_config(target, stage_seed(seed_map, "gan", target)))
        save_result(res, base / f"gan_person{person_id(target)}")

        res = vae.latent_attack(
            vae_ckpt, vgg, pool, cfg.latent_attack_config(target, stage_seed(seed_map, "attack_vae", target))
        )
        save_result(res, base / f"vae_person{person_id(target)}")


def _stage_eval(cfg, run_dir, ds, scenario, seed_map) -> None:
    ckpt_dir = run_dir / "checkpoints"
    eval_ckpt = load_checkpoint(_require(ckpt_dir / "cnn2.npz", "the held-out classifier", "eval"))
    results_dir = run_dir / "results"
    result_dirs = sorted(d for d in results_dir.iterdir() if d.is_dir()) if results_dir.exists() else []
    if not result_dirs:
        raise PrerequisiteError(f"stage 'eval' needs attack results under {results_dir}; run 'attacks' first")

    results = [load_result(d) for d in result_dirs]
    report = evaluation.build_report(results, eval_ckpt)
    (run_dir / "reports" / "report.csv").write_text(report.to_csv())
    (run_dir / "reports" / "table.txt").write_text(report.matrix_text())

    grid_images, grid_labels = [], []
    for target in report.targets:
        val_ordinals = scenario.val_index.get(target, ())
        example_idx = ds.class_indices(target)[val_ordinals[0]] if val_ordinals else ds.class_indices(target)[0]
        grid_images.append(ds.images[example_idx])
        grid_labels.append(f"person {person_id(target)}")
        for method in evaluation.REPORT_COLUMNS:
            cell = report.cells.get((target, method))
            if cell is not None:
                grid_images.append(cell.image)
                grid_labels.append(method)
    if grid_images:
        evaluation.export_grid(grid_images, grid_labels, run_dir / "figures" / "comparison_grid.png")


def rerun_from_manifest(run_dir, new_run_id: str | None = None, out_root: str | None = None) -> Path:
    """Replay a finished run from its recorded config; byte-identical on one machine."""
    run_dir = Path(run_dir)
    manifest = _require(run_dir / "manifest.txt", "a run manifest", "replay")
    entries = dict(
        line.split(" = ", 1) for line in manifest.read_text().splitlines() if " = " in line
    )
    cfg = load_config(run_dir / entries["config_snapshot"])
    stages = entries["stages"].split(",")
    return run_pipeline(cfg, stages=stages, run_id=new_run_id, out_root=out_root or str(run_dir.parents[1]))
