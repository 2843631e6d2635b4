"""`classrecon` command line: train victims and generators, run attacks, build reports.

Exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 numerical failure.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click

from . import classifiers, diffusion, gan, path_attack, vae
from .checkpointing import load_checkpoint
from .config import default_config, load_config
from .data import load_dataset, make_scenario, training_set, validation_set, visible_pool
from .errors import ConfigError, NumericalError, PrerequisiteError
from .pipeline import STAGES, run_pipeline, seed_everything
from .results import save_result

EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_NUMERICAL = 4


def _load_cfg(ctx_config: str | None, seed: int | None, out_root: str | None):
    cfg = load_config(ctx_config) if ctx_config else default_config()
    values = dict(cfg.values)
    if seed is not None:
        values["master_seed"] = seed
    if out_root is not None:
        values["out_root"] = out_root
    return cfg.__class__(values=values)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="flat key=value config file")
@click.option("--seed", type=int, default=None, help="master seed override")
@click.option("--out-root", type=click.Path(), default=None, help="artifact root override")
@click.pass_context
def main(ctx, config_path, seed, out_root):
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["seed"] = seed
    ctx.obj["out_root"] = out_root


def _cfg(ctx):
    return _load_cfg(ctx.obj["config_path"], ctx.obj["seed"], ctx.obj["out_root"])


def _run(fn):
    try:
        fn()
    except (ConfigError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except PrerequisiteError as e:
        click.echo(f"missing prerequisite: {e}", err=True)
        sys.exit(EXIT_PREREQUISITE)
    except NumericalError as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command("train-classifier")
@click.option("--arch", type=click.Choice(["cnn2", "vgg11"]), required=True)
@click.option("--data", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def train_classifier_cmd(ctx, arch, data, seed, out):
    """Train one victim classifier on the 7/3 split."""

    def go():
        cfg = _cfg(ctx)
        ds = load_dataset(data)
        scenario = make_scenario(ds, seed)
        ckpt, metrics = classifiers.train_classifier(
            cfg.classifier_spec(arch), training_set(ds, scenario), validation_set(ds, scenario), seed
        )
        ckpt.save(out)
        click.echo(f"{arch}: best val top-1 {metrics['best_val_top1']:.4f} (epoch {metrics['best_epoch']}) -> {out}")

    _run(go)


@main.command("train-diffusion")
@click.option("--data", type=click.Path(), required=True)
@click.option("--steps", type=int, default=600)
@click.option("--beta-start", type=float, default=1e-4)
@click.option("--beta-end", type=float, default=0.02)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def train_diffusion_cmd(ctx, data, steps, beta_start, beta_end, seed, out):
    """Train the noise predictor on the adversary-visible pool."""

    def go():
        cfg = _cfg(ctx)
        ds = load_dataset(data)
        scenario = make_scenario(ds, seed)
        sched = diffusion.build_schedule(steps, beta_start, beta_end)
        ckpt, trace = diffusion.train_diffusion(
            visible_pool(ds, scenario), sched, cfg.diffusion_config(), seed
        )
        ckpt.save(out)
        click.echo(f"diffusion: final loss {trace[-1]:.4f} after {len(trace)} epochs -> {out}")

    _run(go)


@main.command("train-vae")
@click.option("--data", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def train_vae_cmd(ctx, data, seed, out):
    """Train the VAE on the adversary-visible pool."""

    def go():
        cfg = _cfg(ctx)
        ds = load_dataset(data)
        scenario = make_scenario(ds, seed)
        ckpt, trace = vae.train_vae(visible_pool(ds, scenario), cfg.vae_spec(), seed)
        ckpt.save(out)
        click.echo(f"vae: final loss {trace[-1]:.5f} after {len(trace)} epochs -> {out}")

    _run(go)


@main.command("attack-diffusion")
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--diffusion", "diffusion_path", type=click.Path(), required=True)
@click.option("--target", type=int, required=True, help="1-based person id")
@click.option("--lr", type=float, default=1.0)
@click.option("--iters", type=int, default=200)
@click.option("--grad-mode", type=str, default="checkpointed:25")
@click.option("--steps", type=int, default=600)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(), required=True)
def attack_diffusion_cmd(classifier_path, diffusion_path, target, lr, iters, grad_mode, steps, seed, out_dir):
    """Optimize the initial noise of one fixed denoising path."""

    def go():
        clf = _load_ckpt(classifier_path, "classifier")
        pred = _load_ckpt(diffusion_path, "noise predictor")
        sched = diffusion.build_schedule(steps)
        size = clf.metadata.get("image_size", 64)
        path = diffusion.sample_noise_path((size, size), steps, seed)
        cfg = path_attack.PathAttackConfig(
            target=target - 1, learning_rate=lr, max_iterations=iters, grad_mode=grad_mode, seed=seed
        )
        result = path_attack.attack(clf, pred, sched, path, cfg)
        save_result(result, out_dir)
        click.echo(
            f"diffusion attack on person {target}: attacked confidence "
            f"{result.attacked_confidence:.4f} after {result.iterations_run} iterations -> {out_dir}"
        )

    _run(go)


@main.command("attack-gan")
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--data", type=click.Path(), required=True)
@click.option("--target", type=int, required=True, help="1-based person id")
@click.option("--alpha", type=float, default=1.0)
@click.option("--rounds", type=int, default=40)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def attack_gan_cmd(ctx, classifier_path, data, target, alpha, rounds, seed, out_dir):
    """Train the conditional-GAN reconstruction attack for one target."""

    def go():
        cfg = _cfg(ctx)
        clf = _load_ckpt(classifier_path, "classifier")
        ds = load_dataset(data)
        scenario = make_scenario(ds, seed)
        gan_cfg = dataclasses.replace(cfg.gan_config(target - 1, seed), alpha=alpha, rounds=rounds)
        result = gan.train_attack_gan(clf, visible_pool(ds, scenario), gan_cfg)
        save_result(result, out_dir)
        click.echo(
            f"gan attack on person {target}: attacked confidence "
            f"{result.attacked_confidence:.4f} after {result.iterations_run} rounds -> {out_dir}"
        )

    _run(go)


@main.command("attack-vae")
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--vae", "vae_path", type=click.Path(), required=True)
@click.option("--data", type=click.Path(), required=True)
@click.option("--target", type=int, required=True, help="1-based person id")
@click.option("--init", type=click.Choice(["pool", "prior"]), default="pool")
@click.option("--iters", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(), required=True)
def attack_vae_cmd(classifier_path, vae_path, data, target, init, iters, seed, out_dir):
    """Fine-tune a VAE latent code toward one target class."""

    def go():
        clf = _load_ckpt(classifier_path, "classifier")
        vae_ckpt = _load_ckpt(vae_path, "vae")
        ds = load_dataset(data)
        scenario = make_scenario(ds, seed)
        cfg = vae.LatentAttackConfig(target=target - 1, init=init, max_iterations=iters, seed=seed)
        result = vae.latent_attack(vae_ckpt, clf, visible_pool(ds, scenario), cfg)
        save_result(result, out_dir)
        click.echo(
            f"vae attack on person {target}: attacked confidence "
            f"{result.attacked_confidence:.4f} after {result.iterations_run} iterations -> {out_dir}"
        )

    _run(go)


@main.command("run")
@click.option("--stages", type=str, default=",".join(STAGES), help="comma list of pipeline stages")
@click.option("--run-id", type=str, default=None)
@click.pass_context
def run_cmd(ctx, stages, run_id):
    """Run the train/attack/evaluate pipeline into one run directory."""

    def go():
        cfg = _cfg(ctx)
        wanted = [s for s in stages.split(",") if s]
        run_dir = run_pipeline(cfg, stages=wanted, run_id=run_id)
        click.echo(f"run complete -> {run_dir}")

    _run(go)


@main.command("seed-map")
@click.option("--seed", type=int, required=True)
def seed_map_cmd(seed):
    """Print the per-stage seed derivation for a master seed."""
    for name, value in sorted(seed_everything(seed).items()):
        click.echo(f"{name} = {value}")


def _load_ckpt(path, what):
    p = Path(path)
    if not p.exists():
        raise PrerequisiteError(f"{what} checkpoint not found: {p}")
    return load_checkpoint(p)


if __name__ == "__main__":
    main()
