"""Command-line pipeline: data generation, three training stages, evaluation,
scale sweeps, and mesh export.

Artifacts live under an output root (``--output-root`` or the
``HANDTRAJ_OUTPUT_ROOT`` environment variable, default ``./runs``). Every
command writes a manifest with the config hash, seeds, and SHA-256 of each
artifact it read or wrote. Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .codebook import CodebookConfig
from .config import ConfigError, load_config, loss_weights
from .evaluate import (baseline_predictions, evaluate_bundle,
                       format_metric_table, predictions_to_trajectories)
from .io import (ContainerError, load_trajectories, save_trajectories,
                 sha256_file)
from .predictor import PredictorConfig
from .synthetic import (GeneratorConfig, SplitSpec, SyntheticDataset,
                        generate_dataset, load_descriptors, make_splits,
                        save_descriptors)
from .trajectory import compute_grid_bounds
from .training import (TensorBundle, TrainSettings, load_indexer,
                       load_intercode, load_interpred, predict_dataset,
                       save_indexer, save_intercode, save_interpred,
                       train_codebook, train_indexer, train_predictor)
from .viz import export_trajectory

ENV_OUTPUT_ROOT = "HANDTRAJ_OUTPUT_ROOT"
SWEEP_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(root: Path, command: str, cfg: dict, inputs, outputs):
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    path = root / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


class _Ctx:
    def __init__(self, cfg: dict, root: Path):
        self.cfg = cfg
        self.root = root

    # -- artifact paths -------------------------------------------------------
    @property
    def dataset_path(self):
        return self.root / "dataset.htrj"

    @property
    def descriptors_path(self):
        return self.root / "descriptors.json"

    @property
    def split_path(self):
        return self.root / f"splits_{self.cfg['split_mode']}.json"

    @property
    def codebook_path(self):
        return self.root / "codebook.ckpt"

    @property
    def indexer_path(self):
        return self.root / "indexer.ckpt"

    @property
    def predictor_path(self):
        cfg = self.cfg
        return self.root / f"predictor_{cfg['variant']}_{cfg['task_mode']}.ckpt"

    def prediction_dump_path(self):
        cfg = self.cfg
        return self.root / (f"predictions_{cfg['variant']}_{cfg['task_mode']}"
                            f"_{cfg['split_mode']}.htrj")

    def metrics_path(self):
        cfg = self.cfg
        return self.root / (f"metrics_{cfg['variant']}_{cfg['task_mode']}"
                            f"_{cfg['split_mode']}.json")

    # -- loading --------------------------------------------------------------
    def _require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise ContainerError(
                f"missing artifact {path}; run `handtraj {producer}` first")
        return path

    def load_dataset(self) -> SyntheticDataset:
        trajs = load_trajectories(self._require(self.dataset_path, "gen-data"))
        descs = load_descriptors(self._require(self.descriptors_path, "gen-data"))
        gen_cfg = GeneratorConfig(num_sequences=len(trajs),
                                  horizon=self.cfg["horizon"],
                                  seed=self.cfg["data_seed"])
        return SyntheticDataset(trajectories=trajs, descriptors=descs,
                                config=gen_cfg)

    def load_split(self) -> SplitSpec:
        return SplitSpec.load(self._require(self.split_path, "gen-data"))

    def bundle(self, dataset: SyntheticDataset, split: SplitSpec) -> TensorBundle:
        bounds = compute_grid_bounds(dataset.trajectories[i]
                                     for i in split.train_ids)
        return TensorBundle(dataset, bounds=bounds,
                            hand_visible=self.cfg["hand_visible"],
                            provider_seed=self.cfg["data_seed"])

    def settings(self, epochs: int, seed_offset: int = 0) -> TrainSettings:
        cfg = self.cfg
        return TrainSettings(
            epochs=epochs, batch_size=cfg["batch_size"], lr=cfg["lr"],
            lr_final=None if cfg["lr_final"] < 0 else cfg["lr_final"],
            grad_clip=cfg["grad_clip"], seed=cfg["train_seed"] + seed_offset,
            sigma_voxels=cfg["sigma_voxels"],
            use_contact_loss=cfg["use_contact_loss"],
            loss_weights=loss_weights(cfg))

    def codebook_config(self) -> CodebookConfig:
        cfg = self.cfg
        return CodebookConfig(
            horizon=cfg["horizon"], num_entries=cfg["codebook_entries"],
            code_dim=cfg["code_dim"], num_quantizers=cfg["num_quantizers"],
            gumbel_temp=cfg["gumbel_temp"], ema_decay=cfg["ema_decay"],
            dead_code_threshold=cfg["dead_code_threshold"],
            commitment_weight=cfg["commitment_weight"], dropout=cfg["dropout"])

    def predictor_config(self) -> PredictorConfig:
        cfg = self.cfg
        return PredictorConfig(
            variant=cfg["variant"], mode=cfg["task_mode"],
            horizon=cfg["horizon"], width=cfg["predictor_width"],
            latent_dim=cfg["code_dim"], diffusion_steps=cfg["diffusion_steps"],
            dropout=cfg["dropout"])


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="key = value config file (supports include)")
@click.option("--override", "-o", "overrides", multiple=True,
              help="config override, key=value")
@click.option("--output-root", type=click.Path(), default=None,
              help=f"artifact directory (or ${ENV_OUTPUT_ROOT}, default ./runs)")
@click.pass_context
def main(ctx, config_path, overrides, output_root):
    """Hand-object interaction trajectory modeling pipeline."""
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    import os
    root = Path(output_root or os.environ.get(ENV_OUTPUT_ROOT, "runs"))
    root.mkdir(parents=True, exist_ok=True)
    ctx.obj = _Ctx(cfg, root)


@main.command("gen-data")
@click.pass_obj
def gen_data(ctx: _Ctx):
    """Generate the synthetic dataset, descriptors, and split file."""
    cfg = ctx.cfg
    dataset = generate_dataset(GeneratorConfig(
        num_sequences=cfg["num_sequences"], horizon=cfg["horizon"],
        seed=cfg["data_seed"]))
    save_trajectories(ctx.dataset_path, dataset.trajectories)
    save_descriptors(ctx.descriptors_path, dataset.descriptors)
    split = make_splits(dataset, cfg["split_mode"], seed=cfg["split_seed"])
    split.save(ctx.split_path)
    outputs = [ctx.dataset_path, ctx.descriptors_path, ctx.split_path]
    _write_manifest(ctx.root, "gen-data", cfg, [], outputs)
    click.echo(f"wrote {len(dataset)} sequences "
               f"(train/val/test = {len(split.train_ids)}/"
               f"{len(split.val_ids)}/{len(split.test_ids)})")


@main.command("train-codebook")
@click.pass_obj
def cmd_train_codebook(ctx: _Ctx):
    """Stage 1: fit the interaction codebook on the training split."""
    dataset = ctx.load_dataset()
    split = ctx.load_split()
    bundle = ctx.bundle(dataset, split)
    model = train_codebook(bundle, ctx.codebook_config(),
                           ctx.settings(ctx.cfg["codebook_epochs"]),
                           ids=split.train_ids,
                           log_path=ctx.root / "codebook_log.jsonl")
    save_intercode(ctx.codebook_path, model, bundle.bounds)
    _write_manifest(ctx.root, "train-codebook", ctx.cfg,
                    [ctx.dataset_path, ctx.split_path], [ctx.codebook_path])
    click.echo(f"wrote {ctx.codebook_path}")


@main.command("train-indexer")
@click.pass_obj
def cmd_train_indexer(ctx: _Ctx):
    """Stage 2: fit the indexer against frozen codebook targets."""
    dataset = ctx.load_dataset()
    split = ctx.load_split()
    bundle = ctx.bundle(dataset, split)
    intercode, _ = load_intercode(ctx._require(ctx.codebook_path,
                                               "train-codebook"))
    model = train_indexer(bundle, intercode,
                          ctx.settings(ctx.cfg["indexer_epochs"],
                                       seed_offset=1),
                          ids=split.train_ids,
                          log_path=ctx.root / "indexer_log.jsonl")
    save_indexer(ctx.indexer_path, model)
    _write_manifest(ctx.root, "train-indexer", ctx.cfg,
                    [ctx.dataset_path, ctx.codebook_path], [ctx.indexer_path])
    click.echo(f"wrote {ctx.indexer_path}")


@main.command("train-predictor")
@click.pass_obj
def cmd_train_predictor(ctx: _Ctx):
    """Stage 3: fit the configured predictor variant."""
    dataset = ctx.load_dataset()
    split = ctx.load_split()
    bundle = ctx.bundle(dataset, split)
    pcfg = ctx.predictor_config()
    intercode = indexer = None
    inputs = [ctx.dataset_path, ctx.split_path]
    if pcfg.uses_codebook:
        intercode, _ = load_intercode(ctx._require(ctx.codebook_path,
                                                   "train-codebook"))
        indexer = load_indexer(ctx._require(ctx.indexer_path, "train-indexer"))
        inputs += [ctx.codebook_path, ctx.indexer_path]
    model = train_predictor(bundle, pcfg,
                            ctx.settings(ctx.cfg["predictor_epochs"],
                                         seed_offset=2),
                            intercode=intercode, indexer=indexer,
                            ids=split.train_ids,
                            log_path=ctx.root / f"{pcfg.variant}_log.jsonl")
    save_interpred(ctx.predictor_path, model)
    _write_manifest(ctx.root, "train-predictor", ctx.cfg, inputs,
                    [ctx.predictor_path])
    click.echo(f"wrote {ctx.predictor_path}")


def _evaluate(ctx: _Ctx, eval_ids, train_ids, bundle):
    pcfg = ctx.predictor_config()
    model = load_interpred(ctx._require(ctx.predictor_path, "train-predictor"))
    intercode = indexer = None
    if pcfg.uses_codebook:
        intercode, _ = load_intercode(ctx._require(ctx.codebook_path,
                                                   "train-codebook"))
        indexer = load_indexer(ctx._require(ctx.indexer_path, "train-indexer"))
    pose, probs = predict_dataset(model, bundle, eval_ids,
                                  intercode=intercode, indexer=indexer,
                                  sigma=ctx.cfg["sigma_voxels"],
                                  retrieval=ctx.cfg["retrieval"],
                                  seed=ctx.cfg["train_seed"])
    metrics = evaluate_bundle(pose, probs, bundle, eval_ids,
                              threshold=ctx.cfg["contact_threshold"])
    base_pose, base_probs = baseline_predictions(bundle, train_ids, eval_ids)
    base_metrics = evaluate_bundle(base_pose, base_probs, bundle, eval_ids,
                                   threshold=ctx.cfg["contact_threshold"])
    return pose, probs, metrics, base_metrics


@main.command("evaluate")
@click.option("--split", "which", type=click.Choice(["val", "test"]),
              default="test")
@click.pass_obj
def cmd_evaluate(ctx: _Ctx, which):
    """Metric table (M-PE / M-PA / F1) on the held-out split, plus baseline."""
    dataset = ctx.load_dataset()
    split = ctx.load_split()
    bundle = ctx.bundle(dataset, split)
    eval_ids = split.test_ids if which == "test" else split.val_ids
    pose, probs, metrics, base_metrics = _evaluate(ctx, eval_ids,
                                                   split.train_ids, bundle)
    label = (f"{ctx.cfg['variant']}/{ctx.cfg['task_mode']}"
             f"/{ctx.cfg['split_mode']}-{which}")
    click.echo(format_metric_table({label: metrics,
                                    "constant-mean baseline": base_metrics}))
    dump = ctx.prediction_dump_path()
    save_trajectories(dump, predictions_to_trajectories(
        pose, probs, bundle, eval_ids,
        threshold=ctx.cfg["contact_threshold"]))
    mpath = ctx.metrics_path()
    mpath.write_text(json.dumps({"setting": label, "metrics": metrics,
                                 "baseline": base_metrics,
                                 "eval_ids": list(map(int, eval_ids))},
                                indent=1))
    _write_manifest(ctx.root, "evaluate", ctx.cfg,
                    [ctx.dataset_path, ctx.predictor_path], [dump, mpath])
    click.echo(f"wrote {mpath} and {dump}")


@main.command("sweep-scale")
@click.option("--seeds", type=int, default=3, show_default=True,
              help="number of training seeds per fraction")
@click.pass_obj
def cmd_sweep_scale(ctx: _Ctx, seeds):
    """Retrain at {25,50,75,100}% of the training split; emit metric records."""
    if seeds < 1:
        raise click.UsageError("--seeds must be >= 1")
    dataset = ctx.load_dataset()
    split = ctx.load_split()
    bundle = ctx.bundle(dataset, split)
    records = sweep_scale(ctx, bundle, split, seeds)
    path = ctx.root / "sweep.json"
    path.write_text(json.dumps(records, indent=1))
    _write_manifest(ctx.root, "sweep-scale", ctx.cfg, [ctx.dataset_path],
                    [path])
    for rec in records:
        click.echo(f"fraction={rec['fraction']:.2f} seed={rec['seed']} "
                   f"mpjpe={rec['mpjpe_cm']:.3f}cm f1={rec['contact_f1']:.3f}")
    click.echo(f"wrote {path}")


def sweep_scale(ctx: _Ctx, bundle: TensorBundle, split: SplitSpec,
                seeds: int, fractions=SWEEP_FRACTIONS) -> list:
    """Full three-stage retraining per (fraction, seed); test-split metrics."""
    cfg = ctx.cfg
    records = []
    base_train = list(split.train_ids)
    for seed_offset in range(seeds):
        seed = cfg["train_seed"] + seed_offset
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(base_train))
        for fraction in fractions:
            take = max(int(round(fraction * len(base_train))), 1)
            train_ids = [base_train[i] for i in sorted(order[:take])]
            pcfg = ctx.predictor_config()

            def stage(epochs, off):
                s = ctx.settings(epochs)
                s.seed = seed + off
                return s

            intercode = indexer = None
            if pcfg.uses_codebook:
                intercode = train_codebook(bundle, ctx.codebook_config(),
                                           stage(cfg["codebook_epochs"], 0),
                                           ids=train_ids)
                indexer = train_indexer(bundle, intercode,
                                        stage(cfg["indexer_epochs"], 1),
                                        ids=train_ids)
            model = train_predictor(bundle, pcfg,
                                    stage(cfg["predictor_epochs"], 2),
                                    intercode=intercode, indexer=indexer,
                                    ids=train_ids)
            pose, probs = predict_dataset(model, bundle, split.test_ids,
                                          intercode=intercode, indexer=indexer,
                                          sigma=cfg["sigma_voxels"],
                                          retrieval=cfg["retrieval"],
                                          seed=seed)
            metrics = evaluate_bundle(pose, probs, bundle, split.test_ids,
                                      threshold=cfg["contact_threshold"])
            records.append({"fraction": fraction, "seed": seed,
                            "num_train": len(train_ids),
                            "mpjpe_cm": metrics["mpjpe_cm"],
                            "mpjpe_pa_cm": metrics["mpjpe_pa_cm"],
                            "contact_f1": metrics["contact_f1"]})
    return records


@main.command("export-viz")
@click.option("--sequence", type=int, default=0, show_default=True,
              help="index into the chosen source")
@click.option("--source", type=click.Choice(["pred", "gt"]), default="pred",
              show_default=True)
@click.pass_obj
def cmd_export_viz(ctx: _Ctx, sequence, source):
    """Dump per-timestep contact-colored hand meshes (two views) as PLY."""
    if source == "pred":
        dump = ctx._require(ctx.prediction_dump_path(), "evaluate")
        trajs = load_trajectories(dump)
        inputs = [dump]
    else:
        trajs = load_trajectories(ctx._require(ctx.dataset_path, "gen-data"))
        inputs = [ctx.dataset_path]
    if not 0 <= sequence < len(trajs):
        raise click.UsageError(
            f"sequence {sequence} outside [0, {len(trajs)})")
    out_dir = ctx.root / "viz" / f"{source}_{sequence:04d}"
    written = export_trajectory(out_dir, trajs[sequence])
    _write_manifest(ctx.root, "export-viz", ctx.cfg, inputs, written)
    click.echo(f"wrote {len(written)} meshes to {out_dir}")


def run() -> None:
    """Console entry point with the documented exit-code contract."""
    try:
        main.main(standalone_mode=False)
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"usage error: {exc}", err=True)
        sys.exit(1)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)
    except Exception as exc:  # runtime failures
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    run()
