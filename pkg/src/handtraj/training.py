"""Dataset tensorization and the three training stages.

Stage 1 fits the interaction codebook (encoder/quantizer/decoder), stage 2
the indexer against frozen codebook targets, stage 3 one of the predictor
variants. All loops are single-stream and deterministic given a seed; they
log per-term losses as line-delimited JSON and abort on non-finite losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .codebook import (CodebookConfig, InterCode, codebook_loss,
                       split_pose_params)
from .conditioning import (SyntheticImageProvider, SyntheticTextProvider,
                           coord_grid_tensor)
from .hand import fk_batch
from .indexer import Indexer, index_accuracy, index_cross_entropy, retrieve
from .io import save_checkpoint, load_checkpoint
from .predictor import InterPred, PredictorConfig
from .synthetic import SyntheticDataset
from .trajectory import (DEFAULT_SIGMA_VOXELS, GridBounds, VOXEL_RES,
                         compute_grid_bounds)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    lr_final: float | None = None  # cosine-decay target; None = constant lr
    grad_clip: float = 1.0
    seed: int = 0
    sigma_voxels: float = DEFAULT_SIGMA_VOXELS
    use_contact_loss: bool = True
    loss_weights: Optional[dict] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def voxelize_points(points: torch.Tensor, bounds: GridBounds,
                    sigma_voxels: float = DEFAULT_SIGMA_VOXELS) -> torch.Tensor:
    """Batched Gaussian voxel heatmaps; NaN rows give all-zero heatmaps."""
    centers = coord_grid_tensor(bounds, dtype=points.dtype)  # (3,16,16,16)
    pitch = torch.as_tensor(bounds.pitch, dtype=points.dtype)
    lo = torch.as_tensor(bounds.min_xyz, dtype=points.dtype)
    hi = torch.as_tensor(bounds.max_xyz, dtype=points.dtype)
    valid = torch.isfinite(points).all(dim=-1)
    p = torch.nan_to_num(points).clamp(lo, hi)
    sigma = sigma_voxels * pitch
    diff = (centers.unsqueeze(0) - p[:, :, None, None, None]) / sigma[None, :, None, None, None]
    values = torch.exp(-0.5 * (diff ** 2).sum(dim=1))
    return values * valid[:, None, None, None].to(values.dtype)


class TensorBundle:
    """Model-ready tensors for one dataset (float32 throughout)."""

    def __init__(self, dataset: SyntheticDataset, bounds: GridBounds | None = None,
                 hand_visible: bool = True, provider_seed: int = 0, rig=None):
        trajs = dataset.trajectories
        descs = dataset.descriptors
        self.horizon = trajs[0].horizon
        self.bounds = bounds if bounds is not None else compute_grid_bounds(trajs)
        self.coord_grid = coord_grid_tensor(self.bounds)
        self.rig = rig

        text_p = SyntheticTextProvider(seed=provider_seed)
        image_p = SyntheticImageProvider(seed=provider_seed)

        n, t = len(trajs), self.horizon
        pose = np.stack([tr.flat_steps() for tr in trajs])          # (N,T,99)
        contacts = np.stack([tr.contacts for tr in trajs])          # (N,T,778)
        self.pose = torch.as_tensor(pose, dtype=torch.float32)
        self.contacts = torch.as_tensor(contacts, dtype=torch.float32)
        self.steps = torch.cat([self.pose, self.contacts], dim=-1)  # (N,T,877)
        self.beta = torch.as_tensor(np.stack([tr.beta for tr in trajs]),
                                    dtype=torch.float32)

        # ground-truth per-step contact centroids via forward kinematics
        with torch.no_grad():
            beta_steps = self.beta[:, None, :].expand(n, t, 10)
            artic, rot, trans = split_pose_params(self.pose)
            verts, joints = fk_batch(beta_steps, artic, rot, trans, rig)
        self.gt_joints = joints                                     # (N,T,21,3)
        csum = self.contacts.sum(dim=-1)                            # (N,T)
        weighted = (self.contacts.unsqueeze(-1) * verts).sum(dim=-2)
        centroids = weighted / csum.clamp(min=1).unsqueeze(-1)
        centroids[csum == 0] = float("nan")
        self.centroids = centroids                                  # (N,T,3)
        self.point0 = centroids[:, 0, :]                            # (N,3)

        self.text = torch.as_tensor(
            np.stack([text_p.embed(tr.action_label) for tr in trajs]),
            dtype=torch.float32)
        self.video = torch.as_tensor(
            np.stack([image_p.embed_video(d, hand_visible) for d in descs]),
            dtype=torch.float32)                                    # (N,T,768)
        self.image0 = self.video[:, 0, :]
        self.goal = self.video[:, -1, :]
        self.labels = [(tr.action_label, tr.object_label, tr.scene_label)
                       for tr in trajs]

    def __len__(self) -> int:
        return self.steps.shape[0]

    def heatmaps(self, points: torch.Tensor, sigma: float) -> torch.Tensor:
        return voxelize_points(points, self.bounds, sigma)


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


class _JsonlLogger:
    def __init__(self, path):
        self.fh = open(path, "a") if path else None

    def write(self, record: dict):
        if self.fh:
            self.fh.write(json.dumps(record) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _make_scheduler(opt, settings: TrainSettings):
    if settings.lr_final is None:
        return None
    return torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=settings.epochs, eta_min=settings.lr_final)


def _check_finite(loss, context):
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"loss diverged during {context}")


def train_codebook(bundle: TensorBundle, config: CodebookConfig,
                   settings: TrainSettings, ids: Sequence[int] | None = None,
                   log_path=None) -> InterCode:
    torch.manual_seed(settings.seed)
    gen = torch.Generator().manual_seed(settings.seed + 1)
    model = InterCode(config)
    params = (list(model.encoder.parameters())
              + list(model.decoder.parameters())
              + list(model.contact_encoder.parameters()))
    opt = torch.optim.Adam(params, lr=settings.lr)
    sched = _make_scheduler(opt, settings)
    ids = torch.arange(len(bundle)) if ids is None else torch.as_tensor(list(ids))
    log = _JsonlLogger(log_path)
    grid = bundle.coord_grid
    t = config.horizon
    try:
        for epoch in range(settings.epochs):
            model.train()
            for batch in _batches(len(ids), settings.batch_size, gen):
                sel = ids[batch]
                steps = bundle.steps[sel]
                feats = model.encode(steps)
                if not bool(model.quantizer.initialized):
                    model.quantizer.init_from_data(feats.detach())
                qres = model.quantizer.quantize_train(
                    feats, config.gumbel_temp, noise=True, generator=gen)
                model.quantizer.ema_update(qres.layer_residuals,
                                           qres.layer_onehots, generator=gen)
                cents = bundle.centroids[sel].reshape(-1, 3)
                heat = bundle.heatmaps(cents, settings.sigma_voxels)
                cfeats = model.contact_encoder(
                    heat, grid.unsqueeze(0).expand(heat.shape[0], *grid.shape))
                cfeats = cfeats.reshape(len(sel), t, -1)
                pose, logits = model.decoder(qres.quantized, bundle.text[sel],
                                             bundle.video[sel], cfeats)
                loss, terms = codebook_loss(
                    pose, logits, bundle.pose[sel], bundle.contacts[sel],
                    bundle.centroids[sel], bundle.beta[sel],
                    weights=settings.loss_weights,
                    use_contact_loss=settings.use_contact_loss, rig=bundle.rig)
                commit = torch.nn.functional.mse_loss(feats,
                                                      qres.quantized.detach())
                loss = loss + config.commitment_weight * commit
                _check_finite(loss, "codebook training")
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(params, settings.grad_clip)
                opt.step()
                log.write({"stage": "codebook", "epoch": epoch,
                           "total": float(loss.detach()),
                           "commitment": float(commit.detach()),
                           **{k: float(v.detach()) for k, v in terms.items()}})
            if sched is not None:
                sched.step()
    finally:
        log.close()
    model.eval()
    return model


def reconstruct_eval(model: InterCode, bundle: TensorBundle,
                     ids: Sequence[int], sigma: float = DEFAULT_SIGMA_VOXELS,
                     batch_size: int = 32):
    """Eval-mode reconstruction: encode -> quantize_eval -> decode."""
    model.eval()
    ids = torch.as_tensor(list(ids))
    poses, probs = [], []
    grid = bundle.coord_grid
    t = model.config.horizon
    with torch.no_grad():
        for i in range(0, len(ids), batch_size):
            sel = ids[i:i + batch_size]
            feats = model.encode(bundle.steps[sel])
            quantized, _ = model.quantizer.quantize_eval(feats)
            cents = bundle.centroids[sel].reshape(-1, 3)
            heat = voxelize_points(cents, bundle.bounds, sigma)
            cfeats = model.contact_encoder(
                heat, grid.unsqueeze(0).expand(heat.shape[0], *grid.shape))
            pose, logits = model.decoder(quantized, bundle.text[sel],
                                         bundle.video[sel],
                                         cfeats.reshape(len(sel), t, -1))
            poses.append(pose)
            probs.append(torch.sigmoid(logits))
    return torch.cat(poses), torch.cat(probs)


def codebook_targets(model: InterCode, bundle: TensorBundle,
                     ids: Sequence[int], batch_size: int = 64):
    """Frozen-codebook index targets: quantize_eval of encoder features."""
    model.eval()
    ids = torch.as_tensor(list(ids))
    out = []
    with torch.no_grad():
        for i in range(0, len(ids), batch_size):
            feats = model.encode(bundle.steps[ids[i:i + batch_size]])
            _, idx = model.quantizer.quantize_eval(feats)
            out.append(idx)
    return torch.cat(out)  # (n, T, Q)


def train_indexer(bundle: TensorBundle, intercode: InterCode,
                  settings: TrainSettings, ids: Sequence[int] | None = None,
                  log_path=None) -> Indexer:
    if not bool(intercode.quantizer.initialized):
        raise ValueError("codebook must be trained before the indexer")
    torch.manual_seed(settings.seed)
    gen = torch.Generator().manual_seed(settings.seed + 2)
    cfg = intercode.config
    ids = list(range(len(bundle))) if ids is None else list(ids)
    targets = codebook_targets(intercode, bundle, ids)
    model = Indexer(cfg.horizon, cfg.code_dim, cfg.num_quantizers,
                    cfg.num_entries)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    sched = _make_scheduler(opt, settings)
    ids_t = torch.as_tensor(ids)
    heat0 = bundle.heatmaps(bundle.point0, settings.sigma_voxels)
    grid = bundle.coord_grid
    log = _JsonlLogger(log_path)
    try:
        for epoch in range(settings.epochs):
            model.train()
            for batch in _batches(len(ids_t), settings.batch_size, gen):
                sel = ids_t[batch]
                logits = model(bundle.text[sel], bundle.image0[sel],
                               heat0[sel],
                               grid.unsqueeze(0).expand(len(sel), *grid.shape),
                               bundle.point0[sel])
                ce = index_cross_entropy(logits, targets[batch])
                loss = ce
                _check_finite(loss, "indexer training")
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               settings.grad_clip)
                opt.step()
                log.write({"stage": "indexer", "epoch": epoch,
                           "ce": float(ce.detach()),
                           "top1": index_accuracy(logits.detach(),
                                                  targets[batch])})
            if sched is not None:
                sched.step()
    finally:
        log.close()
    model.eval()
    return model


def indexer_logits(model: Indexer, bundle: TensorBundle, ids: Sequence[int],
                   sigma: float = DEFAULT_SIGMA_VOXELS, batch_size: int = 64):
    model.eval()
    ids = torch.as_tensor(list(ids))
    grid = bundle.coord_grid
    out = []
    with torch.no_grad():
        for i in range(0, len(ids), batch_size):
            sel = ids[i:i + batch_size]
            heat0 = voxelize_points(bundle.point0[sel], bundle.bounds, sigma)
            out.append(model(bundle.text[sel], bundle.image0[sel], heat0,
                             grid.unsqueeze(0).expand(len(sel), *grid.shape),
                             bundle.point0[sel]))
    return torch.cat(out)


def retrieved_latents(intercode: InterCode, indexer: Indexer,
                      bundle: TensorBundle, ids: Sequence[int],
                      mode: str = "argmax", seed: int | None = None):
    logits = indexer_logits(indexer, bundle, ids)
    return retrieve(logits, intercode.quantizer, mode=mode, seed=seed)


def _warm_start_from_codebook(model: InterPred, intercode: InterCode) -> None:
    """Initialize codebook-consuming predictors from the trained InterCode.

    The predictor's decoder consumes the same latent space the codebook
    decoder was trained on, so stage-two training starts from the stage-one
    optimum instead of a fresh init. Tensors whose names or shapes differ
    (different width, goal-conditioned input projection, ...) keep their
    fresh initialization.
    """
    pairs = ((intercode.decoder, getattr(model, "decoder", None)),
             (intercode.contact_encoder, model.contact_encoder))
    for src, dst in pairs:
        if dst is None:
            continue
        ref = dst.state_dict()
        compat = {k: v.clone() for k, v in src.state_dict().items()
                  if k in ref and ref[k].shape == v.shape}
        dst.load_state_dict(compat, strict=False)


def train_predictor(bundle: TensorBundle, config: PredictorConfig,
                    settings: TrainSettings,
                    intercode: InterCode | None = None,
                    indexer: Indexer | None = None,
                    ids: Sequence[int] | None = None,
                    log_path=None) -> InterPred:
    if config.uses_codebook and (intercode is None or indexer is None):
        raise ValueError(f"{config.variant} needs a trained codebook and indexer")
    torch.manual_seed(settings.seed)
    gen = torch.Generator().manual_seed(settings.seed + 3)
    ids = list(range(len(bundle))) if ids is None else list(ids)
    ids_t = torch.as_tensor(ids)
    model = InterPred(config)
    if config.uses_codebook:
        _warm_start_from_codebook(model, intercode)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    sched = _make_scheduler(opt, settings)
    grid = bundle.coord_grid
    t = config.horizon

    latents = gt_latents = None
    if config.uses_codebook:
        with torch.no_grad():
            latents = retrieved_latents(intercode, indexer, bundle, ids)
            if config.variant == "ldiff":
                gt_latents = torch.cat([
                    intercode.quantizer.quantize_eval(
                        intercode.encode(bundle.steps[ids_t[i:i + 64]]))[0]
                    for i in range(0, len(ids_t), 64)])

    heat0 = bundle.heatmaps(bundle.point0, settings.sigma_voxels)
    log = _JsonlLogger(log_path)
    try:
        for epoch in range(settings.epochs):
            model.train()
            for batch in _batches(len(ids_t), settings.batch_size, gen):
                sel = ids_t[batch]
                goal = bundle.goal[sel] if config.mode == "interpolation" else None
                cfeat = model.contact_encoder(
                    heat0[sel], grid.unsqueeze(0).expand(len(sel), *grid.shape))
                images = bundle.image0[sel].unsqueeze(1).expand(-1, t, -1)
                cfeats = cfeat.unsqueeze(1).expand(-1, t, -1)
                extra = {}
                if config.variant == "ltf":
                    pose, logits = model.decoder(latents[batch], bundle.text[sel],
                                                 images, cfeats, goal=goal)
                elif config.variant == "ctf":
                    pose, logits = model.decoder(None, bundle.text[sel],
                                                 images, cfeats, goal=goal)
                elif config.variant == "ldiff":
                    step = int(torch.randint(config.diffusion_steps, (1,),
                                             generator=gen))
                    noise = torch.randn(gt_latents[batch].shape, generator=gen)
                    noisy = model.schedule.q_sample(gt_latents[batch], step, noise)
                    x0_hat, _ = model.denoiser(noisy, step, bundle.text[sel],
                                               images, cfeats, goal=goal)
                    extra["denoise_l2"] = torch.nn.functional.mse_loss(
                        x0_hat, gt_latents[batch])
                    pose, logits = model.decoder(x0_hat, bundle.text[sel],
                                                 images, cfeats, goal=goal)
                else:  # cdiff: diffusion over the raw pose-parameter sequence
                    step = int(torch.randint(config.diffusion_steps, (1,),
                                             generator=gen))
                    gt_pose = bundle.pose[sel]
                    noise = torch.randn(gt_pose.shape, generator=gen)
                    noisy = model.schedule.q_sample(gt_pose, step, noise)
                    pose, logits = model.denoiser(noisy, step, bundle.text[sel],
                                                  images, cfeats, goal=goal)
                loss, terms = codebook_loss(
                    pose, logits, bundle.pose[sel], bundle.contacts[sel],
                    bundle.centroids[sel], bundle.beta[sel],
                    weights=settings.loss_weights,
                    use_contact_loss=settings.use_contact_loss, rig=bundle.rig)
                for value in extra.values():
                    loss = loss + value
                _check_finite(loss, f"{config.variant} training")
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               settings.grad_clip)
                opt.step()
                log.write({"stage": config.variant, "epoch": epoch,
                           "total": float(loss.detach()),
                           **{k: float(v.detach()) for k, v in terms.items()},
                           **{k: float(v.detach()) for k, v in extra.items()}})
            if sched is not None:
                sched.step()
    finally:
        log.close()
    model.eval()
    return model


def predict_dataset(model: InterPred, bundle: TensorBundle,
                    ids: Sequence[int],
                    intercode: InterCode | None = None,
                    indexer: Indexer | None = None,
                    sigma: float = DEFAULT_SIGMA_VOXELS,
                    retrieval: str = "argmax", seed: int = 0,
                    batch_size: int = 32):
    """Eval-mode trajectory predictions: (pose (n,T,99), contact probs)."""
    model.eval()
    ids = list(ids)
    ids_t = torch.as_tensor(ids)
    latents = None
    if model.config.uses_codebook:
        latents = retrieved_latents(intercode, indexer, bundle, ids,
                                    mode=retrieval,
                                    seed=seed if retrieval == "sample" else None)
    grid = bundle.coord_grid
    poses, probs = [], []
    with torch.no_grad():
        for i in range(0, len(ids_t), batch_size):
            sel = ids_t[i:i + batch_size]
            heat0 = voxelize_points(bundle.point0[sel], bundle.bounds, sigma)
            goal = (bundle.goal[sel]
                    if model.config.mode == "interpolation" else None)
            latent = latents[i:i + batch_size] if latents is not None else None
            pose, prob = model.predict(
                latent, bundle.text[sel], bundle.image0[sel], heat0,
                grid.unsqueeze(0).expand(len(sel), *grid.shape),
                goal_image=goal, seed=seed + i)
            poses.append(pose)
            probs.append(prob)
    return torch.cat(poses), torch.cat(probs)


def pose_to_joints(pose: torch.Tensor, beta: torch.Tensor, rig=None):
    """(n,T,99) pose params + (n,10) shape -> (n,T,21,3) joints."""
    artic, rot, trans = split_pose_params(pose)
    beta_steps = beta.unsqueeze(1).expand(pose.shape[0], pose.shape[1], 10)
    with torch.no_grad():
        _, joints = fk_batch(beta_steps, artic, rot, trans, rig)
    return joints


# -- checkpoint helpers -------------------------------------------------------

def save_intercode(path, model: InterCode, bounds: GridBounds,
                   extra: dict | None = None):
    save_checkpoint(path, "intercode", model.config.to_dict(),
                    model.state_dict(), bounds=bounds, extra=extra)


def load_intercode(path):
    blob = load_checkpoint(path, "intercode")
    model = InterCode(CodebookConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob["bounds"]


def save_indexer(path, model: Indexer, extra: dict | None = None):
    cfg = {"horizon": model.horizon, "width": model.queries.shape[1],
           "num_quantizers": model.num_quantizers,
           "num_entries": model.num_entries}
    save_checkpoint(path, "indexer", cfg, model.state_dict(), extra=extra)


def load_indexer(path):
    blob = load_checkpoint(path, "indexer")
    model = Indexer(**blob["config"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def save_interpred(path, model: InterPred, extra: dict | None = None):
    save_checkpoint(path, "interpred", model.config.to_dict(),
                    model.state_dict(), extra=extra)


def load_interpred(path):
    blob = load_checkpoint(path, "interpred")
    model = InterPred(PredictorConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
