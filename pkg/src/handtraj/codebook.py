"""Interaction codebook: residual VQ autoencoder over pose+contact sequences.

Encoder: per-step MLP to the model width, then a 1-layer single-head
transformer encoder with learned positional embeddings. Quantizer: Q residual
layers of K codewords each, EMA-updated, with Gumbel-Softmax index sampling
at training time and argmax at eval. Decoder: per-step concatenation of
[latent | text | image | contact feature] -> MLP -> 1-layer single-head
transformer decoder with trainable queries -> pose and contact heads.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import CONTACT_FEAT_DIM, IMAGE_DIM, TEXT_DIM, ContactVoxelEncoder
from .hand import fk_batch

STEP_INPUT_DIM = 90 + 6 + 3 + 778  # articulation | rot6d | trans | contact
POSE_PARAM_DIM = 99
CONTACT_DIM = 778


@dataclass
class CodebookConfig:
    horizon: int = 30
    num_entries: int = 512       # K
    code_dim: int = 512          # E, also the transformer width
    num_quantizers: int = 6      # Q
    gumbel_temp: float = 0.5
    ema_decay: float = 0.99
    dead_code_threshold: float = 1.0
    commitment_weight: float = 0.25
    dropout: float = 0.2

    def __post_init__(self):
        if min(self.num_entries, self.code_dim, self.num_quantizers) < 1:
            raise ValueError("K, E, Q must all be >= 1")
        if self.gumbel_temp <= 0:
            raise ValueError("gumbel_temp must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class TrajectoryEncoder(nn.Module):
    """(B, T, 877) pose+contact steps -> (B, T, E) features."""

    def __init__(self, horizon: int, width: int, input_dim: int = STEP_INPUT_DIM):
        super().__init__()
        self.horizon = horizon
        self.input_mlp = nn.Linear(input_dim, width)
        self.pos_embed = nn.Parameter(torch.randn(horizon, width) * 0.02)
        self.attn = nn.TransformerEncoderLayer(
            d_model=width, nhead=1, dim_feedforward=2 * width,
            dropout=0.0, batch_first=True)

    def forward(self, steps: torch.Tensor) -> torch.Tensor:
        if steps.shape[-2] != self.horizon:
            raise ValueError(f"expected horizon {self.horizon}, got {steps.shape[-2]}")
        x = self.input_mlp(steps) + self.pos_embed
        return self.attn(x)


QuantizeResult = namedtuple(
    "QuantizeResult", "quantized indices soft layer_residuals layer_onehots")


class ResidualQuantizer(nn.Module):
    """Q-layer residual vector quantizer with EMA codeword updates.

    Codewords carry no gradients; they are fit by exponential moving averages
    of assigned residuals. The training path samples indices per layer with
    Gumbel-Softmax noise and passes gradients to the encoder through a
    straight-through identity on the quantized output.
    """

    def __init__(self, num_quantizers: int, num_entries: int, code_dim: int,
                 ema_decay: float = 0.99, dead_code_threshold: float = 1.0):
        super().__init__()
        self.num_quantizers = num_quantizers
        self.num_entries = num_entries
        self.code_dim = code_dim
        self.ema_decay = ema_decay
        self.dead_code_threshold = dead_code_threshold
        self.register_buffer("codewords",
                             torch.randn(num_quantizers, num_entries, code_dim) * 0.01)
        self.register_buffer("ema_count", torch.ones(num_quantizers, num_entries))
        self.register_buffer("ema_sum", self.codewords.clone())
        self.register_buffer("initialized", torch.tensor(False))

    @staticmethod
    def _farthest_point_seed(x: torch.Tensor, k: int) -> torch.Tensor:
        """Greedy farthest-point selection of k rows from x (n, E)."""
        n = x.shape[0]
        if n == 0:
            raise ValueError("cannot seed codewords from empty data")
        chosen = [0]
        if n < k:
            reps = x[torch.arange(k) % n]
            return reps + torch.randn_like(reps) * 1e-4
        dist = torch.cdist(x, x[0:1]).squeeze(-1)
        for _ in range(1, k):
            idx = int(torch.argmax(dist))
            chosen.append(idx)
            dist = torch.minimum(dist, torch.cdist(x, x[idx:idx + 1]).squeeze(-1))
        return x[torch.tensor(chosen)].clone()

    @torch.no_grad()
    def init_from_data(self, features: torch.Tensor) -> None:
        """Seed each layer's codewords from data residuals (farthest-point)."""
        residual = features.reshape(-1, self.code_dim).detach()
        for q in range(self.num_quantizers):
            seeds = self._farthest_point_seed(residual, self.num_entries)
            self.codewords[q] = seeds
            self.ema_sum[q] = seeds
            self.ema_count[q].fill_(1.0)
            idx = torch.cdist(residual, self.codewords[q]).argmin(dim=1)
            residual = residual - self.codewords[q][idx]
        self.initialized.fill_(True)

    def quantize_eval(self, features: torch.Tensor):
        """Argmin nearest-codeword residual quantization.

        features (..., E) -> (quantized (..., E), indices (..., Q)).
        """
        shape = features.shape
        residual = features.reshape(-1, self.code_dim)
        quantized = torch.zeros_like(residual)
        indices = []
        for q in range(self.num_quantizers):
            dist = torch.cdist(residual, self.codewords[q])
            idx = dist.argmin(dim=1)
            selected = self.codewords[q][idx]
            quantized = quantized + selected
            residual = residual - selected
            indices.append(idx)
        idx_mat = torch.stack(indices, dim=-1)
        return (quantized.reshape(shape),
                idx_mat.reshape(*shape[:-1], self.num_quantizers))

    def quantize_train(self, features: torch.Tensor, temp: float,
                       noise: bool = True,
                       generator: torch.Generator | None = None) -> QuantizeResult:
        """Gumbel-Softmax sampled residual quantization (training mode).

        Returns the straight-through quantized features, sampled indices,
        per-layer soft assignments (rows sum to 1), and the detached per-layer
        residuals/one-hots needed for EMA updates.
        """
        if temp <= 0:
            raise ValueError("temperature must be positive")
        shape = features.shape
        flat = features.reshape(-1, self.code_dim)
        residual = flat
        hard_sum = torch.zeros_like(flat)
        indices, softs, layer_residuals, layer_onehots = [], [], [], []
        for q in range(self.num_quantizers):
            layer_residuals.append(residual.detach())
            logits = -torch.cdist(residual, self.codewords[q]) ** 2
            if noise:
                u = torch.rand(logits.shape, generator=generator,
                               dtype=logits.dtype, device=logits.device)
                gumbel = -torch.log(-torch.log(u + 1e-20) + 1e-20)
                logits = logits + gumbel
            soft = F.softmax(logits / temp, dim=-1)
            idx = soft.argmax(dim=-1)
            onehot = F.one_hot(idx, self.num_entries).to(flat.dtype)
            selected = self.codewords[q][idx]
            hard_sum = hard_sum + selected
            residual = residual - selected
            indices.append(idx)
            softs.append(soft)
            layer_onehots.append(onehot)
        # straight-through: forward = quantized codeword sum, backward = identity
        quantized = flat + (hard_sum - flat).detach()
        return QuantizeResult(
            quantized=quantized.reshape(shape),
            indices=torch.stack(indices, dim=-1).reshape(*shape[:-1],
                                                         self.num_quantizers),
            soft=torch.stack(softs, dim=-2).reshape(*shape[:-1],
                                                    self.num_quantizers,
                                                    self.num_entries),
            layer_residuals=layer_residuals,
            layer_onehots=layer_onehots)

    @torch.no_grad()
    def ema_update(self, layer_residuals, layer_onehots,
                   generator: torch.Generator | None = None,
                   eps: float = 1e-6) -> None:
        d = self.ema_decay
        for q in range(self.num_quantizers):
            residual = layer_residuals[q]
            onehot = layer_onehots[q]
            counts = onehot.sum(dim=0)
            sums = onehot.t() @ residual
            self.ema_count[q].mul_(d).add_((1 - d) * counts)
            self.ema_sum[q].mul_(d).add_((1 - d) * sums)
            self.codewords[q] = self.ema_sum[q] / self.ema_count[q].clamp(min=eps)[:, None]
            dead = self.ema_count[q] < self.dead_code_threshold
            n_dead = int(dead.sum())
            if n_dead and residual.shape[0] > 0:
                pick = torch.randint(residual.shape[0], (n_dead,),
                                     generator=generator, device=residual.device)
                self.codewords[q][dead] = residual[pick]
                self.ema_sum[q][dead] = residual[pick]
                self.ema_count[q][dead] = 1.0


class ConditionedTrajectoryDecoder(nn.Module):
    """Shared decoder for the codebook and the predictor variants.

    Per step, concatenates [latent? | text | image | contact feature | goal?]
    into a joint feature, maps it to the model width, cross-attends T
    trainable queries over it, and decodes pose parameters (2-layer MLP) and
    contact logits (3-layer MLP).
    """

    def __init__(self, horizon: int, width: int, latent_dim: int,
                 goal_dim: int = 0, dropout: float = 0.2):
        super().__init__()
        self.horizon = horizon
        self.latent_dim = latent_dim
        self.goal_dim = goal_dim
        self.joint_feature_dim = (latent_dim + TEXT_DIM + IMAGE_DIM
                                  + CONTACT_FEAT_DIM + goal_dim)
        self.fuse = nn.Linear(self.joint_feature_dim, width)
        self.queries = nn.Parameter(torch.randn(horizon, width) * 0.02)
        self.attn = nn.TransformerDecoderLayer(
            d_model=width, nhead=1, dim_feedforward=2 * width,
            dropout=dropout, batch_first=True)
        self.pose_head = nn.Sequential(
            nn.Linear(width, width), nn.ReLU(), nn.Linear(width, POSE_PARAM_DIM))
        self.contact_head = nn.Sequential(
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, CONTACT_DIM))

    def forward(self, latent, text, images, contact_feats, goal=None):
        """latent (B,T,latent_dim) or None; text (B,512); images (B,T,768);
        contact_feats (B,T,32); goal (B,goal_dim) or None."""
        parts = []
        t = self.horizon
        if self.latent_dim:
            if latent is None or latent.shape[-2] != t:
                raise ValueError("latent must be provided with matching horizon")
            parts.append(latent)
        elif latent is not None:
            raise ValueError("this decoder has no latent channel")
        if images.shape[-2] != t or contact_feats.shape[-2] != t:
            raise ValueError("conditioning horizons must match the decoder")
        parts.append(text.unsqueeze(-2).expand(*text.shape[:-1], t, TEXT_DIM))
        parts.append(images)
        parts.append(contact_feats)
        if self.goal_dim:
            if goal is None:
                raise ValueError("goal features required in interpolation mode")
            parts.append(goal.unsqueeze(-2).expand(*goal.shape[:-1], t, self.goal_dim))
        elif goal is not None:
            raise ValueError("goal features supplied in forecasting mode")
        joint = torch.cat(parts, dim=-1)
        memory = self.fuse(joint)
        queries = self.queries.expand(*memory.shape[:-2], t, memory.shape[-1])
        feats = self.attn(queries, memory)
        return self.pose_head(feats), self.contact_head(feats)


class InterCode(nn.Module):
    """Trajectory tokenizer: encoder + residual codebook + conditioned decoder."""

    def __init__(self, config: CodebookConfig):
        super().__init__()
        self.config = config
        self.encoder = TrajectoryEncoder(config.horizon, config.code_dim)
        self.quantizer = ResidualQuantizer(
            config.num_quantizers, config.num_entries, config.code_dim,
            ema_decay=config.ema_decay,
            dead_code_threshold=config.dead_code_threshold)
        self.contact_encoder = ContactVoxelEncoder()
        self.decoder = ConditionedTrajectoryDecoder(
            config.horizon, config.code_dim, latent_dim=config.code_dim,
            dropout=config.dropout)

    def encode(self, steps: torch.Tensor) -> torch.Tensor:
        return self.encoder(steps)

    def tokenize(self, steps: torch.Tensor):
        """Eval-mode latent: (quantized features (B,T,E), indices (B,T,Q))."""
        return self.quantizer.quantize_eval(self.encode(steps))


def split_pose_params(pose: torch.Tensor):
    """(…, 99) -> articulation (…, 90), rot6d (…, 6), trans (…, 3)."""
    return pose[..., :90], pose[..., 90:96], pose[..., 96:99]


def weighted_contact_centroid(vertices: torch.Tensor,
                              probs: torch.Tensor) -> torch.Tensor:
    """Probability-weighted vertex mean: (…, 778, 3), (…, 778) -> (…, 3)."""
    w = probs.clamp(min=0)
    denom = w.sum(dim=-1, keepdim=True).clamp(min=1e-8)
    return (w.unsqueeze(-1) * vertices).sum(dim=-2) / denom


DEFAULT_LOSS_WEIGHTS = {
    "articulation": 1.0, "centroid": 1.0, "translation": 1.0,
    "rotation": 1.0, "contact_bce": 1.0,
}


def codebook_loss(pred_pose: torch.Tensor, contact_logits: torch.Tensor,
                  gt_pose: torch.Tensor, gt_contacts: torch.Tensor,
                  gt_centroids: torch.Tensor, beta: torch.Tensor,
                  weights: dict | None = None,
                  use_contact_loss: bool = True, rig=None):
    """Five-term trajectory reconstruction loss.

    pred_pose/gt_pose (B,T,99); contact_logits/gt_contacts (B,T,778);
    gt_centroids (B,T,3) with NaN rows for steps without ground-truth contact;
    beta (B,10). Returns (total, per-term dict). With ``use_contact_loss``
    off, the BCE term is dropped and the centroid term uses detached contact
    probabilities, so no gradient reaches the contact head.
    """
    w = dict(DEFAULT_LOSS_WEIGHTS)
    if weights:
        w.update(weights)
    p_art, p_rot, p_trans = split_pose_params(pred_pose)
    g_art, g_rot, g_trans = split_pose_params(gt_pose)

    terms = {}
    terms["articulation"] = F.smooth_l1_loss(p_art, g_art)
    terms["translation"] = F.l1_loss(p_trans, g_trans)
    terms["rotation"] = F.l1_loss(p_rot, g_rot)

    probs = torch.sigmoid(contact_logits)
    if not use_contact_loss:
        probs = probs.detach()
    beta_steps = beta.unsqueeze(-2).expand(*pred_pose.shape[:-1], beta.shape[-1])
    verts, _ = fk_batch(beta_steps, p_art, p_rot, p_trans, rig)
    pred_centroid = weighted_contact_centroid(verts, probs)
    valid = torch.isfinite(gt_centroids).all(dim=-1)
    if valid.any():
        diff = (pred_centroid - torch.nan_to_num(gt_centroids)).abs().mean(dim=-1)
        terms["centroid"] = (diff * valid).sum() / valid.sum()
    else:
        terms["centroid"] = pred_pose.new_zeros(())

    if use_contact_loss:
        terms["contact_bce"] = F.binary_cross_entropy_with_logits(
            contact_logits, gt_contacts.to(contact_logits.dtype))

    total = sum(w[name] * value for name, value in terms.items())
    if not torch.isfinite(total):
        detail = {k: float(v.detach()) for k, v in terms.items()}
        raise FloatingPointError(f"non-finite loss: {detail}")
    return total, terms
