"""Interaction predictor variants.

Two-stage variants consume a latent retrieved from the codebook:
``ltf`` decodes it with a transformer decoder identical in shape to the
codebook's, ``ldiff`` denoises in the codebook latent space over a fixed
schedule and then decodes. Single-stage baselines skip the codebook:
``ctf`` is the same decoder without the latent channel, ``cdiff`` diffuses
the raw pose-parameter sequence directly (contact logits read off the
denoiser features).

Forecasting conditions on frame-0 features only; interpolation additionally
concatenates goal-image features into the joint feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .codebook import (CONTACT_DIM, POSE_PARAM_DIM, ConditionedTrajectoryDecoder)
from .conditioning import (CONTACT_FEAT_DIM, IMAGE_DIM, TEXT_DIM,
                           ContactVoxelEncoder)

VARIANTS = ("ltf", "ldiff", "ctf", "cdiff")
MODES = ("forecasting", "interpolation")


@dataclass
class PredictorConfig:
    variant: str = "ltf"
    mode: str = "forecasting"
    horizon: int = 30
    width: int = 512
    latent_dim: int = 512
    diffusion_steps: int = 50
    dropout: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")

    @property
    def goal_dim(self) -> int:
        return IMAGE_DIM if self.mode == "interpolation" else 0

    @property
    def uses_codebook(self) -> bool:
        return self.variant in ("ltf", "ldiff")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class DiffusionSchedule:
    """Cosine variance schedule with deterministic DDIM-style reverse steps."""

    def __init__(self, n_steps: int, s: float = 0.008):
        self.n_steps = n_steps
        t = torch.arange(n_steps + 1, dtype=torch.float64) / n_steps
        f = torch.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        abar = (f / f[0]).clamp(1e-5, 1.0)
        # alphas_bar[k] is the signal fraction after k+1 of n noising steps
        self.alphas_bar = abar[1:].to(torch.float32)

    def q_sample(self, x0: torch.Tensor, step: int, noise: torch.Tensor):
        ab = self.alphas_bar[step]
        return ab.sqrt() * x0 + (1 - ab).sqrt() * noise

    def reverse_step(self, x_t: torch.Tensor, x0_hat: torch.Tensor, step: int):
        """Deterministic step from noise level ``step`` down to ``step - 1``."""
        if step == 0:
            return x0_hat
        ab_t = self.alphas_bar[step]
        ab_prev = self.alphas_bar[step - 1]
        eps_hat = (x_t - ab_t.sqrt() * x0_hat) / (1 - ab_t).sqrt()
        return ab_prev.sqrt() * x0_hat + (1 - ab_prev).sqrt() * eps_hat


def sinusoidal_embedding(steps: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / max(half - 1, 1))
    angles = steps.to(torch.float32)[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class SequenceDenoiser(nn.Module):
    """Predicts the clean sequence from a noisy one plus conditioning."""

    def __init__(self, horizon: int, width: int, data_dim: int,
                 goal_dim: int = 0, dropout: float = 0.2,
                 with_contact_head: bool = False):
        super().__init__()
        self.horizon = horizon
        self.data_dim = data_dim
        self.goal_dim = goal_dim
        cond_dim = TEXT_DIM + IMAGE_DIM + CONTACT_FEAT_DIM + goal_dim
        self.fuse = nn.Linear(data_dim + cond_dim, width)
        self.time_mlp = nn.Sequential(nn.Linear(width, width), nn.ReLU(),
                                      nn.Linear(width, width))
        self.queries = nn.Parameter(torch.randn(horizon, width) * 0.02)
        self.attn = nn.TransformerDecoderLayer(
            d_model=width, nhead=1, dim_feedforward=2 * width,
            dropout=dropout, batch_first=True)
        self.out_head = nn.Sequential(nn.Linear(width, width), nn.ReLU(),
                                      nn.Linear(width, data_dim))
        self.contact_head = None
        if with_contact_head:
            self.contact_head = nn.Sequential(
                nn.Linear(width, width), nn.ReLU(),
                nn.Linear(width, width), nn.ReLU(),
                nn.Linear(width, CONTACT_DIM))

    def forward(self, noisy, step, text, images, contact_feats, goal=None):
        t = self.horizon
        if noisy.shape[-2] != t:
            raise ValueError("noisy sequence horizon mismatch")
        parts = [noisy,
                 text.unsqueeze(-2).expand(*text.shape[:-1], t, TEXT_DIM),
                 images, contact_feats]
        if self.goal_dim:
            if goal is None:
                raise ValueError("goal features required in interpolation mode")
            parts.append(goal.unsqueeze(-2).expand(*goal.shape[:-1], t,
                                                   self.goal_dim))
        elif goal is not None:
            raise ValueError("goal features supplied in forecasting mode")
        memory = self.fuse(torch.cat(parts, dim=-1))
        step_t = torch.as_tensor(step, dtype=torch.float32)
        temb = self.time_mlp(sinusoidal_embedding(step_t, memory.shape[-1]))
        while temb.dim() < memory.dim():
            temb = temb.unsqueeze(-2)
        memory = memory + temb
        queries = self.queries.expand(*memory.shape[:-2], t, memory.shape[-1])
        feats = self.attn(queries, memory)
        x0_hat = self.out_head(feats)
        logits = self.contact_head(feats) if self.contact_head is not None else None
        return x0_hat, logits


class InterPred(nn.Module):
    """Unified wrapper over the four predictor variants."""

    def __init__(self, config: PredictorConfig):
        super().__init__()
        self.config = config
        self.contact_encoder = ContactVoxelEncoder()
        self.schedule = DiffusionSchedule(config.diffusion_steps)
        v = config.variant
        if v == "ltf":
            self.decoder = ConditionedTrajectoryDecoder(
                config.horizon, config.width, latent_dim=config.latent_dim,
                goal_dim=config.goal_dim, dropout=config.dropout)
        elif v == "ctf":
            self.decoder = ConditionedTrajectoryDecoder(
                config.horizon, config.width, latent_dim=0,
                goal_dim=config.goal_dim, dropout=config.dropout)
        elif v == "ldiff":
            self.denoiser = SequenceDenoiser(
                config.horizon, config.width, data_dim=config.latent_dim,
                goal_dim=config.goal_dim, dropout=config.dropout)
            self.decoder = ConditionedTrajectoryDecoder(
                config.horizon, config.width, latent_dim=config.latent_dim,
                goal_dim=config.goal_dim, dropout=config.dropout)
        else:  # cdiff
            self.denoiser = SequenceDenoiser(
                config.horizon, config.width, data_dim=POSE_PARAM_DIM,
                goal_dim=config.goal_dim, dropout=config.dropout,
                with_contact_head=True)

    def condition(self, text, image0, heatmap0, coord_grid, goal_image=None):
        """Broadcast frame-0 conditioning across the horizon."""
        t = self.config.horizon
        if self.config.mode == "forecasting" and goal_image is not None:
            raise ValueError("goal features supplied in forecasting mode")
        if self.config.mode == "interpolation" and goal_image is None:
            raise ValueError("interpolation mode requires goal-image features")
        cfeat = self.contact_encoder(heatmap0, coord_grid)
        images = image0.unsqueeze(-2).expand(*image0.shape[:-1], t, IMAGE_DIM)
        cfeats = cfeat.unsqueeze(-2).expand(*cfeat.shape[:-1], t, CONTACT_FEAT_DIM)
        return {"text": text, "images": images, "contact_feats": cfeats,
                "goal": goal_image}

    def denoise_latent(self, noisy, step, cond):
        """Single clean-sequence estimate at the given noise level."""
        if not 0 <= step < self.config.diffusion_steps:
            raise ValueError(f"step {step} outside [0, {self.config.diffusion_steps})")
        if self.config.variant not in ("ldiff", "cdiff"):
            raise ValueError("denoising only applies to diffusion variants")
        return self.denoiser(noisy, step, **cond)

    def _reverse_loop(self, cond, batch_shape, data_dim, seed: int):
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(*batch_shape, self.config.horizon, data_dim, generator=gen)
        logits = None
        for step in reversed(range(self.config.diffusion_steps)):
            x0_hat, logits = self.denoise_latent(x, step, cond)
            x = self.schedule.reverse_step(x, x0_hat, step)
        return x, logits

    def predict(self, latent, text, image0, heatmap0, coord_grid,
                goal_image=None, seed: int = 0):
        """-> (pose params (B,T,99), contact probabilities (B,T,778))."""
        cond = self.condition(text, image0, heatmap0, coord_grid, goal_image)
        v = self.config.variant
        if v == "ltf":
            pose, logits = self.decoder(latent, **cond)
        elif v == "ctf":
            if latent is not None:
                raise ValueError("ctf is single-stage: no latent input")
            pose, logits = self.decoder(None, **cond)
        elif v == "ldiff":
            denoised, _ = self._reverse_loop(cond, text.shape[:-1],
                                             self.config.latent_dim, seed)
            pose, logits = self.decoder(denoised, **cond)
        else:  # cdiff
            pose, logits = self._reverse_loop(cond, text.shape[:-1],
                                              POSE_PARAM_DIM, seed)
        return pose, torch.sigmoid(logits)
