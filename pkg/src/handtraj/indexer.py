"""Learned indexer: test-time inputs -> distributions over codebook indices.

Takes the action text embedding, the frame-0 image embedding, the contact
feature from the voxelized 3D contact point, and the raw point itself,
and predicts factorized logits over (timestep, quantizer layer, entry).
Retrieval sums the selected codeword per layer into a T x E latent.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import ResidualQuantizer
from .conditioning import CONTACT_FEAT_DIM, IMAGE_DIM, TEXT_DIM, ContactVoxelEncoder

INDEXER_INPUT_DIM = TEXT_DIM + IMAGE_DIM + CONTACT_FEAT_DIM + 3  # 1315


class Indexer(nn.Module):
    def __init__(self, horizon: int, width: int, num_quantizers: int,
                 num_entries: int, dropout: float = 0.2):
        super().__init__()
        self.horizon = horizon
        self.num_quantizers = num_quantizers
        self.num_entries = num_entries
        self.contact_encoder = ContactVoxelEncoder()
        self.input_mlp = nn.Sequential(
            nn.Linear(INDEXER_INPUT_DIM, 1024), nn.ReLU(),
            nn.Linear(1024, width))
        self.queries = nn.Parameter(torch.randn(horizon, width) * 0.02)
        self.attn = nn.TransformerDecoderLayer(
            d_model=width, nhead=1, dim_feedforward=2 * width,
            dropout=dropout, batch_first=True)
        self.head = nn.Sequential(
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, num_quantizers * num_entries))

    def forward(self, text: torch.Tensor, image0: torch.Tensor,
                heatmap0: torch.Tensor, coord_grid: torch.Tensor,
                point: torch.Tensor) -> torch.Tensor:
        """-> logits (B, T, Q, K); softmax over K gives the distribution."""
        cfeat = self.contact_encoder(heatmap0, coord_grid)
        fused = self.input_mlp(torch.cat([text, image0, cfeat, point], dim=-1))
        memory = fused.unsqueeze(-2)  # single conditioning token
        queries = self.queries.expand(*memory.shape[:-2], self.horizon,
                                      memory.shape[-1])
        feats = self.attn(queries, memory)
        logits = self.head(feats)
        return logits.reshape(*logits.shape[:-1], self.num_quantizers,
                              self.num_entries)


def retrieve(logits: torch.Tensor, quantizer: ResidualQuantizer,
             mode: str = "argmax", seed: int | None = None) -> torch.Tensor:
    """Pick an index per (t, q) and sum the codewords into a T x E latent.

    logits (..., T, Q, K). mode "argmax" is deterministic; "sample" draws a
    seeded categorical sample from the softmax per (t, q).
    """
    if mode == "argmax":
        idx = logits.argmax(dim=-1)
    elif mode == "sample":
        gen = torch.Generator()
        if seed is not None:
            gen.manual_seed(seed)
        probs = F.softmax(logits, dim=-1)
        flat = probs.reshape(-1, probs.shape[-1])
        idx = torch.multinomial(flat, 1, generator=gen).squeeze(-1)
        idx = idx.reshape(probs.shape[:-1])
    else:
        raise ValueError(f"unknown retrieval mode {mode!r}")
    return latent_from_indices(idx, quantizer)


def latent_from_indices(indices: torch.Tensor,
                        quantizer: ResidualQuantizer) -> torch.Tensor:
    """indices (..., T, Q) -> latent (..., T, E): per-layer codeword sum."""
    latent = torch.zeros(*indices.shape[:-1], quantizer.code_dim,
                         dtype=quantizer.codewords.dtype,
                         device=indices.device)
    for q in range(quantizer.num_quantizers):
        latent = latent + quantizer.codewords[q][indices[..., q]]
    return latent


def index_cross_entropy(logits: torch.Tensor, targets: torch.Tensor):
    """Mean cross-entropy over (B, T, Q) factorized index predictions."""
    k = logits.shape[-1]
    return F.cross_entropy(logits.reshape(-1, k), targets.reshape(-1))


def index_accuracy(logits: torch.Tensor, targets: torch.Tensor, topk: int = 1):
    """Top-k accuracy over all (t, q) positions."""
    top = logits.topk(topk, dim=-1).indices
    hit = (top == targets.unsqueeze(-1)).any(dim=-1)
    return float(hit.float().mean())
