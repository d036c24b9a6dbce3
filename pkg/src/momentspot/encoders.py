"""Query and clip encoders.

The query encoder is an embedding table plus a bidirectional GRU whose
direction outputs are concatenated and projected back to the shared width.
The expensive clip encoder is a small feed-forward network standing in for a
heavy video backbone; it is only ever run on clips the selector asked for,
and ``encode_selected_clips`` enforces that no clip is encoded twice.

Both encoders are frozen by default: the model around them trains, the
feature extractors do not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError
from .featurefile import FeatureFile


class QueryEncoder(nn.Module):
    """Token embeddings -> BiGRU -> projection to the shared feature width."""

    def __init__(self, vocab_size: int, embed_dim: int, width: int, frozen: bool = True):
        super().__init__()
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.gru = nn.GRU(embed_dim, width, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * width, width)
        if frozen:
            self.requires_grad_(False)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Encode padded token batches.

        tokens: [batch, n] int64, mask: [batch, n] bool (True = real token).
        Out-of-vocabulary ids map to the reserved UNK row 0. Sequences are
        packed so padding never leaks into valid positions.
        """
        tokens = torch.where(
            (tokens >= 0) & (tokens < self.vocab_size), tokens, torch.zeros_like(tokens)
        )
        emb = self.embedding(tokens)
        lengths = mask.sum(dim=1).clamp(min=1).cpu()
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths, batch_first=True, enforce_sorted=False
        )
        out, _ = self.gru(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(
            out, batch_first=True, total_length=tokens.shape[1]
        )
        q = self.proj(out)
        return q * mask.unsqueeze(-1).to(q.dtype)

    def load_pretrained_embeddings(self, feature: FeatureFile) -> None:
        """Install an external embedding table shipped in the feature-file format."""
        if feature.role != "embedding":
            raise ConfigurationError(f"expected role 'embedding', got {feature.role!r}")
        table = self.embedding.weight
        if feature.array.shape != tuple(table.shape):
            raise ConfigurationError(
                f"embedding table shape {feature.array.shape} does not match "
                f"model table {tuple(table.shape)}"
            )
        with torch.no_grad():
            table.copy_(torch.from_numpy(feature.array))


class ExpensiveClipEncoder(nn.Module):
    """Two-layer feed-forward encoder over raw clip features."""

    def __init__(self, raw_dim: int, hidden_dim: int, width: int, frozen: bool = True):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(raw_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, width),
        )
        if frozen:
            self.requires_grad_(False)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.net(rows)


@dataclass
class MaskedClipFeatures:
    """Expensive features materialized only where the mask is set.

    Rows with mask 0 are exactly zero; ``call_count`` is the number of clips
    that went through the expensive encoder to produce this state.
    """

    features: torch.Tensor  # [clip_count, width]
    mask: torch.Tensor  # [clip_count] bool
    call_count: int

    @classmethod
    def empty(cls, clip_count: int, width: int, dtype=torch.float32) -> "MaskedClipFeatures":
        return cls(
            features=torch.zeros(clip_count, width, dtype=dtype),
            mask=torch.zeros(clip_count, dtype=torch.bool),
            call_count=0,
        )


def encode_selected_clips(
    raw_clip_features: torch.Tensor,
    cumulative_mask: torch.Tensor,
    prior: MaskedClipFeatures,
    encoder: ExpensiveClipEncoder,
    gate_values: torch.Tensor | None = None,
) -> MaskedClipFeatures:
    """Advance masked clip features to a grown cumulative mask.

    Only rows newly flagged since ``prior`` are pushed through the encoder;
    previously encoded rows are carried over untouched and unselected rows
    stay zero. When ``gate_values`` is given (straight-through gate samples,
    hard values with relaxed gradients), the fresh rows are scaled by it so
    selection logits receive gradient.
    """
    mask = cumulative_mask.bool()
    if (prior.mask & ~mask).any():
        raise ValueError("cumulative selection mask shrank between steps")
    new = mask & ~prior.mask
    features = prior.features.clone()
    n_new = int(new.sum())
    if n_new:
        rows = encoder(raw_clip_features[new])
        if gate_values is not None:
            rows = rows * gate_values[new].unsqueeze(-1)
        features[new] = rows
    return MaskedClipFeatures(features=features, mask=mask, call_count=n_new)


def batched_encode_selected(
    raw: torch.Tensor,
    cumulative_mask: torch.Tensor,
    prior_features: torch.Tensor,
    prior_mask: torch.Tensor,
    encoder: ExpensiveClipEncoder,
    gate_values: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched variant over [batch, clips, ...] tensors.

    Returns (features, per-video new-encode counts). Padding rows must never
    appear in ``cumulative_mask``.
    """
    mask = cumulative_mask.bool()
    if (prior_mask & ~mask).any():
        raise ValueError("cumulative selection mask shrank between steps")
    new = mask & ~prior_mask
    features = prior_features.clone()
    if int(new.sum()):
        rows = encoder(raw[new])
        if gate_values is not None:
            rows = rows * gate_values[new].unsqueeze(-1)
        features[new] = rows
    return features, new.sum(dim=1)


def semantic_matrix_to_tensor(matrix: np.ndarray) -> torch.Tensor:
    """Torch view of a (read-only) semantic index matrix."""
    return torch.from_numpy(np.array(matrix, dtype=np.float32, copy=True))
