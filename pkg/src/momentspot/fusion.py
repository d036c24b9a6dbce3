"""Cross-modal fusion and the retrieval head.

The fusion path runs one transformer-encoder block per stream (clips with
learned positional embeddings, query words), then bidirectional
context-query attention with a trilinear similarity, and projects
[x, A, x*A, x*B] down to the fused width. The same module instance is shared
between the clip selector and the post-selection interaction, which is what
makes both views of the video live in one representation space.

The retrieval head scores per-clip moment membership with a width-3 1-D
convolution (highlight scores rescale the fused rows) and predicts start/end
distributions over clip positions with a transformer block plus two linear
heads; spans are extracted by an exact exhaustive scan over ordered pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError
from .geometry import ClipGeometry

_NEG = -1e9  # additive mask value; exp() underflows to exactly 0 in float32


class TransformerBlock(nn.Module):
    """Post-norm encoder block: multi-head self-attention + feed-forward."""

    def __init__(self, dim: int, heads: int, ffn_ratio: int = 2, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_ratio * dim),
            nn.ReLU(),
            nn.Linear(ffn_ratio * dim, dim),
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # mask: [batch, n] bool, True = valid position
        attended, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.norm1(x + attended)
        x = self.norm2(x + self.ffn(x))
        return x * mask.unsqueeze(-1).to(x.dtype)


class CrossModalEncoder(nn.Module):
    """Fuses a clip-wise video stream with word-wise query features."""

    def __init__(
        self,
        video_dim: int,
        query_dim: int,
        hidden_dim: int,
        heads: int = 4,
        max_clips: int = 64,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.video_dim = video_dim
        self.query_dim = query_dim
        self.hidden_dim = hidden_dim
        self.max_clips = max_clips
        self.video_in = nn.Linear(video_dim, hidden_dim)
        self.query_in = nn.Linear(query_dim, hidden_dim)
        self.position = nn.Parameter(torch.randn(max_clips, hidden_dim) * 0.02)
        self.video_block = TransformerBlock(hidden_dim, heads, dropout=dropout)
        self.query_block = TransformerBlock(hidden_dim, heads, dropout=dropout)
        # trilinear similarity w . [x; q; x*q], split into three projections
        self.sim_x = nn.Linear(hidden_dim, 1, bias=False)
        self.sim_q = nn.Linear(hidden_dim, 1, bias=False)
        self.sim_xq = nn.Parameter(torch.empty(hidden_dim))
        nn.init.uniform_(self.sim_xq, -(hidden_dim**-0.5), hidden_dim**-0.5)
        self.out = nn.Linear(4 * hidden_dim, hidden_dim)

    def forward(
        self,
        video: torch.Tensor,  # [batch, clips, video_dim]
        query: torch.Tensor,  # [batch, words, query_dim]
        clip_mask: torch.Tensor,  # [batch, clips] bool
        query_mask: torch.Tensor,  # [batch, words] bool
    ) -> torch.Tensor:
        n_clips = video.shape[1]
        if n_clips > self.max_clips:
            raise ConfigurationError(
                f"video has {n_clips} clips, encoder supports at most {self.max_clips}"
            )
        if not (torch.isfinite(video).all() and torch.isfinite(query).all()):
            raise ValueError("non-finite values in cross-modal inputs")

        x = self.video_in(video) + self.position[:n_clips]
        x = self.video_block(x, clip_mask)
        q = self.query_block(self.query_in(query), query_mask)

        # similarity S[b, i, j] = w_x.x_i + w_q.q_j + w_xq.(x_i * q_j)
        sim = (
            self.sim_x(x)
            + self.sim_q(q).transpose(1, 2)
            + torch.bmm(x * self.sim_xq, q.transpose(1, 2))
        )
        row_mask = (~query_mask).unsqueeze(1).to(sim.dtype) * _NEG
        col_mask = (~clip_mask).unsqueeze(2).to(sim.dtype) * _NEG
        row_soft = torch.softmax(sim + row_mask, dim=2)  # over words
        col_soft = torch.softmax(sim + col_mask, dim=1)  # over clips

        video_to_query = torch.bmm(row_soft, q)
        query_to_video = torch.bmm(torch.bmm(row_soft, col_soft.transpose(1, 2)), x)

        fused = self.out(
            torch.cat([x, video_to_query, x * video_to_query, x * query_to_video], dim=2)
        )
        return fused * clip_mask.unsqueeze(-1).to(fused.dtype)


class HighlightHead(nn.Module):
    """Per-clip moment-membership scores that rescale the fused embedding."""

    def __init__(self, hidden_dim: int, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(hidden_dim, 1, kernel_size=kernel, padding=kernel // 2)

    def forward(self, fused: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (scores in (0, 1) per clip, row-rescaled embedding)."""
        logits = self.conv(fused.transpose(1, 2)).squeeze(1)
        scores = torch.sigmoid(logits)
        return scores, fused * scores.unsqueeze(-1)


class SpanHead(nn.Module):
    """Start/end log-distributions over clip positions."""

    def __init__(self, hidden_dim: int, heads: int = 4, dropout: float = 0.0):
        super().__init__()
        self.block = TransformerBlock(hidden_dim, heads, dropout=dropout)
        self.start = nn.Linear(hidden_dim, 1)
        self.end = nn.Linear(hidden_dim, 1)

    def forward(
        self, fused: torch.Tensor, clip_mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.block(fused, clip_mask)
        pad = (~clip_mask).to(h.dtype) * _NEG
        log_p_start = torch.log_softmax(self.start(h).squeeze(-1) + pad, dim=1)
        log_p_end = torch.log_softmax(self.end(h).squeeze(-1) + pad, dim=1)
        return log_p_start, log_p_end


@dataclass
class SpanPrediction:
    """Span head output for one video plus the exact top-k ordered pairs."""

    log_p_start: np.ndarray
    log_p_end: np.ndarray
    top_k: list[tuple[int, int, float]]  # (start clip, end clip, joint probability)


def top_k_spans(
    log_p_start: np.ndarray, log_p_end: np.ndarray, k: int
) -> list[tuple[int, int, float]]:
    """Exhaustive scan of all ordered (start <= end) pairs, best joint first.

    Exact by construction: every valid pair is scored, then sorted. ``k`` is
    clamped to the number of valid pairs.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    c = len(log_p_start)
    joint = np.asarray(log_p_start, dtype=np.float64)[:, None] + np.asarray(
        log_p_end, dtype=np.float64
    )[None, :]
    starts, ends = np.triu_indices(c)
    scores = joint[starts, ends]
    order = np.argsort(-scores, kind="stable")[: min(k, len(scores))]
    return [
        (int(starts[i]), int(ends[i]), float(np.exp(scores[i]))) for i in order
    ]


def predict_span(
    log_p_start: torch.Tensor, log_p_end: torch.Tensor, k: int
) -> SpanPrediction:
    """Package one video's span distributions with their exact top-k pairs."""
    lps = log_p_start.detach().cpu().numpy().astype(np.float64)
    lpe = log_p_end.detach().cpu().numpy().astype(np.float64)
    return SpanPrediction(log_p_start=lps, log_p_end=lpe, top_k=top_k_spans(lps, lpe, k))


def clip_pairs_to_times(
    pairs: list[tuple[int, int, float]], geom: ClipGeometry, duration: float
) -> list[tuple[float, float]]:
    from .geometry import span_to_time

    return [span_to_time((i, j), geom, duration) for i, j, _ in pairs]
