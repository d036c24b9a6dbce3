"""The assembled retrieval network and its batched forward passes.

One ``MomentModel`` covers both roles: built without a spotter it encodes
every clip (the teacher / full-computation path), built with one it runs the
selection recursion and encodes only the clips the spotter committed to. The
cross-modal encoder instance is shared between the spotter's preview path and
the post-selection interaction.

Batches are padded to the longest video/query and carry validity masks; all
outputs are exactly zero (or probability-masked) at padded positions.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np
import torch
from torch import nn

from .corpus import SyntheticSample
from .encoders import (
    ExpensiveClipEncoder,
    QueryEncoder,
    batched_encode_selected,
    semantic_matrix_to_tensor,
)
from .errors import ConfigurationError
from .fusion import CrossModalEncoder, HighlightHead, SpanHead, predict_span, SpanPrediction
from .geometry import ClipGeometry
from .losses import make_qav_target
from .providers import BamProvider, semantic_index
from .spotter import EVAL_THRESHOLD, TRAIN_SAMPLE, ClipSpotter, GateConfig, gate


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions; every field round-trips through checkpoints."""

    vocab_size: int
    semantic_dim: int = 48
    raw_dim: int = 32
    embed_dim: int = 300
    width: int = 32
    hidden_dim: int = 64
    heads: int = 4
    max_clips: int = 64
    selection_hidden: int = 64
    expensive_hidden: int = 64
    dropout: float = 0.0
    train_query_encoder: bool = False
    train_expensive_encoder: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class PreparedSample:
    """Per-video tensors, with the semantic index computed exactly once."""

    video_id: str
    semantic: torch.Tensor  # [clips, semantic_dim]
    raw: torch.Tensor  # [clips, raw_dim]
    tokens: torch.Tensor  # [words] int64
    gt_span: tuple[int, int]
    gt_seconds: tuple[float, float]
    duration: float
    geometry: ClipGeometry


def prepare_samples(
    samples: list[SyntheticSample],
    providers: tuple[BamProvider, BamProvider, BamProvider],
) -> list[PreparedSample]:
    prepared = []
    for s in samples:
        index = semantic_index(s, providers)
        prepared.append(
            PreparedSample(
                video_id=s.annotation.video_id,
                semantic=semantic_matrix_to_tensor(index.matrix),
                raw=torch.from_numpy(np.ascontiguousarray(s.raw_clip_features, dtype=np.float32)),
                tokens=torch.tensor(s.annotation.query_tokens, dtype=torch.int64),
                gt_span=s.clip_span,
                gt_seconds=s.annotation.span,
                duration=s.annotation.duration,
                geometry=s.geometry,
            )
        )
    return prepared


@dataclass
class Batch:
    semantic: torch.Tensor  # [batch, clips, semantic_dim]
    raw: torch.Tensor  # [batch, clips, raw_dim]
    tokens: torch.Tensor  # [batch, words]
    clip_mask: torch.Tensor  # [batch, clips] bool
    query_mask: torch.Tensor  # [batch, words] bool
    gt_spans: torch.Tensor  # [batch, 2] int64
    qav_targets: torch.Tensor  # [batch, clips]
    durations: list[float]
    geometries: list[ClipGeometry]

    @property
    def size(self) -> int:
        return self.semantic.shape[0]


def collate(items: list[PreparedSample], qav_extension: float = 0.25) -> Batch:
    n = len(items)
    c_max = max(p.semantic.shape[0] for p in items)
    w_max = max(len(p.tokens) for p in items)
    d_sem, d_raw = items[0].semantic.shape[1], items[0].raw.shape[1]

    semantic = torch.zeros(n, c_max, d_sem)
    raw = torch.zeros(n, c_max, d_raw)
    tokens = torch.zeros(n, w_max, dtype=torch.int64)
    clip_mask = torch.zeros(n, c_max, dtype=torch.bool)
    query_mask = torch.zeros(n, w_max, dtype=torch.bool)
    gt_spans = torch.zeros(n, 2, dtype=torch.int64)
    qav = torch.zeros(n, c_max)

    for i, p in enumerate(items):
        c, w = p.semantic.shape[0], len(p.tokens)
        semantic[i, :c] = p.semantic
        raw[i, :c] = p.raw
        tokens[i, :w] = p.tokens
        clip_mask[i, :c] = True
        query_mask[i, :w] = True
        gt_spans[i] = torch.tensor(p.gt_span)
        qav[i, :c] = make_qav_target(p.gt_span, qav_extension, c)

    return Batch(
        semantic=semantic,
        raw=raw,
        tokens=tokens,
        clip_mask=clip_mask,
        query_mask=query_mask,
        gt_spans=gt_spans,
        qav_targets=qav,
        durations=[p.duration for p in items],
        geometries=[p.geometry for p in items],
    )


@dataclass
class ForwardOutput:
    log_p_start: torch.Tensor  # [batch, clips]
    log_p_end: torch.Tensor
    highlight_scores: torch.Tensor  # [batch, clips]
    fused: torch.Tensor  # [batch, clips, hidden] pre-highlight embedding
    cumulative_mask: torch.Tensor  # [batch, clips] bool, clips that were encoded
    encoder_calls: torch.Tensor  # [batch] int64
    step_relaxed: torch.Tensor | None = None  # [batch, steps, clips]
    step_hard: torch.Tensor | None = None

    def selected_fraction(self, clip_mask: torch.Tensor) -> torch.Tensor:
        counts = clip_mask.sum(dim=1).to(torch.float32)
        return self.cumulative_mask.sum(dim=1).to(torch.float32) / counts


# Large negative logit for padded positions: sigmoid underflows to ~0 and the
# logistic-noise tail cannot realistically flip it.
_PAD_LOGIT = -40.0


class MomentModel(nn.Module):
    """Query encoder + clip encoders + shared fusion + retrieval head.

    ``with_spotter=False`` builds the full-computation variant used as the
    distillation teacher.
    """

    def __init__(self, config: ModelConfig, with_spotter: bool = True):
        super().__init__()
        self.config = config
        self.query_encoder = QueryEncoder(
            config.vocab_size,
            config.embed_dim,
            config.width,
            frozen=not config.train_query_encoder,
        )
        self.expensive_encoder = ExpensiveClipEncoder(
            config.raw_dim,
            config.expensive_hidden,
            config.width,
            frozen=not config.train_expensive_encoder,
        )
        self.semantic_proj = nn.Linear(config.semantic_dim, config.width)
        self.cross_modal = CrossModalEncoder(
            video_dim=2 * config.width,
            query_dim=config.width,
            hidden_dim=config.hidden_dim,
            heads=config.heads,
            max_clips=config.max_clips,
            dropout=config.dropout,
        )
        self.highlight = HighlightHead(config.hidden_dim)
        self.span_head = SpanHead(config.hidden_dim, config.heads, dropout=config.dropout)
        self.spotter = (
            ClipSpotter(self.cross_modal, self.expensive_encoder, config.selection_hidden)
            if with_spotter
            else None
        )

    @property
    def has_spotter(self) -> bool:
        return self.spotter is not None

    def _streams(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        query = self.query_encoder(batch.tokens, batch.query_mask)
        semantic = self.semantic_proj(batch.semantic)
        semantic = semantic * batch.clip_mask.unsqueeze(-1).to(semantic.dtype)
        return query, semantic

    def _retrieve(
        self,
        clip_features: torch.Tensor,
        semantic: torch.Tensor,
        query: torch.Tensor,
        batch: Batch,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        fused = self.cross_modal(
            torch.cat([clip_features, semantic], dim=2),
            query,
            batch.clip_mask,
            batch.query_mask,
        )
        scores, scaled = self.highlight(fused)
        log_p_start, log_p_end = self.span_head(scaled, batch.clip_mask)
        return fused, scores, scaled, log_p_start, log_p_end

    def forward_full(self, batch: Batch) -> ForwardOutput:
        """Encode every clip (no selection); the teacher's forward pass."""
        query, semantic = self._streams(batch)
        clip_features = self.expensive_encoder(batch.raw)
        clip_features = clip_features * batch.clip_mask.unsqueeze(-1).to(clip_features.dtype)
        fused, scores, _, lps, lpe = self._retrieve(clip_features, semantic, query, batch)
        return ForwardOutput(
            log_p_start=lps,
            log_p_end=lpe,
            highlight_scores=scores,
            fused=fused,
            cumulative_mask=batch.clip_mask.clone(),
            encoder_calls=batch.clip_mask.sum(dim=1),
        )

    def forward_selective(
        self,
        batch: Batch,
        gate_cfg: GateConfig,
        generator: torch.Generator | None = None,
    ) -> ForwardOutput:
        """Run the selection recursion, then retrieve from the masked features."""
        if self.spotter is None:
            raise ConfigurationError("model was built without a spotter")
        gate_cfg.validate()
        query, semantic = self._streams(batch)
        n, c = batch.clip_mask.shape
        features = torch.zeros(n, c, self.config.width, dtype=semantic.dtype)
        cumulative = torch.zeros(n, c, dtype=torch.bool)
        relaxed_steps: list[torch.Tensor] = []
        hard_steps: list[torch.Tensor] = []
        calls = torch.zeros(n, dtype=torch.int64)

        for _ in range(gate_cfg.steps):
            logits = self.spotter.logits(
                features, semantic, query, batch.clip_mask, batch.query_mask
            )
            logits = logits.masked_fill(~batch.clip_mask, _PAD_LOGIT)
            selected, relaxed = gate(logits, gate_cfg, generator)
            pad_zero = batch.clip_mask.to(selected.dtype)
            selected = selected * pad_zero
            relaxed = relaxed * pad_zero
            new_cumulative = cumulative | (selected > 0.5)
            features, new_counts = batched_encode_selected(
                batch.raw,
                new_cumulative,
                features,
                cumulative,
                self.expensive_encoder,
                gate_values=selected if gate_cfg.mode == TRAIN_SAMPLE else None,
            )
            cumulative = new_cumulative
            calls = calls + new_counts
            relaxed_steps.append(relaxed)
            hard_steps.append(selected)
            if bool((cumulative | ~batch.clip_mask).all()):
                break

        fused, scores, _, lps, lpe = self._retrieve(features, semantic, query, batch)
        return ForwardOutput(
            log_p_start=lps,
            log_p_end=lpe,
            highlight_scores=scores,
            fused=fused,
            cumulative_mask=cumulative,
            encoder_calls=calls,
            step_relaxed=torch.stack(relaxed_steps, dim=1),
            step_hard=torch.stack(hard_steps, dim=1),
        )

    def forward_relaxed(
        self,
        batch: Batch,
        gate_cfg: GateConfig,
        noise: torch.Tensor,  # [steps, batch, clips] fixed logistic noise
    ) -> ForwardOutput:
        """Fully smooth surrogate of the selective pass for gradient checking.

        Soft gate values replace hard selections everywhere: features
        accumulate as soft-OR-weighted rows, so the whole pass is
        differentiable end to end. This is the path the straight-through
        estimator propagates gradients through.
        """
        if self.spotter is None:
            raise ConfigurationError("model was built without a spotter")
        query, semantic = self._streams(batch)
        n, c = batch.clip_mask.shape
        dtype = semantic.dtype
        valid = batch.clip_mask.to(dtype)
        encoded_all = self.expensive_encoder(batch.raw) * valid.unsqueeze(-1)
        features = torch.zeros(n, c, self.config.width, dtype=dtype)
        covered = torch.zeros(n, c, dtype=dtype)
        relaxed_steps = []

        for step in range(gate_cfg.steps):
            logits = self.spotter.logits(
                features, semantic, query, batch.clip_mask, batch.query_mask
            )
            logits = logits.masked_fill(~batch.clip_mask, _PAD_LOGIT)
            soft = torch.sigmoid((logits + noise[step]) / gate_cfg.temperature) * valid
            fresh = soft * (1 - covered)
            features = features + fresh.unsqueeze(-1) * encoded_all
            covered = covered + fresh
            relaxed_steps.append(soft)

        fused, scores, _, lps, lpe = self._retrieve(features, semantic, query, batch)
        return ForwardOutput(
            log_p_start=lps,
            log_p_end=lpe,
            highlight_scores=scores,
            fused=fused,
            cumulative_mask=covered > 0.5,
            encoder_calls=batch.clip_mask.sum(dim=1),
            step_relaxed=torch.stack(relaxed_steps, dim=1),
        )

    @torch.no_grad()
    def predict(
        self,
        batch: Batch,
        k: int = 5,
        gate_cfg: GateConfig | None = None,
    ) -> tuple[list[SpanPrediction], ForwardOutput]:
        """Deterministic evaluation: top-k clip spans for every batch item."""
        was_training = self.training
        self.eval()
        try:
            if self.has_spotter:
                cfg = gate_cfg or GateConfig()
                out = self.forward_selective(batch, replace(cfg, mode=EVAL_THRESHOLD))
            else:
                out = self.forward_full(batch)
        finally:
            self.train(was_training)
        predictions = []
        for i in range(batch.size):
            n_valid = int(batch.clip_mask[i].sum())
            predictions.append(
                predict_span(out.log_p_start[i, :n_valid], out.log_p_end[i, :n_valid], k)
            )
        return predictions, out


def build_model(config: ModelConfig, with_spotter: bool, seed: int) -> MomentModel:
    """Deterministic construction: same (config, seed) gives identical weights."""
    torch.manual_seed(seed)
    return MomentModel(config, with_spotter=with_spotter)


SHARED_MODULES = (
    "query_encoder",
    "expensive_encoder",
    "semantic_proj",
    "cross_modal",
    "highlight",
    "span_head",
)


def warm_start_from(student: MomentModel, teacher: MomentModel) -> None:
    """Copy every module the two variants share; the selection head stays fresh."""
    for name in SHARED_MODULES:
        getattr(student, name).load_state_dict(getattr(teacher, name).state_dict())
