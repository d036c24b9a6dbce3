"""Recursive query-conditioned clip selection.

The spotter alternates between previewing the video (fusing the cheap
semantic index with whatever expensive clip features exist so far) and
committing a new set of clips to expensive encoding. Selection is a per-clip
binary gate: hard samples with straight-through gradients during training,
a deterministic probability threshold at evaluation. The fusion encoder used
for previewing is the same instance as the post-selection cross-modal
encoder, so previews and final reasoning share one representation space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .encoders import ExpensiveClipEncoder, MaskedClipFeatures, encode_selected_clips
from .errors import ConfigurationError, NumericError
from .fusion import CrossModalEncoder

TRAIN_SAMPLE = "train_sample"
EVAL_THRESHOLD = "eval_threshold"


@dataclass(frozen=True)
class GateConfig:
    """Selection-gate behaviour: sampling temperature, budget and step count."""

    temperature: float = 1.0
    budget: float = 0.3
    steps: int = 5
    mode: str = TRAIN_SAMPLE
    threshold: float = 0.5

    def validate(self, clip_count: int | None = None) -> None:
        if self.temperature <= 0:
            raise ConfigurationError(f"gate temperature must be positive, got {self.temperature}")
        if not 0 < self.budget <= 1:
            raise ConfigurationError(f"budget fraction must lie in (0, 1], got {self.budget}")
        if self.steps < 1:
            raise ConfigurationError(f"need at least one selection step, got {self.steps}")
        if self.mode not in (TRAIN_SAMPLE, EVAL_THRESHOLD):
            raise ConfigurationError(f"unknown gate mode {self.mode!r}")
        if not 0 < self.threshold < 1:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if clip_count is not None and self.budget * clip_count < 1:
            raise ConfigurationError(
                f"budget {self.budget} yields under one clip for {clip_count}-clip videos"
            )


def logistic_noise(
    shape: tuple[int, ...], generator: torch.Generator | None = None, dtype=torch.float32
) -> torch.Tensor:
    """Difference of two Gumbel(0,1) draws, sampled directly as a logistic variable."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    u = u.clamp(1e-7, 1 - 1e-7)
    return torch.log(u) - torch.log1p(-u)


def gate(
    logits: torch.Tensor,
    cfg: GateConfig,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Turn per-clip logits into binary selections.

    Returns ``(selected, relaxed)``. In ``train_sample`` mode each clip is a
    two-class Gumbel-Softmax sample at the configured temperature: ``selected``
    holds hard {0,1} values in the forward pass and routes gradients through
    ``relaxed`` (straight-through). In ``eval_threshold`` mode ``selected`` is
    the deterministic indicator sigmoid(logit) > threshold and ``relaxed`` is
    the sigmoid itself.
    """
    if not torch.isfinite(logits).all():
        raise NumericError("selection gate received non-finite logits")
    cfg.validate()
    if cfg.mode == EVAL_THRESHOLD:
        probs = torch.sigmoid(logits)
        return (probs > cfg.threshold).to(logits.dtype), probs
    if noise is None:
        noise = logistic_noise(tuple(logits.shape), generator, dtype=logits.dtype)
    relaxed = torch.sigmoid((logits + noise) / cfg.temperature)
    hard = (relaxed > 0.5).to(logits.dtype)
    selected = hard - relaxed.detach() + relaxed
    return selected, relaxed


@dataclass
class SelectionState:
    """Trajectory of one video through the selection recursion."""

    step: int
    cumulative_mask: torch.Tensor  # [clips] bool
    features: MaskedClipFeatures
    step_masks: list[torch.Tensor] = field(default_factory=list)
    step_probabilities: list[torch.Tensor] = field(default_factory=list)
    call_counts: list[int] = field(default_factory=list)

    @classmethod
    def initial(cls, clip_count: int, width: int, dtype=torch.float32) -> "SelectionState":
        return cls(
            step=0,
            cumulative_mask=torch.zeros(clip_count, dtype=torch.bool),
            features=MaskedClipFeatures.empty(clip_count, width, dtype=dtype),
        )

    @property
    def selected_fraction(self) -> float:
        return float(self.cumulative_mask.float().mean())

    @property
    def total_calls(self) -> int:
        return sum(self.call_counts)

    def trace(self) -> dict:
        """Structured per-step record for reports and qualitative inspection."""
        return {
            "steps": self.step,
            "selected_fraction": self.selected_fraction,
            "encoder_calls": self.total_calls,
            "per_step": [
                {
                    "step": i + 1,
                    "selected": torch.nonzero(m > 0.5).flatten().tolist(),
                    "probabilities": [round(float(p), 6) for p in probs],
                    "encoder_calls": calls,
                }
                for i, (m, probs, calls) in enumerate(
                    zip(self.step_masks, self.step_probabilities, self.call_counts)
                )
            ],
        }


class ClipSpotter(nn.Module):
    """Selection head over the shared fusion encoder's per-clip embedding.

    ``fusion`` and ``expensive`` are shared instances owned by the enclosing
    model; registering them here does not duplicate parameters.
    """

    def __init__(
        self,
        fusion: CrossModalEncoder,
        expensive: ExpensiveClipEncoder,
        selection_hidden: int,
    ):
        super().__init__()
        self.fusion = fusion
        self.expensive = expensive
        self.head = nn.Sequential(
            nn.Linear(fusion.hidden_dim, selection_hidden),
            nn.ReLU(),
            nn.Linear(selection_hidden, 1),
        )

    def logits(
        self,
        clip_features: torch.Tensor,  # [batch, clips, width] current masked features
        semantic: torch.Tensor,  # [batch, clips, width] projected semantic index
        query: torch.Tensor,  # [batch, words, width]
        clip_mask: torch.Tensor,
        query_mask: torch.Tensor,
    ) -> torch.Tensor:
        preview = torch.cat([clip_features, semantic], dim=2)
        fused = self.fusion(preview, query, clip_mask, query_mask)
        return self.head(fused).squeeze(-1)


def spotter_step(
    spotter: ClipSpotter,
    state: SelectionState,
    semantic: torch.Tensor,  # [clips, width] projected semantic index
    raw: torch.Tensor,  # [clips, raw_dim]
    query: torch.Tensor,  # [words, width]
    cfg: GateConfig,
    generator: torch.Generator | None = None,
) -> SelectionState:
    """One preview-and-select round for a single video."""
    clip_count = semantic.shape[0]
    ones = torch.ones(1, clip_count, dtype=torch.bool)
    qmask = torch.ones(1, query.shape[0], dtype=torch.bool)
    logits = spotter.logits(
        state.features.features.unsqueeze(0),
        semantic.unsqueeze(0),
        query.unsqueeze(0),
        ones,
        qmask,
    ).squeeze(0)
    selected, relaxed = gate(logits, cfg, generator)
    cumulative = state.cumulative_mask | (selected > 0.5)
    features = encode_selected_clips(
        raw,
        cumulative,
        state.features,
        spotter.expensive,
        gate_values=selected if cfg.mode == TRAIN_SAMPLE else None,
    )
    next_state = SelectionState(
        step=state.step + 1,
        cumulative_mask=cumulative,
        features=features,
        step_masks=state.step_masks + [selected.detach()],
        step_probabilities=state.step_probabilities + [relaxed.detach()],
        call_counts=state.call_counts + [features.call_count],
    )
    return next_state


def run_spotter(
    spotter: ClipSpotter,
    semantic: torch.Tensor,
    raw: torch.Tensor,
    query: torch.Tensor,
    cfg: GateConfig,
    generator: torch.Generator | None = None,
) -> SelectionState:
    """Run the selection recursion for one video.

    Starts from the empty selection (no clip encoded), runs at most
    ``cfg.steps`` rounds, and halts early once every clip is selected.
    """
    cfg.validate(semantic.shape[0])
    state = SelectionState.initial(semantic.shape[0], spotter.fusion.video_dim // 2, semantic.dtype)
    for _ in range(cfg.steps):
        state = spotter_step(spotter, state, semantic, raw, query, cfg, generator)
        if bool(state.cumulative_mask.all()):
            break
    return state
