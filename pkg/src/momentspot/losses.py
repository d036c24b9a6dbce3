"""Training objectives.

Four families: boundary cross-entropy on the start/end distributions, binary
cross-entropy on the highlight scores against an extended window around the
target moment, a squared-deviation budget loss that holds the expected
selected fraction at a target (with a per-step regularizer that spreads the
budget across selection rounds), and a stop-gradient feature-matching loss
against a frozen full-computation teacher. The weighted sum combines them.

All losses accept padded batches with validity masks; statistics are averaged
per video first so long videos do not dominate.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective."""

    alpha: float = 0.4  # retrieval (boundary + highlight supervision)
    beta: float = 0.8  # selection budget
    gamma_w: float = 0.6  # feature distillation

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma_w) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.alpha == self.beta == self.gamma_w == 0:
            raise ConfigurationError("at least one loss weight must be positive")


@dataclass(frozen=True)
class BudgetConfig:
    """Target selected fraction and how strongly each step is held to its share."""

    rho: float = 0.3
    steps: int = 5
    per_step_weight: float = 1.0

    def validate(self, clip_count: int | None = None) -> None:
        if not 0 < self.rho <= 1:
            raise ConfigurationError(f"budget fraction must lie in (0, 1], got {self.rho}")
        if self.steps < 1:
            raise ConfigurationError("need at least one selection step")
        if self.per_step_weight < 0:
            raise ConfigurationError("per-step weight must be non-negative")
        if clip_count is not None and self.rho * clip_count < 1:
            raise ConfigurationError(
                f"budget {self.rho} yields under one clip for {clip_count}-clip videos"
            )


def boundary_loss(
    log_p_start: torch.Tensor,  # [batch, clips]
    log_p_end: torch.Tensor,
    gt_spans: torch.Tensor,  # [batch, 2] int64 clip indices
) -> torch.Tensor:
    """Sum of start and end cross-entropies, averaged over the batch."""
    n_clips = log_p_start.shape[1]
    if bool((gt_spans < 0).any()) or bool((gt_spans >= n_clips).any()):
        raise ValueError(f"ground-truth span index out of range [0, {n_clips})")
    idx = torch.arange(gt_spans.shape[0])
    return -(log_p_start[idx, gt_spans[:, 0]] + log_p_end[idx, gt_spans[:, 1]]).mean()


def make_qav_target(
    gt_span: tuple[int, int], extension: float, clip_count: int
) -> torch.Tensor:
    """Binary highlight target: ones on the moment extended by ``extension``
    of its length on each side (half-up rounding), clamped to the video."""
    if extension < 0:
        raise ValueError(f"extension must be non-negative, got {extension}")
    i_s, i_e = gt_span
    length = i_e - i_s + 1
    pad = int(extension * length + 0.5)
    lo = max(i_s - pad, 0)
    hi = min(i_e + pad, clip_count - 1)
    target = torch.zeros(clip_count)
    target[lo : hi + 1] = 1.0
    return target


def qav_loss(
    scores: torch.Tensor,  # [batch, clips] in (0, 1)
    targets: torch.Tensor,  # [batch, clips] binary
    clip_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean binary cross-entropy over (valid) clips, then over the batch."""
    eps = torch.finfo(scores.dtype).tiny
    ce = -(targets * (scores + eps).log() + (1 - targets) * (1 - scores + eps).log())
    if clip_mask is None:
        return ce.mean(dim=1).mean()
    valid = clip_mask.to(ce.dtype)
    per_video = (ce * valid).sum(dim=1) / valid.sum(dim=1)
    return per_video.mean()


def selection_loss(
    step_probabilities: torch.Tensor,  # [batch, steps, clips] relaxed selections
    cfg: BudgetConfig,
    clip_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Budget deviation plus per-step share regularizer, on relaxed probabilities.

    The budget term compares the target ``rho`` against the batch-mean of each
    video's per-clip selection mass summed over steps (so re-selecting a clip
    counts twice); the per-step term holds each round near ``rho / steps``.
    Relaxed values keep the loss differentiable; hard selections would not be.
    """
    cfg.validate()
    batch, steps, clips = step_probabilities.shape
    if clip_mask is None:
        clip_mask = torch.ones(batch, clips, dtype=torch.bool)
    valid = clip_mask.to(step_probabilities.dtype).unsqueeze(1)
    counts = clip_mask.sum(dim=1, keepdim=True).to(step_probabilities.dtype)
    # [batch, steps]: per-video fraction of clips selected in each step
    step_fractions = (step_probabilities * valid).sum(dim=2) / counts
    budget_term = (cfg.rho - step_fractions.sum(dim=1).mean()) ** 2
    per_step_target = cfg.rho / cfg.steps
    per_step_term = ((per_step_target - step_fractions.mean(dim=0)) ** 2).mean()
    return budget_term + cfg.per_step_weight * per_step_term


def distillation_loss(
    student_embedding: torch.Tensor,  # [batch, clips, hidden]
    teacher_embedding: torch.Tensor,
    clip_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Element-mean squared error against the detached teacher embedding."""
    if student_embedding.shape != teacher_embedding.shape:
        raise ValueError(
            f"embedding shapes differ: {tuple(student_embedding.shape)} vs "
            f"{tuple(teacher_embedding.shape)}"
        )
    sq = (student_embedding - teacher_embedding.detach()) ** 2
    if clip_mask is None:
        return sq.mean()
    valid = clip_mask.to(sq.dtype).unsqueeze(-1)
    per_video = (sq * valid).sum(dim=(1, 2)) / (valid.sum(dim=(1, 2)) * sq.shape[2])
    return per_video.mean()


def total_loss(
    retrieval: torch.Tensor,
    selection: torch.Tensor,
    distillation: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted combination; aborts loudly if any component went non-finite."""
    weights.validate()
    for name, value in (
        ("retrieval", retrieval),
        ("selection", selection),
        ("distillation", distillation),
    ):
        if not torch.isfinite(value).all():
            raise NumericError(f"{name} loss is non-finite")
    return weights.alpha * retrieval + weights.beta * selection + weights.gamma_w * distillation
