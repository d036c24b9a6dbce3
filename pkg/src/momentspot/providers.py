"""Cheap per-clip feature providers and semantic-index assembly.

The semantic index previews a video with three inexpensive per-clip streams:
background and appearance descriptors taken from one sampled image per clip,
and a motion descriptor derived from each clip's start and end frames. The
providers are pluggable; the synthetic ones read the planted corpus blocks,
and a file-backed provider reads the same streams from feature containers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import SyntheticSample
from .errors import ConfigurationError
from .featurefile import read_feature_file


class BamProvider(Protocol):
    role: str
    dim: int

    def clip_features(self, sample: SyntheticSample) -> np.ndarray:
        """Per-clip feature rows, shape [clip_count, dim]."""
        ...


@dataclass
class SemanticIndex:
    """The per-video preview matrix, computed once and read-only thereafter."""

    video_id: str
    matrix: np.ndarray  # [clip_count, d_b + d_a + d_m], float32

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        self.matrix.setflags(write=False)


class PlantedFeatureProvider:
    """Reads one planted stream off a synthetic sample.

    ``calls`` counts invocations so tests can assert the index is computed
    exactly once per video.
    """

    _BLOCK = {"background": 0, "appearance": 1, "motion": 2}

    def __init__(self, role: str, dim: int):
        if role not in self._BLOCK:
            raise ConfigurationError(f"unknown semantic stream {role!r}")
        self.role = role
        self.dim = dim
        self.calls = 0

    def clip_features(self, sample: SyntheticSample) -> np.ndarray:
        self.calls += 1
        return sample.bam_features[self._BLOCK[self.role]]


class FeatureFileProvider:
    """Reads one stream from ``<dir>/<video_id>.<role>.msf`` containers."""

    def __init__(self, role: str, dim: int, directory: str | Path):
        self.role = role
        self.dim = dim
        self.directory = Path(directory)
        self.calls = 0

    def clip_features(self, sample: SyntheticSample) -> np.ndarray:
        self.calls += 1
        path = self.directory / f"{sample.annotation.video_id}.{self.role}.msf"
        return read_feature_file(path).array


def planted_providers(config) -> tuple[PlantedFeatureProvider, ...]:
    """The default provider triple matching a corpus config's stream dims."""
    return (
        PlantedFeatureProvider("background", config.background_dim),
        PlantedFeatureProvider("appearance", config.appearance_dim),
        PlantedFeatureProvider("motion", config.motion_dim),
    )


def semantic_index(
    sample: SyntheticSample,
    providers: tuple[BamProvider, BamProvider, BamProvider],
) -> SemanticIndex:
    """Concatenate the three cheap streams into the per-video preview matrix."""
    c = sample.geometry.clip_count
    blocks = []
    for provider in providers:
        rows = np.asarray(provider.clip_features(sample), dtype=np.float32)
        if rows.shape != (c, provider.dim):
            raise ConfigurationError(
                f"{sample.annotation.video_id}: provider {provider.role!r} returned "
                f"shape {rows.shape}, expected {(c, provider.dim)}"
            )
        blocks.append(rows)
    return SemanticIndex(
        video_id=sample.annotation.video_id,
        matrix=np.concatenate(blocks, axis=1),
    )
