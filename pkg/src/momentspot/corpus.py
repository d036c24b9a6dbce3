"""Synthetic planted-moment corpus and real annotation-format ingestion.

Each synthetic sample is one (video, query, moment) triple. The video is
represented purely by per-clip feature matrices: a cheap three-stream
semantic-index block (background / appearance / motion) and a richer raw
clip-feature block that stands in for an expensive encoder's input. Clips
inside the ground-truth moment are drawn around a topic prototype vector and
the query tokens come from that topic's region of the vocabulary, so the
moment is recoverable from the features by construction and the strength of
the correlation is a single ``margin`` knob.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .featurefile import FeatureFile, read_feature_file, write_feature_file
from .geometry import ClipGeometry, clip_partition, span_to_time, timestamps_to_clip_span

UNK_TOKEN = 0

_WORD_RE = re.compile(r"[a-z0-9']+")


@dataclass(frozen=True)
class Annotation:
    """One retrieval example: a video, a tokenized query and the target span in seconds."""

    video_id: str
    duration: float
    span: tuple[float, float]
    query_tokens: tuple[int, ...]
    query_text: str

    def __post_init__(self) -> None:
        start, end = self.span
        if self.duration <= 0:
            raise ValueError(f"{self.video_id}: duration must be positive, got {self.duration}")
        if not 0 <= start < end <= self.duration:
            raise ValueError(
                f"{self.video_id}: span {self.span} violates 0 <= start < end <= {self.duration}"
            )
        if len(self.query_tokens) < 1:
            raise ValueError(f"{self.video_id}: query must contain at least one token")


@dataclass
class SyntheticSample:
    """A generated sample: annotation plus the planted per-clip feature blocks."""

    annotation: Annotation
    geometry: ClipGeometry
    raw_clip_features: np.ndarray
    bam_features: tuple[np.ndarray, np.ndarray, np.ndarray]
    latent_topic: int

    @property
    def clip_span(self) -> tuple[int, int]:
        return timestamps_to_clip_span(
            self.annotation.span, self.annotation.duration, self.geometry
        )


@dataclass(frozen=True)
class CorpusConfig:
    """Knobs of the synthetic generator.

    ``margin`` controls the expected cosine similarity between in-moment
    feature rows and their topic prototype; out-of-moment rows are either
    pure noise or (with probability ``distractor_rate``) planted around a
    different topic's prototype, so selection has to be query-conditioned.
    """

    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    frame_count_range: tuple[int, int] = (80, 200)
    vocab_size: int = 120
    n_topics: int = 8
    background_dim: int = 16
    appearance_dim: int = 16
    motion_dim: int = 16
    raw_dim: int = 32
    margin: float = 0.5
    query_length_range: tuple[int, int] = (3, 8)
    moment_fraction_range: tuple[float, float] = (0.18, 0.42)
    distractor_rate: float = 0.5
    frames_per_second: float = 8.0

    @property
    def n_samples(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def semantic_dim(self) -> int:
        return self.background_dim + self.appearance_dim + self.motion_dim

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigurationError("corpus must contain at least one sample")
        # token id 0 is reserved for UNK/padding
        usable_vocab = self.vocab_size - 1
        if self.n_topics > usable_vocab:
            raise ConfigurationError(
                f"topic count {self.n_topics} exceeds usable vocabulary {usable_vocab}"
            )
        if self.n_topics < 1:
            raise ConfigurationError("need at least one topic")
        if not 0.0 <= self.margin <= 1.0:
            raise ConfigurationError(f"margin must lie in [0, 1], got {self.margin}")
        lo, hi = self.frame_count_range
        if lo < 16 or hi < lo:
            raise ConfigurationError(f"bad frame count range {self.frame_count_range}")
        flo, fhi = self.moment_fraction_range
        if not 0 < flo <= fhi < 1:
            raise ConfigurationError(f"bad moment fraction range {self.moment_fraction_range}")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ConfigurationError(f"bad distractor rate {self.distractor_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusConfig":
        kwargs = dict(data)
        for key in ("frame_count_range", "query_length_range", "moment_fraction_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class TopicPrototypes:
    """Per-topic unit vectors for each feature block, shared across a whole corpus."""

    background: np.ndarray  # [topics, background_dim]
    appearance: np.ndarray
    motion: np.ndarray
    raw: np.ndarray

    def semantic(self, topic: int) -> np.ndarray:
        """Concatenated (background, appearance, motion) prototype of one topic."""
        return np.concatenate(
            [self.background[topic], self.appearance[topic], self.motion[topic]]
        )


def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((rows, dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m.astype(np.float32)


def topic_prototypes(seed: int, config: CorpusConfig) -> TopicPrototypes:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    k = config.n_topics
    return TopicPrototypes(
        background=_unit_rows(rng, k, config.background_dim),
        appearance=_unit_rows(rng, k, config.appearance_dim),
        motion=_unit_rows(rng, k, config.motion_dim),
        raw=_unit_rows(rng, k, config.raw_dim),
    )


def _planted_row(rng: np.random.Generator, proto: np.ndarray, margin: float) -> np.ndarray:
    """One feature row with expected cosine similarity ~margin to ``proto``."""
    dim = proto.shape[0]
    noise = rng.standard_normal(dim) / np.sqrt(dim)
    return (margin * proto + np.sqrt(max(0.0, 1.0 - margin**2)) * noise).astype(np.float32)


def topic_vocab_region(topic: int, config: CorpusConfig) -> tuple[int, int]:
    """Half-open token-id range owned by ``topic`` (id 0 stays reserved)."""
    region = (config.vocab_size - 1) // config.n_topics
    start = 1 + topic * region
    return start, start + region


def generate_synthetic_corpus(seed: int, config: CorpusConfig) -> list[SyntheticSample]:
    """Deterministically generate the full corpus for ``(seed, config)``.

    Per-sample randomness comes from independent child seeds, so the stream
    is reproducible bit-for-bit and insensitive to generation order.
    """
    config.validate()
    protos = topic_prototypes(seed, config)
    samples = []
    for index in range(config.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, index]))
        samples.append(_generate_sample(rng, index, protos, config))
    return samples


def _generate_sample(
    rng: np.random.Generator, index: int, protos: TopicPrototypes, config: CorpusConfig
) -> SyntheticSample:
    topic = int(rng.integers(config.n_topics))
    lo, hi = config.frame_count_range
    frame_count = int(rng.integers(lo, hi + 1))
    geom = clip_partition(frame_count)
    duration = frame_count / config.frames_per_second

    flo, fhi = config.moment_fraction_range
    fraction = rng.uniform(flo, fhi)
    start_frac = rng.uniform(0.0, 1.0 - fraction)
    drawn = (start_frac * duration, (start_frac + fraction) * duration)
    # Snap the annotated moment to the clip grid: planted features live on
    # whole clips, so the grid-aligned span is where the signal actually is.
    i_s, i_e = timestamps_to_clip_span(drawn, duration, geom)
    span = span_to_time((i_s, i_e), geom, duration)

    qlo, qhi = config.query_length_range
    n_tokens = int(rng.integers(qlo, qhi + 1))
    region = topic_vocab_region(topic, config)
    tokens = tuple(int(t) for t in rng.integers(region[0], region[1], size=n_tokens))
    query_text = " ".join(f"w{t}" for t in tokens)

    annotation = Annotation(
        video_id=f"synth{index:05d}",
        duration=duration,
        span=span,
        query_tokens=tokens,
        query_text=query_text,
    )

    c = geom.clip_count

    def block(proto_rows: np.ndarray, dim: int) -> np.ndarray:
        rows = np.empty((c, dim), dtype=np.float32)
        for i in range(c):
            if i_s <= i <= i_e:
                rows[i] = _planted_row(rng, proto_rows[topic], config.margin)
            elif config.n_topics > 1 and rng.uniform() < config.distractor_rate:
                other = int(rng.integers(config.n_topics - 1))
                if other >= topic:
                    other += 1
                rows[i] = _planted_row(rng, proto_rows[other], config.margin)
            else:
                rows[i] = _planted_row(rng, proto_rows[topic], 0.0)
        return rows

    bam = (
        block(protos.background, config.background_dim),
        block(protos.appearance, config.appearance_dim),
        block(protos.motion, config.motion_dim),
    )
    raw = block(protos.raw, config.raw_dim)

    return SyntheticSample(
        annotation=annotation,
        geometry=geom,
        raw_clip_features=raw,
        bam_features=bam,
        latent_topic=topic,
    )


@dataclass
class CorpusSplits:
    train: list[SyntheticSample]
    val: list[SyntheticSample]
    test: list[SyntheticSample]


def split_corpus(samples: list[SyntheticSample], config: CorpusConfig) -> CorpusSplits:
    """Deterministic index partition: first train, then val, then test."""
    if len(samples) != config.n_samples:
        raise DataError(
            f"corpus has {len(samples)} samples but config declares {config.n_samples}"
        )
    a, b = config.n_train, config.n_train + config.n_val
    return CorpusSplits(train=samples[:a], val=samples[a:b], test=samples[b:])


# ---------------------------------------------------------------------------
# Annotation-format ingestion
# ---------------------------------------------------------------------------


def build_vocab(texts: list[str]) -> dict[str, int]:
    """Word -> id mapping over all words seen; id 0 stays reserved for UNK."""
    words = sorted({w for text in texts for w in _WORD_RE.findall(text.lower())})
    return {w: i + 1 for i, w in enumerate(words)}


def tokenize(text: str, vocab: dict[str, int]) -> tuple[int, ...]:
    return tuple(vocab.get(w, UNK_TOKEN) for w in _WORD_RE.findall(text.lower()))


@dataclass
class AnnotationLoadReport:
    """Result of parsing an annotation file: kept records plus per-line skip reasons."""

    annotations: list[Annotation] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


def load_annotations(
    path: str | Path,
    fmt: str,
    vocab: dict[str, int] | None = None,
    durations: dict[str, float] | None = None,
) -> AnnotationLoadReport:
    """Parse an annotation file in ``json`` or ``charades_text`` format.

    Records violating the span invariants are skipped and reported with their
    line (or record) number rather than failing the whole file. The charades
    text grammar is ``video_id start end##sentence``; that format carries no
    video duration, so the duration comes from the optional ``durations``
    mapping and otherwise defaults to the span end.
    """
    path = Path(path)
    if fmt == "json":
        records = _read_json_records(path)
    elif fmt == "charades_text":
        records = _read_charades_records(path, durations or {})
    else:
        raise ConfigurationError(f"unknown annotation format {fmt!r}")

    report = AnnotationLoadReport()
    texts = [r[4] for r in records]
    if vocab is None:
        vocab = build_vocab(texts)
    for lineno, video_id, duration, span, sentence in records:
        try:
            annotation = Annotation(
                video_id=video_id,
                duration=duration,
                span=span,
                query_tokens=tokenize(sentence, vocab),
                query_text=sentence,
            )
        except ValueError as exc:
            report.skipped.append((lineno, str(exc)))
            continue
        report.annotations.append(annotation)
    return report


def _read_json_records(path: Path) -> list[tuple[int, str, float, tuple[float, float], str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse annotation JSON: {exc}") from exc
    if payload == [] or payload == {}:
        return []
    if not isinstance(payload, list):
        raise DataError(f"{path}: expected a JSON list of annotation records")
    records = []
    for i, rec in enumerate(payload, start=1):
        try:
            records.append(
                (
                    i,
                    str(rec["video_id"]),
                    float(rec["duration"]),
                    (float(rec["timestamps"][0]), float(rec["timestamps"][1])),
                    str(rec["sentence"]),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"{path}: record {i} malformed: {exc}") from exc
    return records


def _read_charades_records(
    path: Path, durations: dict[str, float]
) -> list[tuple[int, str, float, tuple[float, float], str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read annotation file: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        head, sep, sentence = line.partition("##")
        parts = head.split()
        if not sep or len(parts) != 3:
            raise DataError(f"{path}:{lineno}: malformed line {line!r}")
        video_id = parts[0]
        try:
            start, end = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad timestamps in {line!r}") from exc
        duration = durations.get(video_id, end)
        records.append((lineno, video_id, duration, (start, end), sentence.strip()))
    return records


# ---------------------------------------------------------------------------
# Corpus directory layout (used by the CLI `synth` command)
# ---------------------------------------------------------------------------

_ROLE_TO_BLOCK = {"background": 0, "appearance": 1, "motion": 2}


def save_corpus(samples: list[SyntheticSample], config: CorpusConfig, seed: int, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": seed,
        "config": config.to_dict(),
        "samples": [
            {
                "video_id": s.annotation.video_id,
                "duration": s.annotation.duration,
                "timestamps": list(s.annotation.span),
                "sentence": s.annotation.query_text,
                "tokens": list(s.annotation.query_tokens),
                "frame_count": s.geometry.frame_count,
                "topic": s.latent_topic,
            }
            for s in samples
        ],
    }
    with open(out / "corpus.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    for s in samples:
        vid = s.annotation.video_id
        for role, idx in _ROLE_TO_BLOCK.items():
            write_feature_file(
                out / "features" / f"{vid}.{role}.msf",
                FeatureFile(video_id=vid, role=role, array=s.bam_features[idx]),
            )
        write_feature_file(
            out / "features" / f"{vid}.clip.msf",
            FeatureFile(video_id=vid, role="clip", array=s.raw_clip_features),
        )


def load_corpus(corpus_dir: str | Path) -> tuple[list[SyntheticSample], CorpusConfig, int]:
    out = Path(corpus_dir)
    meta_path = out / "corpus.json"
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{meta_path}: cannot read corpus metadata: {exc}") from exc
    config = CorpusConfig.from_dict(meta["config"])
    samples = []
    for rec in meta["samples"]:
        vid = rec["video_id"]
        geom = clip_partition(int(rec["frame_count"]))
        blocks = {}
        for role in ("background", "appearance", "motion", "clip"):
            ff = read_feature_file(out / "features" / f"{vid}.{role}.msf")
            if ff.video_id != vid:
                raise DataError(f"{vid}: feature file names video {ff.video_id!r}")
            if ff.array.shape[0] != geom.clip_count:
                raise DataError(
                    f"{vid}: {role} features have {ff.array.shape[0]} rows, "
                    f"geometry expects {geom.clip_count}"
                )
            blocks[role] = ff.array
        annotation = Annotation(
            video_id=vid,
            duration=float(rec["duration"]),
            span=(float(rec["timestamps"][0]), float(rec["timestamps"][1])),
            query_tokens=tuple(int(t) for t in rec["tokens"]),
            query_text=rec["sentence"],
        )
        samples.append(
            SyntheticSample(
                annotation=annotation,
                geometry=geom,
                raw_clip_features=blocks["clip"],
                bam_features=(blocks["background"], blocks["appearance"], blocks["motion"]),
                latent_topic=int(rec.get("topic", -1)),
            )
        )
    return samples, config, int(meta["seed"])
