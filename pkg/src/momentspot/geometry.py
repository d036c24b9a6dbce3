"""Clip geometry: how an untrimmed video decomposes into overlapping clips.

A clip is 16 consecutive frames; consecutive clips overlap by 8 frames, so a
video with T frames (T padded up to a multiple of 8) yields C = T/8 - 1 clips.
Everything downstream (selection masks, span labels, predictions) is indexed
by clip position, and these helpers are the single source of truth for the
mapping between seconds and clip indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

CLIP_LENGTH = 16
CLIP_STRIDE = 8

# Guards the floor/ceil index arithmetic against float representation noise
# (e.g. (j+1)/C*duration coming back as j+1 +/- 1 ulp on the inverse trip).
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class ClipGeometry:
    """Clip layout of one video.

    ``frame_count`` is the original length; ``padded_frame_count`` is rounded
    up to the next multiple of 8 (at least 16) by repeating the last frame.
    """

    frame_count: int
    padded_frame_count: int
    clip_count: int
    clip_length: int = CLIP_LENGTH
    stride: int = CLIP_STRIDE

    @property
    def padding(self) -> int:
        return self.padded_frame_count - self.frame_count

    def frame_range(self, clip: int) -> tuple[int, int]:
        """Half-open frame window [8*i, 8*i + 16) of clip ``clip``, in padded coordinates."""
        if not 0 <= clip < self.clip_count:
            raise IndexError(f"clip {clip} out of range [0, {self.clip_count})")
        start = clip * self.stride
        return start, start + self.clip_length

    def frame_indices(self, clip: int) -> list[int]:
        """Source frame indices backing ``clip``; padded positions repeat the last real frame."""
        start, end = self.frame_range(clip)
        last = self.frame_count - 1
        return [min(f, last) for f in range(start, end)]


def clip_partition(frame_count: int) -> ClipGeometry:
    """Partition a ``frame_count``-frame video into overlapping 16-frame clips.

    Videos shorter than one clip are rejected. Frame counts that are not a
    multiple of 8 are padded up by repeating the final frame, which keeps the
    C = T/8 - 1 arithmetic exact without dropping content.
    """
    if frame_count < CLIP_LENGTH:
        raise ValueError(
            f"video too short to form one clip: {frame_count} frames < {CLIP_LENGTH}"
        )
    padded = ((frame_count + CLIP_STRIDE - 1) // CLIP_STRIDE) * CLIP_STRIDE
    clip_count = padded // CLIP_STRIDE - 1
    return ClipGeometry(
        frame_count=frame_count,
        padded_frame_count=padded,
        clip_count=clip_count,
    )


def timestamps_to_clip_span(
    span: tuple[float, float], duration: float, geom: ClipGeometry
) -> tuple[int, int]:
    """Map a (start, end) moment in seconds onto inclusive clip indices.

    The start index floors and the end index ceils so the labeled clip span
    always covers the full moment. Result satisfies 0 <= i_s <= i_e < C.
    """
    start, end = span
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if not 0 <= start < end <= duration:
        raise ValueError(f"invalid span {span} for duration {duration}")
    c = geom.clip_count
    i_s = int(math.floor(start / duration * c + _EDGE_EPS))
    i_s = min(max(i_s, 0), c - 1)
    i_e = int(math.ceil(end / duration * c - _EDGE_EPS)) - 1
    i_e = min(max(i_e, i_s), c - 1)
    return i_s, i_e


def span_to_time(
    clip_span: tuple[int, int], geom: ClipGeometry, duration: float
) -> tuple[float, float]:
    """Inverse of :func:`timestamps_to_clip_span`: clip indices back to seconds."""
    i_s, i_e = clip_span
    c = geom.clip_count
    if not 0 <= i_s <= i_e < c:
        raise ValueError(f"invalid clip span {clip_span} for {c} clips")
    return i_s / c * duration, (i_e + 1) / c * duration
