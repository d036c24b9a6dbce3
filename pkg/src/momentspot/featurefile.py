"""On-disk container for per-clip feature matrices.

Layout: a short ASCII manifest (one ``key: value`` pair per line) terminated
by a ``---`` line, followed by the raw payload as row-major little-endian
32-bit IEEE floats. The manifest names the video, the feature role, the dtype
tag and the array shape, so files are self-describing and the payload length
can be validated byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFileError

MAGIC = "MOMENTSPOT-FEATURES"
VERSION = 1
DTYPE_TAG = "f32le"
ROLES = ("background", "appearance", "motion", "clip", "embedding")

_SEPARATOR = b"---\n"


@dataclass
class FeatureFile:
    """A named feature matrix: which video it belongs to and what the rows mean."""

    video_id: str
    role: str
    array: np.ndarray

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown feature role {self.role!r}; expected one of {ROLES}")
        self.array = np.ascontiguousarray(self.array, dtype=np.float32)


def write_feature_file(path: str | Path, feature: FeatureFile) -> None:
    array = feature.array
    payload = array.astype("<f4", copy=False).tobytes(order="C")
    shape = " ".join(str(d) for d in array.shape)
    manifest = (
        f"{MAGIC} {VERSION}\n"
        f"video_id: {feature.video_id}\n"
        f"role: {feature.role}\n"
        f"dtype: {DTYPE_TAG}\n"
        f"shape: {shape}\n"
    )
    with open(path, "wb") as fh:
        fh.write(manifest.encode("ascii"))
        fh.write(_SEPARATOR)
        fh.write(payload)


def read_feature_file(path: str | Path) -> FeatureFile:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(_SEPARATOR)
    if sep < 0:
        raise CorruptFileError(f"{path}: missing manifest separator")
    try:
        manifest = blob[:sep].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptFileError(f"{path}: manifest is not ASCII") from exc
    payload = blob[sep + len(_SEPARATOR):]

    lines = manifest.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise CorruptFileError(f"{path}: bad magic line {lines[0] if lines else ''!r}")
    version = lines[0].removeprefix(MAGIC).strip()
    if version != str(VERSION):
        raise CorruptFileError(f"{path}: unsupported container version {version!r}")

    fields: dict[str, str] = {}
    for line in lines[1:]:
        key, _, value = line.partition(":")
        if not _:
            raise CorruptFileError(f"{path}: malformed manifest line {line!r}")
        fields[key.strip()] = value.strip()
    for required in ("video_id", "role", "dtype", "shape"):
        if required not in fields:
            raise CorruptFileError(f"{path}: manifest missing {required!r}")
    if fields["dtype"] != DTYPE_TAG:
        raise CorruptFileError(f"{path}: unsupported dtype tag {fields['dtype']!r}")
    if fields["role"] not in ROLES:
        raise CorruptFileError(f"{path}: unknown role {fields['role']!r}")

    try:
        shape = tuple(int(d) for d in fields["shape"].split())
    except ValueError as exc:
        raise CorruptFileError(f"{path}: malformed shape {fields['shape']!r}") from exc
    if not shape or any(d < 0 for d in shape):
        raise CorruptFileError(f"{path}: malformed shape {fields['shape']!r}")

    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise CorruptFileError(
            f"{path}: payload length mismatch, expected {expected} bytes "
            f"for shape {shape}, got {len(payload)}"
        )
    array = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return FeatureFile(video_id=fields["video_id"], role=fields["role"], array=array)
