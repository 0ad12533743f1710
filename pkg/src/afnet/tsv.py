"""Tab-separated interchange files: manifests, score files, key files.

All files are UTF-8 with LF line endings and no header row.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .scoring import LABEL_NAMES, ScoreSet

UNKNOWN_LABEL = "-"


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    label: str = UNKNOWN_LABEL


def _rows(path: str | Path, n_fields: int) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    rows = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise DataError(f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(fields)}")
        rows.append(fields)
    return rows


def _write(path: str | Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """``utt_id<TAB>path<TAB>label``; relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    entries = []
    for utt, p, label in _rows(path, 3):
        if label not in LABEL_NAMES and label != UNKNOWN_LABEL:
            raise DataError(f"{path}: bad label {label!r} for {utt}")
        resolved = Path(p) if Path(p).is_absolute() else base / p
        entries.append(ManifestEntry(utt, str(resolved), label))
    if len({e.utt_id for e in entries}) != len(entries):
        raise DataError(f"{path}: duplicate utterance ids")
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    _write(path, ([e.utt_id, e.path, e.label] for e in entries))


def format_score(x: float) -> str:
    return repr(float(x))


def read_scores(path: str | Path) -> ScoreSet:
    rows = _rows(path, 2)
    try:
        values = np.array([float(s) for _, s in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric score ({exc})") from exc
    return ScoreSet([u for u, _ in rows], values)


def write_scores(path: str | Path, scores: ScoreSet) -> None:
    _write(path, ([u, format_score(s)] for u, s in zip(scores.ids, scores.scores)))


def read_key(path: str | Path) -> dict[str, int]:
    """``utt_id<TAB>label`` with label ``genuine`` or ``spoof``; returns 1/0 codes."""
    key = {}
    for utt, label in _rows(path, 2):
        if label not in LABEL_NAMES:
            raise DataError(f"{path}: bad label {label!r} for {utt}")
        key[utt] = LABEL_NAMES[label]
    return key


def write_key(path: str | Path, key: dict[str, int]) -> None:
    names = {v: k for k, v in LABEL_NAMES.items()}
    _write(path, ([u, names[v]] for u, v in key.items()))
