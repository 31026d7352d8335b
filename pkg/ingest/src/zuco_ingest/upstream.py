"""Reading and inspecting upstream serialized corpora.

The upstream layout is a pickled dict: subject id -> list of sentence
entries. Task-1 entries carry seven keys ('content', 'sentence level EEG',
'answer EEG', 'word', 'word tokens has fixation', 'word tokens with mask',
'word tokens all'); task-2 v2.0 entries carry six (no 'answer EEG').

Assumed word-entry layout (asserted by the converter, since the published
files leave the band/channel axis ordering to be confirmed):

    {'content': str,
     'rawEEG': float array, channels x time, or None when never fixated,
     'FFD' | 'GD' | 'TRT': float array, 8 bands x channels, or None}

'word tokens has fixation' is the ordered list of word strings that carry
fixation-gated signals.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEVEN_KEYS = (
    "content",
    "sentence level EEG",
    "answer EEG",
    "word",
    "word tokens has fixation",
    "word tokens with mask",
    "word tokens all",
)
SIX_KEYS = tuple(k for k in SEVEN_KEYS if k != "answer EEG")

OPAQUE_KEYS = ("answer EEG", "word tokens with mask", "word tokens all")

BAND_WINDOWS = ("FFD", "GD", "TRT")

#: (subjects, sentences per subject, keys per entry) of the published tasks
EXPECTED_SHAPES = ((12, 400, 7), (12, 300, 7), (18, 349, 6))


class UpstreamError(Exception):
    """File cannot be deserialized into the expected structure."""


def load_upstream(path: str | Path) -> dict[str, list[dict]]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = pickle.load(fh)
    except (OSError, pickle.UnpicklingError, EOFError) as exc:
        raise UpstreamError(f"cannot deserialize {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UpstreamError(f"{path}: top level must map subject ids to sentence lists")
    for sid, sentences in data.items():
        if not isinstance(sid, str) or not isinstance(sentences, list):
            raise UpstreamError(f"{path}: subject {sid!r} entry is not a sentence list")
    return data


@dataclass
class InspectionSummary:
    subject_count: int
    sentence_counts: dict[str, int]
    key_sets: dict[tuple[str, ...], int]  # sorted key tuple -> entry count
    sentence_eeg_shapes: list[tuple[int, ...]]
    word_eeg_shapes: list[tuple[int, ...]]
    band_shapes: list[tuple[int, ...]]
    warnings: list[str] = field(default_factory=list)

    def shape_triplet(self) -> tuple[int, int | None, int | None]:
        """(subjects, sentences per subject, keys per entry) when uniform."""
        counts = set(self.sentence_counts.values())
        sentences = counts.pop() if len(counts) == 1 else None
        key_lens = {len(keys) for keys in self.key_sets}
        keys = key_lens.pop() if len(key_lens) == 1 else None
        return (self.subject_count, sentences, keys)

    def to_dict(self) -> dict:
        triplet = self.shape_triplet()
        return {
            "subjects": self.subject_count,
            "sentence_counts": self.sentence_counts,
            "key_sets": {" | ".join(k): v for k, v in self.key_sets.items()},
            "shape": [triplet[0], triplet[1], triplet[2]],
            "sentence_eeg_shapes": sorted({tuple(s) for s in self.sentence_eeg_shapes}),
            "word_eeg_shapes": sorted({tuple(s) for s in self.word_eeg_shapes}),
            "band_shapes": sorted({tuple(s) for s in self.band_shapes}),
            "warnings": self.warnings,
        }


def inspect_upstream(path: str | Path) -> InspectionSummary:
    """Summarize structure; deviations from the published shapes are
    warnings, never errors."""
    data = load_upstream(path)
    summary = InspectionSummary(
        subject_count=len(data),
        sentence_counts={sid: len(sentences) for sid, sentences in data.items()},
        key_sets={},
        sentence_eeg_shapes=[],
        word_eeg_shapes=[],
        band_shapes=[],
    )
    for sentences in data.values():
        for entry in sentences:
            if not isinstance(entry, dict):
                summary.warnings.append("non-dict sentence entry")
                continue
            keys = tuple(sorted(entry.keys()))
            summary.key_sets[keys] = summary.key_sets.get(keys, 0) + 1
            s_eeg = entry.get("sentence level EEG")
            if isinstance(s_eeg, np.ndarray):
                summary.sentence_eeg_shapes.append(s_eeg.shape)
            for word in entry.get("word", []) or []:
                if not isinstance(word, dict):
                    continue
                raw = word.get("rawEEG")
                if isinstance(raw, np.ndarray):
                    summary.word_eeg_shapes.append(raw.shape)
                for window in BAND_WINDOWS:
                    feats = word.get(window)
                    if isinstance(feats, np.ndarray):
                        summary.band_shapes.append(feats.shape)

    if summary.subject_count == 0:
        summary.warnings.append("empty mapping: no subjects")
    triplet = summary.shape_triplet()
    if triplet[1] is None:
        summary.warnings.append(
            f"sentence counts differ across subjects: {summary.sentence_counts}"
        )
    if triplet[2] is None and summary.key_sets:
        summary.warnings.append("entries carry differing key sets")
    for keys in summary.key_sets:
        if keys not in (tuple(sorted(SEVEN_KEYS)), tuple(sorted(SIX_KEYS))):
            summary.warnings.append(f"unexpected key set: {keys}")
    if summary.subject_count and None not in triplet and triplet not in EXPECTED_SHAPES:
        summary.warnings.append(
            f"shape {triplet} does not match any published task shape {EXPECTED_SHAPES}"
        )
    return summary
