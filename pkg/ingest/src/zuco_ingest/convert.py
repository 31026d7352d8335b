"""One-way conversion into the portable dataset format.

The converter never writes the upstream serialization. Numeric values are
narrowed from float64 to float32 and otherwise untouched. Words whose
arrays violate the declared channel or band shape are omitted from the
output and itemized in the conversion report; opaque upstream fields
('answer EEG', 'word tokens with mask', 'word tokens all') are preserved in
the report sidecar, not in the portable file.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .upstream import BAND_WINDOWS, OPAQUE_KEYS, load_upstream

PORTABLE_FORMAT_VERSION = 1
N_BANDS = 8


def _encode_array(arr: np.ndarray | None) -> dict | None:
    if arr is None:
        return None
    data = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


@dataclass
class SkipEntry:
    subject_id: str
    sentence_index: int
    word_index: int | None
    reason: str

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "sentence_index": self.sentence_index,
            "word_index": self.word_index,
            "reason": self.reason,
        }


@dataclass
class ConversionReport:
    source: str
    channels: int
    sampling_rate: float
    subjects: int = 0
    sentences_seen: int = 0
    sentences_written: int = 0
    words_seen: int = 0
    words_written: int = 0
    fixation_without_eeg: int = 0
    skipped: list[SkipEntry] = field(default_factory=list)
    opaque_fields: dict[str, list[dict]] = field(default_factory=dict)

    def skip(self, subject_id: str, sentence_index: int, word_index: int | None, reason: str):
        self.skipped.append(SkipEntry(subject_id, sentence_index, word_index, reason))

    def preserve(self, key: str, subject_id: str, sentence_index: int, value) -> None:
        bucket = self.opaque_fields.setdefault(key, [])
        entry: dict = {"subject_id": subject_id, "sentence_index": sentence_index}
        if isinstance(value, np.ndarray):
            entry["array"] = _encode_array(value.astype(np.float64, copy=False))
        else:
            entry["value"] = value
        bucket.append(entry)

    def to_dict(self) -> dict:
        return {
            "format_version": PORTABLE_FORMAT_VERSION,
            "source": self.source,
            "channels": self.channels,
            "sampling_rate": self.sampling_rate,
            "subjects": self.subjects,
            "sentences_seen": self.sentences_seen,
            "sentences_written": self.sentences_written,
            "words_seen": self.words_seen,
            "words_written": self.words_written,
            "fixation_without_eeg": self.fixation_without_eeg,
            "skipped": [s.to_dict() for s in self.skipped],
            "opaque_fields": self.opaque_fields,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _word_arrays(word: dict, channels: int) -> tuple[np.ndarray | None, dict[str, np.ndarray], str | None]:
    """Validate one word entry against the declared layout.

    Returns (raw_eeg, band_features, fault). A fault string means the word
    must be omitted.
    """
    raw = word.get("rawEEG")
    if raw is None:
        return None, {}, None
    if not isinstance(raw, np.ndarray) or raw.ndim != 2:
        return None, {}, "rawEEG is not a channels x time array"
    if raw.shape[0] != channels:
        return None, {}, f"rawEEG has {raw.shape[0]} channel rows, expected {channels}"
    if raw.shape[1] < 1:
        return None, {}, "rawEEG has no time samples"
    bands: dict[str, np.ndarray] = {}
    for window in BAND_WINDOWS:
        feats = word.get(window)
        if feats is None:
            continue
        if not isinstance(feats, np.ndarray) or feats.shape != (N_BANDS, channels):
            return None, {}, (
                f"{window} band features have shape "
                f"{getattr(feats, 'shape', None)}, expected ({N_BANDS}, {channels})"
            )
        bands[window] = feats
    return raw, bands, None


def convert(
    path_in: str | Path,
    path_out: str | Path,
    channels: int = 105,
    sampling_rate: float = 500.0,
    report_path: str | Path | None = None,
) -> ConversionReport:
    """Convert an upstream pickle into a portable dataset file.

    Deterministic: the same input bytes produce the same output bytes.
    """
    data = load_upstream(path_in)
    report = ConversionReport(
        source=str(path_in), channels=channels, sampling_rate=sampling_rate,
        subjects=len(data),
    )
    lines = [
        json.dumps(
            {
                "format_version": PORTABLE_FORMAT_VERSION,
                "channels": channels,
                "sampling_rate": sampling_rate,
                "provenance": f"converted from {Path(path_in).name}",
            }
        )
    ]
    for sid, sentences in data.items():
        for si, entry in enumerate(sentences):
            report.sentences_seen += 1
            if not isinstance(entry, dict) or not isinstance(entry.get("content"), str):
                report.skip(sid, si, None, "entry has no readable content")
                continue
            content = entry["content"]
            if not content.strip():
                report.skip(sid, si, None, "empty content")
                continue
            for key in OPAQUE_KEYS:
                if key in entry and entry[key] is not None:
                    report.preserve(key, sid, si, entry[key])

            fixated = list(entry.get("word tokens has fixation") or [])
            out_words = []
            for wi, word in enumerate(entry.get("word") or []):
                report.words_seen += 1
                if not isinstance(word, dict) or not isinstance(word.get("content"), str):
                    report.skip(sid, si, wi, "word entry has no readable content")
                    continue
                text = word["content"]
                raw, bands, fault = _word_arrays(word, channels)
                if fault:
                    report.skip(sid, si, wi, fault)
                    continue
                flagged = bool(fixated) and fixated[0] == text
                if flagged:
                    fixated.pop(0)
                has_fixation = flagged and raw is not None
                if flagged and raw is None:
                    report.fixation_without_eeg += 1
                out_words.append(
                    {
                        "text": text,
                        "has_fixation": has_fixation,
                        "raw_eeg": _encode_array(raw) if has_fixation else None,
                        "band_features": {
                            window: _encode_array(feats) for window, feats in bands.items()
                        }
                        if has_fixation
                        else {},
                    }
                )
                report.words_written += 1
            if not out_words:
                report.skip(sid, si, None, "no usable words")
                continue
            s_eeg = entry.get("sentence level EEG")
            if isinstance(s_eeg, np.ndarray) and (s_eeg.ndim != 2 or s_eeg.shape[0] != channels):
                report.skip(sid, si, None, "sentence EEG shape mismatch; dropped field")
                s_eeg = None
            lines.append(
                json.dumps(
                    {
                        "subject_id": sid,
                        "content": content,
                        "sentence_eeg": _encode_array(s_eeg if isinstance(s_eeg, np.ndarray) else None),
                        "words": out_words,
                    }
                )
            )
            report.sentences_written += 1
    Path(path_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if report_path is not None:
        report.save(report_path)
    return report
