"""Portable word-level EEG dataset format, validation, splitting, synthesis.

A dataset file is newline-delimited JSON: a header record with manifest
metadata, then one record per (subject, sentence). Numeric arrays travel as
base64-wrapped little-endian 32-bit floats next to explicit shape fields,
which keeps files streamable, diffable, and bit-exact across languages.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vocab import TokenEmbeddingTable, Vocabulary

FORMAT_VERSION = 1

DEFAULT_CHANNELS = 105
DEFAULT_SAMPLING_RATE = 500.0

BAND_WINDOWS = ("FFD", "GD", "TRT")


@dataclass(frozen=True)
class FrequencyBand:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"band {self.name}: lo {self.lo} must be < hi {self.hi}")


#: The eight oscillatory bands carried per fixation window, 4 to 49.5 Hz.
BANDS = (
    FrequencyBand("theta1", 4.0, 6.0),
    FrequencyBand("theta2", 6.5, 8.0),
    FrequencyBand("alpha1", 8.5, 10.0),
    FrequencyBand("alpha2", 10.5, 13.0),
    FrequencyBand("beta1", 13.5, 18.0),
    FrequencyBand("beta2", 18.5, 30.0),
    FrequencyBand("gamma1", 30.5, 40.0),
    FrequencyBand("gamma2", 40.0, 49.5),
)

N_BANDS = len(BANDS)
MAX_BAND_HZ = max(b.hi for b in BANDS)


def nyquist_min_rate(f_max: float) -> float:
    """Minimum sampling rate able to represent content up to ``f_max`` Hz."""
    if f_max < 0:
        raise ValueError(f"maximum frequency must be nonnegative, got {f_max}")
    return 2.0 * f_max


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------


@dataclass
class WordRecord:
    text: str
    has_fixation: bool
    raw_eeg: np.ndarray | None  # channels x time, float32
    band_features: dict[str, np.ndarray] = field(default_factory=dict)  # window -> 8 x channels


@dataclass
class SentenceRecord:
    content: str
    words: list[WordRecord]
    sentence_eeg: np.ndarray | None = None


@dataclass
class DatasetManifest:
    channels: int = DEFAULT_CHANNELS
    sampling_rate: float = DEFAULT_SAMPLING_RATE
    subjects: list[tuple[str, list[SentenceRecord]]] = field(default_factory=list)
    provenance: str = ""
    format_version: int = FORMAT_VERSION

    def subject_ids(self) -> list[str]:
        return [sid for sid, _ in self.subjects]

    def sentences_for(self, subject_id: str) -> list[SentenceRecord]:
        for sid, sentences in self.subjects:
            if sid == subject_id:
                return sentences
        raise KeyError(subject_id)

    def iter_records(self) -> Iterable[tuple[str, SentenceRecord]]:
        for sid, sentences in self.subjects:
            for sentence in sentences:
                yield sid, sentence


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    subject_id: str | None = None
    sentence_index: int | None = None
    word_index: int | None = None

    def render(self) -> str:
        where = []
        if self.subject_id is not None:
            where.append(f"subject={self.subject_id}")
        if self.sentence_index is not None:
            where.append(f"sentence={self.sentence_index}")
        if self.word_index is not None:
            where.append(f"word={self.word_index}")
        loc = f" [{' '.join(where)}]" if where else ""
        return f"{self.rule}: {self.message}{loc}"


def _check_matrix(arr: np.ndarray | None) -> bool:
    return arr is not None and isinstance(arr, np.ndarray) and arr.ndim == 2


def validate_dataset(manifest: DatasetManifest) -> list[Violation]:
    """Check every structural invariant; an empty report means valid.

    Violations are data, not failures: the caller decides what to do.
    """
    out: list[Violation] = []
    c = manifest.channels

    if c < 1:
        out.append(Violation("channel_count", f"channels must be >= 1, got {c}"))
    min_rate = nyquist_min_rate(MAX_BAND_HZ)
    if manifest.sampling_rate < min_rate:
        out.append(
            Violation(
                "nyquist",
                f"sampling_rate {manifest.sampling_rate} Hz is below the minimum "
                f"{min_rate} Hz for the {MAX_BAND_HZ} Hz band edge",
            )
        )
    seen: set[str] = set()
    for sid, _ in manifest.subjects:
        if sid in seen:
            out.append(Violation("duplicate_subject", f"subject id {sid!r} repeats"))
        seen.add(sid)

    for sid, sentences in manifest.subjects:
        for si, sentence in enumerate(sentences):
            loc = dict(subject_id=sid, sentence_index=si)
            if not sentence.content:
                out.append(Violation("empty_content", "sentence content is empty", **loc))
            if not sentence.words:
                out.append(Violation("no_words", "sentence has no word records", **loc))
            if sentence.sentence_eeg is not None:
                s_eeg = sentence.sentence_eeg
                if not _check_matrix(s_eeg) or s_eeg.shape[0] != c:
                    out.append(
                        Violation(
                            "channel_count",
                            f"sentence EEG has {getattr(s_eeg, 'shape', None)} rows, expected {c}",
                            **loc,
                        )
                    )
                elif not np.isfinite(s_eeg).all():
                    out.append(Violation("non_finite", "sentence EEG has non-finite values", **loc))
            for wi, word in enumerate(sentence.words):
                wloc = dict(subject_id=sid, sentence_index=si, word_index=wi)
                if word.has_fixation:
                    if not _check_matrix(word.raw_eeg) or word.raw_eeg.shape[1] < 1:
                        out.append(
                            Violation(
                                "empty_signal",
                                "fixated word must carry a channels x time signal with T >= 1",
                                **wloc,
                            )
                        )
                    elif word.raw_eeg.shape[0] != c:
                        out.append(
                            Violation(
                                "channel_count",
                                f"word EEG has {word.raw_eeg.shape[0]} rows, expected {c}",
                                **wloc,
                            )
                        )
                    elif not np.isfinite(word.raw_eeg).all():
                        out.append(Violation("non_finite", "word EEG has non-finite values", **wloc))
                elif word.raw_eeg is not None and word.raw_eeg.size > 0:
                    if word.raw_eeg.ndim != 2 or word.raw_eeg.shape[0] != c:
                        out.append(
                            Violation(
                                "channel_count",
                                f"word EEG has shape {word.raw_eeg.shape}, expected {c} rows",
                                **wloc,
                            )
                        )
                for window, feats in word.band_features.items():
                    if window not in BAND_WINDOWS:
                        out.append(
                            Violation(
                                "band_window",
                                f"unknown band window {window!r}, expected one of {BAND_WINDOWS}",
                                **wloc,
                            )
                        )
                        continue
                    if not _check_matrix(feats) or feats.shape != (N_BANDS, c):
                        out.append(
                            Violation(
                                "band_shape",
                                f"{window} band features have shape "
                                f"{getattr(feats, 'shape', None)}, expected ({N_BANDS}, {c})",
                                **wloc,
                            )
                        )
                    elif not np.isfinite(feats).all():
                        out.append(
                            Violation("non_finite", f"{window} band features non-finite", **wloc)
                        )
    return out


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


class DatasetFormatError(Exception):
    """Dataset file cannot be parsed."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file has an unsupported format version."""


class DatasetRecordError(DatasetFormatError):
    """A record is structurally malformed."""


class DatasetPayloadError(DatasetFormatError):
    """A numeric payload does not match its declared shape."""


def _encode_array(arr: np.ndarray | None) -> dict | None:
    if arr is None:
        return None
    data = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict | None, context: str) -> np.ndarray | None:
    if entry is None:
        return None
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetRecordError(f"{context}: malformed array entry ({exc})") from exc
    expected = int(np.prod(shape)) * 4 if shape else 4
    if len(raw) != expected:
        raise DatasetPayloadError(
            f"{context}: payload holds {len(raw)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def save_dataset(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {
                    "format_version": manifest.format_version,
                    "channels": manifest.channels,
                    "sampling_rate": manifest.sampling_rate,
                    "provenance": manifest.provenance,
                }
            )
            + "\n"
        )
        for sid, sentence in manifest.iter_records():
            record = {
                "subject_id": sid,
                "content": sentence.content,
                "sentence_eeg": _encode_array(sentence.sentence_eeg),
                "words": [
                    {
                        "text": w.text,
                        "has_fixation": w.has_fixation,
                        "raw_eeg": _encode_array(w.raw_eeg),
                        "band_features": {
                            window: _encode_array(feats)
                            for window, feats in w.band_features.items()
                        },
                    }
                    for w in sentence.words
                ],
            }
            fh.write(json.dumps(record) + "\n")


def loads_sentence_record(record: dict, context: str = "record") -> tuple[str, SentenceRecord]:
    """Decode one portable-format record dict into a SentenceRecord."""
    try:
        sid = record["subject_id"]
        content = record["content"]
        raw_words = record["words"]
    except (KeyError, TypeError) as exc:
        raise DatasetRecordError(f"{context}: missing field {exc}") from exc
    if not isinstance(raw_words, list):
        raise DatasetRecordError(f"{context}: 'words' must be a list")
    words = []
    for wi, w in enumerate(raw_words):
        wctx = f"{context} word {wi}"
        try:
            text = w["text"]
            has_fixation = bool(w["has_fixation"])
            raw_entry = w.get("raw_eeg")
            band_entries = w.get("band_features", {})
        except (KeyError, TypeError) as exc:
            raise DatasetRecordError(f"{wctx}: missing field {exc}") from exc
        words.append(
            WordRecord(
                text=text,
                has_fixation=has_fixation,
                raw_eeg=_decode_array(raw_entry, wctx),
                band_features={
                    window: _decode_array(entry, f"{wctx} {window}")
                    for window, entry in band_entries.items()
                },
            )
        )
    return sid, SentenceRecord(
        content=content,
        words=words,
        sentence_eeg=_decode_array(record.get("sentence_eeg"), f"{context} sentence_eeg"),
    )


def load_dataset(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: unreadable header ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(
            f"{path}: format_version {version!r} unsupported, expected {FORMAT_VERSION}"
        )
    try:
        manifest = DatasetManifest(
            channels=int(header["channels"]),
            sampling_rate=float(header["sampling_rate"]),
            provenance=header.get("provenance", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: malformed header ({exc})") from exc
    by_subject: dict[str, list[SentenceRecord]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetRecordError(f"{path}:{lineno}: unreadable record ({exc})") from exc
        sid, sentence = loads_sentence_record(record, context=f"{path}:{lineno}")
        by_subject.setdefault(sid, []).append(sentence)
    manifest.subjects = list(by_subject.items())
    return manifest


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _content_digest(content: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}\x00{content}".encode("utf-8")).digest()


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 13,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Partition at sentence granularity into train/dev/test.

    Distinct sentence contents are ranked by a stable hash of
    (content, seed) and cut at the cumulative ratio boundaries, so identical
    sentences across subjects always land in the same split and the split is
    reproducible from the seed alone.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    contents: dict[str, None] = {}
    for _, sentence in manifest.iter_records():
        contents.setdefault(sentence.content)
    ranked = sorted(contents, key=lambda c: _content_digest(c, seed))
    n = len(ranked)
    cut1 = math.floor(n * ratios[0])
    cut2 = math.floor(n * (ratios[0] + ratios[1]))
    assignment = {c: (0 if i < cut1 else 1 if i < cut2 else 2) for i, c in enumerate(ranked)}

    parts: list[DatasetManifest] = []
    for split_idx in range(3):
        part = DatasetManifest(
            channels=manifest.channels,
            sampling_rate=manifest.sampling_rate,
            provenance=manifest.provenance,
        )
        for sid, sentences in manifest.subjects:
            kept = [s for s in sentences if assignment[s.content] == split_idx]
            part.subjects.append((sid, kept))
        parts.append(part)
    return parts[0], parts[1], parts[2]


# ---------------------------------------------------------------------------
# synthetic data with known ground truth
# ---------------------------------------------------------------------------


@dataclass
class SynthGroundTruth:
    mixing: np.ndarray  # channels x embed_dim
    gains: dict[str, np.ndarray]  # subject -> positive per-channel gain
    sigma: float
    seed: int

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "sigma": self.sigma,
            "mixing": _encode_array(self.mixing),
            "gains": {sid: _encode_array(g) for sid, g in self.gains.items()},
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SynthGroundTruth":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            mixing=_decode_array(doc["mixing"], "mixing"),
            gains={sid: _decode_array(g, sid) for sid, g in doc["gains"].items()},
            sigma=float(doc["sigma"]),
            seed=int(doc["seed"]),
        )


@dataclass
class SynthResult:
    manifest: DatasetManifest
    truth: SynthGroundTruth
    vocab: Vocabulary
    table: TokenEmbeddingTable


def _band_features_for(raw: np.ndarray) -> dict[str, np.ndarray]:
    # documented reduction: each window covers a leading fraction of the
    # signal (first fixation < gaze < total reading); every band row carries
    # the per-channel window mean
    t = raw.shape[1]
    spans = {
        "FFD": max(1, math.ceil(t / 3)),
        "GD": max(1, math.ceil(2 * t / 3)),
        "TRT": t,
    }
    out = {}
    for window, span in spans.items():
        mean = raw[:, :span].mean(axis=1)
        out[window] = np.tile(mean, (N_BANDS, 1)).astype(np.float32)
    return out


def synth_generate(
    n_subjects: int,
    n_sentences: int,
    vocab_size: int,
    sigma: float,
    seed: int,
    *,
    channels: int = DEFAULT_CHANNELS,
    embed_dim: int = 64,
    sampling_rate: float = DEFAULT_SAMPLING_RATE,
    t_range: tuple[int, int] = (20, 80),
    sentence_len_range: tuple[int, int] = (4, 12),
    subject_gain_factors: Sequence[float] | None = None,
) -> SynthResult:
    """Generate a dataset whose word-level signals follow a known linear map.

    Every time sample of a fixated word is ``gain ⊙ (mixing @ embedding)``
    plus independent per-channel Gaussian noise of scale ``sigma``. Signal
    length is drawn once per (subject, word type), so with ``sigma=0``
    identical (word, subject) pairs carry identical signals.
    """
    if min(n_subjects, n_sentences, vocab_size) < 1:
        raise ValueError("all counts must be >= 1")
    if sigma < 0:
        raise ValueError(f"noise scale must be nonnegative, got {sigma}")
    if subject_gain_factors is not None and len(subject_gain_factors) != n_subjects:
        raise ValueError("need one gain factor per subject")
    rng = np.random.default_rng(seed)

    width = max(3, len(str(vocab_size - 1)))
    word_tokens = [f"w{idx:0{width}d}" for idx in range(vocab_size)]
    vocab = Vocabulary.from_words(word_tokens)
    vectors = rng.normal(0.0, 1.0, size=(len(vocab), embed_dim)).astype(np.float32)
    table = TokenEmbeddingTable(vectors)
    table.freeze()

    mixing = (rng.normal(size=(channels, embed_dim)) / math.sqrt(embed_dim)).astype(np.float32)
    factors = list(subject_gain_factors) if subject_gain_factors else [1.0] * n_subjects
    subject_ids = [f"s{idx:02d}" for idx in range(1, n_subjects + 1)]
    gains = {
        sid: (factors[i] * rng.uniform(0.8, 1.25, size=channels)).astype(np.float32)
        for i, sid in enumerate(subject_ids)
    }

    lo, hi = sentence_len_range
    sentences_tokens: list[list[str]] = []
    seen_contents: set[str] = set()
    while len(sentences_tokens) < n_sentences:
        length = int(rng.integers(lo, hi + 1))
        toks = [word_tokens[int(i)] for i in rng.integers(0, vocab_size, size=length)]
        content = " ".join(toks)
        if content in seen_contents:
            continue
        seen_contents.add(content)
        sentences_tokens.append(toks)

    t_lo, t_hi = t_range
    # one draw per (subject, word type): noiseless signals are then a pure
    # function of the pair
    t_map = rng.integers(t_lo, t_hi + 1, size=(n_subjects, vocab_size))
    word_pos = {tok: i for i, tok in enumerate(word_tokens)}
    word_row = {tok: vocab.encode(tok) for tok in word_tokens}

    manifest = DatasetManifest(
        channels=channels,
        sampling_rate=sampling_rate,
        provenance=f"synthetic seed={seed} sigma={sigma}",
    )
    for s_idx, sid in enumerate(subject_ids):
        gain = gains[sid]
        sentences: list[SentenceRecord] = []
        for toks in sentences_tokens:
            words = []
            for tok in toks:
                base = gain * (mixing @ vectors[word_row[tok]])
                t_len = int(t_map[s_idx, word_pos[tok]])
                raw = np.repeat(base[:, None], t_len, axis=1)
                if sigma > 0:
                    raw = raw + sigma * rng.normal(size=raw.shape)
                raw = raw.astype(np.float32)
                words.append(
                    WordRecord(
                        text=tok,
                        has_fixation=True,
                        raw_eeg=raw,
                        band_features=_band_features_for(raw),
                    )
                )
            sentences.append(SentenceRecord(content=" ".join(toks), words=words))
        manifest.subjects.append((sid, sentences))

    truth = SynthGroundTruth(mixing=mixing, gains=gains, sigma=sigma, seed=seed)
    return SynthResult(manifest=manifest, truth=truth, vocab=vocab, table=table)


def manifests_equal(a: DatasetManifest, b: DatasetManifest) -> bool:
    """Bit-exact equality of metadata and every numeric payload."""
    if (a.channels, a.sampling_rate, a.provenance, a.subject_ids()) != (
        b.channels,
        b.sampling_rate,
        b.provenance,
        b.subject_ids(),
    ):
        return False

    def arr_eq(x, y):
        if x is None or y is None:
            return (x is None) == (y is None) or (
                x is not None and x.size == 0 and y is None
            ) or (y is not None and y.size == 0 and x is None)
        return x.shape == y.shape and np.array_equal(x, y)

    for (sid_a, sents_a), (sid_b, sents_b) in zip(a.subjects, b.subjects):
        if sid_a != sid_b or len(sents_a) != len(sents_b):
            return False
        for sa, sb in zip(sents_a, sents_b):
            if sa.content != sb.content or not arr_eq(sa.sentence_eeg, sb.sentence_eeg):
                return False
            if len(sa.words) != len(sb.words):
                return False
            for wa, wb in zip(sa.words, sb.words):
                if (wa.text, wa.has_fixation) != (wb.text, wb.has_fixation):
                    return False
                if not arr_eq(wa.raw_eeg, wb.raw_eeg):
                    return False
                if sorted(wa.band_features) != sorted(wb.band_features):
                    return False
                for window in wa.band_features:
                    if not arr_eq(wa.band_features[window], wb.band_features[window]):
                        return False
    return True
