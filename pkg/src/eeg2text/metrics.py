"""Text-generation evaluation: clipped-precision BLEU, ROUGE-1, greedy-match
BERTScore, and an aligned corpus report.

BLEU is computed corpus-level (n-gram counts summed over pairs before
division) with the brevity penalty on corpus totals; a smoothed
sentence-level variant (add-1 on numerator and denominator for n >= 2) is
also exposed. BERTScore here matches tokens greedily by cosine similarity
under a pluggable embedder with no idf weighting.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .vocab import TokenEmbeddingTable, Vocabulary

Embedder = Callable[[str], np.ndarray]

REPORT_COLUMNS = (
    "BLEU-1",
    "BLEU-2",
    "BLEU-3",
    "BLEU-4",
    "ROUGE-1-R",
    "ROUGE-1-P",
    "ROUGE-1-F",
    "BERTScore-R",
    "BERTScore-P",
    "BERTScore-F",
)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram total) for order ``n``."""
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matched = sum(min(count, ref[gram]) for gram, count in cand.items())
    return matched, sum(cand.values())


def clipped_precision(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    """Each candidate n-gram earns credit at most as often as it appears in
    the reference; zero when the candidate has no n-grams."""
    matched, total = clipped_counts(candidate, reference, n)
    return matched / total if total else 0.0


def unclipped_precision(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matched = sum(count for gram, count in cand.items() if gram in ref)
    total = sum(cand.values())
    return matched / total if total else 0.0


@dataclass(frozen=True)
class BleuReport:
    precisions: tuple[float, ...]  # clipped p_1..p_N
    brevity_penalty: float
    cumulative: tuple[float, ...]  # BLEU-1..BLEU-N

    def bleu(self, n: int) -> float:
        return self.cumulative[n - 1]


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / cand_len))


def _cumulative(precisions: Sequence[float], bp: float) -> tuple[float, ...]:
    out = []
    for k in range(1, len(precisions) + 1):
        window = precisions[:k]
        if min(window) <= 0.0:
            out.append(0.0)
        else:
            out.append(bp * math.exp(sum(math.log(p) for p in window) / k))
    return tuple(out)


def bleu_n(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> BleuReport:
    """Corpus-level BLEU: clipped n-gram counts and lengths summed over all
    pairs before any division."""
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    matched = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            m, t = clipped_counts(cand, ref, n)
            matched[n - 1] += m
            totals[n - 1] += t
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matched, totals))
    bp = _brevity_penalty(cand_len, ref_len)
    return BleuReport(
        precisions=precisions, brevity_penalty=bp, cumulative=_cumulative(precisions, bp)
    )


def sentence_bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> BleuReport:
    """Single-pair BLEU with add-1 smoothing on numerator and denominator
    for n >= 2, so one missing high-order n-gram does not zero the score."""
    precisions = []
    for n in range(1, max_n + 1):
        m, t = clipped_counts(candidate, reference, n)
        if n >= 2:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)
    bp = _brevity_penalty(len(candidate), len(reference))
    return BleuReport(
        precisions=tuple(precisions), brevity_penalty=bp,
        cumulative=_cumulative(precisions, bp),
    )


@dataclass(frozen=True)
class RougeReport:
    precision: float
    recall: float
    f1: float


def rouge_1(candidate: Sequence[str], reference: Sequence[str]) -> RougeReport:
    """Unigram overlap: precision over generated words, recall over target
    words, F1 the harmonic mean."""
    overlap_counts = Counter(candidate) & Counter(reference)
    overlap = sum(overlap_counts.values())
    precision = overlap / len(candidate) if candidate else 0.0
    recall = overlap / len(reference) if reference else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return RougeReport(precision=precision, recall=recall, f1=f1)


@dataclass(frozen=True)
class BertScoreReport:
    precision: float
    recall: float
    f1: float


def table_embedder(table: TokenEmbeddingTable, vocab: Vocabulary) -> Embedder:
    """Embedder backed by the artifact's token-embedding table."""

    def embed(token: str) -> np.ndarray:
        return table.vectors[vocab.encode(token)]

    return embed


def bertscore(
    candidate: Sequence[str], reference: Sequence[str], embedder: Embedder
) -> BertScoreReport:
    """Greedy cosine matching: precision averages each candidate token's best
    match over the reference, recall the converse; zero-norm embeddings are
    defined as orthogonal to everything."""
    if not candidate or not reference:
        return BertScoreReport(precision=0.0, recall=0.0, f1=0.0)
    cand_vecs = np.stack([np.asarray(embedder(t), dtype=np.float64) for t in candidate])
    ref_vecs = np.stack([np.asarray(embedder(t), dtype=np.float64) for t in reference])
    cand_norm = np.linalg.norm(cand_vecs, axis=1)
    ref_norm = np.linalg.norm(ref_vecs, axis=1)
    sim = cand_vecs @ ref_vecs.T
    denom = np.outer(cand_norm, ref_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, sim / np.where(denom > 0, denom, 1.0), 0.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    f1 = 0.0 if precision + recall <= 0 else 2 * precision * recall / (precision + recall)
    return BertScoreReport(precision=precision, recall=recall, f1=f1)


# ---------------------------------------------------------------------------
# corpus reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusRow:
    """One model's scores as percentages in the report column order, plus
    the raw clipped n-gram precisions so either BLEU reading is checkable."""

    values: dict[str, float]
    precisions: tuple[float, ...] = ()

    def rendered(self) -> dict[str, str]:
        return {col: f"{self.values[col]:.2f}" for col in REPORT_COLUMNS}


@dataclass
class CorpusReport:
    rows: dict[str, CorpusRow]

    def render(self) -> str:
        name_width = max([len("Model")] + [len(n) for n in self.rows])
        widths = [max(len(c), 6) for c in REPORT_COLUMNS]
        header = "  ".join(
            ["Model".ljust(name_width)]
            + [c.rjust(w) for c, w in zip(REPORT_COLUMNS, widths)]
        )
        lines = [header, "-" * len(header)]
        for name, row in self.rows.items():
            rendered = row.rendered()
            lines.append(
                "  ".join(
                    [name.ljust(name_width)]
                    + [rendered[c].rjust(w) for c, w in zip(REPORT_COLUMNS, widths)]
                )
            )
        return "\n".join(lines)

    def records(self) -> list[dict]:
        out = []
        for name, row in self.rows.items():
            record = {"model": name}
            record.update({col: round(row.values[col], 2) for col in REPORT_COLUMNS})
            for n, p in enumerate(row.precisions, start=1):
                record[f"clipped-p{n}"] = round(100.0 * p, 2)
            out.append(record)
        return out


def corpus_eval(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    embedder: Embedder,
    max_n: int = 4,
) -> CorpusRow:
    """Aggregate scores over (candidate, reference) token pairs: corpus BLEU,
    mean sentence-level ROUGE-1, mean sentence-level BERTScore."""
    if not pairs:
        raise ValueError("need at least one candidate/reference pair")
    candidates = [list(c) for c, _ in pairs]
    references = [list(r) for _, r in pairs]
    bleu = bleu_n(candidates, references, max_n=max_n)
    rouges = [rouge_1(c, r) for c, r in pairs]
    berts = [bertscore(c, r, embedder) for c, r in pairs]
    values = {f"BLEU-{n}": 100.0 * bleu.bleu(n) for n in range(1, max_n + 1)}
    values["ROUGE-1-R"] = 100.0 * float(np.mean([r.recall for r in rouges]))
    values["ROUGE-1-P"] = 100.0 * float(np.mean([r.precision for r in rouges]))
    values["ROUGE-1-F"] = 100.0 * float(np.mean([r.f1 for r in rouges]))
    values["BERTScore-R"] = 100.0 * float(np.mean([b.recall for b in berts]))
    values["BERTScore-P"] = 100.0 * float(np.mean([b.precision for b in berts]))
    values["BERTScore-F"] = 100.0 * float(np.mean([b.f1 for b in berts]))
    return CorpusRow(values=values, precisions=bleu.precisions)
