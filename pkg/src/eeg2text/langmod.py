"""Compact encoder-decoder language model over brain representations.

The encoder contextualizes the word-level brain vectors; the decoder
generates tokens autoregressively with masked self-attention and
cross-attention, and a two-layer head produces vocabulary logits. Stage-2
training minimizes teacher-forced cross-entropy of the reference tokens.
Decoding offers greedy search and beam search over the stepwise conditional
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .brainmod import BrainEncoder, gated_signals
from .dataio import DatasetManifest
from .layers import DecoderLayer, EncoderLayer, Linear, Module, fan_in_uniform
from .optim import Adam
from .tensor import Parameter, Tensor, backward, log_softmax_np, no_grad
from .vocab import BOS, EOS, Vocabulary, tokenize


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocab_size: int
    src_dim: int
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    max_src: int = 64
    max_len: int = 16

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.vocab_size < 5:
            raise ValueError("vocabulary must hold the specials plus at least one word")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "Seq2SeqConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class Seq2Seq(Module):
    def __init__(self, config: Seq2SeqConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        c = config
        rng = np.random.default_rng(seed)
        self.in_proj = Linear(c.src_dim, c.d_model, rng, dtype=dtype)
        self.enc_pos = Parameter(
            fan_in_uniform(rng, (c.max_src, c.d_model), c.d_model, dtype), dtype=dtype
        )
        self.enc_layers = [
            EncoderLayer(c.d_model, c.heads, c.ffn_mult, c.dropout, rng, dtype=dtype)
            for _ in range(c.enc_layers)
        ]
        self.tok_emb = Parameter(
            fan_in_uniform(rng, (c.vocab_size, c.d_model), c.d_model, dtype), dtype=dtype
        )
        self.dec_pos = Parameter(
            fan_in_uniform(rng, (c.max_len + 1, c.d_model), c.d_model, dtype), dtype=dtype
        )
        self.dec_layers = [
            DecoderLayer(c.d_model, c.heads, c.ffn_mult, c.dropout, rng, dtype=dtype)
            for _ in range(c.dec_layers)
        ]
        self.head_hidden = Linear(c.d_model, c.d_model, rng, dtype=dtype)
        self.head_out = Linear(c.d_model, c.vocab_size, rng, dtype=dtype)

    def encode(self, source: np.ndarray | Tensor, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        src = source if isinstance(source, Tensor) else Tensor(np.asarray(source, dtype=np.float32))
        m = src.data.shape[0]
        if m > self.config.max_src:
            raise ValueError(f"{m} source rows exceed max_src {self.config.max_src}")
        h = self.in_proj(src) + T.narrow(self.enc_pos, 0, 0, m)
        for layer in self.enc_layers:
            h = layer(h, training=training, rng=rng)
        return h

    def decode_logits(self, memory: Tensor, input_ids: Sequence[int],
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        ids = np.asarray(input_ids, dtype=np.int64)
        if ids.size > self.config.max_len + 1:
            raise ValueError(f"prefix of {ids.size} exceeds max_len {self.config.max_len}")
        x = T.embedding_rows(self.tok_emb, ids) + T.narrow(self.dec_pos, 0, 0, ids.size)
        for layer in self.dec_layers:
            x = layer(x, memory, training=training, rng=rng)
        return self.head_out(T.gelu(self.head_hidden(x)))

    def checkpoint_config(self) -> dict:
        return {"kind": "seq2seq", "seq2seq": self.config.to_dict()}

    @classmethod
    def from_checkpoint(cls, params: dict[str, np.ndarray], config: dict) -> "Seq2Seq":
        model = cls(Seq2SeqConfig.from_dict(config["seq2seq"]), seed=0)
        model.load_state(params)
        return model


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@dataclass
class Hypothesis:
    """A decoded token sequence: BOS, generated tokens, at most one EOS at
    the end; logprob is the sum of stepwise conditional log-probabilities."""

    token_ids: list[int]
    logprob: float

    def generated(self) -> list[int]:
        return self.token_ids[1:]

    def __post_init__(self):
        if not self.token_ids or self.token_ids[0] != BOS:
            raise ValueError("hypothesis must begin with BOS")
        inner = self.token_ids[1:]
        if EOS in inner[:-1]:
            raise ValueError("EOS may only appear at the end")


def stepwise_logprobs(model: Seq2Seq, source: np.ndarray, token_ids: Sequence[int]) -> np.ndarray:
    """Conditional log p(token_n | source, tokens_<n) for each position,
    teacher-forced, in double precision."""
    ids = list(token_ids)
    if not ids:
        raise ValueError("need at least one target token")
    with no_grad():
        memory = model.encode(source)
        logits = model.decode_logits(memory, [BOS] + ids[:-1]).data
    logp = log_softmax_np(logits, axis=-1)
    return logp[np.arange(len(ids)), ids]


def sequence_logprob(model: Seq2Seq, source: np.ndarray, token_ids: Sequence[int]) -> float:
    """Total log-probability of the token sequence; tokens must end in EOS."""
    ids = list(token_ids)
    if not ids or ids[-1] != EOS:
        raise ValueError("token sequence must end with EOS")
    return float(stepwise_logprobs(model, source, ids).sum())


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _apply_length_norm(logprob: float, n_generated: int, alpha: float) -> float:
    if alpha == 0.0:
        return logprob
    return logprob / (max(1, n_generated) ** alpha)


def greedy_decode(model: Seq2Seq, source: np.ndarray, max_len: int | None = None) -> Hypothesis:
    """Argmax token per step starting from BOS; stops at EOS or ``max_len``
    generated tokens. Ties break toward the lowest token index."""
    limit = model.config.max_len if max_len is None else min(max_len, model.config.max_len)
    if limit < 1:
        raise ValueError("max_len must be >= 1")
    with no_grad():
        memory = model.encode(source)
        ids = [BOS]
        total = 0.0
        for _ in range(limit):
            logits = model.decode_logits(memory, ids).data[-1]
            logp = log_softmax_np(logits)
            nxt = int(np.argmax(logp))
            ids.append(nxt)
            total += float(logp[nxt])
            if nxt == EOS:
                break
    return Hypothesis(token_ids=ids, logprob=total)


def beam_decode(
    model: Seq2Seq,
    source: np.ndarray,
    beam_width: int = 4,
    max_len: int | None = None,
    length_alpha: float = 0.0,
) -> Hypothesis:
    """Beam search over the stepwise conditional distribution.

    Each step extends every live hypothesis with every token, keeps the
    ``beam_width`` best by accumulated log-probability, and moves those that
    emit EOS (or hit the length cap) out of the beam into the finished pool.
    The result maximizes logprob / length**alpha over finished hypotheses.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    limit = model.config.max_len if max_len is None else min(max_len, model.config.max_len)
    if limit < 1:
        raise ValueError("max_len must be >= 1")
    with no_grad():
        memory = model.encode(source)
        live: list[tuple[list[int], float]] = [([BOS], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for _ in range(limit):
            if not live:
                break
            candidates: list[tuple[list[int], float]] = []
            for ids, lp in live:
                logp = log_softmax_np(model.decode_logits(memory, ids).data[-1])
                for tok in range(logp.shape[0]):
                    candidates.append((ids + [tok], lp + float(logp[tok])))
            candidates.sort(key=lambda c: -c[1])  # stable: ties keep token order
            live = []
            for ids, lp in candidates[:beam_width]:
                done = ids[-1] == EOS or len(ids) - 1 >= limit
                (finished if done else live).append((ids, lp))
    pool = finished if finished else live
    best_ids, best_lp = max(
        pool, key=lambda c: _apply_length_norm(c[1], len(c[0]) - 1, length_alpha)
    )
    return Hypothesis(token_ids=best_ids, logprob=best_lp)


# ---------------------------------------------------------------------------
# stage-2 training
# ---------------------------------------------------------------------------


@dataclass
class StageTwoConfig:
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    fine_tune_brain: bool = False
    target_dev_loss: float | None = None


@dataclass
class Seq2SeqExample:
    subject_id: str
    signals: list[np.ndarray]
    source: np.ndarray | None  # precomputed brain representation
    target_ids: list[int]  # reference tokens, EOS-terminated


@dataclass
class StageTwoResult:
    model: Seq2Seq
    history: list[dict]
    skipped: int
    used: int


def collect_seq2seq_examples(
    manifest: DatasetManifest,
    vocab: Vocabulary,
    encoder: BrainEncoder,
    config: Seq2SeqConfig,
    precompute: bool,
) -> tuple[list[Seq2SeqExample], int]:
    examples: list[Seq2SeqExample] = []
    skipped = 0
    for sid, sentence in manifest.iter_records():
        signals = gated_signals(sentence)
        tokens = tokenize(sentence.content)
        target = vocab.encode_many(tokens) + [EOS]
        if (
            not signals
            or not tokens
            or len(signals) > min(config.max_src, encoder.config.max_words)
            or len(target) > config.max_len
        ):
            skipped += 1
            continue
        source = None
        if precompute:
            with no_grad():
                source = encoder.encode(signals, sid).data
        examples.append(
            Seq2SeqExample(subject_id=sid, signals=signals, source=source, target_ids=target)
        )
    return examples, skipped


def _example_loss(model: Seq2Seq, encoder: BrainEncoder, ex: Seq2SeqExample,
                  fine_tune_brain: bool, training: bool,
                  rng: np.random.Generator | None) -> Tensor:
    if ex.source is not None and not fine_tune_brain:
        source: Tensor | np.ndarray = ex.source
    else:
        src_t = encoder.encode(ex.signals, ex.subject_id,
                               training=training and fine_tune_brain, rng=rng)
        source = src_t if fine_tune_brain else src_t.data
    memory = model.encode(source, training=training, rng=rng)
    logits = model.decode_logits(memory, [BOS] + ex.target_ids[:-1],
                                 training=training, rng=rng)
    return T.cross_entropy_rows(logits, ex.target_ids)


def _mean_dev_loss(model: Seq2Seq, encoder: BrainEncoder, examples: list[Seq2SeqExample]) -> float:
    if not examples:
        return float("nan")
    total = 0.0
    with no_grad():
        for ex in examples:
            total += float(_example_loss(model, encoder, ex, False, False, None).data)
    return total / len(examples)


def train_stage2(
    train_manifest: DatasetManifest,
    dev_manifest: DatasetManifest,
    encoder: BrainEncoder,
    vocab: Vocabulary,
    config: Seq2SeqConfig,
    stage: StageTwoConfig,
) -> StageTwoResult:
    """Teacher-forced cross-entropy training of the generator.

    The brain encoder is frozen by default; its outputs are precomputed once
    per sentence. With ``fine_tune_brain`` both parameter sets update.
    """
    model = Seq2Seq(config, seed=stage.seed)
    precompute = not stage.fine_tune_brain
    train_ex, skipped_train = collect_seq2seq_examples(
        train_manifest, vocab, encoder, config, precompute
    )
    dev_ex, skipped_dev = collect_seq2seq_examples(
        dev_manifest, vocab, encoder, config, precompute
    )
    if not train_ex:
        raise ValueError("no usable training sentences for the generator")

    params = dict(model.named_parameters())
    if stage.fine_tune_brain:
        params.update({f"brain.{k}": v for k, v in encoder.named_parameters().items()})
    opt = Adam(params.values(), lr=stage.lr)
    rng = np.random.default_rng(stage.seed)

    history: list[dict] = [
        {
            "stage": 2,
            "epoch": 0,
            "train_loss": _mean_dev_loss(model, encoder, train_ex),
            "dev_loss": _mean_dev_loss(model, encoder, dev_ex),
        }
    ]
    order = np.arange(len(train_ex))
    for epoch in range(1, stage.epochs + 1):
        rng.shuffle(order)
        epoch_total = 0.0
        batch: list[int] = []
        for pos, idx in enumerate(order):
            batch.append(idx)
            if len(batch) < stage.batch_size and pos != len(order) - 1:
                continue
            opt.zero_grad()
            for j in batch:
                loss = _example_loss(
                    model, encoder, train_ex[j], stage.fine_tune_brain, True, rng
                )
                backward(loss)
                epoch_total += float(loss.data)
            opt.scale_grads(1.0 / len(batch))
            opt.step()
            batch = []
        dev_loss = _mean_dev_loss(model, encoder, dev_ex)
        history.append(
            {
                "stage": 2,
                "epoch": epoch,
                "train_loss": epoch_total / len(train_ex),
                "dev_loss": dev_loss,
            }
        )
        if stage.target_dev_loss is not None and dev_loss <= stage.target_dev_loss:
            break
    return StageTwoResult(
        model=model, history=history, skipped=skipped_train + skipped_dev, used=len(train_ex)
    )
