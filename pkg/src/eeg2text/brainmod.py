"""Subject-aware encoder from word-level EEG signals to the target
embedding space, and its alignment training stage.

Pipeline per sentence: a bidirectional GRU turns each word's channels x time
signal into a fixed vector, a projection and a kernel-1 convolution bring the
sequence to a common width, a learned per-subject vector rescales the
features, a position-aware transformer encoder mixes information across
words, and a residual MLP maps into the embedding space. Stage-1 training
regresses those outputs onto a frozen token-embedding table with mean
squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import BiGRU, EncoderLayer, Linear, Module, ResidualMLP, fan_in_uniform
from .optim import Adam
from .tensor import Parameter, Tensor, backward, no_grad
from .vocab import TokenEmbeddingTable, Vocabulary, tokenize
from .dataio import DatasetManifest, SentenceRecord


class EmptySignalError(ValueError):
    """A word signal with no time steps reached the encoder."""


class UnknownSubjectError(KeyError):
    """Subject id not present in the subject table."""


class CapacityError(ValueError):
    """More words than the learned position table can address."""


@dataclass(frozen=True)
class BrainConfig:
    channels: int = 105
    gru_hidden: int = 64
    proj_dim: int = 128
    d_model: int = 128
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    embed_dim: int = 64
    max_words: int = 64

    def __post_init__(self):
        sizes = (
            self.channels, self.gru_hidden, self.proj_dim, self.d_model,
            self.layers, self.heads, self.ffn_mult, self.embed_dim, self.max_words,
        )
        if any(s < 1 for s in sizes):
            raise ValueError(f"all sizes must be >= 1: {self}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "BrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class SubjectTable(Module):
    """One learned modulation vector per registered subject, initialized to
    ones so a fresh subject starts as the identity."""

    def __init__(self, dim: int, dtype=np.float32):
        self.dim = dim
        self._dtype = dtype
        self.vectors: dict[str, Parameter] = {}

    def register(self, subject_id: str) -> None:
        if subject_id not in self.vectors:
            self.vectors[subject_id] = Parameter(
                np.ones(self.dim, dtype=self._dtype), dtype=self._dtype
            )

    def vector(self, subject_id: str) -> Parameter:
        try:
            return self.vectors[subject_id]
        except KeyError:
            raise UnknownSubjectError(subject_id) from None

    def ids(self) -> list[str]:
        return list(self.vectors)


class BrainEncoder(Module):
    def __init__(self, config: BrainConfig, subject_ids: Sequence[str],
                 seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = config
        self.bigru = BiGRU(c.channels, c.gru_hidden, rng, dtype=dtype)
        self.proj = Linear(2 * c.gru_hidden, c.proj_dim, rng, dtype=dtype)
        # kernel-1 convolution across the feature depth: per-word affine map
        self.conv = Linear(c.proj_dim, c.proj_dim, rng, dtype=dtype)
        self.subjects = SubjectTable(c.proj_dim, dtype=dtype)
        for sid in subject_ids:
            self.subjects.register(sid)
        self.input_proj = Linear(c.proj_dim, c.d_model, rng, bias=False, dtype=dtype)
        self.positions = Parameter(
            fan_in_uniform(rng, (c.max_words, c.d_model), c.d_model, dtype), dtype=dtype
        )
        self.encoder_layers = [
            EncoderLayer(c.d_model, c.heads, c.ffn_mult, c.dropout, rng, dtype=dtype)
            for _ in range(c.layers)
        ]
        self.to_embedding = ResidualMLP(c.d_model, c.embed_dim, rng, dtype=dtype)

    # -- stage contracts ---------------------------------------------------

    def encode_word(self, word_eeg: np.ndarray | Tensor) -> Tensor:
        """Bidirectional GRU over one channels x time signal; returns the
        concatenated final states. Handles any T >= 1 without padding."""
        signal = word_eeg if isinstance(word_eeg, Tensor) else Tensor(word_eeg)
        if signal.data.ndim != 2 or signal.data.shape[1] < 1:
            raise EmptySignalError(
                f"word signal must be channels x time with T >= 1, got {signal.data.shape}"
            )
        return self.bigru.encode(signal)

    def project_words(self, features: Tensor) -> Tensor:
        """Projection to the common width, then the kernel-1 convolution."""
        return self.conv(self.proj(features))

    def apply_subject(self, features: Tensor, subject_id: str) -> Tensor:
        """Row-wise elementwise modulation by the subject's learned vector."""
        return features * self.subjects.vector(subject_id)

    def contextualize(self, features: Tensor, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Position-aware transformer encoding over the word sequence."""
        m = features.data.shape[0]
        if m > self.config.max_words:
            raise CapacityError(
                f"{m} words exceed the position table capacity {self.config.max_words}"
            )
        h = self.input_proj(features) + T.narrow(self.positions, 0, 0, m)
        for layer in self.encoder_layers:
            h = layer(h, training=training, rng=rng)
        return h

    def encode(self, word_signals: Sequence[np.ndarray], subject_id: str,
               training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Full encoder: word signals to a words x embed_dim representation."""
        if len(word_signals) < 1:
            raise EmptySignalError("need at least one word signal")
        arrays = []
        for w in word_signals:
            arr = w.data if isinstance(w, Tensor) else np.asarray(w)
            if arr.ndim != 2 or arr.shape[1] < 1:
                raise EmptySignalError(
                    f"word signal must be channels x time with T >= 1, got {arr.shape}"
                )
            arrays.append(arr)
        features = self.bigru.encode_many(arrays)
        features = self.project_words(features)
        features = self.apply_subject(features, subject_id)
        h = self.contextualize(features, training=training, rng=rng)
        return self.to_embedding(h)

    # -- persistence ---------------------------------------------------------

    def checkpoint_config(self) -> dict:
        return {
            "kind": "brain_encoder",
            "brain": self.config.to_dict(),
            "subjects": self.subjects.ids(),
        }

    @classmethod
    def from_checkpoint(cls, params: dict[str, np.ndarray], config: dict) -> "BrainEncoder":
        enc = cls(
            BrainConfig.from_dict(config["brain"]),
            subject_ids=config["subjects"],
            seed=0,
        )
        enc.load_state(params)
        return enc


# ---------------------------------------------------------------------------
# stage-1 training: align encoder outputs with the frozen embedding table
# ---------------------------------------------------------------------------


@dataclass
class StageOneConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    train_subject_vectors: bool = True
    # stop once dev loss falls below this fraction of its starting value
    target_dev_fraction: float | None = None


@dataclass
class AlignedSentence:
    subject_id: str
    signals: list[np.ndarray]
    target: np.ndarray


@dataclass
class StageOneResult:
    encoder: BrainEncoder
    history: list[dict]
    skipped: int
    used: int


def gated_signals(sentence: SentenceRecord) -> list[np.ndarray]:
    """Word signals available to the model: fixation-gated, in order."""
    return [w.raw_eeg for w in sentence.words if w.has_fixation]


def collect_aligned(
    manifest: DatasetManifest,
    vocab: Vocabulary,
    table: TokenEmbeddingTable,
    max_words: int,
) -> tuple[list[AlignedSentence], int]:
    """Pair each sentence's gated signals with its token-embedding targets.

    Sentences whose token count differs from the gated word count cannot be
    aligned and are skipped (counted, not fatal): alignment is a property of
    the data, not of the model.
    """
    aligned: list[AlignedSentence] = []
    skipped = 0
    for sid, sentence in manifest.iter_records():
        tokens = tokenize(sentence.content)
        signals = gated_signals(sentence)
        if not signals or len(tokens) != len(signals) or len(signals) > max_words:
            skipped += 1
            continue
        target = table.rows(vocab.encode_many(tokens)).astype(np.float32)
        aligned.append(AlignedSentence(subject_id=sid, signals=signals, target=target))
    return aligned, skipped


def _mean_alignment_loss(encoder: BrainEncoder, examples: list[AlignedSentence]) -> float:
    total = 0.0
    with no_grad():
        for ex in examples:
            z = encoder.encode(ex.signals, ex.subject_id, training=False)
            total += float(T.mse_loss(z, Tensor(ex.target)).data)
    return total / len(examples)


def train_stage1(
    train_manifest: DatasetManifest,
    dev_manifest: DatasetManifest,
    vocab: Vocabulary,
    table: TokenEmbeddingTable,
    brain_config: BrainConfig,
    stage: StageOneConfig,
) -> StageOneResult:
    """Minimize the mean squared error between encoder outputs and frozen
    token embeddings. The embedding table is never written."""
    if not table.frozen:
        raise ValueError("target embedding table must be frozen before training")
    subject_ids = train_manifest.subject_ids()
    encoder = BrainEncoder(brain_config, subject_ids, seed=stage.seed)

    train_ex, skipped_train = collect_aligned(train_manifest, vocab, table, brain_config.max_words)
    dev_ex, skipped_dev = collect_aligned(dev_manifest, vocab, table, brain_config.max_words)
    if not train_ex:
        raise ValueError("no usable training sentences after fixation gating")

    trainable = dict(encoder.named_parameters())
    if not stage.train_subject_vectors:
        trainable = {k: v for k, v in trainable.items() if not k.startswith("subjects.")}
    opt = Adam(trainable.values(), lr=stage.lr)
    rng = np.random.default_rng(stage.seed)

    history: list[dict] = []
    initial_dev = _mean_alignment_loss(encoder, dev_ex) if dev_ex else float("nan")
    history.append(
        {
            "stage": 1,
            "epoch": 0,
            "train_loss": _mean_alignment_loss(encoder, train_ex),
            "dev_loss": initial_dev,
        }
    )

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
                ex = train_ex[j]
                z = encoder.encode(ex.signals, ex.subject_id, training=True, rng=rng)
                loss = T.mse_loss(z, Tensor(ex.target))
                backward(loss)
                epoch_total += float(loss.data)
            opt.scale_grads(1.0 / len(batch))
            opt.step()
            batch = []
        dev_loss = _mean_alignment_loss(encoder, dev_ex) if dev_ex else float("nan")
        history.append(
            {
                "stage": 1,
                "epoch": epoch,
                "train_loss": epoch_total / len(train_ex),
                "dev_loss": dev_loss,
            }
        )
        if (
            stage.target_dev_fraction is not None
            and dev_ex
            and math.isfinite(initial_dev)
            and dev_loss <= stage.target_dev_fraction * initial_dev
        ):
            break

    return StageOneResult(
        encoder=encoder,
        history=history,
        skipped=skipped_train + skipped_dev,
        used=len(train_ex),
    )
