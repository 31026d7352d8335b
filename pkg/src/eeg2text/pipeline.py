"""One pipeline behind both the CLI and the HTTP service.

Training writes checkpoints and loss logs into the configured output
directory; decoding loads a frozen runtime (brain encoder, generator,
vocabulary, refine policy) and turns sentence records into responses. The
response serializer is shared so the two surfaces emit identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .brainmod import (
    BrainEncoder,
    StageOneConfig,
    gated_signals,
    train_stage1,
)
from .checkpoint import load_checkpoint, params_checksum, save_checkpoint
from .config import RunConfig
from .dataio import (
    DatasetManifest,
    SentenceRecord,
    load_dataset,
    split_dataset,
    validate_dataset,
)
from .langmod import (
    Seq2Seq,
    Seq2SeqConfig,
    StageTwoConfig,
    beam_decode,
    greedy_decode,
    train_stage2,
)
from .refine import refine
from .tensor import no_grad
from .vocab import TokenEmbeddingTable, Vocabulary, load_embedding_table


class MissingPrerequisiteError(FileNotFoundError):
    """A required earlier-stage artifact does not exist."""


@dataclass
class DecodeResponse:
    raw_text: str
    refined_text: str
    refine_source: str
    logprob: float


def response_json(resp: DecodeResponse) -> str:
    """Canonical serialization shared by the CLI and the service."""
    return json.dumps(
        {
            "raw_text": resp.raw_text,
            "refined_text": resp.refined_text,
            "refine_source": resp.refine_source,
            "logprob": resp.logprob,
        }
    )


def write_loss_log(path: Path, history: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")


def _load_inputs(config: RunConfig) -> tuple[DatasetManifest, Vocabulary, TokenEmbeddingTable]:
    if not config.data_path:
        raise MissingPrerequisiteError("data.path is not configured")
    if not Path(config.data_path).exists():
        raise MissingPrerequisiteError(f"dataset file not found: {config.data_path}")
    if not config.embeddings_path:
        raise MissingPrerequisiteError("embeddings.path is not configured")
    if not Path(config.embeddings_path).exists():
        raise MissingPrerequisiteError(
            f"embedding table not found: {config.embeddings_path}"
        )
    manifest = load_dataset(config.data_path)
    table, vocab = load_embedding_table(config.embeddings_path)
    return manifest, vocab, table


def run_stage1(config: RunConfig) -> dict:
    manifest, vocab, table = _load_inputs(config)
    train, dev, _ = split_dataset(manifest, config.split.ratios(), config.split.split_seed)
    stage = StageOneConfig(
        epochs=config.stage1.epochs,
        batch_size=config.stage1.batch_size,
        lr=config.stage1.lr,
        seed=config.seed,
        train_subject_vectors=config.stage1.train_subject_vectors,
        target_dev_fraction=config.stage1.target_dev_fraction,
    )
    result = train_stage1(train, dev, vocab, table, config.brain, stage)
    out = config.brain_checkpoint()
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out, result.encoder.named_parameters(), result.encoder.checkpoint_config(),
        seed=config.seed,
    )
    write_loss_log(config.loss_log(1), result.history)
    return {
        "checkpoint": str(out),
        "loss_log": str(config.loss_log(1)),
        "epochs": len(result.history) - 1,
        "final_dev_loss": result.history[-1]["dev_loss"],
        "skipped": result.skipped,
    }


def load_brain(config: RunConfig) -> BrainEncoder:
    path = config.brain_checkpoint()
    if not path.exists():
        raise MissingPrerequisiteError(
            f"stage-1 checkpoint not found at expected path: {path}"
        )
    ck = load_checkpoint(path)
    return BrainEncoder.from_checkpoint(ck.params, ck.config)


def run_stage2(config: RunConfig) -> dict:
    manifest, vocab, table = _load_inputs(config)
    encoder = load_brain(config)
    train, dev, _ = split_dataset(manifest, config.split.ratios(), config.split.split_seed)
    s2s_config = Seq2SeqConfig(
        vocab_size=len(vocab),
        src_dim=encoder.config.embed_dim,
        d_model=config.lang.d_model,
        enc_layers=config.lang.enc_layers,
        dec_layers=config.lang.dec_layers,
        heads=config.lang.heads,
        ffn_mult=config.lang.ffn_mult,
        dropout=config.lang.dropout,
        max_src=config.lang.max_src,
        max_len=config.lang.max_len,
    )
    stage = StageTwoConfig(
        epochs=config.stage2.epochs,
        batch_size=config.stage2.batch_size,
        lr=config.stage2.lr,
        seed=config.seed,
        fine_tune_brain=config.stage2.fine_tune_brain,
        target_dev_loss=config.stage2.target_dev_loss,
    )
    result = train_stage2(train, dev, encoder, vocab, s2s_config, stage)
    out = config.seq2seq_checkpoint()
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt_config = result.model.checkpoint_config()
    ckpt_config["embedding_checksum"] = table.checksum()
    save_checkpoint(out, result.model.named_parameters(), ckpt_config, seed=config.seed)
    if stage.fine_tune_brain:
        save_checkpoint(
            config.brain_checkpoint(), encoder.named_parameters(),
            encoder.checkpoint_config(), seed=config.seed,
        )
    write_loss_log(config.loss_log(2), result.history)
    return {
        "checkpoint": str(out),
        "loss_log": str(config.loss_log(2)),
        "epochs": len(result.history) - 1,
        "final_dev_loss": result.history[-1]["dev_loss"],
        "skipped": result.skipped,
    }


class Runtime:
    """Frozen decode stack: safe for any number of concurrent readers."""

    def __init__(self, config: RunConfig, encoder: BrainEncoder, model: Seq2Seq,
                 vocab: Vocabulary, table: TokenEmbeddingTable, checksum: str):
        self.config = config
        self.encoder = encoder
        self.model = model
        self.vocab = vocab
        self.table = table
        self.checksum = checksum

    @classmethod
    def load(cls, config: RunConfig) -> "Runtime":
        if not config.embeddings_path or not Path(config.embeddings_path).exists():
            raise MissingPrerequisiteError(
                f"embedding table not found: {config.embeddings_path!r}"
            )
        table, vocab = load_embedding_table(config.embeddings_path)
        encoder = load_brain(config)
        s2s_path = config.seq2seq_checkpoint()
        if not s2s_path.exists():
            raise MissingPrerequisiteError(
                f"stage-2 checkpoint not found at expected path: {s2s_path}"
            )
        ck = load_checkpoint(s2s_path)
        model = Seq2Seq.from_checkpoint(ck.params, ck.config)
        combined = dict(ck.params)
        brain_ck = load_checkpoint(config.brain_checkpoint())
        combined.update({f"brain.{k}": v for k, v in brain_ck.params.items()})
        return cls(config, encoder, model, vocab, table, params_checksum(combined))

    @property
    def channels(self) -> int:
        return self.encoder.config.channels

    def validate_record(self, sentence: SentenceRecord, sampling_rate: float | None = None) -> list[str]:
        probe = DatasetManifest(
            channels=self.channels,
            sampling_rate=sampling_rate if sampling_rate is not None else 500.0,
            subjects=[("probe", [sentence])],
        )
        return [v.render() for v in validate_dataset(probe)]

    def decode_record(self, sentence: SentenceRecord, subject_id: str) -> DecodeResponse:
        signals = gated_signals(sentence)
        if not signals:
            raw_text = ""
            logprob = 0.0
        else:
            with no_grad():
                z = self.encoder.encode(signals, subject_id).data
            if self.config.decode.use_beam and self.config.decode.beam_width > 1:
                hyp = beam_decode(
                    self.model, z,
                    beam_width=self.config.decode.beam_width,
                    max_len=self.config.decode.max_len,
                    length_alpha=self.config.decode.length_alpha,
                )
            else:
                hyp = greedy_decode(self.model, z, max_len=self.config.decode.max_len)
            raw_text = self.vocab.decode_text(hyp.token_ids)
            logprob = hyp.logprob
        refined = refine(raw_text, self.config.refine_policy) if raw_text else None
        return DecodeResponse(
            raw_text=raw_text,
            refined_text=refined.text if refined else "",
            refine_source=refined.source if refined else self.config.refine_policy.kind,
            logprob=logprob,
        )

    def decode_manifest(self, manifest: DatasetManifest) -> list[DecodeResponse]:
        return [self.decode_record(s, sid) for sid, s in manifest.iter_records()]
