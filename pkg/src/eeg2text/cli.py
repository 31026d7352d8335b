"""Command-line interface: synth, train, decode, eval, serve.

Exit codes are part of the contract: 0 success, 2 configuration error,
3 missing prerequisite artifact, 4 unknown subject, 5 evaluation input
mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .brainmod import UnknownSubjectError
from .config import ConfigError, load_run_config
from .dataio import load_dataset, save_dataset, synth_generate, validate_dataset
from .metrics import CorpusReport, corpus_eval, table_embedder
from .pipeline import MissingPrerequisiteError, Runtime, response_json, run_stage1, run_stage2
from .vocab import (
    TokenEmbeddingTable,
    Vocabulary,
    load_embedding_table,
    save_embedding_table,
    tokenize,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_PREREQUISITE = 3
EXIT_UNKNOWN_SUBJECT = 4
EXIT_EVAL_MISMATCH = 5


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gain_factors = None
    if args.gain_factors:
        gain_factors = [float(f) for f in args.gain_factors.split(",")]
    result = synth_generate(
        n_subjects=args.subjects,
        n_sentences=args.sentences,
        vocab_size=args.vocab_size,
        sigma=args.sigma,
        seed=args.seed,
        channels=args.channels,
        embed_dim=args.embed_dim,
        t_range=(args.t_min, args.t_max),
        sentence_len_range=(args.len_min, args.len_max),
        subject_gain_factors=gain_factors,
    )
    dataset_path = out_dir / "dataset.ndjson"
    save_dataset(result.manifest, dataset_path)
    result.truth.save(out_dir / "truth.json")
    save_embedding_table(out_dir / "embeddings.bin", result.table, result.vocab)
    violations = validate_dataset(result.manifest)
    if violations:  # defensive: the generator must produce valid data
        for v in violations:
            print(v.render(), file=sys.stderr)
        return 1
    print(
        json.dumps(
            {
                "dataset": str(dataset_path),
                "truth": str(out_dir / "truth.json"),
                "embeddings": str(out_dir / "embeddings.bin"),
                "subjects": result.manifest.subject_ids(),
                "sentences": args.sentences,
            }
        )
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config, _parse_overrides(args.set))
    runner = run_stage1 if args.stage == 1 else run_stage2
    summary = runner(config)
    print(json.dumps({"stage": args.stage, **summary}))
    return EXIT_OK


def cmd_decode(args) -> int:
    config = load_run_config(args.config, _parse_overrides(args.set))
    runtime = Runtime.load(config)
    manifest = load_dataset(args.dataset)
    if args.subject not in manifest.subject_ids():
        print(f"unknown subject in dataset file: {args.subject}", file=sys.stderr)
        return EXIT_UNKNOWN_SUBJECT
    if args.subject not in runtime.encoder.subjects.ids():
        print(f"unknown subject in trained model: {args.subject}", file=sys.stderr)
        return EXIT_UNKNOWN_SUBJECT
    lines = [
        response_json(runtime.decode_record(sentence, args.subject))
        for sentence in manifest.sentences_for(args.subject)
    ]
    payload = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def _eval_embedder(args, tokens: list[str]):
    if args.embeddings:
        table, vocab = load_embedding_table(args.embeddings)
        return table_embedder(table, vocab)
    # standalone fallback: a fixed-seed table over the observed vocabulary
    vocab = Vocabulary.from_words(tokens)
    table = TokenEmbeddingTable.seeded(len(vocab), 64, seed=0)
    return table_embedder(table, vocab)


def cmd_eval(args) -> int:
    predictions = Path(args.predictions).read_text(encoding="utf-8").splitlines()
    references = Path(args.references).read_text(encoding="utf-8").splitlines()
    if len(predictions) != len(references):
        print(
            f"line count mismatch: {len(predictions)} predictions vs "
            f"{len(references)} references",
            file=sys.stderr,
        )
        return EXIT_EVAL_MISMATCH
    pairs = [(tokenize(p), tokenize(r)) for p, r in zip(predictions, references)]
    all_tokens = [t for c, r in pairs for t in (*c, *r)]
    row = corpus_eval(pairs, _eval_embedder(args, all_tokens))
    report = CorpusReport(rows={args.model_name: row})
    print(report.render())
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.records()) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_run_config(args.config, _parse_overrides(args.set))
    app = create_app(Runtime.load(config))
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eeg2text",
        description="Word-level EEG to open-vocabulary text: data, training, "
        "decoding, evaluation, serving.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with known ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--sentences", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=120)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--channels", type=int, default=105)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--t-min", type=int, default=20)
    p.add_argument("--t-max", type=int, default=80)
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--gain-factors", default="", help="comma-separated per-subject factors")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run a training stage")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode every sentence of one subject")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--embeddings", default="", help="import-format table for BERTScore")
    p.add_argument("--json-out", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the decode workflow over HTTP")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING_PREREQUISITE
    except UnknownSubjectError as exc:
        print(f"unknown subject: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_SUBJECT


if __name__ == "__main__":
    sys.exit(main())
