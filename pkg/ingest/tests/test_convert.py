"""Conversion to the portable format, checked against the decoder package."""

import json
import pickle

import numpy as np
import pytest

from eeg2text.dataio import load_dataset, validate_dataset
from zuco_ingest.cli import main
from zuco_ingest.convert import convert

from conftest import CHANNELS, make_sentence, make_word


def test_fixture_converts_clean(upstream_fixture, tmp_path):
    path, data = upstream_fixture
    out = tmp_path / "portable.ndjson"
    report = convert(path, out, channels=CHANNELS, sampling_rate=500.0)
    manifest = load_dataset(out)
    assert validate_dataset(manifest) == []
    assert manifest.subject_ids() == ["ZAB", "ZDM"]
    assert report.sentences_written == 6
    assert not report.skipped


def test_values_match_within_float32_narrowing(upstream_fixture, tmp_path):
    path, data = upstream_fixture
    out = tmp_path / "portable.ndjson"
    convert(path, out, channels=CHANNELS)
    manifest = load_dataset(out)
    for sid, sentences in manifest.subjects:
        for si, sentence in enumerate(sentences):
            source = data[sid][si]
            assert sentence.content == source["content"]
            np.testing.assert_array_equal(
                sentence.sentence_eeg,
                source["sentence level EEG"].astype(np.float32),
            )
            for wi, word in enumerate(sentence.words):
                src_word = source["word"][wi]
                assert word.text == src_word["content"]
                if word.has_fixation:
                    np.testing.assert_array_equal(
                        word.raw_eeg, src_word["rawEEG"].astype(np.float32)
                    )
                    for window in ("FFD", "GD", "TRT"):
                        np.testing.assert_array_equal(
                            word.band_features[window],
                            src_word[window].astype(np.float32),
                        )
                else:
                    assert word.raw_eeg is None


def test_narrowing_error_bounded_by_float32_ulp(upstream_fixture, tmp_path):
    path, data = upstream_fixture
    out = tmp_path / "portable.ndjson"
    convert(path, out, channels=CHANNELS)
    manifest = load_dataset(out)
    word = manifest.subjects[0][1][0].words[0]
    source = data["ZAB"][0]["word"][0]["rawEEG"]
    err = np.abs(word.raw_eeg.astype(np.float64) - source)
    bound = np.spacing(np.abs(source).astype(np.float32)).astype(np.float64)
    assert (err <= bound).all()


def test_fixation_gating_from_upstream_flags(upstream_fixture, tmp_path):
    path, _ = upstream_fixture
    out = tmp_path / "portable.ndjson"
    convert(path, out, channels=CHANNELS)
    manifest = load_dataset(out)
    sentence = manifest.sentences_for("ZAB")[2]  # 'read' lacks fixation
    flags = [(w.text, w.has_fixation) for w in sentence.words]
    assert flags == [("we", True), ("read", False), ("books", True)]


def test_channel_fault_word_skipped_and_reported(tmp_path):
    rng = np.random.default_rng(1)
    sentence = make_sentence(rng, ["good", "bad", "fine"])
    sentence["word"][1]["rawEEG"] = rng.normal(size=(CHANNELS - 1, 5))  # 104-style fault
    data = {"ZX": [sentence]}
    src = tmp_path / "fault.pkl"
    src.write_bytes(pickle.dumps(data))
    out = tmp_path / "portable.ndjson"
    report = convert(src, out, channels=CHANNELS)
    assert len(report.skipped) == 1
    entry = report.skipped[0]
    assert (entry.subject_id, entry.sentence_index, entry.word_index) == ("ZX", 0, 1)
    assert "channel rows" in entry.reason
    manifest = load_dataset(out)
    assert validate_dataset(manifest) == []
    assert [w.text for w in manifest.sentences_for("ZX")[0].words] == ["good", "fine"]


def test_opaque_fields_preserved_in_report_not_file(upstream_fixture, tmp_path):
    path, data = upstream_fixture
    out = tmp_path / "portable.ndjson"
    report_path = tmp_path / "report.json"
    convert(path, out, channels=CHANNELS, report_path=report_path)
    report = json.loads(report_path.read_text())
    assert set(report["opaque_fields"]) == {
        "answer EEG", "word tokens with mask", "word tokens all",
    }
    masked = [
        e for e in report["opaque_fields"]["word tokens with mask"]
        if e["subject_id"] == "ZAB" and e["sentence_index"] == 2
    ]
    assert masked[0]["value"] == ["we", "[MASK]", "books"]
    answer = report["opaque_fields"]["answer EEG"][0]
    assert answer["array"]["shape"] == [CHANNELS, 12]
    # and none of it leaks into the portable file
    text = out.read_text()
    assert "answer" not in text and "[MASK]" not in text


def test_deterministic_output(upstream_fixture, tmp_path):
    path, _ = upstream_fixture
    a = tmp_path / "a.ndjson"
    b = tmp_path / "b.ndjson"
    convert(path, a, channels=CHANNELS)
    convert(path, b, channels=CHANNELS)
    assert a.read_bytes() == b.read_bytes()


def test_cli_roundtrip(upstream_fixture, tmp_path, capsys):
    path, _ = upstream_fixture
    out = tmp_path / "cli.ndjson"
    report = tmp_path / "cli_report.json"
    rc = main([
        "convert", str(path), str(out),
        "--channels", str(CHANNELS), "--report", str(report),
    ])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["sentences_written"] == 6
    assert validate_dataset(load_dataset(out)) == []
    assert report.exists()

    rc = main(["inspect", str(path)])
    assert rc == 0
    inspected = json.loads(capsys.readouterr().out)
    assert inspected["subjects"] == 2


def test_unreadable_input_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.pkl"
    bad.write_bytes(b"nope")
    rc = main(["convert", str(bad), str(tmp_path / "out.ndjson")])
    assert rc == 1
    assert "error" in capsys.readouterr().err
