"""Data layer: format round-trips, validation faults, splitting, synthesis."""

import json

import numpy as np
import pytest

from eeg2text import dataio
from eeg2text.dataio import (
    BANDS,
    DatasetManifest,
    DatasetPayloadError,
    DatasetRecordError,
    DatasetVersionError,
    SentenceRecord,
    SynthGroundTruth,
    WordRecord,
    load_dataset,
    manifests_equal,
    nyquist_min_rate,
    save_dataset,
    split_dataset,
    synth_generate,
    validate_dataset,
)


def small_synth(**kwargs):
    defaults = dict(
        n_subjects=2,
        n_sentences=6,
        vocab_size=12,
        sigma=0.0,
        seed=7,
        channels=5,
        embed_dim=4,
        t_range=(3, 8),
    )
    defaults.update(kwargs)
    return synth_generate(**defaults)


class TestNyquist:
    def test_paper_value(self):
        assert nyquist_min_rate(100.0) == 200.0

    def test_degenerate(self):
        assert nyquist_min_rate(0.0) == 0.0

    def test_highest_band_edge(self):
        assert nyquist_min_rate(49.5) == 99.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            nyquist_min_rate(-1.0)


class TestBands:
    def test_exactly_eight_bands_with_fixed_ranges(self):
        expected = [
            ("theta1", 4.0, 6.0),
            ("theta2", 6.5, 8.0),
            ("alpha1", 8.5, 10.0),
            ("alpha2", 10.5, 13.0),
            ("beta1", 13.5, 18.0),
            ("beta2", 18.5, 30.0),
            ("gamma1", 30.5, 40.0),
            ("gamma2", 40.0, 49.5),
        ]
        assert [(b.name, b.lo, b.hi) for b in BANDS] == expected
        assert all(b.lo < b.hi for b in BANDS)

    def test_defaults_satisfy_nyquist(self):
        m = DatasetManifest()
        assert m.sampling_rate >= nyquist_min_rate(max(b.hi for b in BANDS))
        assert m.channels == 105 and m.sampling_rate == 500.0


class TestValidation:
    def test_synthetic_manifest_is_valid(self):
        result = small_synth()
        assert validate_dataset(result.manifest) == []

    def test_channel_count_fault_is_one_violation(self):
        result = small_synth()
        manifest = result.manifest
        word = manifest.subjects[0][1][0].words[0]
        word.raw_eeg = word.raw_eeg[:-1, :]  # drop one channel row
        report = validate_dataset(manifest)
        assert len(report) == 1
        v = report[0]
        assert v.rule == "channel_count"
        assert (v.subject_id, v.sentence_index, v.word_index) == ("s01", 0, 0)

    def test_band_count_fault(self):
        result = small_synth()
        manifest = result.manifest
        word = manifest.subjects[0][1][1].words[0]
        word.band_features["GD"] = word.band_features["GD"][:-1, :]
        report = validate_dataset(manifest)
        assert [v.rule for v in report] == ["band_shape"]

    def test_nyquist_fault(self):
        result = small_synth()
        manifest = result.manifest
        manifest.sampling_rate = 90.0  # below 2 * 49.5
        report = validate_dataset(manifest)
        assert [v.rule for v in report] == ["nyquist"]
        assert "99" in report[0].message

    def test_duplicate_subject_ids(self):
        result = small_synth()
        manifest = result.manifest
        manifest.subjects.append(("s01", manifest.subjects[0][1]))
        rules = [v.rule for v in validate_dataset(manifest)]
        assert "duplicate_subject" in rules

    def test_missing_fixation_signal(self):
        result = small_synth()
        manifest = result.manifest
        manifest.subjects[0][1][0].words[0].raw_eeg = None
        rules = [v.rule for v in validate_dataset(manifest)]
        assert rules == ["empty_signal"]

    def test_report_entries_render_location(self):
        result = small_synth()
        manifest = result.manifest
        manifest.subjects[1][1][2].words[1].raw_eeg = None
        text = validate_dataset(manifest)[0].render()
        assert "subject=s02" in text and "sentence=2" in text and "word=1" in text


class TestRoundTrip:
    def test_roundtrip_identity(self, tmp_path):
        result = small_synth()
        path = tmp_path / "data.ndjson"
        save_dataset(result.manifest, path)
        loaded = load_dataset(path)
        assert manifests_equal(result.manifest, loaded)

    def test_roundtrip_with_sentence_eeg_and_gaps(self, tmp_path):
        rng = np.random.default_rng(3)
        word_full = WordRecord(
            text="alpha",
            has_fixation=True,
            raw_eeg=rng.normal(size=(4, 6)).astype(np.float32),
            band_features={"TRT": rng.normal(size=(8, 4)).astype(np.float32)},
        )
        word_skip = WordRecord(text="beta", has_fixation=False, raw_eeg=None)
        manifest = DatasetManifest(
            channels=4,
            sampling_rate=500.0,
            provenance="fixture",
            subjects=[
                ("a", [SentenceRecord("alpha beta", [word_full, word_skip],
                                      sentence_eeg=rng.normal(size=(4, 9)).astype(np.float32))]),
            ],
        )
        path = tmp_path / "data.ndjson"
        save_dataset(manifest, path)
        assert manifests_equal(manifest, load_dataset(path))

    def test_randomized_roundtrips(self, tmp_path):
        for seed in range(10):
            result = small_synth(seed=seed, n_sentences=3, sigma=0.3)
            path = tmp_path / f"d{seed}.ndjson"
            save_dataset(result.manifest, path)
            assert manifests_equal(result.manifest, load_dataset(path))

    def test_unknown_version_rejected_without_partial_result(self, tmp_path):
        result = small_synth()
        path = tmp_path / "data.ndjson"
        save_dataset(result.manifest, path)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["format_version"] = 2
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DatasetVersionError):
            load_dataset(path)

    def test_truncated_payload_names_record(self, tmp_path):
        result = small_synth()
        path = tmp_path / "data.ndjson"
        save_dataset(result.manifest, path)
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["words"][0]["raw_eeg"]["shape"][1] += 1  # payload now too short
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetPayloadError, match=":2"):
            load_dataset(path)

    def test_malformed_record_distinct_error(self, tmp_path):
        result = small_synth()
        path = tmp_path / "data.ndjson"
        save_dataset(result.manifest, path)
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        del record["words"][0]["text"]
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetRecordError):
            load_dataset(path)


class TestSplit:
    def test_quota_sizes(self):
        result = small_synth(n_sentences=10)
        train, dev, test = split_dataset(result.manifest, (0.8, 0.1, 0.1), seed=5)
        sizes = [len(m.subjects[0][1]) for m in (train, dev, test)]
        assert sizes == [8, 1, 1]

    def test_deterministic(self):
        result = small_synth(n_sentences=10)
        a = split_dataset(result.manifest, (0.8, 0.1, 0.1), seed=5)
        b = split_dataset(result.manifest, (0.8, 0.1, 0.1), seed=5)
        for ma, mb in zip(a, b):
            assert manifests_equal(ma, mb)

    def test_same_content_lands_in_same_split(self):
        result = small_synth(n_subjects=3, n_sentences=9)
        train, dev, test = split_dataset(result.manifest, (0.6, 0.2, 0.2), seed=1)
        for part in (train, dev, test):
            contents_by_subject = [
                {s.content for s in sentences} for _, sentences in part.subjects
            ]
            assert all(c == contents_by_subject[0] for c in contents_by_subject)

    def test_partition_no_overlap_full_cover(self):
        result = small_synth(n_sentences=13)
        parts = split_dataset(result.manifest, (0.5, 0.25, 0.25), seed=2)
        sets = [{s.content for _, ss in p.subjects for s in ss} for p in parts]
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        everything = {s.content for _, ss in result.manifest.subjects for s in ss}
        assert sets[0] | sets[1] | sets[2] == everything

    def test_bad_ratios(self):
        result = small_synth()
        with pytest.raises(ValueError):
            split_dataset(result.manifest, (0.5, 0.2, 0.2))
        with pytest.raises(ValueError):
            split_dataset(result.manifest, (1.0, -0.5, 0.5))


class TestSynth:
    def test_noiseless_signal_matches_linear_map_exactly(self):
        result = small_synth()
        truth = result.truth
        for sid, sentences in result.manifest.subjects:
            gain = truth.gains[sid]
            for sentence in sentences[:2]:
                for word in sentence.words:
                    row = result.table.vectors[result.vocab.encode(word.text)]
                    expected = (gain * (truth.mixing @ row)).astype(np.float32)
                    assert (word.raw_eeg == expected[:, None]).all()

    def test_noiseless_columns_constant(self):
        result = small_synth()
        word = result.manifest.subjects[0][1][0].words[0]
        assert (word.raw_eeg == word.raw_eeg[:, :1]).all()

    def test_same_seed_byte_identical_files(self, tmp_path):
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        save_dataset(small_synth(sigma=0.4).manifest, p1)
        save_dataset(small_synth(sigma=0.4).manifest, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_gain_factors_scale_channel_means(self):
        result = small_synth(subject_gain_factors=[1.0, 3.0], sigma=0.0, n_sentences=12)
        sums = {}
        for sid, sentences in result.manifest.subjects:
            total = np.zeros(5)
            for sentence in sentences:
                for w in sentence.words:
                    total += np.abs(w.raw_eeg[:, 0])
            sums[sid] = total
        # identical word multiset per subject, so the per-channel ratio of
        # summed magnitudes is exactly the per-channel gain ratio
        truth = result.truth
        np.testing.assert_allclose(
            sums["s02"] / sums["s01"],
            truth.gains["s02"] / truth.gains["s01"],
            rtol=1e-4,
        )

    def test_ground_truth_roundtrip(self, tmp_path):
        result = small_synth()
        path = tmp_path / "truth.json"
        result.truth.save(path)
        loaded = SynthGroundTruth.load(path)
        np.testing.assert_array_equal(loaded.mixing, result.truth.mixing)
        assert set(loaded.gains) == set(result.truth.gains)
        for sid in loaded.gains:
            np.testing.assert_array_equal(loaded.gains[sid], result.truth.gains[sid])

    def test_validates_clean(self):
        for seed in (0, 1, 2):
            assert validate_dataset(small_synth(seed=seed, sigma=0.2).manifest) == []

    def test_t_in_range_and_fixed_per_subject_word(self):
        result = small_synth(n_sentences=12)
        lengths: dict[tuple[str, str], set[int]] = {}
        for sid, sentences in result.manifest.subjects:
            for sentence in sentences:
                for w in sentence.words:
                    assert 3 <= w.raw_eeg.shape[1] <= 8
                    lengths.setdefault((sid, w.text), set()).add(w.raw_eeg.shape[1])
        assert all(len(v) == 1 for v in lengths.values())
