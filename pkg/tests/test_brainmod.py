"""Brain encoder contracts and stage-1 alignment training."""

import numpy as np
import pytest

from eeg2text import tensor as T
from eeg2text.brainmod import (
    BrainConfig,
    BrainEncoder,
    CapacityError,
    EmptySignalError,
    StageOneConfig,
    UnknownSubjectError,
    collect_aligned,
    train_stage1,
)
from eeg2text.checkpoint import load_checkpoint, save_checkpoint
from eeg2text.dataio import split_dataset, synth_generate
from eeg2text.gradcheck import grad_check
from eeg2text.tensor import Tensor, no_grad

TINY = BrainConfig(
    channels=4,
    gru_hidden=3,
    proj_dim=5,
    d_model=6,
    layers=1,
    heads=2,
    ffn_mult=2,
    dropout=0.0,
    embed_dim=4,
    max_words=8,
)


def tiny_encoder(subjects=("a", "b"), seed=0):
    return BrainEncoder(TINY, subjects, seed=seed)


def tiny_synth(**kwargs):
    defaults = dict(
        n_subjects=2, n_sentences=10, vocab_size=8, sigma=0.0, seed=3,
        channels=4, embed_dim=4, t_range=(2, 5), sentence_len_range=(3, 6),
    )
    defaults.update(kwargs)
    return synth_generate(**defaults)


class TestEncodeWord:
    def test_empty_signal_rejected(self):
        enc = tiny_encoder()
        with pytest.raises(EmptySignalError):
            enc.encode_word(np.zeros((4, 0), dtype=np.float32))

    def test_output_width_is_both_directions(self):
        enc = tiny_encoder()
        out = enc.encode_word(np.random.default_rng(0).normal(size=(4, 6)))
        assert out.shape == (6,)  # 2 * gru_hidden


class TestProjectWords:
    def test_single_row_is_two_stacked_affines(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 6)).astype(np.float32)
        manual = (x @ enc.proj.w.data + enc.proj.b.data) @ enc.conv.w.data + enc.conv.b.data
        np.testing.assert_allclose(enc.project_words(Tensor(x)).data, manual, atol=1e-6)

    def test_identity_composition(self):
        enc = tiny_encoder()
        # square maps set to identity with zero bias pass input through
        enc.proj.w.data = np.eye(6, 5, dtype=np.float32)
        enc.proj.b.data[...] = 0
        enc.conv.w.data = np.eye(5, dtype=np.float32)
        enc.conv.b.data[...] = 0
        x = np.random.default_rng(2).normal(size=(3, 6)).astype(np.float32)
        np.testing.assert_allclose(enc.project_words(Tensor(x)).data, x @ np.eye(6, 5), atol=1e-6)

    def test_permuting_rows_permutes_output(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 6)).astype(np.float32)
        perm = rng.permutation(5)
        out = enc.project_words(Tensor(x)).data
        out_perm = enc.project_words(Tensor(x[perm])).data
        np.testing.assert_allclose(out_perm, out[perm], atol=0)


class TestSubjectLayer:
    def test_all_ones_vector_is_identity(self):
        enc = tiny_encoder()
        x = Tensor(np.random.default_rng(4).normal(size=(3, 5)).astype(np.float32))
        np.testing.assert_array_equal(enc.apply_subject(x, "a").data, x.data)

    def test_doubling_vector_doubles_output(self):
        enc = tiny_encoder()
        enc.subjects.vector("b").data[...] = 2.0
        x = Tensor(np.random.default_rng(5).normal(size=(3, 5)).astype(np.float32))
        np.testing.assert_array_equal(enc.apply_subject(x, "b").data, 2.0 * x.data)

    def test_homogeneous_in_vector_scale(self):
        # power-of-two scale so the float comparison is exact
        enc = tiny_encoder()
        rng = np.random.default_rng(6)
        enc.subjects.vector("a").data[...] = rng.uniform(0.5, 2.0, size=5).astype(np.float32)
        x = Tensor(rng.normal(size=(2, 5)).astype(np.float32))
        base = enc.apply_subject(x, "a").data.copy()
        enc.subjects.vector("a").data[...] = 2.0 * enc.subjects.vector("a").data
        np.testing.assert_array_equal(enc.apply_subject(x, "a").data, 2.0 * base)

    def test_distinct_vectors_differ_everywhere_they_differ(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(7)
        enc.subjects.vector("a").data[...] = rng.uniform(0.5, 1.0, 5).astype(np.float32)
        enc.subjects.vector("b").data[...] = rng.uniform(1.5, 2.0, 5).astype(np.float32)
        x = Tensor(rng.normal(size=(3, 5)).astype(np.float32) + 1.0)
        a = enc.apply_subject(x, "a").data
        b = enc.apply_subject(x, "b").data
        assert (a != b).all()

    def test_unknown_subject_is_an_error_not_a_default(self):
        enc = tiny_encoder()
        with pytest.raises(UnknownSubjectError):
            enc.apply_subject(Tensor(np.zeros((1, 5), dtype=np.float32)), "nobody")


class TestContextualize:
    def test_capacity_error(self):
        enc = tiny_encoder()
        x = Tensor(np.zeros((9, 5), dtype=np.float32))  # max_words = 8
        with pytest.raises(CapacityError):
            enc.contextualize(x)

    def test_deterministic_without_dropout(self):
        enc = tiny_encoder()
        x = Tensor(np.random.default_rng(8).normal(size=(4, 5)).astype(np.float32))
        a = enc.contextualize(x).data
        b = enc.contextualize(x).data
        np.testing.assert_array_equal(a, b)

    def test_zero_positions_make_it_permutation_equivariant(self):
        enc = tiny_encoder()
        enc.positions.data[...] = 0.0
        rng = np.random.default_rng(9)
        x = rng.normal(size=(5, 5)).astype(np.float32)
        perm = rng.permutation(5)
        out = enc.contextualize(Tensor(x)).data
        out_perm = enc.contextualize(Tensor(x[perm])).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-5)

    def test_learned_positions_break_equivariance(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(10)
        x = rng.normal(size=(5, 5)).astype(np.float32)
        perm = np.array([4, 2, 0, 1, 3])
        out = enc.contextualize(Tensor(x)).data
        out_perm = enc.contextualize(Tensor(x[perm])).data
        assert np.abs(out_perm - out[perm]).max() > 1e-4


class TestFullEncode:
    def test_output_shape(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(11)
        for m in (1, 3, 8):
            signals = [rng.normal(size=(4, int(t))) for t in rng.integers(1, 6, size=m)]
            assert enc.encode(signals, "a").shape == (m, 4)

    def test_subjects_with_distinct_vectors_give_distinct_outputs(self):
        enc = tiny_encoder()
        enc.subjects.vector("b").data[...] = 2.0
        rng = np.random.default_rng(12)
        signals = [rng.normal(size=(4, 3)) for _ in range(3)]
        za = enc.encode(signals, "a").data
        zb = enc.encode(signals, "b").data
        assert np.abs(za - zb).max() > 1e-4

    def test_pure_function_at_inference(self):
        enc = tiny_encoder()
        rng = np.random.default_rng(13)
        signals = [rng.normal(size=(4, 4)) for _ in range(2)]
        a = enc.encode(signals, "a").data
        b = enc.encode(signals, "a").data
        assert a.tobytes() == b.tobytes()

    def test_concurrent_readers_agree(self):
        import concurrent.futures

        enc = tiny_encoder()
        rng = np.random.default_rng(14)
        signals = [rng.normal(size=(4, 5)) for _ in range(3)]
        with no_grad():
            expected = enc.encode(signals, "b").data.tobytes()
        with concurrent.futures.ThreadPoolExecutor(max_workers=6) as pool:
            results = list(
                pool.map(lambda _: enc.encode(signals, "b").data.tobytes(), range(24))
            )
        assert all(r == expected for r in results)

    def test_identical_word_subject_pairs_map_to_identical_rows(self):
        # noiseless data fixes the signal per (subject, word type); encoding
        # each word as a one-word sequence must then be a pure function of
        # the pair, even when the arrays come from different sentences
        result = tiny_synth()
        enc = BrainEncoder(TINY, result.manifest.subject_ids(), seed=1)
        seen: dict[tuple[str, str], bytes] = {}
        hits = 0
        for sid, sentence in result.manifest.iter_records():
            for w in sentence.words:
                row = enc.encode([w.raw_eeg], sid).data[0]
                key = (sid, w.text)
                if key in seen:
                    assert seen[key] == row.tobytes()
                    hits += 1
                seen[key] = row.tobytes()
        assert hits > 0

    def test_end_to_end_gradients_on_selected_parameters(self):
        enc = BrainEncoder(TINY, ("a",), seed=5, dtype=np.float64)
        rng = np.random.default_rng(14)
        signals = [rng.normal(size=(4, 3)), rng.normal(size=(4, 5))]

        def f():
            z = enc.encode(signals, "a")
            return T.tmean(z * z) * 0.25

        probes = [enc.subjects.vector("a"), enc.conv.b, enc.to_embedding.lin2.b]
        assert grad_check(f, probes, eps=1e-4) <= 1e-4


class TestCheckpointRoundTrip:
    def test_reload_reproduces_outputs(self, tmp_path):
        enc = tiny_encoder(("s01", "s02"), seed=9)
        rng = np.random.default_rng(15)
        signals = [rng.normal(size=(4, 3)) for _ in range(2)]
        before = enc.encode(signals, "s02").data
        path = tmp_path / "brain.ckpt"
        save_checkpoint(path, enc.named_parameters(), enc.checkpoint_config(), seed=9)
        ck = load_checkpoint(path)
        clone = BrainEncoder.from_checkpoint(ck.params, ck.config)
        after = clone.encode(signals, "s02").data
        assert before.tobytes() == after.tobytes()


class TestStageOne:
    def test_loss_decreases_and_table_untouched(self):
        result = tiny_synth(n_sentences=14)
        train, dev, _ = split_dataset(result.manifest, (0.7, 0.2, 0.1), seed=2)
        checksum_before = result.table.checksum()
        out = train_stage1(
            train, dev, result.vocab, result.table, TINY,
            StageOneConfig(epochs=3, batch_size=4, lr=2e-3, seed=0),
        )
        assert result.table.checksum() == checksum_before
        assert out.history[-1]["train_loss"] < out.history[0]["train_loss"]
        assert [h["epoch"] for h in out.history] == list(range(len(out.history)))

    def test_word_count_mismatches_are_skipped_and_counted(self):
        result = tiny_synth(n_sentences=8)
        # break alignment for one sentence of one subject
        result.manifest.subjects[0][1][0].words[0].has_fixation = False
        aligned, skipped = collect_aligned(
            result.manifest, result.vocab, result.table, TINY.max_words
        )
        assert skipped == 1
        assert len(aligned) == 2 * 8 - 1

    def test_zero_usable_sentences_rejected(self):
        result = tiny_synth(n_sentences=2)
        for _, sentence in result.manifest.iter_records():
            for w in sentence.words:
                w.has_fixation = False  # gating leaves nothing to train on
        with pytest.raises(ValueError, match="usable"):
            train_stage1(
                result.manifest, result.manifest, result.vocab, result.table, TINY,
                StageOneConfig(epochs=1, batch_size=2, seed=0),
            )
