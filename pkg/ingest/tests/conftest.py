"""Constructed upstream-format fixtures."""

import pickle

import numpy as np
import pytest

CHANNELS = 6


def make_word(rng, text, channels=CHANNELS, fixated=True):
    if not fixated:
        return {"content": text, "rawEEG": None, "FFD": None, "GD": None, "TRT": None}
    t = int(rng.integers(3, 9))
    return {
        "content": text,
        "rawEEG": rng.normal(size=(channels, t)),
        "FFD": rng.normal(size=(8, channels)),
        "GD": rng.normal(size=(8, channels)),
        "TRT": rng.normal(size=(8, channels)),
    }


def make_sentence(rng, words, *, with_answer=True, channels=CHANNELS,
                  skip_fixation=()):
    entries = [
        make_word(rng, w, channels=channels, fixated=w not in skip_fixation)
        for w in words
    ]
    sentence = {
        "content": " ".join(words),
        "sentence level EEG": rng.normal(size=(channels, int(rng.integers(10, 20)))),
        "word": entries,
        "word tokens has fixation": [w for w in words if w not in skip_fixation],
        "word tokens with mask": ["[MASK]" if w in skip_fixation else w for w in words],
        "word tokens all": list(words),
    }
    if with_answer:
        sentence["answer EEG"] = rng.normal(size=(channels, 12))
    return sentence


@pytest.fixture
def upstream_fixture(tmp_path):
    """Two subjects, three sentences each, full seven-key entries."""
    rng = np.random.default_rng(42)
    data = {
        "ZAB": [
            make_sentence(rng, ["the", "cat", "sat"]),
            make_sentence(rng, ["dogs", "run", "fast", "today"]),
            make_sentence(rng, ["we", "read", "books"], skip_fixation=("read",)),
        ],
        "ZDM": [
            make_sentence(rng, ["the", "cat", "sat"]),
            make_sentence(rng, ["rain", "falls"]),
            make_sentence(rng, ["birds", "sing", "loudly"]),
        ],
    }
    path = tmp_path / "upstream.pkl"
    path.write_bytes(pickle.dumps(data))
    return path, data
