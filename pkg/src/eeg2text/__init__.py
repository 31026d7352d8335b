"""Word-level EEG to open-vocabulary text decoding."""

__version__ = "0.1.0"
