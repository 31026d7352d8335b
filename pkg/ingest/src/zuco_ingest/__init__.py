"""Converter from upstream ZuCo-layout pickles to the portable dataset format."""

__version__ = "0.1.0"
