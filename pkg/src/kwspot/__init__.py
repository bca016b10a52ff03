"""kwspot: zero-shot audio-visual keyword spotting at desk scale."""

__version__ = "0.1.0"
