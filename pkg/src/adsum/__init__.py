"""Audio-visual ad summarization: clip a 30 s ad down to a 15 s cut."""

__version__ = "0.1.0"

STANDARD_FPS = 24000 / 1001
