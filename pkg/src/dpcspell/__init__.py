"""Character-level spelling correction with a detect / purify / correct transformer cascade."""

__version__ = "0.1.0"
