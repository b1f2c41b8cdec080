"""antislop - find, suppress and train away over-represented LLM writing patterns."""

__version__ = "0.1.0"
