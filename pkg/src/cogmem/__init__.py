"""cogmem: embedded cognitive memory runtime for LLM agents."""

__version__ = "0.1.0"
