"""HTTP generation server: a small causal LM fine-tuned via low-rank adapters."""

__version__ = "0.1.0"
