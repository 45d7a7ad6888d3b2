"""Self-adaptive fuzzing loop for MLIR-style compilers."""

__version__ = "0.1.0"
