"""Two-stream attention caption generation with adversarial
policy-gradient refinement, on a self-contained procedural benchmark."""

__version__ = "0.1.0"
