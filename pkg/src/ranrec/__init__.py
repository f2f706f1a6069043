"""Cell embeddings for radio networks: configuration recommendation and
misconfiguration detection over graph-attention encoders."""

__version__ = "0.1.0"
