"""Exporter bridging real transformer checkpoints to the embedding interchange format."""

from .export import export_embeddings, export_masked_predictions, load_checkpoint, read_corpus

__version__ = "0.1.0"
