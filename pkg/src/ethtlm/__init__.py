"""Transaction language model + knowledge graph pre-training for Ethereum account classification."""

__version__ = "0.1.0"
