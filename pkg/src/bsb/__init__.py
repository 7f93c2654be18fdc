"""bsb: from-scratch BERT-style encoder engine and model-size benchmark suite."""

__version__ = "0.1.0"
