"""curator: online per-sample data reweighting for desk-scale LM training.

Scores every training sample against an anchor pool (lexical overlap, model
or frozen embeddings, perplexity, gradient influence), turns scores into
per-sample learning-rate multipliers through a temperature sigmoid gate, and
trains a built-in byte-level transformer with exact FLOPs accounting.
Offline selection and domain mixing run through the same weighted-update
machinery for cost-comparable baselines.
"""

__version__ = "0.1.0"
