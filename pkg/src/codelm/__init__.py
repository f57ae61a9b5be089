"""Desk-scale pipeline for joint code/text sequence modeling.

Subpackages cover the full loop: glyph normalization (codec), corpus
assembly (corpus), subword vocabulary (tokenizer), span-corruption
examples (denoise), a small encoder-decoder transformer with its own
reverse-mode gradient core (autodiff, model), training and checkpoints
(trainer), decoding (infer), task adapters (tasks), and evaluation
(metrics, minilang).
"""

__version__ = "0.1.0"
