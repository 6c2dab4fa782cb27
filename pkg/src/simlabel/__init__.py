"""Similarity-label matching: replace noisy multi-label tag assignment with
SME-rated tag-pair similarities, an encoder trained on rating-derived text
pairs, and top-k assignment by cosine similarity.
"""

__version__ = "0.1.0"
