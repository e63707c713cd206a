"""Desk-scale generative advertising lab.

Semantic tokenization of items, a generative allocation model with token-level
bidding, a learned payment network and a synthetic marketplace to train and
evaluate them on.
"""

__version__ = "0.1.0"
