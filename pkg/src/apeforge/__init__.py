"""apeforge: an automatic post-editing pipeline toolkit.

Covers artificial triplet synthesis and TER-statistics filtering, subword
segmentation, toy attentional sequence-to-sequence models, multi-input
log-linear beam decoding with a post-editing penalty, and TER-driven weight
tuning.
"""

__version__ = "0.1.0"
