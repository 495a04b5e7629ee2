"""Skin-lesion segmentation with boundary and reverse attention over a
Res2Net-style pyramid, plus the preprocessing, metrics and experiment harness
around it."""

__version__ = "0.1.0"
