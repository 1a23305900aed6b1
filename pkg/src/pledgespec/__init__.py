"""Pledge specificity prediction and downstream political analysis.

A desk-scale library for fine-grained (7-level) ordinal specificity
prediction over manifesto sentences, with uni-modal distributional output
heads, cross-view semi-supervised training, and a hinge-loss MRF engine
for ideology / salience analysis.
"""

__version__ = "0.1.0"
