"""Land-use scene classification for irregular land parcels.

Pipeline: random square-window sampling inside each parcel, patch-level
land-cover words from a pluggable labeler, per-parcel TF-IDF semantic
features, and a random-forest classifier with out-of-bag error estimation,
plus RECT / RAND baselines and a full accuracy-assessment suite.
"""

__version__ = "0.1.0"
