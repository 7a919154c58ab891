"""CNN-backed land-cover labeler worker.

Fine-tunes only the final classification layer over a frozen convolutional
backbone on a folder-per-class patch dataset, then serves patch labels over
the newline-delimited JSON wire protocol.
"""

__version__ = "0.1.0"
