"""Cell segmentation and tracking pipeline.

Instance segmentation through 3-class (background / boundary / cell) pixel
classification with a small U-Net, multi-dataset training schemes with
gradient accumulation, connected-component reconstruction, SEG evaluation,
and frame-to-frame tracking, over CTC-style dataset directories.
"""

__version__ = "0.1.0"
