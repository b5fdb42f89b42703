"""Left-ventricle wall analysis on one-cycle echo sequences.

Stages: wall segmentation by an encoder-decoder network (with iterative
pseudo labeling of ground truth), geometric feature engineering on the
segmented wall, and MI detection with classical classifiers. A synthetic
cardiac phantom generator makes the whole pipeline testable end to end.
"""

__version__ = "0.1.0"
