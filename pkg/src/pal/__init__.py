"""Detector-agnostic active-learning batch selection for object detection.

Works purely on detector inference outputs: per-class logistic TP/FP
classifiers turn pre-suppression box counts and confidences into instance
uncertainty, image-level entropy/diversity signals refine per-class candidate
lists, and a class-aware budget favours under-represented classes.
"""

__version__ = "0.1.0"
