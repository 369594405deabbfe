"""Weakly-supervised temporal localization and grading from single timestamps.

Given per-frame feature sequences annotated with one timestamp and one
video-level grade, the pipeline scores frames for relevance, proposes
temporal windows by fitting Gaussians around score peaks, and grades the
windowed slices with a background-aware classifier.
"""

from tsgrade.autodiff import ParamStore, Tensor, backward, finite_difference_check

__all__ = ["Tensor", "ParamStore", "backward", "finite_difference_check"]

__version__ = "0.1.0"
