"""Gated region refinement network for salient object detection.

A self-contained numpy implementation: tensor autodiff core, the gated
refinement head, boundary-band IoU supervision, synthetic data, training
and evaluation.
"""

__version__ = "0.1.0"
