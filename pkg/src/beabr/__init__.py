"""Bandwidth-efficient adaptive bitrate streaming toolkit.

Trace-driven session simulator, buffered-data-volume dynamics, a time-aware
transformer delay predictor, and a QoE-bounded wastage-minimizing planner,
with MPC / RobustMPC / BBA baselines and a batch experiment harness.
"""

__version__ = "0.1.0"

from .kernel import BACKEND as KERNEL_BACKEND  # noqa: F401
