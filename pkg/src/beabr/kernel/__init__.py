"""Plan-rollout kernel with backend selection.

The compiled extension is used when available; the pure-Python reference in
`pyrollout` otherwise. Set BEABR_KERNEL=python to force the fallback (used by
the benchmark and the backend-equivalence tests). Both backends implement the
same arithmetic; within one process a single backend serves every caller, so
the planner's QoE-bound comparisons stay self-consistent.
"""

from __future__ import annotations

import os

from . import pyrollout
from .pyrollout import rollout_details

if os.environ.get("BEABR_KERNEL", "").lower() == "python":
    _impl = pyrollout
else:
    try:
        from . import _rollout as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pyrollout

BACKEND: str = _impl.BACKEND
evaluate_plans = _impl.evaluate_plans

__all__ = ["BACKEND", "evaluate_plans", "rollout_details", "pyrollout"]
