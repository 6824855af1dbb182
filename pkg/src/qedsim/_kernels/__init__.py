"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python twin
is the fallback.  ``QEDSIM_KERNEL=py`` (or ``=c``) forces a lane.
"""

from __future__ import annotations

import logging
import os

from . import core_py

log = logging.getLogger(__name__)

try:
    from . import core as _core_c
except ImportError:  # pragma: no cover - depends on the build
    _core_c = None

_FORCED = os.environ.get("QEDSIM_KERNEL", "").strip().lower()

if _FORCED == "py":
    impl = core_py
elif _FORCED == "c":
    if _core_c is None:
        raise ImportError("QEDSIM_KERNEL=c but the compiled kernel is not built")
    impl = _core_c
elif _core_c is not None:
    impl = _core_c
else:
    log.warning("compiled kernels unavailable; falling back to the python lane")
    impl = core_py

BACKEND = impl.BACKEND

POL_STATIC = core_py.POL_STATIC
POL_MODIFIED = core_py.POL_MODIFIED
POL_MARKOV_FIELD = core_py.POL_MARKOV_FIELD
POL_CAPPED_STATIC = core_py.POL_CAPPED_STATIC


def backends() -> dict:
    """Importable kernel lanes keyed by name."""
    out = {"python": core_py}
    if _core_c is not None:
        out["c"] = _core_c
    return out


def run_queue(plan, rng):
    return impl.run_queue(plan, rng)


def run_diffusion(plan, rng):
    return impl.run_diffusion(plan, rng)


def policy_eval(plan, x):
    return impl.policy_eval(plan, x)
