"""Hot-loop kernels with a compiled core and a pure-Python fallback.

The compiled extension (`_ckern`, Cython) is preferred when importable; the
pure fallback (`_pykern`) is selected otherwise, or when the environment
variable ``VLNCE_BENCH_PURE`` is set to a non-empty value. Both backends are
bit-identical by construction (see ``benchmarks/bench_kernels.py`` for the
speed comparison and ``tests/test_kernels.py`` for the equivalence check).
"""

from __future__ import annotations

import os

from . import _pykern

if os.environ.get("VLNCE_BENCH_PURE"):
    _impl = _pykern
else:
    try:
        from . import _ckern as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykern

distance_field = _impl.distance_field
ray_first_hits = _impl.ray_first_hits
sweep_forward = _impl.sweep_forward


def backend_name() -> str:
    return _impl.BACKEND


__all__ = ["distance_field", "ray_first_hits", "sweep_forward", "backend_name"]
