"""Hot numeric kernels with two interchangeable backends.

The numba backend compiles per-pixel loops with ``@njit(cache=True)``; the
numpy backend runs the same math vectorized per triangle (max-flow falls back
to plain Python loops). Set ``FORGE_PURE_NUMPY=1`` to force the numpy path;
otherwise numba is used when importable. ``benchmarks/bench_kernels.py``
compares the two.
"""

import os

__all__ = [
    "BACKEND",
    "fnv1a64",
    "rasterize_attributes",
    "render_mesh",
    "grid_resample",
    "maxflow",
]


def _pick_backend():
    if os.environ.get("FORGE_PURE_NUMPY", "").strip() not in ("", "0"):
        from . import numpy_impl

        return "numpy", numpy_impl
    try:
        from . import numba_impl

        return "numba", numba_impl
    except ImportError:
        from . import numpy_impl

        return "numpy", numpy_impl


BACKEND, _impl = _pick_backend()

fnv1a64 = _impl.fnv1a64
rasterize_attributes = _impl.rasterize_attributes
render_mesh = _impl.render_mesh
grid_resample = _impl.grid_resample
maxflow = _impl.maxflow
