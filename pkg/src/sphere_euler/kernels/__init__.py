"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension (Cython) is used when available; otherwise the
pure-numpy implementations in ``_fallback`` are selected. Both expose the
same functions:

    pairwise_half_dsq(X, Y)  -- matrix of d(x_i, y_j)^2 / 2 (geodesic)
    pairwise_dist(X, Y)      -- matrix of geodesic distances
    min_plus(C, phi)         -- row-wise min of C - phi (c-transform core)
    lse_rows(M)              -- row-wise log-sum-exp (Sinkhorn core)
"""

try:
    from . import _core as _impl
    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _fallback as _impl
    BACKEND = "fallback"

from . import _fallback

pairwise_half_dsq = _impl.pairwise_half_dsq
pairwise_dist = _impl.pairwise_dist
min_plus = _impl.min_plus
lse_rows = _impl.lse_rows
