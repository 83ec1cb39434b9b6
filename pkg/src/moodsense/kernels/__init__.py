"""Hot numeric kernels with selectable backends.

Two implementations of the same kernel set exist: a numba ``@njit`` backend
and a pure-numpy fallback. The env var ``MOODSENSE_NUMBA`` picks one
explicitly (``1``/``0``); unset, numba is used when importable. Both backends
draw randomness from the same counter-based splitmix64 stream; the tree
kernels accumulate class counts as exact integers and therefore match bit for
bit across backends, while glmm_parts matches up to float reassociation
(~1e-12 relative).

Kernels:
  grow_tree        - CART induction over a bootstrap sample
  predict_votes    - per-class vote counts of a packed forest
  glmm_parts       - marginal log-likelihood + gradient of the
                     random-intercept logit via adaptive Gauss-Hermite
                     quadrature
"""

from __future__ import annotations

import os

_flag = os.environ.get("MOODSENSE_NUMBA", "").strip().lower()
if _flag in ("0", "false", "off", "no"):
    _use_numba = False
elif _flag in ("1", "true", "on", "yes"):
    _use_numba = True
else:
    try:
        import numba  # noqa: F401

        _use_numba = True
    except ImportError:
        _use_numba = False

if _use_numba:
    from . import _numba_backend as backend
else:
    from . import _numpy_backend as backend

USING_NUMBA = _use_numba

grow_tree = backend.grow_tree
predict_votes = backend.predict_votes
glmm_parts = backend.glmm_parts

from ._rng import bulk_values, derive_seed  # noqa: E402,F401
