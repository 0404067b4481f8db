"""Hot-path kernels with a compiled/pure dual backend.

Set ``PROX_PURE_PYTHON=1`` to force the NumPy fallback even when the compiled
extension is installed.
"""

import os

from . import pure

_impl = pure
backend = "pure"

if not os.environ.get("PROX_PURE_PYTHON"):
    try:
        from . import _fast

        _impl = _fast
        backend = "compiled"
    except ImportError:
        pass

posterior_moments = _impl.posterior_moments
gaussian_chain = _impl.gaussian_chain
quad_chain = _impl.quad_chain
