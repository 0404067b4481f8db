"""Proximal operators of smoothed log-concave priors via MMSE-denoiser
averaging, with solvers, diagnostics and a numerical verification suite."""

from ._kernels import backend as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
