"""Market-state detection from significance-filtered correlation graphs.

Pipeline: prices -> log returns -> local normalisation -> epochs and top-K
portfolios -> Pearson matrices and power map -> white-noise-filtered graphs
-> Weisfeiler-Lehman kernel -> eigengap-selected spectral k-means.
"""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
