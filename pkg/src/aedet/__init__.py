"""Acoustic event detection with wavelet and STFT time-frequency images.

Submodules: ``corpus`` (audio, labels, synthetic data), ``transforms``
(scalograms, spectrograms, patches), ``features`` (frame features, PCA,
RFE), ``neuralnet`` (CNN / MLP from numpy), ``baselines`` (naive Bayes,
random forest, SVM), ``evaluation`` (metrics, smoothing, grids, spectra),
``pipeline`` and ``cli``.
"""

from .errors import ConfigError, DataError
from .seeding import derive_seed, make_rng

__all__ = ["ConfigError", "DataError", "derive_seed", "make_rng"]
__version__ = "0.1.0"
