"""Input checks for the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError
from .frontend import Image


def check_token_grids(X):
    """Return a float64 (B, h, w, d) array and whether the input was a single grid."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 3:
        return X[None], True
    if X.ndim != 4:
        raise DimensionError(f"expected (h, w, d) or (B, h, w, d) token grids, got shape {X.shape}")
    return X, False


def check_images(X):
    if isinstance(X, Image):
        return [X], True
    out = []
    for img in X:
        out.append(img if isinstance(img, Image) else Image(np.asarray(img)))
    return out, False


def check_n_features(estimator, d):
    expected = getattr(estimator, "n_features_in_", None)
    if expected is not None and d != expected:
        raise DimensionError(f"X has {d} channels but {type(estimator).__name__} was fitted with {expected}")
