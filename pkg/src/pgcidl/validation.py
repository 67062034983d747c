"""Input validation for bag collections, in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .data import Bag
from .exceptions import DimensionError, InvalidInputError


def check_bag(bag, n_features: Optional[int] = None, min_instances: int = 3) -> np.ndarray:
    """Return ``bag`` as a finite float64 (n_instances, n_features) array."""
    X = bag.features if isinstance(bag, Bag) else np.asarray(bag, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"a bag must be 2-D (instances x features), got ndim={X.ndim}")
    if X.shape[0] < min_instances:
        raise InvalidInputError(f"a bag needs at least {min_instances} instances, got {X.shape[0]}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"bag has {X.shape[1]} features, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("bag contains NaN or infinite values")
    return np.ascontiguousarray(X, dtype=np.float64)


def check_bags(bags, n_features: Optional[int] = None) -> List[np.ndarray]:
    """Validate a sequence of bags that must share a feature dimension."""
    if isinstance(bags, np.ndarray) and bags.ndim == 3:
        bags = list(bags)
    bags = list(bags)
    if not bags:
        raise InvalidInputError("expected at least one bag")
    out = [check_bag(b, n_features) for b in bags]
    if n_features is None and len({b.shape[1] for b in out}) != 1:
        raise DimensionError("bags do not share a feature dimension")
    return out


def check_bags_y(bags, y):
    bags = check_bags(bags)
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != len(bags):
        raise DimensionError(f"got {len(bags)} bags but {y.shape[0] if y.ndim else 0} labels")
    return bags, y
