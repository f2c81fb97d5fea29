"""Combining a layer's feature maps into one fragment descriptor."""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

from core.config import HogParams
from core.exceptions import EmptyStack, ProfileMismatch
from convnet.features import FeatureStack
from hogmap.descriptor import descriptors, l2_normalize
from saliency.profile import SaliencyProfile

STRATEGIES = ("average", "pre", "post")


@dataclass(frozen=True)
class PooledDescriptor:
    vector: np.ndarray
    strategy: str
    layer: int
    saliency_digest: str = ""

    @property
    def is_zero(self) -> bool:
        return not np.any(self.vector)


def _maps(stack: FeatureStack) -> np.ndarray:
    maps = np.asarray(stack.maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[0] == 0:
        raise EmptyStack(f"conv{stack.layer} feature stack has no maps", {"layer": stack.layer})
    return maps


def _profile_weights(stack: FeatureStack, w: SaliencyProfile, filters: int) -> np.ndarray:
    w.check_stack(stack.layer, filters)
    return w.weights


def average_pool(stack: FeatureStack) -> np.ndarray:
    """Elementwise mean of the F maps."""
    maps = _maps(stack)
    return maps.sum(axis=0) / maps.shape[0]


def pre_saliency_pool(stack: FeatureStack, w: SaliencyProfile) -> np.ndarray:
    """Saliency-weighted sum of the F maps."""
    maps = _maps(stack)
    weights = _profile_weights(stack, w, maps.shape[0])
    return np.tensordot(weights, maps, axes=1)


def post_saliency_pool(hogs: np.ndarray, w: SaliencyProfile, layer: Optional[int] = None) -> np.ndarray:
    """Saliency-weighted sum of the F per-map descriptors, L2-normalized (zero stays zero)."""
    hogs = np.asarray(hogs, dtype=np.float64)
    if hogs.ndim != 2 or hogs.shape[0] == 0:
        raise EmptyStack("post pooling needs at least one descriptor")
    if layer is not None:
        w.check_stack(layer, hogs.shape[0])
    elif hogs.shape[0] != w.filters:
        raise ProfileMismatch(f"{hogs.shape[0]} descriptors for a {w.filters}-filter profile")
    return l2_normalize(w.weights @ hogs)


def pool_all(
    stack: FeatureStack,
    params: HogParams,
    strategies: Iterable[str],
    profile: Optional[SaliencyProfile] = None,
) -> Dict[str, PooledDescriptor]:
    """Descriptors of one stack under several strategies, sharing the per-map HOGs."""
    out: Dict[str, PooledDescriptor] = {}
    digest = profile.digest() if profile is not None else ""
    for strategy in strategies:
        if strategy == "average":
            vector = descriptors(average_pool(stack)[None], params)[0]
            out[strategy] = PooledDescriptor(vector, strategy, stack.layer)
            continue
        if profile is None:
            raise ProfileMismatch(f"{strategy} pooling needs a saliency profile for conv{stack.layer}")
        if strategy == "pre":
            vector = descriptors(pre_saliency_pool(stack, profile)[None], params)[0]
        elif strategy == "post":
            vector = post_saliency_pool(descriptors(_maps(stack), params), profile, stack.layer)
        else:
            raise ValueError(f"unknown pooling strategy {strategy!r}")
        out[strategy] = PooledDescriptor(vector, strategy, stack.layer, digest)
    return out
