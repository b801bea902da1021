"""State sampling for warm starts, scenario training and validation.

The default distribution draws from the initial, goal and unsafe regions
with probability 0.1 each and from the remainder of the domain with
probability 0.7, uniformly within each region.  Box-union regions are
sampled directly (volume-weighted box choice); the unsafe set and the
remainder are sampled by rejection from their bounding boxes.
"""

from __future__ import annotations

import numpy as np

from .errors import EvalDomainError
from .geometry import ReachAvoidSpec, Region

__all__ = ["sample_states", "sample_region", "MIXTURE_WEIGHTS", "LABELS"]

MIXTURE_WEIGHTS = {"init": 0.1, "goal": 0.1, "unsafe": 0.1, "rest": 0.7}
LABELS = ("init", "goal", "unsafe", "rest")

_MAX_REJECTION = 10 ** 6


def _sample_box_union(region: Region, rng: np.random.Generator, k: int) -> np.ndarray:
    vols = np.array([b.volume() for b in region.parts])
    if vols.sum() <= 0:
        raise EvalDomainError("cannot sample a region of zero volume")
    probs = vols / vols.sum()
    counts = rng.multinomial(k, probs)
    parts = [b.sample(rng, c) for b, c in zip(region.parts, counts) if c > 0]
    pts = np.concatenate(parts, axis=0)
    return pts[rng.permutation(k)]


def _sample_rejection(accept_mask_fn, bbox, rng: np.random.Generator,
                      k: int) -> np.ndarray:
    out = np.empty((k, bbox.dim))
    have = 0
    attempts = 0
    while have < k:
        draw = max(2 * (k - have), 64)
        if attempts > _MAX_REJECTION:
            raise EvalDomainError(
                "rejection sampling failed; the region is degenerate")
        cand = bbox.sample(rng, draw)
        attempts += draw
        good = cand[accept_mask_fn(cand)]
        take = min(good.shape[0], k - have)
        out[have:have + take] = good[:take]
        have += take
    return out


def sample_region(spec: ReachAvoidSpec, label: str, rng: np.random.Generator,
                  k: int) -> np.ndarray:
    if k == 0:
        return np.empty((0, spec.dim))
    if label == "init":
        return _sample_box_union(spec.init, rng, k)
    if label == "goal":
        return _sample_box_union(spec.goal, rng, k)
    dom = spec.domain_box
    if label == "unsafe":
        return _sample_rejection(spec.unsafe.contains, dom, rng, k)
    if label == "rest":
        def in_rest(pts):
            return ~(spec.init.contains(pts) | spec.goal.contains(pts)
                     | spec.unsafe.contains(pts))
        return _sample_rejection(in_rest, dom, rng, k)
    raise ValueError(f"unknown region label {label!r}")


def sample_states(spec: ReachAvoidSpec, n: int, rng: np.random.Generator,
                  weights: dict | None = None):
    """Mixture sample of n states; returns (points, labels) with labels as
    integer indices into :data:`LABELS`."""
    if n < 1:
        raise ValueError("need at least one sample")
    weights = weights or MIXTURE_WEIGHTS
    w = np.array([weights[name] for name in LABELS], dtype=np.float64)
    w = w / w.sum()
    counts = rng.multinomial(n, w)
    pts = np.empty((n, spec.dim))
    labels = np.empty(n, dtype=np.int64)
    ofs = 0
    for li, (name, c) in enumerate(zip(LABELS, counts)):
        pts[ofs:ofs + c] = sample_region(spec, name, rng, c)
        labels[ofs:ofs + c] = li
        ofs += c
    perm = rng.permutation(n)
    return pts[perm], labels[perm]
