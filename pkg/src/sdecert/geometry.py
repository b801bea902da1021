"""Intervals, axis-aligned boxes, region algebra and reach-avoid problem data.

Regions are restricted to boxes, unions of boxes, and a box minus a union of
box interiors; the unsafe set is the derived complement ``domain \\ int(safe)``.
All regions are closed under the containment test.  This algebra keeps every
intersection test exact (or conservatively true) and cheap, which the cell
categorization of the partition module relies on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ConfigError, SpecValidationWarning

__all__ = [
    "Interval",
    "Box",
    "Region",
    "ReachAvoidSpec",
    "beta_from_p",
    "region_contains",
    "region_intersects",
]


@dataclass(frozen=True)
class Interval:
    """Closed real interval [lo, hi]; degenerate (lo == hi) allowed."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"invalid interval: lo={self.lo} > hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


class Box:
    """Axis-aligned hyperrectangle stored as (lo, hi) float64 vectors."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("Box needs matching 1-d lo/hi vectors")
        if np.any(lo > hi):
            raise ValueError(f"invalid box: lo={lo} > hi={hi} somewhere")
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_intervals(cls, pairs) -> "Box":
        pairs = [(float(a), float(b)) for a, b in pairs]
        return cls([a for a, _ in pairs], [b for _, b in pairs])

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, x, open_: bool = False) -> np.ndarray:
        """Membership mask for one point or a (k, dim) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        if pts.shape[1] != self.dim:
            raise DimensionMismatch(f"point dim {pts.shape[1]} != box dim {self.dim}")
        if open_:
            m = np.all((pts > self.lo) & (pts < self.hi), axis=1)
        else:
            m = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
        return bool(m[0]) if single else m

    def intersects(self, other: "Box") -> bool:
        """Closed boxes overlap (shared faces count)."""
        self._check(other)
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def intersection(self, other: "Box"):
        self._check(other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def contained_in_interior(self, other: "Box") -> bool:
        self._check(other)
        return bool(np.all(self.lo > other.lo) and np.all(self.hi < other.hi))

    def contained_in(self, other: "Box") -> bool:
        self._check(other)
        return bool(np.all(self.lo >= other.lo) and np.all(self.hi <= other.hi))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        u = rng.random((k, self.dim))
        return self.lo + u * self.widths

    def _check(self, other: "Box"):
        if other.dim != self.dim:
            raise DimensionMismatch(f"box dims differ: {self.dim} vs {other.dim}")

    def __repr__(self):
        parts = "x".join(f"[{a:g},{b:g}]" for a, b in zip(self.lo, self.hi))
        return f"Box({parts})"


class Region:
    """Closed region: box | union of boxes | box minus union of box interiors
    | complement (domain minus the interior of another region, derived only).

    The containment test treats every region as closed.  For difference
    regions the subtracted boxes lose only their interior, so obstacle
    boundary points stay inside the enclosing safe region; the matching
    unsafe complement also contains them (the two overlap on measure zero,
    conservatively for both constraints).
    """

    __slots__ = ("kind", "parts", "base", "inner")

    def __init__(self, kind: str, parts=(), base: Box | None = None,
                 inner: "Region | None" = None):
        if kind not in ("box", "union", "difference", "complement"):
            raise ValueError(f"unknown region kind {kind!r}")
        self.kind = kind
        self.parts = tuple(parts)
        self.base = base
        self.inner = inner
        if kind == "box" and len(self.parts) != 1:
            raise ValueError("box region needs exactly one part")
        if kind == "union" and not self.parts:
            raise ValueError("union region needs at least one part")
        if kind == "difference":
            if base is None:
                raise ValueError("difference region needs a base box")
            # Normalize away subtractions that never meet the base.
            self.parts = tuple(p for p in self.parts if base.intersects(p))
        if kind == "complement" and (base is None or inner is None):
            raise ValueError("complement region needs base and inner")
        dims = {p.dim for p in self.parts}
        if base is not None:
            dims.add(base.dim)
        if inner is not None:
            dims.add(inner.dim)
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed dimensions in region: {dims}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def box(cls, b: Box) -> "Region":
        return cls("box", (b,))

    @classmethod
    def union(cls, boxes) -> "Region":
        boxes = list(boxes)
        if len(boxes) == 1:
            return cls.box(boxes[0])
        return cls("union", boxes)

    @classmethod
    def difference(cls, base: Box, subtracted) -> "Region":
        return cls("difference", tuple(subtracted), base=base)

    @classmethod
    def complement_within(cls, domain: Box, inner: "Region") -> "Region":
        """domain minus interior(inner); used for the derived unsafe set."""
        return cls("complement", (), base=domain, inner=inner)

    # -- queries -----------------------------------------------------------

    @property
    def dim(self) -> int:
        if self.base is not None:
            return self.base.dim
        return self.parts[0].dim

    def bounding_box(self) -> Box:
        if self.kind in ("difference", "complement"):
            return self.base
        lo = np.min([p.lo for p in self.parts], axis=0)
        hi = np.max([p.hi for p in self.parts], axis=0)
        return Box(lo, hi)

    def contains(self, x) -> np.ndarray:
        """Closed containment for one point or a (k, dim) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        if pts.shape[1] != self.dim:
            raise DimensionMismatch(f"point dim {pts.shape[1]} != region dim {self.dim}")
        m = self._contains_mask(pts)
        return bool(m[0]) if single else m

    def _contains_mask(self, pts: np.ndarray) -> np.ndarray:
        if self.kind in ("box", "union"):
            m = np.zeros(pts.shape[0], dtype=bool)
            for p in self.parts:
                m |= p.contains(pts)
            return m
        if self.kind == "difference":
            m = self.base.contains(pts)
            for p in self.parts:
                m &= ~p.contains(pts, open_=True)
            return m
        # complement: base minus interior(inner)
        return self.base.contains(pts) & ~self.inner._interior_mask(pts)

    def _interior_mask(self, pts: np.ndarray) -> np.ndarray:
        """Membership in the interior.  Exact for box/difference; for unions
        the union of part interiors is used (an under-approximation, which
        makes the derived complement larger, i.e. conservative)."""
        if self.kind in ("box", "union"):
            m = np.zeros(pts.shape[0], dtype=bool)
            for p in self.parts:
                m |= p.contains(pts, open_=True)
            return m
        if self.kind == "difference":
            m = self.base.contains(pts, open_=True)
            for p in self.parts:
                m &= ~p.contains(pts)
            return m
        raise ValueError("interior of a complement region is not needed")

    def intersects(self, b: Box) -> bool:
        """True whenever the closed box meets the region; conservative (may
        report true for closure-only contact) but never falsely negative."""
        if b.dim != self.dim:
            raise DimensionMismatch(f"box dim {b.dim} != region dim {self.dim}")
        if self.kind in ("box", "union"):
            return any(p.intersects(b) for p in self.parts)
        if self.kind == "difference":
            cut = self.base.intersection(b)
            if cut is None:
                return False
            # Covered only if some single subtracted interior swallows it.
            return not any(cut.contained_in_interior(p) for p in self.parts)
        # complement: box meets base \ int(inner) iff it is not buried in
        # the inner region's interior.
        cut = self.base.intersection(b)
        if cut is None:
            return False
        return not self.inner._box_in_interior(cut)

    def _box_in_interior(self, b: Box) -> bool:
        """Sufficient test for b being inside the interior of the region."""
        if self.kind in ("box", "union"):
            return any(b.contained_in_interior(p) for p in self.parts)
        if self.kind == "difference":
            if not b.contained_in_interior(self.base):
                return False
            return not any(b.intersects(p) for p in self.parts)
        raise ValueError("nested complement regions are not supported")

    def __repr__(self):
        if self.kind == "complement":
            return f"Region(complement of {self.inner!r} in {self.base!r})"
        extra = f" base={self.base!r}" if self.base is not None else ""
        return f"Region({self.kind}, {len(self.parts)} part(s){extra})"


def region_contains(region: Region, x) -> bool:
    """Closed containment of a point in a region."""
    return region.contains(np.asarray(x, dtype=np.float64))


def region_intersects(region: Region, b: Box) -> bool:
    """Whether a closed box meets a region (conservative, never misses)."""
    return region.intersects(b)


def beta_from_p(p: float) -> float:
    """Certificate level on the unsafe set for a target reach-avoid
    probability p: beta = 1 / (1 - p), strictly increasing on (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"threshold probability must lie in (0,1), got {p}")
    return 1.0 / (1.0 - p)


def _shell_slabs(domain: Box, inner_base: Box) -> list[Box]:
    """Closed slabs covering domain \\ int(inner_base), one per strict face."""
    slabs = []
    for i in range(domain.dim):
        if inner_base.lo[i] > domain.lo[i]:
            lo, hi = domain.lo.copy(), domain.hi.copy()
            hi[i] = inner_base.lo[i]
            slabs.append(Box(lo, hi))
        if inner_base.hi[i] < domain.hi[i]:
            lo, hi = domain.lo.copy(), domain.hi.copy()
            lo[i] = inner_base.hi[i]
            slabs.append(Box(lo, hi))
    return slabs


@dataclass
class ReachAvoidSpec:
    """Reach-avoid problem geometry plus the probability threshold.

    ``unsafe`` is the derived complement domain \\ int(safe); ``gen_region``
    materializes the generator-constraint set domain \\ int(goal u unsafe)
    (the interior of the union is under-approximated by the union of
    component interiors, which can only enlarge the constraint set).
    """

    domain: Region
    init: Region
    goal: Region
    safe: Region
    p_ra: float
    unsafe: Region = field(init=False)
    gen_region: Region = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.p_ra < 1.0):
            raise ConfigError(f"p_ra must lie in (0,1), got {self.p_ra}")
        dims = {self.domain.dim, self.init.dim, self.goal.dim, self.safe.dim}
        if len(dims) != 1:
            raise DimensionMismatch(f"region dimensions differ: {dims}")
        self.beta = beta_from_p(self.p_ra)
        dom = self.domain_box
        self.unsafe = Region.complement_within(dom, self.safe)
        self.gen_region = Region.difference(dom, self._unsafe_goal_interior_boxes())
        self._validate()

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def domain_box(self) -> Box:
        if self.domain.kind != "box":
            raise ConfigError("the domain of interest must be a single box")
        return self.domain.parts[0]

    def _unsafe_goal_interior_boxes(self) -> list[Box]:
        """Boxes whose interiors fill int(goal) and int(unsafe)."""
        boxes = list(self.goal.parts)
        if self.safe.kind == "difference":
            boxes += [p for p in self.safe.parts]
            boxes += _shell_slabs(self.domain_box, self.safe.base)
        else:
            for p in self.safe.parts:
                boxes += _shell_slabs(self.domain_box, p)
            if self.safe.kind == "union" and len(self.safe.parts) > 1:
                warnings.warn(
                    "safe set is a multi-box union; the generator region is "
                    "enlarged conservatively around it",
                    SpecValidationWarning, stacklevel=3)
        return [b for b in boxes if b.volume() > 0.0]

    def _validate(self):
        """Interiority requirements, checked on box representations.

        Violations are warnings rather than errors: several benchmark
        specifications write the safe set relative to the full domain box
        with no explicit margin.
        """
        def inside_interior(reg: Region, outer: Region) -> bool:
            for p in reg.parts:
                if outer.kind in ("box", "union"):
                    if not any(p.contained_in_interior(q) for q in outer.parts):
                        return False
                elif outer.kind == "difference":
                    if not p.contained_in_interior(outer.base):
                        return False
                    if any(p.intersects(q) for q in outer.parts):
                        return False
            return True

        if not inside_interior(self.init, self.safe):
            warnings.warn("initial set is not strictly inside the safe set",
                          SpecValidationWarning, stacklevel=3)
        if not inside_interior(self.goal, self.safe):
            warnings.warn("goal set is not strictly inside the safe set",
                          SpecValidationWarning, stacklevel=3)
        safe_boxes = [self.safe.base] if self.safe.kind == "difference" else list(self.safe.parts)
        for b in safe_boxes:
            if not b.contained_in_interior(self.domain_box):
                warnings.warn("safe set is not strictly inside the domain",
                              SpecValidationWarning, stacklevel=3)
                break
