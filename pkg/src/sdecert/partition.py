"""Adaptive cell store over the domain of interest.

Cells are axis-aligned boxes that tile the domain exactly.  Each cell knows
which constraint families apply to it (every cell carries the
non-negativity constraint; initial/unsafe/generator membership comes from
exact geometric intersection tests).  Refinement bisects a cell along its
widest input-scaled axis; merging undoes a bisection when both children
satisfy their constraints with a margin and the restored parent re-checks
cleanly, so a zero loss can never become positive through merging.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CellBudgetExceeded
from .geometry import Box, ReachAvoidSpec, region_intersects

__all__ = ["Cell", "Partition", "KINDS"]

KINDS = ("nonneg", "init", "unsafe", "gen")


@dataclass
class Cell:
    id: int
    lo: np.ndarray
    hi: np.ndarray
    parent: int | None
    in_init: bool
    in_unsafe: bool
    in_gen: bool

    @property
    def box(self) -> Box:
        return Box(self.lo, self.hi)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def in_kind(self, kind: str) -> bool:
        if kind == "nonneg":
            return True
        return {"init": self.in_init, "unsafe": self.in_unsafe,
                "gen": self.in_gen}[kind]


class Partition:
    def __init__(self, spec: ReachAvoidSpec, s_in, max_cells: int):
        self.spec = spec
        self.s_in = np.asarray(s_in, dtype=np.float64)
        self.max_cells = int(max_cells)
        self.cells: dict[int, Cell] = {}       # every cell ever created
        self.live: set[int] = set()
        self.children: dict[int, tuple[int, int]] = {}
        self._next_id = 0

    # -- construction --------------------------------------------------------

    @classmethod
    def init_grid(cls, spec: ReachAvoidSpec, counts, s_in,
                  max_cells: int = 500_000) -> "Partition":
        """Regular grid with the prescribed number of cells per dimension."""
        counts = [int(c) for c in np.atleast_1d(counts)]
        dom = spec.domain_box
        if len(counts) == 1:
            counts = counts * dom.dim
        if len(counts) != dom.dim or any(c < 1 for c in counts):
            raise ValueError(f"need >=1 cells for each of {dom.dim} dimensions")
        total = int(np.prod(counts))
        part = cls(spec, s_in, max_cells)
        if total > part.max_cells:
            raise CellBudgetExceeded(
                f"initial grid of {total} cells exceeds budget {part.max_cells}")
        edges = [np.linspace(dom.lo[i], dom.hi[i], counts[i] + 1)
                 for i in range(dom.dim)]
        for multi in np.ndindex(*counts):
            lo = np.array([edges[i][multi[i]] for i in range(dom.dim)])
            hi = np.array([edges[i][multi[i] + 1] for i in range(dom.dim)])
            part._create_cell(lo, hi, parent=None)
        return part

    def _create_cell(self, lo, hi, parent) -> int:
        cid = self._next_id
        self._next_id += 1
        box = Box(lo, hi)
        cell = Cell(
            cid, lo, hi, parent,
            in_init=region_intersects(self.spec.init, box),
            in_unsafe=region_intersects(self.spec.unsafe, box),
            in_gen=region_intersects(self.spec.gen_region, box),
        )
        self.cells[cid] = cell
        self.live.add(cid)
        return cid

    # -- views ----------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.live)

    def live_ids(self) -> list[int]:
        return sorted(self.live)

    def arrays(self) -> dict:
        """Dense per-cell arrays in deterministic (sorted-id) order."""
        ids = self.live_ids()
        lo = np.stack([self.cells[i].lo for i in ids]) if ids else np.zeros((0, self.spec.dim))
        hi = np.stack([self.cells[i].hi for i in ids]) if ids else np.zeros((0, self.spec.dim))
        return {
            "ids": np.asarray(ids, dtype=np.intp),
            "lo": lo,
            "hi": hi,
            "init": np.array([self.cells[i].in_init for i in ids], dtype=bool),
            "unsafe": np.array([self.cells[i].in_unsafe for i in ids], dtype=bool),
            "gen": np.array([self.cells[i].in_gen for i in ids], dtype=bool),
        }

    def diam(self) -> float:
        return max((self.cells[i].diagonal() for i in self.live), default=0.0)

    def total_volume(self) -> float:
        return float(sum(self.cells[i].volume() for i in self.live))

    def counts_by_kind(self) -> dict:
        out = {"nonneg": self.n_cells, "init": 0, "unsafe": 0, "gen": 0}
        for i in self.live:
            c = self.cells[i]
            out["init"] += c.in_init
            out["unsafe"] += c.in_unsafe
            out["gen"] += c.in_gen
        return out

    # -- refinement -------------------------------------------------------------

    def split(self, cid: int) -> tuple[int, int]:
        """Bisect a live cell along its widest input-scaled axis."""
        if len(self.live) + 1 > self.max_cells:
            raise CellBudgetExceeded(
                f"cell budget {self.max_cells} exceeded (OM)")
        cell = self.cells[cid]
        axis = int(np.argmax((cell.hi - cell.lo) / self.s_in))
        m = 0.5 * (cell.lo[axis] + cell.hi[axis])
        lo2 = cell.lo.copy()
        lo2[axis] = m
        hi1 = cell.hi.copy()
        hi1[axis] = m
        self.live.discard(cid)
        a = self._create_cell(cell.lo, hi1, parent=cid)
        b = self._create_cell(lo2, cell.hi, parent=cid)
        self.children[cid] = (a, b)
        return a, b

    def refine_topk(self, kind: str, scores: dict[int, float], K: int) -> list[int]:
        """Split the K live cells of a constraint family with the largest
        positive violation scores.  Returns the ids that were split."""
        if K < 1:
            raise ValueError("K must be >= 1")
        ranked = sorted(
            (cid for cid, s in scores.items()
             if s > 0.0 and cid in self.live and self.cells[cid].in_kind(kind)),
            key=lambda cid: (-scores[cid], cid))
        chosen = ranked[:K]
        for cid in chosen:
            self.split(cid)
        return chosen

    def refine_all_violating(self, violating_ids) -> int:
        split = 0
        for cid in sorted(set(violating_ids)):
            if cid in self.live:
                self.split(cid)
                split += 1
        return split

    # -- merging ------------------------------------------------------------------

    def mergeable_pairs(self) -> list[tuple[int, int, int]]:
        """(parent, child_a, child_b) triples where both children are live."""
        out = []
        for parent, (a, b) in self.children.items():
            if a in self.live and b in self.live:
                out.append((parent, a, b))
        return sorted(out)

    def merge_siblings(self, margins: dict[str, float], bound_fn,
                       slack: float = 1e-9) -> int:
        """Merge sibling pairs bottom-up to a fixpoint.

        ``bound_fn(lo, hi, need_gen)`` must return (v_lo, v_hi, phi_hi) row
        arrays for a batch of boxes (phi_hi may be NaN where need_gen is
        False).  A pair merges when both children satisfy every applicable
        constraint with its margin AND the restored parent's own bounds
        satisfy the raw constraints (with slack), which preserves a zero
        loss by construction.
        """
        beta = self.spec.beta
        eps_gen = margins.get("_eps_gen", 0.0)
        merged_total = 0
        while True:
            pairs = self.mergeable_pairs()
            if not pairs:
                break
            ids = [p for (p, _, _) in pairs]
            a_ids = [a for (_, a, _) in pairs]
            b_ids = [b for (_, _, b) in pairs]
            all_ids = a_ids + b_ids + ids
            lo = np.stack([self.cells[i].lo for i in all_ids])
            hi = np.stack([self.cells[i].hi for i in all_ids])
            need_gen = np.array([self.cells[i].in_gen for i in all_ids], dtype=bool)
            v_lo, v_hi, phi_hi = bound_fn(lo, hi, need_gen)
            k = len(pairs)

            def ok(row, cell, margin_scale, eps_slack):
                checks = [v_lo[row] >= margins["nonneg"] * margin_scale - eps_slack]
                if cell.in_init:
                    checks.append(v_hi[row] <= 1.0 - margins["init"] * margin_scale + eps_slack)
                if cell.in_unsafe:
                    checks.append(v_lo[row] >= beta + margins["unsafe"] * margin_scale - eps_slack)
                if cell.in_gen:
                    checks.append(phi_hi[row] <= -eps_gen - margins["gen"] * margin_scale + eps_slack)
                return all(checks)

            merged_here = 0
            for j, (parent, a, b) in enumerate(pairs):
                ca, cb, cp = self.cells[a], self.cells[b], self.cells[parent]
                if not (ok(j, ca, 1.0, 0.0) and ok(k + j, cb, 1.0, 0.0)):
                    continue
                if not ok(2 * k + j, cp, 0.0, slack):
                    continue
                self.live.discard(a)
                self.live.discard(b)
                del self.cells[a]
                del self.cells[b]
                del self.children[parent]
                self.live.add(parent)
                merged_here += 1
            merged_total += merged_here
            if merged_here == 0:
                break
        return merged_total

    # -- export ------------------------------------------------------------------

    def snapshot_rows(self, bounds: dict | None = None) -> list[dict]:
        rows = []
        for cid in self.live_ids():
            c = self.cells[cid]
            row = {"id": cid}
            for i in range(self.spec.dim):
                row[f"lo{i + 1}"] = c.lo[i]
                row[f"hi{i + 1}"] = c.hi[i]
            row.update({"in_init": int(c.in_init), "in_unsafe": int(c.in_unsafe),
                        "in_gen": int(c.in_gen)})
            if bounds and cid in bounds:
                v_lo, v_hi, phi_hi = bounds[cid]
                row.update({"v_lo": v_lo, "v_hi": v_hi, "phi_hi": phi_hi})
            rows.append(row)
        return rows

    def write_csv(self, path, bounds: dict | None = None):
        rows = self.snapshot_rows(bounds)
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
