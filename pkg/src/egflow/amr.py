"""Indicator-driven marking and solution transfer across mesh adaptation.

Marking ranks cells by the entropy indicator: the top fraction refines
(level cap permitting, budget-truncated from the low-indicator end with the
2:1 closure counted exactly), the bottom fraction coarsens where a full
sibling quartet is marked and the merge keeps the mesh balanced.

Transfer keeps every transported quantity's cell means exact.  Continuous
dofs copy where the vertex survives; vertices created by a split take the
parent's bilinear trace (edge midpoints average the edge endpoints, centers
average the four corners).  After re-imposing the hanging constraints, each
new cell's constant is set so the cell mean matches the old function's mean
over that region: unchanged cells keep their mean, children of a split
inherit the parent function's quadrant means, and a merged parent takes the
equal-area average of its children's means.  Total integrals of transferred
fields are bitwise-stable up to float roundoff under this rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .egspace import EGDofMap, q1_values
from .mesh import AdaptBounds, QuadMesh, _parent_key

__all__ = [
    "FieldState",
    "MarkingPolicy",
    "Marks",
    "adapt_and_transfer",
    "mark",
]


@dataclass(frozen=True)
class MarkingPolicy:
    """Refine/coarsen fractions plus the level and cell-count budgets."""

    bounds: AdaptBounds
    refine_fraction: float = 0.20
    coarsen_fraction: float = 0.10

    def __post_init__(self):
        ok = (0.0 <= self.refine_fraction <= 1.0
              and 0.0 <= self.coarsen_fraction <= 1.0
              and self.refine_fraction + self.coarsen_fraction <= 1.0)
        if not ok:
            raise ValueError(
                f"invalid marking fractions ({self.refine_fraction}, "
                f"{self.coarsen_fraction}): each in [0,1], sum at most 1"
            )


@dataclass(frozen=True)
class Marks:
    """Cell ids to refine / coarsen; unpacks as (refine, coarsen)."""

    refine: tuple
    coarsen: tuple
    generation: int

    def __iter__(self):
        return iter((self.refine, self.coarsen))


@dataclass(frozen=True)
class FieldState:
    """A named solution array: kind "eg" (dof vector) or "cell" (per-cell)."""

    name: str
    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in ("eg", "cell"):
            raise ValueError(f"unknown field kind {self.kind!r}")


def mark(ind, mesh: QuadMesh, policy: MarkingPolicy) -> Marks:
    """Rank cells by indicator and emit budgeted refine/coarsen marks.

    Ties break by cell id, so marking is deterministic.  The refine list is
    truncated (lowest-ranked first) until the active count after refinement,
    with the 2:1 closure included, fits the cell budget; coarsening credit
    is deliberately not counted, so the budget holds even when no quartet
    turns out to be mergeable.
    """
    er = np.asarray(ind.er, dtype=float)
    if ind.generation != mesh.generation:
        raise ValueError("indicator was computed on a different mesh generation")
    n = mesh.n_active
    if er.shape != (n,):
        raise ValueError(f"indicator covers {er.shape} cells, mesh has {n}")
    b = policy.bounds

    order = sorted(range(n), key=lambda i: (-er[i], mesh.cell_id[i]))
    k_ref = int(policy.refine_fraction * n)
    k_coa = int(policy.coarsen_fraction * n)
    refine = [mesh.cell_id[i] for i in order[:k_ref]
              if mesh.cell_level[i] < b.r_max]
    coarsen = [mesh.cell_id[i] for i in order[n - k_coa:]
               if mesh.cell_level[i] > b.r_min]

    # largest high-indicator prefix whose closure fits the budget
    def fits(k: int) -> bool:
        if k == 0:
            return True
        splits = mesh.refine_closure(refine[:k])
        return n + 3 * len(splits) <= b.cell_max

    if not fits(len(refine)):
        lo, hi = 0, len(refine)  # fits(lo) holds, fits(hi) fails
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if fits(mid):
                lo = mid
            else:
                hi = mid
        refine = refine[:lo]
    return Marks(refine=tuple(refine), coarsen=tuple(coarsen),
                 generation=mesh.generation)


def _cell_means(dm: EGDofMap, coeffs: np.ndarray) -> np.ndarray:
    return coeffs[dm.cell_dofs[:, :4]].mean(axis=1) + coeffs[dm.cell_dofs[:, 4]]


def adapt_and_transfer(mesh: QuadMesh, dofmap: EGDofMap, fields, marks: Marks,
                       ) -> tuple[QuadMesh, EGDofMap, list]:
    """Execute the marked adaptation and transfer the given FieldStates.

    Returns (new_mesh, new_dofmap, new_fields); everything is returned
    unchanged (same objects) when no cell actually refines or coarsens.
    """
    if marks.generation != mesh.generation:
        raise ValueError("marks were computed on a different mesh generation")
    for f in fields:
        expected = dofmap.n_dofs if f.kind == "eg" else mesh.n_active
        if f.data.shape[0] != expected:
            raise ValueError(
                f"field {f.name!r} has leading size {f.data.shape[0]}, "
                f"expected {expected}"
            )

    new_mesh, report = mesh.adapt(marks.refine, marks.coarsen)
    if report.unchanged:
        return mesh, dofmap, list(fields)
    new_dm = EGDofMap(new_mesh)

    refined = sorted(report.refined)            # level-ascending: parents first
    coarsened = set(report.coarsened)

    # classify each new cell against the old mesh
    SAME, CHILD, MERGED = 0, 1, 2
    n_new = new_mesh.n_active
    tag = np.empty(n_new, dtype=np.int8)
    src = np.empty(n_new, dtype=np.int64)       # old cell index (SAME/CHILD anchor)
    anchor_ref = np.zeros((n_new, 2))           # center of the new cell inside anchor
    merged_children = {}
    for idx, key in enumerate(new_mesh.cell_keys):
        if key in coarsened:
            tag[idx] = MERGED
            kids = [(key[0] + 1, 2 * key[1] + di, 2 * key[2] + dj)
                    for di in (0, 1) for dj in (0, 1)]
            merged_children[idx] = [mesh.cell_index[k] for k in kids]
        elif key in mesh.cell_index:
            tag[idx] = SAME
            src[idx] = mesh.cell_index[key]
        else:
            tag[idx] = CHILD
            a = _parent_key(key)
            while a not in mesh.cell_index:
                a = _parent_key(a)
            src[idx] = mesh.cell_index[a]
            d = key[0] - a[0]
            anchor_ref[idx, 0] = (key[1] - (a[1] << d) + 0.5) / (1 << d)
            anchor_ref[idx, 1] = (key[2] - (a[2] << d) + 0.5) / (1 << d)

    new_fields = []
    for f in fields:
        if f.kind == "cell":
            out = np.empty((n_new,) + f.data.shape[1:], dtype=f.data.dtype)
            same_or_child = tag != MERGED
            out[same_or_child] = f.data[src[same_or_child]]
            for idx, kids in merged_children.items():
                out[idx] = f.data[kids].mean(axis=0)
            new_fields.append(FieldState(f.name, "cell", out))
            continue

        old = f.data
        cg = np.zeros(new_dm.n_dofs)
        filled = np.zeros(new_dm.n_cg, dtype=bool)
        for vi, vk in enumerate(new_dm.vertex_keys):
            oi = dofmap.vertex_index.get(vk)
            if oi is not None:
                cg[vi] = old[oi]
                filled[vi] = True
        # vertices created by splits: parent's bilinear trace, parents first
        for pk in refined:
            lev, i, j = pk
            s = 29 - lev   # child-level key scale
            X = [(2 * i) << s, (2 * i + 1) << s, (2 * i + 2) << s]
            Y = [(2 * j) << s, (2 * j + 1) << s, (2 * j + 2) << s]
            vidx = new_dm.vertex_index
            v00, v10 = cg[vidx[(X[0], Y[0])]], cg[vidx[(X[2], Y[0])]]
            v01, v11 = cg[vidx[(X[0], Y[2])]], cg[vidx[(X[2], Y[2])]]
            for (kx, ky), val in (
                ((X[1], Y[0]), 0.5 * (v00 + v10)),
                ((X[0], Y[1]), 0.5 * (v00 + v01)),
                ((X[2], Y[1]), 0.5 * (v10 + v11)),
                ((X[1], Y[2]), 0.5 * (v01 + v11)),
                ((X[1], Y[1]), 0.25 * (v00 + v10 + v01 + v11)),
            ):
                vi = vidx[(kx, ky)]
                if not filled[vi]:
                    cg[vi] = val
                    filled[vi] = True
        cg = new_dm.distribute(cg)

        # constants enforce exact per-region means of the old function
        old_means = _cell_means(dofmap, old)
        target = np.empty(n_new)
        same = tag == SAME
        target[same] = old_means[src[same]]
        child = tag == CHILD
        if np.any(child):
            N = q1_values(anchor_ref[child, 0], anchor_ref[child, 1])[:, :4]
            corners = old[dofmap.cell_dofs[src[child], :4]]
            target[child] = (N * corners).sum(axis=1) \
                + old[dofmap.cell_dofs[src[child], 4]]
        for idx, kids in merged_children.items():
            target[idx] = old_means[kids].mean()
        cg[new_dm.n_cg:] = target - cg[new_dm.cell_dofs[:, :4]].mean(axis=1)
        new_fields.append(FieldState(f.name, "eg", cg))

    return new_mesh, new_dm, new_fields
