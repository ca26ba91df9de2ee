"""Quadtree mesh of axis-aligned rectangles with 2:1 balanced refinement.

Addressing: at refinement level L the domain is conceptually tiled by
(nx << L) x (ny << L) equal rectangles, so every cell is identified by the
triple (level, i, j).  Children of (L, i, j) live at (L+1, 2i+di, 2j+dj)
with the deterministic ordering SW, SE, NW, NE.  Only leaves are active;
refined interior nodes are retained so coarsening can reactivate them with
their original ids, while freshly created cells always receive fresh ids.

Faces are enumerated from the finer side: a conforming interior face is
created once, by the cell on its west/south side, while a refined region
facing a coarser cell contributes one sub-face per fine cell (integration
happens on the fine side).  Normals always point from the face owner toward
its neighbor, outward on the boundary, which fixes the sign convention for
stored normal fluxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdaptBounds",
    "AdaptReport",
    "BOUNDARY",
    "CONFORMING",
    "Cell",
    "EAST",
    "Face",
    "HANGING_HIGH",
    "HANGING_LOW",
    "MeshError",
    "NORTH",
    "QuadMesh",
    "SOUTH",
    "WEST",
    "build_uniform",
]

EAST, NORTH, WEST, SOUTH = 0, 1, 2, 3
DIR_STEP = {EAST: (1, 0), NORTH: (0, 1), WEST: (-1, 0), SOUTH: (0, -1)}
DIR_NORMAL = {
    EAST: np.array([1.0, 0.0]),
    NORTH: np.array([0.0, 1.0]),
    WEST: np.array([-1.0, 0.0]),
    SOUTH: np.array([0.0, -1.0]),
}
BOUNDARY_NAME = {EAST: "right", NORTH: "top", WEST: "left", SOUTH: "bottom"}

# face kinds
CONFORMING, HANGING_LOW, HANGING_HIGH, BOUNDARY = 0, 1, 2, 3

_DEFAULT_LEVEL_CAP = 30


class MeshError(Exception):
    """Invalid mesh construction or adaptation request."""


@dataclass(frozen=True)
class Cell:
    """Read-only view of one mesh cell."""

    id: int
    level: int
    bbox: tuple[float, float, float, float]  # (x0, y0, x1, y1)
    active: bool
    parent: int | None
    children: tuple[int, ...] | None


@dataclass(frozen=True)
class Face:
    """Read-only view of one mesh face (sub-face on the fine side if hanging)."""

    index: int
    owner: int               # cell id
    neighbor: int | None     # cell id, None on the boundary
    boundary: str | None     # "left"/"right"/"bottom"/"top" for boundary faces
    normal: tuple[float, float]
    h_e: float
    kind: int


@dataclass(frozen=True)
class AdaptBounds:
    """Refinement-level window and active-cell budget for adaptation."""

    r_max: int
    r_min: int = 0
    cell_max: int = 10**9

    def __post_init__(self):
        if self.r_min > self.r_max:
            raise ValueError(f"r_min={self.r_min} exceeds r_max={self.r_max}")
        if self.cell_max < 1:
            raise ValueError("cell_max must be positive")


@dataclass
class AdaptReport:
    """Which parents were split / merged by one adapt() call (cell keys)."""

    refined: list = field(default_factory=list)
    coarsened: list = field(default_factory=list)

    @property
    def unchanged(self) -> bool:
        return not self.refined and not self.coarsened


def _parent_key(key):
    lev, i, j = key
    return (lev - 1, i >> 1, j >> 1)


def _child_keys(key):
    lev, i, j = key
    return [
        (lev + 1, 2 * i, 2 * j),        # SW
        (lev + 1, 2 * i + 1, 2 * j),    # SE
        (lev + 1, 2 * i, 2 * j + 1),    # NW
        (lev + 1, 2 * i + 1, 2 * j + 1),  # NE
    ]


class QuadMesh:
    """Forest of quadtrees over a rectangle; instances are immutable.

    refine/coarsen/adapt return new meshes and never mutate the receiver.
    """

    def __init__(self, domain, nx: int, ny: int, level_cap: int = _DEFAULT_LEVEL_CAP,
                 _state=None):
        x0, y0, x1, y1 = map(float, domain)
        if not (x1 > x0 and y1 > y0):
            raise MeshError(f"degenerate domain {domain!r}")
        if nx < 1 or ny < 1:
            raise MeshError(f"cell counts must be positive, got nx={nx} ny={ny}")
        if level_cap < 0 or level_cap > 30:
            raise MeshError("level_cap must lie in [0, 30]")
        self.domain = (x0, y0, x1, y1)
        self.nx = int(nx)
        self.ny = int(ny)
        self.level_cap = int(level_cap)
        if _state is None:
            self._active = {(0, i, j): i * ny + j for i in range(nx) for j in range(ny)}
            self._refined = {}
            self._next_id = nx * ny
            self.generation = 0
        else:
            self._active, self._refined, self._next_id, self.generation = _state
        self._finalize()

    # ------------------------------------------------------------------
    # geometry helpers

    def _cell_size(self, level: int) -> tuple[float, float]:
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) / (self.nx << level), (y1 - y0) / (self.ny << level)

    def _bbox(self, key) -> tuple[float, float, float, float]:
        lev, i, j = key
        hx, hy = self._cell_size(lev)
        x0, y0 = self.domain[0], self.domain[1]
        return (x0 + i * hx, y0 + j * hy, x0 + (i + 1) * hx, y0 + (j + 1) * hy)

    def _in_range(self, key) -> bool:
        lev, i, j = key
        return 0 <= i < (self.nx << lev) and 0 <= j < (self.ny << lev)

    # ------------------------------------------------------------------
    # finalization: index arrays and face enumeration

    def _finalize(self):
        keys = sorted(self._active)
        self.cell_keys = keys
        self.cell_index = {k: idx for idx, k in enumerate(keys)}
        self._key_by_id = {self._active[k]: k for k in keys}
        n = len(keys)
        self.n_active = n
        self.cell_id = np.array([self._active[k] for k in keys], dtype=np.int64)
        self.cell_level = np.array([k[0] for k in keys], dtype=np.int32)
        hx = np.empty(n)
        hy = np.empty(n)
        cx0 = np.empty(n)
        cy0 = np.empty(n)
        for idx, k in enumerate(keys):
            b = self._bbox(k)
            cx0[idx], cy0[idx] = b[0], b[1]
            hx[idx], hy[idx] = b[2] - b[0], b[3] - b[1]
        self.cell_x0, self.cell_y0, self.cell_hx, self.cell_hy = cx0, cy0, hx, hy
        self.cell_area = hx * hy

        owner, neigh, fdir, fkind = [], [], [], []
        for idx, k in enumerate(keys):
            lev, i, j = k
            for d in (EAST, NORTH, WEST, SOUTH):
                di, dj = DIR_STEP[d]
                nk = (lev, i + di, j + dj)
                if not self._in_range(nk):
                    owner.append(idx)
                    neigh.append(-1)
                    fdir.append(d)
                    fkind.append(BOUNDARY)
                    continue
                if nk in self._active:
                    if d in (EAST, NORTH):  # create each conforming face once
                        owner.append(idx)
                        neigh.append(self.cell_index[nk])
                        fdir.append(d)
                        fkind.append(CONFORMING)
                elif nk in self._refined:
                    pass  # finer neighbors own the sub-faces
                else:
                    pk = _parent_key(nk)
                    if pk not in self._active:
                        raise MeshError("internal error: mesh violates 2:1 balance")
                    sub = (j & 1) if d in (EAST, WEST) else (i & 1)
                    owner.append(idx)
                    neigh.append(self.cell_index[pk])
                    fdir.append(d)
                    fkind.append(HANGING_LOW if sub == 0 else HANGING_HIGH)

        self.face_owner = np.array(owner, dtype=np.int64)
        self.face_neighbor = np.array(neigh, dtype=np.int64)
        self.face_dir = np.array(fdir, dtype=np.int8)
        self.face_kind = np.array(fkind, dtype=np.int8)
        self.n_faces = len(owner)
        ew = np.isin(self.face_dir, (EAST, WEST))
        self.face_h = np.where(ew, hy[self.face_owner], hx[self.face_owner])

        # per-cell signed face adjacency: +1 where the cell is the owner
        self.cell_faces: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for f in range(self.n_faces):
            self.cell_faces[self.face_owner[f]].append((f, +1))
            if self.face_neighbor[f] >= 0:
                self.cell_faces[self.face_neighbor[f]].append((f, -1))

    # ------------------------------------------------------------------
    # queries

    @property
    def total_area(self) -> float:
        return float(self.cell_area.sum())

    def key_of_id(self, cid: int):
        try:
            return self._key_by_id[cid]
        except KeyError:
            raise MeshError(f"cell id {cid} is not an active cell") from None

    def index_of_id(self, cid: int) -> int:
        return self.cell_index[self.key_of_id(cid)]

    def cell(self, cid: int) -> Cell:
        key = self.key_of_id(cid)
        pk = _parent_key(key)
        parent = self._refined.get(pk) if key[0] > 0 else None
        return Cell(id=cid, level=key[0], bbox=self._bbox(key), active=True,
                    parent=parent, children=None)

    def cells(self):
        for k in self.cell_keys:
            yield self.cell(self._active[k])

    def face(self, f: int) -> Face:
        nb = int(self.face_neighbor[f])
        d = int(self.face_dir[f])
        return Face(
            index=f,
            owner=int(self.cell_id[self.face_owner[f]]),
            neighbor=int(self.cell_id[nb]) if nb >= 0 else None,
            boundary=BOUNDARY_NAME[d] if nb < 0 else None,
            normal=tuple(DIR_NORMAL[d]),
            h_e=float(self.face_h[f]),
            kind=int(self.face_kind[f]),
        )

    def faces(self):
        for f in range(self.n_faces):
            yield self.face(f)

    def interior_face_count(self) -> int:
        return int((self.face_neighbor >= 0).sum())

    def locate(self, x: float, y: float) -> int:
        """Active cell id containing (x, y); ties resolve to the upper cell."""
        x0, y0, x1, y1 = self.domain
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise MeshError(f"point ({x}, {y}) outside domain")
        hx, hy = self._cell_size(0)
        i = min(int((x - x0) / hx), self.nx - 1)
        j = min(int((y - y0) / hy), self.ny - 1)
        key = (0, i, j)
        while key not in self._active:
            lev, i, j = key
            b = self._bbox(key)
            mx, my = 0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])
            key = (lev + 1, 2 * i + (1 if x >= mx else 0), 2 * j + (1 if y >= my else 0))
        return self._active[key]

    def balanced(self) -> bool:
        """True when no interior face has a level jump above one."""
        lo = self.cell_level[self.face_owner]
        nb = self.face_neighbor
        ln = np.where(nb >= 0, self.cell_level[np.maximum(nb, 0)], lo)
        return bool(np.all(np.abs(lo.astype(int) - ln.astype(int)) <= 1))

    # ------------------------------------------------------------------
    # adaptation

    def _clone_state(self):
        return dict(self._active), dict(self._refined)

    def refine(self, cell_ids) -> "QuadMesh":
        """Split the given active cells (plus 2:1 closure); returns a new mesh."""
        mesh, _ = self.adapt(cell_ids, ())
        return mesh

    def coarsen(self, cell_ids) -> "QuadMesh":
        """Merge marked sibling quartets where feasible; returns a new mesh."""
        mesh, _ = self.adapt((), cell_ids)
        return mesh

    def refine_closure(self, cell_ids) -> set:
        """Keys of every cell a refine(cell_ids) call would split (incl. closure)."""
        mesh, report = self.adapt(cell_ids, ())
        return set(report.refined)

    def adapt(self, refine_ids, coarsen_ids) -> tuple["QuadMesh", AdaptReport]:
        """Apply refinement (with 2:1 closure) and then feasible coarsening.

        Refinement marks must reference active cells.  Coarsening marks are
        best effort: a sibling quartet merges only when all four children are
        marked, still active, and the merge keeps the mesh 2:1 balanced;
        anything else is dropped silently.  Returns (new_mesh, report); the
        receiver is returned unchanged when nothing happens.
        """
        refine_keys = sorted(self.key_of_id(c) for c in set(refine_ids))
        coarsen_keys = []
        for c in set(coarsen_ids):
            k = self._key_by_id.get(c)
            if k is not None:
                coarsen_keys.append(k)

        active, refined = self._clone_state()
        next_id = self._next_id
        report = AdaptReport()

        def split(key):
            nonlocal next_id
            if key not in active:
                return  # already refined through closure
            lev = key[0]
            if lev >= self.level_cap:
                raise MeshError(f"refinement beyond level cap {self.level_cap}")
            # 2:1 closure: every face neighbor must reach this cell's level first
            _, i, j = key
            for d in (WEST, EAST, SOUTH, NORTH):
                di, dj = DIR_STEP[d]
                nk = (lev, i + di, j + dj)
                if not self._in_range(nk):
                    continue
                while nk not in active and nk not in refined:
                    cov = _parent_key(nk)
                    while cov not in active and cov not in refined:
                        cov = _parent_key(cov)
                    if cov in refined:
                        break
                    split(cov)
            cid = active.pop(key)
            refined[key] = cid
            for ck in _child_keys(key):
                active[ck] = next_id
                next_id += 1
            report.refined.append(key)

        for k in refine_keys:
            split(k)

        # group coarsening marks into full sibling quartets
        by_parent: dict = {}
        for k in coarsen_keys:
            if k[0] == 0 or k not in active:
                continue
            by_parent.setdefault(_parent_key(k), []).append(k)
        for pk in sorted(by_parent):
            kids = _child_keys(pk)
            if len(by_parent[pk]) != 4 or any(c not in active for c in kids):
                continue
            # merging must not leave a level-2 jump: no refined sibling-level
            # neighbor may touch the quartet from outside
            feasible = True
            for ck in kids:
                lev, i, j = ck
                for d in (EAST, NORTH, WEST, SOUTH):
                    di, dj = DIR_STEP[d]
                    nk = (lev, i + di, j + dj)
                    if _parent_key(nk) == pk or not self._in_range(nk):
                        continue
                    if nk in refined:
                        feasible = False
                        break
                if not feasible:
                    break
            if not feasible:
                continue
            for ck in kids:
                del active[ck]
            active[pk] = refined.pop(pk)
            report.coarsened.append(pk)

        if report.unchanged:
            return self, report
        state = (active, refined, next_id, self.generation + 1)
        mesh = QuadMesh(self.domain, self.nx, self.ny, self.level_cap, _state=state)
        return mesh, report


def build_uniform(domain, nx: int, ny: int, level_cap: int = _DEFAULT_LEVEL_CAP) -> QuadMesh:
    """Uniform nx-by-ny mesh of rectangle `domain` = (x0, y0, x1, y1)."""
    return QuadMesh(domain, nx, ny, level_cap=level_cap)
