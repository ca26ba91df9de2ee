"""Quadtree mesh: structure, 2:1 balance, refine/coarsen, face enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egflow.mesh import (
    BOUNDARY,
    CONFORMING,
    HANGING_HIGH,
    HANGING_LOW,
    MeshError,
    build_uniform,
)

UNIT = (0.0, 0.0, 1.0, 1.0)


def build_refined_corner():
    mesh = build_uniform(UNIT, 2, 2)
    return mesh.refine([mesh.cell_id[0]])


def test_uniform_counts():
    mesh = build_uniform(UNIT, 2, 2)
    assert mesh.n_active == 4
    # 4 interior faces (2 vertical + 2 horizontal) + 8 boundary faces
    assert mesh.n_faces == 12
    assert mesh.interior_face_count() == 4
    assert np.allclose(mesh.cell_area, 0.25)
    assert mesh.total_area == pytest.approx(1.0)


def test_uniform_rect_domain():
    mesh = build_uniform((0.0, 0.0, 2.0, 0.5), 4, 1)
    assert mesh.n_active == 4
    assert np.allclose(mesh.cell_hx, 0.5)
    assert np.allclose(mesh.cell_hy, 0.5)


def test_refine_one_cell_structure():
    mesh = build_uniform(UNIT, 2, 2)
    child = mesh.refine([mesh.cell_id[0]])
    assert child.n_active == 7
    assert child.total_area == pytest.approx(1.0)
    assert child.balanced()
    assert child.generation == mesh.generation + 1
    # the refined corner cell shares one coarse edge with each of two
    # neighbors; every shared coarse edge splits into two hanging sub-faces
    hang = np.isin(child.face_kind, (HANGING_LOW, HANGING_HIGH))
    assert hang.sum() == 4


def test_hanging_owner_is_finer():
    mesh = build_refined_corner()
    for f in range(mesh.n_faces):
        nb = mesh.face_neighbor[f]
        if nb < 0:
            assert mesh.face_kind[f] == BOUNDARY
            continue
        own = mesh.face_owner[f]
        assert mesh.cell_level[own] >= mesh.cell_level[nb]
        if mesh.face_kind[f] in (HANGING_LOW, HANGING_HIGH):
            assert mesh.cell_level[own] == mesh.cell_level[nb] + 1
        else:
            assert mesh.face_kind[f] == CONFORMING


def test_two_to_one_balance_forced():
    mesh = build_uniform(UNIT, 2, 2)
    mesh = mesh.refine([mesh.cell_id[0]])
    # keep refining the current smallest south-west cell; the 2:1 rule must
    # drag the coarse neighbors along
    for _ in range(2):
        centers_x = mesh.cell_x0 + 0.5 * mesh.cell_hx
        centers_y = mesh.cell_y0 + 0.5 * mesh.cell_hy
        sw = mesh.cell_id[np.lexsort((centers_y, centers_x))[0]]
        mesh = mesh.refine([sw])
    assert mesh.balanced()
    assert mesh.cell_level.max() - mesh.cell_level.min() >= 2


def test_locate_contains_point():
    mesh = build_refined_corner()
    rng = np.random.default_rng(3)
    for x, y in rng.random((50, 2)):
        cid = mesh.locate(x, y)
        x0, y0, x1, y1 = mesh.cell(cid).bbox
        assert x0 <= x <= x1 and y0 <= y <= y1


def test_locate_outside_raises():
    mesh = build_uniform(UNIT, 2, 2)
    with pytest.raises(MeshError):
        mesh.locate(1.5, 0.5)


def test_coarsen_restores_quartet():
    mesh = build_uniform(UNIT, 2, 2)
    fine = mesh.refine([mesh.cell_id[0]])
    kids = fine.cell_id[fine.cell_level == 1]
    back = fine.coarsen(kids)
    assert back.n_active == 4
    assert back.total_area == pytest.approx(1.0)


def test_coarsen_respects_balance():
    # with a level-2 quartet present, merging all level-1 quartets at once
    # must not break the 2:1 rule
    mesh = build_uniform(UNIT, 2, 2)
    mesh = mesh.refine(mesh.cell_id)
    deep = mesh.refine([mesh.cell_id[0]])
    lvl1 = deep.cell_id[deep.cell_level == 1]
    after = deep.coarsen(lvl1)
    assert after.balanced()


def test_adapt_report_counts():
    mesh = build_uniform(UNIT, 4, 4)
    new, report = mesh.adapt([mesh.cell_id[5]], [])
    assert report.refined and not report.unchanged
    assert new.n_active == mesh.n_active + 3


def test_refine_unknown_id_raises():
    mesh = build_uniform(UNIT, 2, 2)
    with pytest.raises(MeshError):
        mesh.refine([10**9])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=12),
       st.integers(0, 3))
def test_random_adapt_keeps_area_and_balance(picks, n_coarsen_rounds):
    mesh = build_uniform(UNIT, 3, 3)
    for p in picks:
        ok = mesh.cell_id[mesh.cell_level < 4]
        if ok.size == 0:
            break
        mesh = mesh.refine([ok[p % ok.size]])
    for _ in range(n_coarsen_rounds):
        ids = mesh.cell_id[mesh.cell_level > 0]
        if ids.size == 0:
            break
        mesh = mesh.coarsen(ids[: max(1, ids.size // 2)])
    assert mesh.balanced()
    assert mesh.total_area == pytest.approx(1.0, rel=1e-12)
    assert np.all(mesh.cell_area > 0)


def test_face_partition_of_boundary():
    # boundary faces of each side tile the side exactly
    mesh = build_refined_corner()
    for side in ("left", "right", "bottom", "top"):
        tot = sum(f.h_e for f in mesh.faces() if f.boundary == side)
        assert tot == pytest.approx(1.0)
