import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poriferous.decomposition import (
    TYPE_I,
    TYPE_II,
    GeneratorSet,
    Subdomain,
    classify_subdomain,
    gvt_partition,
    obstacle_regions,
    suggest_generators,
    validate_admissibility,
)
from poriferous.errors import InadmissiblePartition
from poriferous.mesh import annulus_grid_mesh, bundled_mesh, euler_characteristic


def _loop_vertex_at(mesh, k, angle):
    lp = mesh.obstacle_loops[k]
    z = mesh.xy[lp]
    c = z.mean()
    return int(lp[np.argmin(np.abs(np.angle((z - c) * np.exp(-1j * angle))))])


def test_single_generator_disk():
    m = bundled_mesh("disk")
    subs = gvt_partition(m, GeneratorSet([0]))
    assert len(subs) == 1
    assert subs[0].kind == TYPE_I and len(subs[0].faces) == m.n_faces


def test_symmetric_annulus_split_evenly():
    m = annulus_grid_mesh(0.3, 1.0, 8, 32)
    # two outer-ring vertices half a turn apart
    g = [int(m.outer_loop[0]), int(m.outer_loop[16])]
    subs = gvt_partition(m, GeneratorSet(g), classify=False)
    sizes = sorted(len(s.faces) for s in subs)
    assert sizes[1] - sizes[0] <= 1


def test_three_cells_around_one_hole_form_annulus():
    m = bundled_mesh("hole1")
    g = [_loop_vertex_at(m, 0, a) for a in (0.0, 2.1, 4.2)]
    gens = GeneratorSet(g, {0: g}, {0: False})
    subs = gvt_partition(m, gens)
    assert all(s.kind == TYPE_I for s in subs)
    union = np.concatenate([s.faces for s in subs])
    assert euler_characteristic(m.faces[union]) == 0
    (region,) = obstacle_regions(subs, gens, m)
    assert region.obstacle == 0 and sorted(region.cells) == [0, 1, 2]


def test_classify_patches():
    m = bundled_mesh("holes3")
    gens = suggest_generators(m, non_star=(1,))
    subs = gvt_partition(m, gens)
    kinds = {s.generator: s.kind for s in subs}
    assert kinds[gens.obstacle_assignment[0][0]] == TYPE_II
    assert all(kinds[g] == TYPE_I for g in gens.obstacle_assignment[1])
    annular = [s for s in subs if s.kind == TYPE_II]
    assert sorted(s.enclosed_obstacle for s in annular) == [0, 2]
    with pytest.raises(InadmissiblePartition):
        classify_subdomain(Subdomain(99, np.arange(m.n_faces)), m)


def test_valid_partition_passes_and_merge_fails():
    m = bundled_mesh("holes3")
    gens = suggest_generators(m, non_star=(1,))
    subs = gvt_partition(m, gens)
    assert validate_admissibility(subs, m).passed
    a, b = [s for s in subs if s.kind == TYPE_II][:2]
    merged = Subdomain(a.id, np.concatenate([a.faces, b.faces]))
    rest = [s for s in subs if s.id not in (a.id, b.id)]
    rep = validate_admissibility(rest + [merged], m)
    assert not rep.passed
    assert a.id in rep.failures()


def test_generator_set_preconditions():
    with pytest.raises(InadmissiblePartition):
        GeneratorSet([]).validate(0)
    with pytest.raises(InadmissiblePartition):
        GeneratorSet([3], {0: [3]}, {0: False}).validate(1)
    with pytest.raises(InadmissiblePartition):
        GeneratorSet([3, 4], {0: [3]}).validate(1)


def _oracle_ok(mesh, faces):
    # independent count: connectivity by flood fill, chi = V - E + F,
    # and the number of obstacle loops fully surrounded by the cell
    f = mesh.faces[faces]
    if len(f) == 0:
        return False
    edges = {}
    for i, tri in enumerate(f):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges.setdefault((min(a, b), max(a, b)), []).append(i)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        tri = f[i]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            for j in edges[(min(a, b), max(a, b))]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
    if len(seen) != len(f):
        return False
    chi = len(np.unique(f)) - len(edges) + len(f)
    loop_edges = [{(min(a, b), max(a, b)) for a, b in zip(lp, np.roll(lp, -1))} for lp in mesh.obstacle_loops]
    held = sum(1 for le in loop_edges if le <= set(edges))
    return (chi == 1 and held == 0) or (chi == 0 and held == 1)


HOLES6 = bundled_mesh("holes6")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_validator_agrees_with_euler_oracle(n_cells, seed):
    m = HOLES6
    rng = np.random.default_rng(seed)
    cen = m.face_centroids()[:, :2] @ np.array([1, 1j])
    seeds = cen[rng.choice(m.n_faces, n_cells, replace=False)]
    labels = np.argmin(np.abs(cen[:, None] - seeds[None, :]), axis=1)
    subs = [Subdomain(i, np.nonzero(labels == i)[0]) for i in range(n_cells)]
    rep = validate_admissibility(subs, m)
    for s, row in zip(subs, rep.rows):
        assert (row["error"] is None) == _oracle_ok(m, s.faces)
    assert rep.passed == all(_oracle_ok(m, s.faces) for s in subs)
