import math

import numpy as np
import pytest

from poriferous.conformal import (
    AnnulusMap,
    PatchMap,
    annulus_map,
    build_mapping,
    compose_unified,
    disk_map,
    global_weld,
    inflation_objective,
    inverse_map,
    jacobian_field,
    load_mapped,
    local_weld,
    optimize_mobius_inflation,
    project_to_circle,
    rectify_boundaries,
    save_mapped,
    signed_areas,
    slit_bank_images,
    solve_harmonic_extension,
    weld_energy,
    weld_points,
)
from poriferous.decomposition import (
    GeneratorSet,
    _interfaces,
    gvt_partition,
    suggest_generators,
)
from poriferous.errors import OutOfDomain, ProjectionSingularity
from poriferous.geometry import Circle, MobiusParams, SimilarityParams, mobius_apply, similarity_apply
from poriferous.mesh import (
    HoleSpec,
    TriMesh,
    annulus_grid_mesh,
    bundled_mesh,
    disk_grid_mesh,
    euler_characteristic,
    make_poriferous_mesh,
)


def _flat(mesh):
    return mesh.xy


# ---------------------------------------------------------------- disk map


def test_disk_map_of_round_disk_is_a_rotation():
    m = disk_grid_mesh(10, 40)
    pm = disk_map(m, np.arange(m.n_faces))
    z = m.xy[pm.vertex_ids]
    rot = np.sum(pm.image * np.conj(z)) / abs(np.sum(pm.image * np.conj(z)))
    assert np.max(np.abs(pm.image - rot * z)) < 1e-6


def test_disk_map_single_triangle():
    m = TriMesh([[0, 0], [2, 0], [0, 1]], [[0, 1, 2]], [0, 1, 2])
    pm = disk_map(m, [0])
    assert np.allclose(np.abs(pm.image), 1)
    perim = 2 + math.sqrt(5) + 1
    # angles advance by edge length share along the loop
    gaps = np.diff(np.unwrap(np.angle(pm.at(pm.boundary))))
    lens = np.array([2, math.sqrt(5)])
    assert np.allclose(np.abs(gaps), 2 * math.pi * lens / perim)


def test_disk_map_boundary_on_circle():
    m = bundled_mesh("hole1")
    lp = m.obstacle_loops[0]
    z = m.xy[lp]
    gens = GeneratorSet(
        [int(lp[np.argmin(np.abs(np.angle(z * np.exp(-1j * a))))]) for a in (0.0, 2.1, 4.2)]
    )
    for s in gvt_partition(m, gens):
        pm = disk_map(m, s.faces, s.id)
        assert np.max(np.abs(np.abs(pm.at(pm.boundary)) - 1)) < 1e-10
        assert np.all(signed_areas(pm.image, _local_faces(m, s.faces, pm)) > 0)


def _local_faces(mesh, face_ids, pm):
    lk = pm.lookup()
    return np.vectorize(lambda g: lk[int(g)])(mesh.faces[face_ids])


# ---------------------------------------------------------------- welding


def _patch(img):
    ids = np.arange(len(img))
    return PatchMap(0, ids, np.asarray(img, complex), ids, np.angle(img))


def _interface_pts(n=12):
    return 0.8 * np.exp(1j * np.linspace(0.2, 2.0, n))


def test_local_weld_identity():
    z = _interface_pts()
    verts = np.column_stack([np.arange(len(z)), np.zeros(len(z)), np.zeros(len(z))]).astype(float)
    edges = np.array([[i, i + 1] for i in range(len(z) - 1)])
    wr = local_weld(_patch(z), _patch(z), edges, verts)
    assert wr.energy < 1e-20
    assert abs(wr.params.a) < 1e-8
    assert min(wr.params.phi, 2 * math.pi - wr.params.phi) < 1e-8


def test_local_weld_recovers_known_mobius():
    z = _interface_pts()
    m0 = MobiusParams(0.7, 0.3 - 0.2j)
    verts = np.column_stack([np.arange(len(z)), np.zeros(len(z)), np.zeros(len(z))]).astype(float)
    edges = np.array([[i, i + 1] for i in range(len(z) - 1)])
    wr = local_weld(_patch(z), _patch(mobius_apply(z, m0)), edges, verts)
    inv = m0.inverse()
    assert abs(wr.params.a - inv.a) < 1e-6
    assert abs(np.exp(1j * wr.params.phi) - np.exp(1j * inv.phi)) < 1e-6


def test_single_point_weld_is_minimal_norm():
    t, w = 0.3 + 0.4j, -0.5 + 0.1j
    wr = weld_points([t], [w])
    assert wr.energy < 1e-20
    best = np.inf
    for phi in np.linspace(0, 2 * math.pi, 181):
        for r in np.linspace(0, 0.99, 100):
            for ang in np.linspace(0, 2 * math.pi, 73):
                a = r * np.exp(1j * ang)
                if weld_energy(np.array([t]), np.array([w]), np.ones(1), MobiusParams(phi, a)) < 1e-4:
                    best = min(best, r)
                    break
    assert abs(wr.params.a) <= best + 0.01


def test_compose_single_patch_is_passthrough():
    p = _patch(_interface_pts())
    uni = compose_unified([p], [MobiusParams()])
    assert np.array_equal(uni.image, p.image)


def _three_cells_hole1():
    m = bundled_mesh("hole1")
    lp = m.obstacle_loops[0]
    z = m.xy[lp]
    g = [int(lp[np.argmin(np.abs(np.angle(z * np.exp(-1j * a))))]) for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)]
    gens = GeneratorSet(g, {0: g}, {0: False})
    return m, gvt_partition(m, gens)


def _weld_chain(m, subs):
    patches = [disk_map(m, s.faces, s.id) for s in subs]
    inter = {s.id: s.interface_edges for s in subs}
    welds = [MobiusParams()]
    for l in range(1, len(patches)):
        welds.append(local_weld(patches[l - 1], patches[l], inter[subs[l - 1].id][subs[l].id], m.vertices).params)
    return compose_unified(patches, welds, m.vertices, m.faces, inter)


def test_composed_chain_is_an_annulus():
    m, subs = _three_cells_hole1()
    uni = _weld_chain(m, subs)
    f = m.faces[np.all(np.isin(m.faces, uni.vertex_ids), axis=1)]
    assert euler_characteristic(f) == 0


@pytest.mark.xfail(strict=True, reason="disk automorphisms cannot close seams traversed in opposite orientations")
def test_symmetric_patches_weld_without_seam_gaps():
    m, subs = _three_cells_hole1()
    uni = _weld_chain(m, subs)
    diam = 2.0
    assert max(uni.seam_gaps.values()) < 1e-3 * diam


# ---------------------------------------------------------------- annulus


def test_flat_annulus_modulus():
    m = annulus_grid_mesh(0.3, 1.0, 16, 96)
    am = annulus_map(m, np.arange(m.n_faces), m.obstacle_loops[0])
    assert abs(am.modulus - 0.3) < 5e-3
    # near identity after removing the free rotation
    z = m.xy[am.vertex_ids]
    rot = np.sum(am.image * np.conj(z))
    rot /= abs(rot)
    assert np.max(np.abs(am.image - rot * z)) < 2e-2


@pytest.mark.parametrize("a,b", [(0.2, 0.8), (0.45, 1.0)])
def test_concentric_annulus_modulus(a, b):
    m = annulus_grid_mesh(a, b, 16, 96)
    am = annulus_map(m, np.arange(m.n_faces), m.obstacle_loops[0])
    assert abs(am.modulus - a / b) < 5e-3


def _eccentric_modulus(c, r):
    # real Mobius z -> (z - s)/(1 - s z) making both circles concentric
    p = 1 + c * c - r * r
    s = (p - math.sqrt(p * p - 4 * c * c)) / (2 * c)
    f = lambda z: (z - s) / (1 - s * z)
    return abs(f(c + r) - f(c - r)) / 2


def test_eccentric_annulus_modulus():
    m = make_poriferous_mesh([HoleSpec(0.3 + 0j, 0.2)], h=0.03)
    am = annulus_map(m, np.arange(m.n_faces), m.obstacle_loops[0])
    assert abs(am.modulus - _eccentric_modulus(0.3, 0.2)) < 1e-2


def test_global_weld_single_and_recovery():
    m = bundled_mesh("disk")
    ids = np.arange(m.n_vertices)
    one = AnnulusMap(0, ids, m.xy, 0.5)
    T, res, res0 = global_weld([one], {}, m.vertices)
    assert T[0] == SimilarityParams() and res == 0
    labels = (m.face_centroids()[:, 0] > 0.05).astype(int)
    inter = _interfaces(m, labels)
    S = SimilarityParams(0.8 * np.exp(0.4j), 0.2 - 0.1j)
    regs = []
    for k in (0, 1):
        vid = np.unique(m.faces[labels == k])
        img = m.xy[vid] if k == 0 else similarity_apply(m.xy[vid], S)
        regs.append(AnnulusMap(k, vid, img, 0.5))
    T, res, res0 = global_weld(regs, inter, m.vertices)
    inv = S.inverse()
    assert abs(T[1].alpha - inv.alpha) < 1e-8
    assert abs(T[1].gamma - inv.gamma) < 1e-8
    assert res <= res0


# ---------------------------------------------------------------- rectify


def test_projection_and_rectify():
    c = Circle(0.2 - 0.1j, 0.15)
    t = np.linspace(0, 2 * math.pi, 40, endpoint=False)
    exact = c.center + c.radius * np.exp(1j * t)
    assert np.allclose(project_to_circle(exact, c), exact, atol=1e-15)
    rng = np.random.default_rng(1)
    noisy = c.center + (c.radius + 1e-3 * rng.standard_normal(40)) * np.exp(1j * t)
    out = project_to_circle(noisy, c)
    assert np.max(np.abs(np.abs(out - c.center) - c.radius)) < 1e-12
    with pytest.raises(ProjectionSingularity):
        project_to_circle([c.center], c)
    m = annulus_grid_mesh(0.3, 1.0, 4, 32)
    img, circles = rectify_boundaries(m.xy, m.outer_loop, m.obstacle_loops)
    assert np.allclose(img, m.xy, atol=1e-12)
    assert abs(circles[0].radius - 0.3) < 1e-12


# ---------------------------------------------------------------- inflation


def test_inflation_of_uniform_map_is_trivial():
    m = disk_grid_mesh(10, 40)
    s = optimize_mobius_inflation(m, m.xy)
    assert abs(s.a) <= 0.9 / 16


def test_inflation_undoes_known_compression():
    m = disk_grid_mesh(14, 56)
    a0 = 0.3 + 0.15j
    img = mobius_apply(m.xy, MobiusParams(0.0, -a0))
    s = optimize_mobius_inflation(m, img)
    assert abs(s.a - a0) < 0.05
    assert inflation_objective(m, img, s.a) <= inflation_objective(m, img, 0j)


# ---------------------------------------------------------------- harmonic / jacobian


def test_harmonic_extension_of_affine_data():
    m = bundled_mesh("holes3")  # lifted surface: affine in the planar coords is not harmonic, so flatten
    flat = TriMesh(m.vertices[:, :2], m.faces, m.outer_loop, m.obstacle_loops)
    b = flat.boundary_vertices()
    g = (1.2 - 0.3j) * flat.xy + 0.1j
    out = solve_harmonic_extension(flat, b, g[b])
    assert np.max(np.abs(out - g)) < 1e-8
    const = solve_harmonic_extension(flat, b, np.full(len(b), 0.4 + 0.2j))
    assert np.allclose(const, 0.4 + 0.2j)


def test_jacobian_field_affine_maps():
    m = disk_grid_mesh(4, 16)
    J, lam, mu = jacobian_field(m, m.xy)
    # J maps each face's own frame to the plane, so identity shows up as a rotation
    assert np.allclose(np.transpose(J, (0, 2, 1)) @ J, np.eye(2), atol=1e-12)
    assert np.allclose(np.linalg.det(J), 1)
    assert np.allclose(lam, 1) and np.allclose(mu, 0, atol=1e-12)
    _, lam, _ = jacobian_field(m, 1.7 * m.xy)
    assert np.allclose(lam, 1.7)
    _, _, mu = jacobian_field(m, 2 * m.xy.real + 1j * m.xy.imag)
    assert np.allclose(mu, 1 / 3)


# ---------------------------------------------------------------- full pipeline


def test_flat_disk_maps_near_identity():
    m = bundled_mesh("disk")
    subs = gvt_partition(m, GeneratorSet([0]))
    mm = build_mapping(m, subs, GeneratorSet([0]))
    assert np.mean(mm.beltrami) < 1e-3


def test_centered_hole_stays_centered():
    m = bundled_mesh("hole1")
    gens = suggest_generators(m)
    mm = build_mapping(m, gvt_partition(m, gens), gens)
    assert abs(mm.circles[0].center) < 1e-2


def test_inverse_map_round_trip(holes3_mapped):
    mm = holes3_mapped
    v = int(np.setdiff1d(np.arange(mm.source.n_vertices), mm.source.boundary_vertices())[40])
    f, bc = inverse_map(mm, mm.image[v])
    assert mm.source.faces[f][np.argmax(bc)] == v and bc.max() == pytest.approx(1.0, abs=1e-9)
    rng = np.random.default_rng(7)
    hits = 0
    while hits < 50:
        q = complex(*rng.uniform(-1, 1, 2))
        if not mm.in_domain(q, margin=0.02):
            continue
        try:
            f, bc = inverse_map(mm, q)
        except OutOfDomain:
            continue  # polygonal hole edge vs fitted circle
        assert abs(bc @ mm.image[mm.source.faces[f]] - q) < 1e-8
        hits += 1
    with pytest.raises(OutOfDomain):
        inverse_map(mm, mm.circles[0].center)


def test_mapped_mesh_roundtrip(tmp_path, holes3_mapped):
    p = save_mapped(holes3_mapped, tmp_path / "m.npz")
    back = load_mapped(p)
    assert np.array_equal(back.image, holes3_mapped.image)
    assert [c.radius for c in back.circles] == [c.radius for c in holes3_mapped.circles]


def test_slit_banks_agree():
    ys = np.linspace(-0.95, 0.95, 50)
    eps = 1e-4
    right, left = slit_bank_images(eps, ys)
    exact = np.sqrt(1 - ys**2)
    assert np.max(np.abs(right - exact)) < 10 * eps
    assert np.max(np.abs(left - exact)) < 10 * eps
