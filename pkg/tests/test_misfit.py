import numpy as np
import pytest

from calderon_misfit import fem, misfit
from calderon_misfit.conductivity import (AffinePatch, Conductivity,
                                          MatrixFieldSpec)
from calderon_misfit.errors import (DataNotSupportedOnSigma, MismatchedMesh,
                                    PoleInsideRegion)
from calderon_misfit.geometry import (build_augmented_mesh,
                                      physical_submesh,
                                      sigma_interior_vertices)


@pytest.fixture(scope="module")
def greens8(ref_systems8, ref_regions):
    sys1, sys2 = ref_systems8
    dy, dz = ref_regions
    g1 = fem.green(sys1, dy.nodes[0])
    g2 = fem.green(sys2, dz.nodes[5])
    return g1, g2


def test_s_boundary_floor_for_equal(ref_systems8, ref_regions):
    sys1, _ = ref_systems8
    dy, dz = ref_regions
    ga = fem.green(sys1, dy.nodes[0])
    gb = fem.green(sys1, dz.nodes[0])
    s = misfit.s_boundary(ga, gb)
    scale = float(np.abs(ga.flux_on_sigma() @ gb.trace_on_sigma()))
    assert abs(s) <= 1e-6 * max(scale, 1e-30)


def test_s_boundary_antisymmetric(greens8):
    g1, g2 = greens8
    assert misfit.s_boundary(g1, g2) == -misfit.s_boundary(g2, g1)


def test_s_boundary_matches_volume(greens8, ref_conds, ref_mesh8):
    c1, c2 = ref_conds
    g1, g2 = greens8
    sb = misfit.s_boundary(g1, g2)
    sv = misfit.s_volume(0, g1, g2, c1, c2, ref_mesh8)
    assert abs(sb - sv) <= 0.02 * abs(sv)


def test_s_volume_zero_for_equal(ref_systems8, ref_regions, ref_conds,
                                 ref_mesh8):
    sys1, _ = ref_systems8
    c1, _ = ref_conds
    dy, dz = ref_regions
    ga = fem.green(sys1, dy.nodes[0])
    gb = fem.green(sys1, dz.nodes[0])
    assert misfit.s_volume(0, ga, gb, c1, c1, ref_mesh8) == 0.0


def test_s_volume_region_is_omega(ref_mesh8):
    mask = misfit.region_cells(ref_mesh8, 0)
    assert np.array_equal(mask, ref_mesh8.cell_domain >= 1)


def test_s_volume_rejects_pole_inside(ref_systems8, ref_conds, ref_mesh8):
    # a pole in layer 2 sits inside U_1 and must be rejected for k = 1
    c1, c2 = ref_conds
    sys1, sys2 = ref_systems8
    deep = fem.green(sys1, np.array([0.52, 0.47, -0.77]), kernel="delta")
    top = fem.green(sys2, np.array([0.47, 0.52, -0.22]), kernel="delta")
    with pytest.raises(PoleInsideRegion):
        misfit.s_volume(1, deep, top, c1, c2, ref_mesh8)


def test_s_volume_linear_in_perturbation(ref_mesh8, ref_regions):
    from calderon_misfit import presets
    dy, dz = ref_regions
    c1, _ = presets.reference_conductivities()
    sys1 = fem.assemble(ref_mesh8, c1)
    g1 = fem.green(sys1, dy.nodes[0])
    vals = []
    for t in (1e-3, 2e-3):
        patches = tuple(AffinePatch(p.m, (1 + t) * p.s,
                                    tuple((1 + t) * np.asarray(p.S)))
                        for p in c1.patches)
        c2 = Conductivity(patches=patches, a_field=c1.a_field)
        sys2 = fem.assemble(ref_mesh8, c2)
        g2 = fem.green(sys2, dz.nodes[0])
        vals.append(misfit.s_volume(0, g1, g2, c1, c2, ref_mesh8))
    ratio = vals[1] / vals[0]
    assert ratio == pytest.approx(2.0, abs=0.02)


def test_mismatched_mesh_rejected(ref_systems8, ref_regions, small_mesh):
    sys1, _ = ref_systems8
    dy, _ = ref_regions
    sys_other = fem.assemble(small_mesh,
                             misfit.identity_conductivity(1))
    g1 = fem.green(sys1, dy.nodes[0])
    g2 = fem.green(sys_other, np.array([0.5, 0.52, -0.5]),
                   kernel="delta")
    with pytest.raises(MismatchedMesh):
        misfit.s_boundary(g1, g2)


def test_second_derivative_zero_for_equal(ref_systems8, ref_regions):
    sys1, _ = ref_systems8
    dy, dz = ref_regions
    val = misfit.s_second_derivative(0, sys1, sys1, dy.nodes[0],
                                     dz.nodes[0])
    assert val == 0.0


def test_second_derivative_exchange(ref_systems8, ref_regions):
    # full (y, i, sigma1) <-> (z, j, sigma2) exchange flips the integrand
    # sign; magnitudes agree within FD tolerance
    sys1, sys2 = ref_systems8
    dy, dz = ref_regions
    y, z = dy.nodes[0], dz.nodes[5]
    a = misfit.s_second_derivative(0, sys1, sys2, y, z, axes=(2, 2))
    b = misfit.s_second_derivative(0, sys2, sys1, z, y, axes=(2, 2))
    assert abs(a + b) <= 0.05 * abs(a)


def test_second_derivative_richardson(ref_systems8, ref_regions,
                                      ref_mesh8):
    sys1, sys2 = ref_systems8
    dy, dz = ref_regions
    # mid-cell poles so every stencil stays inside one cell
    y = np.array([0.34375, 0.40625, 0.40625])
    z = np.array([0.65625, 0.59375, 0.40625])
    h0 = ref_mesh8.step / 4.0
    vals = [misfit.s_second_derivative(0, sys1, sys2, y, z, axes=(2, 2),
                                       step=h)
            for h in (h0, h0 / 2, h0 / 4)]
    ratio = (vals[0] - vals[1]) / (vals[1] - vals[2])
    assert 3.0 <= ratio <= 5.0


def test_misfit_j_floor_and_report(ref_conds, ref_mesh8, ref_regions):
    c1, _ = ref_conds
    dy, dz = ref_regions
    j, rep = misfit.misfit_J(c1, c1, ref_mesh8, dy, dz)
    assert 0.0 <= j <= rep.j_floor
    assert len(rep.samples) == len(dy.nodes) * len(dz.nodes)
    assert rep.to_csv_rows()[0][0] == "y1"
    assert rep.to_dict()["schema_version"] == 1


def test_misfit_j_symmetry(ref_conds, ref_mesh8, ref_regions):
    c1, c2 = ref_conds
    dy, dz = ref_regions
    j_ab, _ = misfit.misfit_J(c1, c2, ref_mesh8, dy, dz)
    j_ba, _ = misfit.misfit_J(c2, c1, ref_mesh8, dz, dy)
    assert j_ab > 0.0
    assert abs(j_ab - j_ba) <= 1e-12 * j_ab


def test_misfit_positivity(ref_conds, ref_mesh8, ref_regions):
    c1, c2 = ref_conds
    dy, dz = ref_regions
    j, rep = misfit.misfit_J(c1, c2, ref_mesh8, dy, dz)
    assert j >= 0.0
    assert any(abs(s["s"]) > rep.s_floor for s in rep.samples)


def test_s_decay_toward_sigma(tall_spec, tall_sys):
    """|S_U0| grows toward Sigma no faster than (d(y) d(z))^(1 - n/2).

    The envelope slope is visible once the pole height drops below the
    pole separation; the wide-open D0 keeps wall screening out of the
    measurement."""
    mesh = tall_sys.mesh
    c1 = Conductivity(patches=(AffinePatch(1, 1.3, (0.1, 0.0, 0.2)),),
                      a_field=tall_sys.cond.a_field)
    c2 = Conductivity(patches=(AffinePatch(1, 1.0, (0.0, 0.1, -0.1)),),
                      a_field=tall_sys.cond.a_field)
    sys1 = fem.assemble(mesh, c1)
    sys2 = fem.assemble(mesh, c2)
    vals, dists = [], []
    for zb in (0.15, 0.11):
        y = np.array([0.30, 0.47, zb])
        z = np.array([0.70, 0.53, zb])
        g1 = fem.green(sys1, y)
        g2 = fem.green(sys2, z)
        vals.append(abs(misfit.s_boundary(g1, g2)))
        dists.append(zb)        # distance to U_0 (the Sigma plane)
    slope = (np.log(vals[1]) - np.log(vals[0])) / \
        (np.log(dists[1]) - np.log(dists[0]))
    # envelope slope for (d d)^(-1/2) pairs is -1; spec slack 0.3
    assert slope >= -(2 * (3.0 / 2.0 - 1.0)) - 0.3


def test_dn_apply_coercive_and_symmetric(ref_mesh8, ref_conds):
    c1, _ = ref_conds
    sub, _ = physical_submesh(ref_mesh8)
    sysm = fem.assemble(sub, c1)
    basis = sigma_interior_vertices(sub)
    rng = np.random.default_rng(2)
    g = rng.normal(size=len(basis))
    e = rng.normal(size=len(basis))
    vgg = misfit.dn_apply(c1, sysm, g, g)
    assert vgg > 0.0
    vge = misfit.dn_apply(c1, sysm, g, e)
    veg = misfit.dn_apply(c1, sysm, e, g)
    assert abs(vge - veg) <= 1e-11 * max(abs(vge), 1.0)


def test_dn_apply_support_check(ref_mesh8, ref_conds):
    c1, _ = ref_conds
    sub, _ = physical_submesh(ref_mesh8)
    sysm = fem.assemble(sub, c1)
    bad = np.zeros(sub.n_vertices)
    off = np.setdiff1d(sub.boundary_vertices,
                       sigma_interior_vertices(sub))
    bad[off[0]] = 1.0
    with pytest.raises(DataNotSupportedOnSigma):
        misfit.dn_apply(c1, sysm, bad, bad)


def test_dn_apply_matches_dense_schur(small_spec):
    """sigma = I, single hat: <Lambda phi, phi> equals the dense Schur
    complement diagonal entry."""
    mesh = build_augmented_mesh(small_spec, 4)
    sub, _ = physical_submesh(mesh)
    cI = misfit.identity_conductivity(1)
    sysm = fem.assemble(sub, cI)
    basis = sigma_interior_vertices(sub)

    K = sysm.K.toarray()
    interior = sysm.interior
    K_bb = K[np.ix_(basis, basis)]
    K_ib = K[np.ix_(interior, basis)]
    schur = K_bb - K_ib.T @ np.linalg.solve(K[np.ix_(interior, interior)],
                                            K_ib)
    for idx in (0, len(basis) // 2):
        g = np.zeros(len(basis))
        g[idx] = 1.0
        val = misfit.dn_apply(cI, sysm, g, g)
        assert val == pytest.approx(schur[idx, idx], rel=1e-9)


def test_dn_operator_symmetry(ref_conds, ref_mesh8):
    c1, _ = ref_conds
    op = misfit.dn_operator(c1, ref_mesh8)
    M = op.action
    assert np.abs(M - M.T).max() <= 1e-11 * np.abs(M).max()
    w = np.linalg.eigvalsh(op.gram)
    assert w.min() > 0.0


def test_dn_norm_zero_for_equal(ref_conds, ref_mesh8):
    c1, _ = ref_conds
    res = misfit.dn_norm_diff(c1, c1, ref_mesh8)
    assert res.value <= 1e-10


def test_dn_norm_scaling_exact():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(9, 9))
    dM = 0.5 * (X + X.T)
    Y = rng.normal(size=(9, 9))
    B = Y @ Y.T + 9 * np.eye(9)
    a = misfit.generalized_norm(dM, B)
    b = misfit.generalized_norm(2.0 * dM, B)
    assert b.value == pytest.approx(2.0 * a.value, rel=1e-12)
    # against a dense generalized eigensolve
    from scipy.linalg import eigh
    w = eigh(dM, B, eigvals_only=True)
    assert a.value == pytest.approx(np.abs(w).max(), rel=1e-6)


def test_dn_norm_dominates_sqrt_j(ref_conds, ref_mesh8, ref_regions):
    c1, c2 = ref_conds
    dy, dz = ref_regions
    j, _ = misfit.misfit_J(c1, c2, ref_mesh8, dy, dz)
    dn = misfit.dn_norm_diff(c1, c2, ref_mesh8)
    assert dn.value > 0.0
    c_d = np.sqrt(j) / dn.value
    assert np.isfinite(c_d) and c_d > 0.0
