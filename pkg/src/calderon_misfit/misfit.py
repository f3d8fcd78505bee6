"""Data functionals: boundary pairing S_U0, volume pairings S_Uk, the
misfit J over exterior pole pairs, and the discrete local D-N map.

The boundary route pairs the one-sided variational flux of one Green
field with the P1 trace of the other on Sigma; because every interior row
of a Green solve vanishes bit-exactly, this equals the pure-P1 volume
pairing g1^T (K1 - K2) g2 identically, so S_U0 collapses to the exact
floor when the conductivities coincide.  The volume route re-integrates
with the analytic kernel gradients and 4-point quadrature of the pointwise
coefficient difference; the distance between the two routes is the
discrete defect of the Green-formula identity and shrinks under
refinement.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .conductivity import Conductivity
from .errors import (DataNotSupportedOnSigma, MismatchedMesh,
                     PoleInsideRegion)
from .geometry import physical_submesh, sigma_interior_vertices


def _same_mesh(a, b):
    if a is not b:
        raise MismatchedMesh("fields/operators built on different meshes")


def s_boundary(g1, g2, c1=None, c2=None, mesh=None):
    """Surface pairing S_U0(y, z) from Sigma data only.

    g1 must be the Green field of the first conductivity (pole y), g2 of
    the second (pole z); the fluxes carry each field's own coefficient
    through its assembled system.
    """
    _same_mesh(g1.mesh, g2.mesh)
    if mesh is not None:
        _same_mesh(g1.mesh, mesh)
    return float(g2.trace_on_sigma() @ g1.flux_on_sigma()
                 - g1.trace_on_sigma() @ g2.flux_on_sigma())


def region_cells(mesh, k):
    """Cells of U_k (layers below the k-th chain prefix)."""
    return mesh.cell_domain > k


def s_volume(k, g1, g2, c1, c2, mesh):
    """Volume pairing int_{U_k} (sigma1 - sigma2) grad G1 . grad G2.

    Uses analytic kernel gradients plus the constant corrector gradient at
    4-point cell quadrature, with the affine coefficient difference
    evaluated pointwise.  Poles must lie in W_k (PoleInsideRegion
    otherwise).
    """
    _same_mesh(g1.mesh, g2.mesh)
    _same_mesh(g1.mesh, mesh)
    for gf in (g1, g2):
        cell, _ = mesh.locate(gf.pole)
        if mesh.cell_domain[int(cell[0])] > k:
            raise PoleInsideRegion(
                f"pole {tuple(gf.pole)} lies inside the integration region "
                f"U_{k}")
    mask = region_cells(mesh, k)
    if not np.any(mask):
        return 0.0
    qpts, qw = g1.sys.quad()
    pts = qpts[mask].reshape(-1, 3)
    dom = np.repeat(mesh.cell_domain[mask], 4)
    dsig = c1.sigma_at(pts, dom) - c2.sigma_at(pts, dom)
    if not np.any(dsig):
        return 0.0
    grads1 = g1.grads_on_cells(mask, qpts).reshape(-1, 3)
    grads2 = g2.grads_on_cells(mask, qpts).reshape(-1, 3)
    integrand = np.einsum("qij,qi,qj->q", dsig, grads1, grads2)
    return float(integrand @ qw[mask].ravel())


def s_second_derivative(k, sys1, sys2, y, z, axes=(2, 2), step=None,
                        kernel="laplace"):
    """Mixed pole derivative d^2 S_Uk / dy_i dz_j by central differences.

    Four pole-shifted Green pairs enter one bilinear volume pairing; the
    step defaults to a quarter cell on each pole.
    """
    d1 = fem.green_pole_derivative(sys1, y, axes[0], step=step,
                                   kernel=kernel)
    d2 = fem.green_pole_derivative(sys2, z, axes[1], step=step,
                                   kernel=kernel)
    return s_volume(k, d1, d2, sys1.cond, sys2.cond, sys1.mesh)


@dataclass
class MisfitReport:
    """Every sample of S_U0 over the pole grids plus the assembled J."""

    j_value: float
    samples: list
    dy_box: tuple
    dz_box: tuple
    integrand_scale: float
    s_floor: float
    j_floor: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": 1,
            "j_value": self.j_value,
            "dy_box": list(self.dy_box),
            "dz_box": list(self.dz_box),
            "integrand_scale": self.integrand_scale,
            "s_floor": self.s_floor,
            "j_floor": self.j_floor,
            "samples": self.samples,
            "meta": self.meta,
        }

    def to_csv_rows(self):
        rows = [("y1", "y2", "y3", "z1", "z2", "z3", "s_value", "method")]
        for s in self.samples:
            rows.append(tuple(s["y"]) + tuple(s["z"])
                        + (s["s"], s["method"]))
        return rows


def sample_matrix(c1, c2, mesh, dy, dz, sys1=None, sys2=None):
    """S_U0 over the pole grid product, plus flux/trace carriers.

    Each pole is solved once; the opposite region's nodes reuse the
    cached traces and fluxes.  Returns (S, scale) with S[p, q] =
    S_U0(y_p, z_q) and scale the largest gross integrand contribution
    (used for the relative floor).
    """
    sys1 = sys1 if sys1 is not None else fem.assemble(mesh, c1)
    sys2 = sys2 if sys2 is not None else fem.assemble(mesh, c2)
    G1 = fem.green_many(sys1, dy.nodes)
    G2 = fem.green_many(sys2, dz.nodes)
    F1 = np.column_stack([g.flux_on_sigma() for g in G1])
    T1 = np.column_stack([g.trace_on_sigma() for g in G1])
    F2 = np.column_stack([g.flux_on_sigma() for g in G2])
    T2 = np.column_stack([g.trace_on_sigma() for g in G2])
    S = F1.T @ T2 - (F2.T @ T1).T
    gross = np.abs(F1).T @ np.abs(T2) + (np.abs(F2).T @ np.abs(T1)).T
    return S, float(gross.max())


def sample_matrix_volume(c1, c2, mesh, dy, dz, sys1=None, sys2=None, k=0):
    """S_Uk over the full pole grid through the volume route.

    The independent re-integration of the Green-formula identity: analytic
    kernel gradients at 4-point quadrature against the pointwise
    coefficient difference, for every pole combination at once.
    """
    sys1 = sys1 if sys1 is not None else fem.assemble(mesh, c1)
    sys2 = sys2 if sys2 is not None else fem.assemble(mesh, c2)
    G1 = fem.green_many(sys1, dy.nodes)
    G2 = fem.green_many(sys2, dz.nodes)
    mask = region_cells(mesh, k)
    qpts, qw = sys1.quad()
    pts = qpts[mask].reshape(-1, 3)
    dom = np.repeat(mesh.cell_domain[mask], 4)
    dsig = c1.sigma_at(pts, dom) - c2.sigma_at(pts, dom)
    w = qw[mask].ravel()
    A = np.stack([g.grads_on_cells(mask, qpts).reshape(-1, 3) for g in G1])
    B = np.stack([g.grads_on_cells(mask, qpts).reshape(-1, 3) for g in G2])
    DB = np.einsum("qij,rqj->rqi", dsig, B)
    return np.einsum("pqi,rqi,q->pr", A, DB, w)


def misfit_J(c1, c2, mesh, dy, dz):
    """Misfit J = sum_pq w_p w_q |S_U0(y_p, z_q)|^2 and its full report.

    Quadrature weights are the tensor Gauss weights of the two pole
    regions, so J approximates the double integral of |S_U0|^2 over
    dy_box x dz_box.
    """
    S, scale = sample_matrix(c1, c2, mesh, dy, dz)
    j = float(np.einsum("p,q,pq->", dy.weights, dz.weights, S * S))
    s_floor = 1e-14 * scale
    j_floor = float(s_floor ** 2 * dy.weights.sum() * dz.weights.sum())
    samples = []
    for p, y in enumerate(dy.nodes):
        for q, z in enumerate(dz.nodes):
            samples.append({"y": [float(v) for v in y],
                            "z": [float(v) for v in z],
                            "s": float(S[p, q]),
                            "method": "boundary"})
    report = MisfitReport(j_value=j, samples=samples, dy_box=dy.box,
                          dz_box=dz.box, integrand_scale=scale,
                          s_floor=float(s_floor), j_floor=j_floor,
                          meta={"resolution": mesh.resolution,
                                "n_poles": [len(dy.nodes), len(dz.nodes)]})
    return j, report


# -- local Dirichlet-to-Neumann machinery --------------------------------


def identity_conductivity(n_layers, a_dim=3):
    """gamma = 1 with the identity matrix field (harmonic extension)."""
    from .conductivity import AffinePatch, MatrixFieldSpec
    patches = tuple(AffinePatch(m, 1.0, (0.0,) * a_dim)
                    for m in range(1, n_layers + 1))
    return Conductivity(patches=patches,
                        a_field=MatrixFieldSpec(kind="constant",
                                                A0=np.eye(a_dim)))


def _schur_on_sigma(sys, basis):
    """Schur complement of the stiffness onto the Sigma-interior dofs.

    Realizes the bilinear form <Lambda g, eta> on hat-function data: the
    remaining boundary is grounded and the interior block is eliminated
    through the shared factorization.
    """
    K = sys.K
    interior = sys.interior
    K_sb = K[basis][:, basis].toarray()
    K_ib = K[interior][:, basis].toarray()
    X = sys.lu.solve(K_ib)
    return K_sb - K_ib.T @ X


@dataclass
class DnOperator:
    """Discrete local D-N map on Sigma-interior hat functions.

    action[i, j] = <Lambda phi_j, phi_i>; gram is the harmonic-extension
    energy Gram matrix realizing the discrete H^1/2-equivalent norm.
    """

    sys: object
    basis: np.ndarray
    action: np.ndarray
    gram: np.ndarray


def dn_operator(c, mesh, gram=True):
    """Assemble the D-N matrix of a conductivity on the physical domain."""
    sub, _ = physical_submesh(mesh)
    sys = fem.assemble(sub, c)
    basis = sigma_interior_vertices(sub)
    M = _schur_on_sigma(sys, basis)
    B = None
    if gram:
        sys_i = fem.assemble(sub, identity_conductivity(c.n_layers))
        B = _schur_on_sigma(sys_i, basis)
    return DnOperator(sys=sys, basis=basis, action=M, gram=B)


def dn_apply(c, sys, g, eta):
    """<Lambda g, eta> for Sigma-supported boundary data on Omega.

    g and eta are vectors over the Sigma-interior vertices (or full
    boundary arrays vanishing elsewhere).  The value is computed with the
    discrete harmonic lift of eta and checked against the zero-extension
    lift to 1e-9 relative (lift independence of the bilinear form).
    """
    mesh = sys.mesh
    basis = sigma_interior_vertices(mesh)

    def expand(data, name):
        data = np.asarray(data, dtype=float)
        if data.shape == (len(basis),):
            full = np.zeros(mesh.n_vertices)
            full[basis] = data
            return full
        if data.shape == (mesh.n_vertices,):
            off = np.setdiff1d(mesh.boundary_vertices, basis)
            if np.any(data[off] != 0.0):
                raise DataNotSupportedOnSigma(
                    f"{name} carries boundary values off Sigma")
            return data
        raise DataNotSupportedOnSigma(
            f"{name} must be given on the {len(basis)} Sigma-interior "
            f"vertices")

    gf = expand(g, "g")
    ef = expand(eta, "eta")
    u_g = fem.solve_dirichlet(sys, gf[mesh.boundary_vertices])
    u_e = fem.solve_dirichlet(sys, ef[mesh.boundary_vertices])
    flux = sys.K @ u_g
    val_harmonic = float(u_e @ flux)
    val_zero = float(ef[basis] @ flux[basis])
    scale = max(abs(val_harmonic), abs(val_zero), 1e-30)
    assert abs(val_harmonic - val_zero) <= 1e-9 * scale, \
        "lift dependence beyond solver tolerance"
    return val_harmonic


@dataclass
class DnNormResult:
    """Largest generalized eigenvalue |mu| of (M1 - M2) x = mu B x."""

    value: float
    iterations: int
    converged: bool


def generalized_norm(dM, B, tol=1e-8, max_iter=500):
    """Largest |mu| of dM x = mu B x by B-inner-product power iteration.

    Deterministic all-ones start vector; a stalled iteration returns the
    best estimate flagged non-converged rather than raising.
    """
    from scipy.linalg import cho_factor, cho_solve
    cho = cho_factor(B)
    x = np.ones(dM.shape[0])
    x /= np.sqrt(x @ (B @ x))
    mu_old = 0.0
    mu = 0.0
    for it in range(1, max_iter + 1):
        y = cho_solve(cho, dM @ x)
        ny = np.sqrt(y @ (B @ y))
        if ny == 0.0:
            return DnNormResult(value=0.0, iterations=it, converged=True)
        x = y / ny
        mu = float(x @ (dM @ x)) / float(x @ (B @ x))
        if abs(mu - mu_old) <= tol * max(abs(mu), 1e-300):
            return DnNormResult(value=abs(mu), iterations=it,
                                converged=True)
        mu_old = mu
    return DnNormResult(value=abs(mu), iterations=max_iter,
                        converged=False)


def dn_norm_diff(c1, c2, mesh, tol=1e-8, max_iter=500):
    """Operator norm of Lambda_1 - Lambda_2 in the discrete H^1/2 pair.

    The Gram matrix is the harmonic-extension Dirichlet energy on the
    Sigma-interior hat functions (the discrete substitute for the trace
    pair norm)."""
    op1 = dn_operator(c1, mesh, gram=True)
    op2 = dn_operator(c2, mesh, gram=False)
    if op1.basis.shape != op2.basis.shape or \
            np.any(op1.basis != op2.basis):
        raise MismatchedMesh("D-N operators on different Sigma bases")
    return generalized_norm(op1.action - op2.action, op1.gram, tol=tol,
                            max_iter=max_iter)
