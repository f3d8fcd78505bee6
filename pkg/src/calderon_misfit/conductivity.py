"""Piecewise-affine anisotropic conductivities sigma = gamma * A.

gamma is affine per layer, gamma_m(x) = s_m + S_m . x, while A is a known
constant or affine symmetric matrix field shared by every conductivity in
a comparison.  On the exterior box D0 every conductivity equals the
identity matrix.  Because gamma is affine and the layers are boxes, all
L-infinity extrema are attained at layer corners and are computed exactly
from corner enumeration, with no sampling tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleFields, IndexOutOfRange


@dataclass(frozen=True)
class AffinePatch:
    """gamma_m(x) = s + S . x on layer m >= 1."""

    m: int
    s: float
    S: tuple

    def __post_init__(self):
        if self.m < 1:
            raise IndexOutOfRange(f"patch index {self.m} must be >= 1")
        object.__setattr__(self, "S", tuple(float(v) for v in self.S))
        object.__setattr__(self, "s", float(self.s))

    def gamma(self, x):
        x = np.asarray(x, dtype=float)
        return self.s + x @ np.asarray(self.S)


@dataclass(frozen=True)
class MatrixFieldSpec:
    """Constant or affine symmetric matrix field A(x) = A0 + sum_i x_i A1_i."""

    kind: str
    A0: np.ndarray
    A1: tuple = ()
    A_bar: float = 5.0

    def __post_init__(self):
        A0 = np.asarray(self.A0, dtype=float)
        if not np.allclose(A0, A0.T, atol=1e-14):
            raise IncompatibleFields("A0 must be symmetric")
        A0 = 0.5 * (A0 + A0.T)
        A0.setflags(write=False)
        object.__setattr__(self, "A0", A0)
        if self.kind not in ("constant", "affine"):
            raise IncompatibleFields(f"unknown matrix field kind {self.kind!r}")
        mats = []
        for M in self.A1:
            M = np.asarray(M, dtype=float)
            if not np.allclose(M, M.T, atol=1e-14):
                raise IncompatibleFields("affine coefficients must be symmetric")
            M = 0.5 * (M + M.T)
            M.setflags(write=False)
            mats.append(M)
        if self.kind == "constant" and mats:
            raise IncompatibleFields("constant field cannot carry A1 terms")
        if self.kind == "affine" and len(mats) != A0.shape[0]:
            raise IncompatibleFields("affine field needs one A1 matrix per axis")
        object.__setattr__(self, "A1", tuple(mats))

    @property
    def dim(self):
        return self.A0.shape[0]

    def eval(self, x):
        """A at one point or a batch of points; result (..., n, n)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            if x.ndim == 1:
                return self.A0.copy()
            return np.broadcast_to(self.A0, x.shape[:-1] + self.A0.shape).copy()
        A1 = np.stack(self.A1)
        return self.A0 + np.tensordot(x, A1, axes=([-1], [0]))

    def lipschitz_seminorm(self):
        """Exact Lipschitz bound for the affine kind, 0 for constant."""
        if self.kind == "constant":
            return 0.0
        return float(sum(np.linalg.norm(M, 2) for M in self.A1))


@dataclass(frozen=True)
class Conductivity:
    """sigma = gamma * A on the layers, identity on D0."""

    patches: tuple
    a_field: MatrixFieldSpec

    def __post_init__(self):
        patches = tuple(sorted(self.patches, key=lambda p: p.m))
        seen = [p.m for p in patches]
        if seen != list(range(1, len(patches) + 1)):
            raise IndexOutOfRange(f"patch indices must be 1..N, got {seen}")
        object.__setattr__(self, "patches", patches)

    @property
    def n_layers(self):
        return len(self.patches)

    def gamma_at(self, x, domain_index):
        """Affine factor at points x tagged with their layer indices."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dom = np.atleast_1d(np.asarray(domain_index))
        out = np.ones(len(x))
        for p in self.patches:
            mask = dom == p.m
            if np.any(mask):
                out[mask] = p.gamma(x[mask])
        return out

    def sigma_at(self, x, domain_index):
        """sigma at a batch of points tagged with layer indices."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dom = np.atleast_1d(np.asarray(domain_index))
        n = self.a_field.dim
        out = np.empty((len(x), n, n))
        d0 = dom == 0
        if np.any(d0):
            out[d0] = np.eye(n)
        rest = ~d0
        if np.any(rest):
            A = self.a_field.eval(x[rest])
            g = self.gamma_at(x[rest], dom[rest])
            out[rest] = g[:, None, None] * A
        return out


def eval_sigma(c, x, domain_index):
    """sigma(x) for one point; identity on D0 (index 0).

    The caller supplies the subdomain index so evaluation never averages
    across an interface.
    """
    if not (0 <= domain_index <= c.n_layers):
        raise IndexOutOfRange(
            f"domain index {domain_index} outside 0..{c.n_layers}")
    return c.sigma_at(np.asarray(x, dtype=float)[None, :],
                      np.array([domain_index]))[0]


def layer_corners(spec, m):
    """The 2^n corner points of layer box D_m."""
    h_top, h_bot = spec.heights[m - 1], spec.heights[m]
    pts = [(x, y, z) for x in (0.0, 1.0) for y in (0.0, 1.0)
           for z in (h_bot, h_top)]
    return np.array(pts)


def check_bounds(c, domain, gamma_bar=5.0, lam=5.0):
    """Diagnostic bound report; violations are reported, never raised.

    `domain` is a Mesh or a GeometrySpec.  gamma extrema are exact corner
    values (affine on boxes); A eigenvalue extremes are checked at mesh
    vertices when a mesh is given, else at layer corners.
    """
    if hasattr(domain, "spec"):
        spec, mesh = domain.spec, domain
    else:
        spec, mesh = domain, None
    report = {"patches": [], "passed": True}
    for p in c.patches:
        vals = p.gamma(layer_corners(spec, p.m))
        ok = vals.min() >= 1.0 / gamma_bar - 1e-14 and \
            vals.max() <= gamma_bar + 1e-14
        report["patches"].append({"m": p.m, "gamma_min": float(vals.min()),
                                  "gamma_max": float(vals.max()),
                                  "ok": bool(ok)})
        report["passed"] = report["passed"] and ok

    if mesh is not None:
        pts = mesh.vertices
    else:
        pts = np.vstack([layer_corners(spec, m)
                         for m in range(1, spec.n_layers + 1)])
    A = c.a_field.eval(pts)
    eig = np.linalg.eigvalsh(A)
    emin, emax = float(eig.min()), float(eig.max())
    eig_ok = emin >= 1.0 / lam - 1e-12 and emax <= lam + 1e-12
    lip = c.a_field.lipschitz_seminorm()
    lip_ok = lip <= c.a_field.A_bar + 1e-12
    report["a_eig_min"] = emin
    report["a_eig_max"] = emax
    report["a_eig_ok"] = bool(eig_ok)
    report["a_lipschitz"] = lip
    report["a_lipschitz_ok"] = bool(lip_ok)
    report["passed"] = bool(report["passed"] and eig_ok and lip_ok)
    return report


def gamma_distance(c1, c2, spec):
    """Exact E = max_m ||gamma_m^1 - gamma_m^2||_{L-inf(D_m)} and argmax m.

    Affine differences on boxes attain their sup at corners, so corner
    enumeration is exact.
    """
    if c1.n_layers != c2.n_layers or c1.n_layers != spec.n_layers:
        raise IncompatibleFields("conductivities and spec disagree on N")
    best, best_m = 0.0, 1
    for p1, p2 in zip(c1.patches, c2.patches):
        corners = layer_corners(spec, p1.m)
        d = np.abs(p1.gamma(corners) - p2.gamma(corners)).max()
        if d > best:
            best, best_m = float(d), p1.m
    return best, best_m


def linf_distance(c1, c2, domain):
    """L-infinity distance of sigma_1 - sigma_2 over Omega.

    `domain` is a Mesh (vertices augment the corner set) or a bare
    GeometrySpec.  Returns a dict with the sigma distance (spectral norm,
    max over layer corners plus mesh vertices), the exact affine-factor
    distance E, and the argmax subdomain K.  Both conductivities must
    share the matrix field.
    """
    if hasattr(domain, "spec"):
        spec, mesh = domain.spec, domain
    else:
        spec, mesh = domain, None
    if c1.a_field is not c2.a_field and not (
            c1.a_field.kind == c2.a_field.kind
            and np.array_equal(c1.a_field.A0, c2.a_field.A0)
            and all(np.array_equal(a, b) for a, b in
                    zip(c1.a_field.A1, c2.a_field.A1))):
        raise IncompatibleFields("linf_distance requires a shared A field")
    E, K = gamma_distance(c1, c2, spec)

    pts_list, dom_list = [], []
    for m in range(1, spec.n_layers + 1):
        corners = layer_corners(spec, m)
        pts_list.append(corners)
        dom_list.append(np.full(len(corners), m))
    if mesh is not None:
        for m in range(1, spec.n_layers + 1):
            cells = mesh.cells[mesh.cell_domain == m]
            if len(cells) == 0:
                continue
            verts = np.unique(cells)
            pts_list.append(mesh.vertices[verts])
            dom_list.append(np.full(len(verts), m))
    pts = np.vstack(pts_list)
    dom = np.concatenate(dom_list)

    dgamma = c1.gamma_at(pts, dom) - c2.gamma_at(pts, dom)
    A = c1.a_field.eval(pts)
    anorm = np.linalg.norm(A, ord=2, axis=(1, 2))
    sdist = float(np.abs(dgamma * anorm).max())
    return {"sigma_dist": sdist, "E": E, "K": K}
