"""Layered box domain, augmented mesh, and pole-region quadrature.

The physical domain is the unit box Omega = (0,1)^2 x (-1,0) sliced into
N horizontal layers by planes z = h_m.  A measurement patch Sigma sits in
the top plane {z = 0} and an exterior box D0 is glued on top of it across
Sigma, producing the augmented domain on which Green functions with
exterior poles are solved.  Meshes are structured: a uniform cube grid of
step 1/resolution, each cube split into the six path tetrahedra of the
Kuhn triangulation, so that every layer plane, the patch and the D0 faces
are unions of cell facets.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import (
    D0NotAboveSigma,
    DegenerateCell,
    FlatPortionTooSmall,
    GeometryError,
    IncommensurateGeometry,
    NonMonotoneHeights,
    RegionTouchesBoundary,
)

SIGMA = "SIGMA"
OUTER = "OUTER"

# Path tetrahedra of the unit cube: for a permutation p of the axes the
# tet walks 0 -> e_p0 -> e_p0+e_p1 -> (1,1,1).  The split is translation
# invariant, so neighbouring cubes share identical face triangulations.
_PERMS = tuple(permutations(range(3)))
_PERM_RANK = {p: i for i, p in enumerate(_PERMS)}

_SNAP = 1e-12


@dataclass(frozen=True)
class GeometrySpec:
    """Validated description of the layered domain and its augmentation.

    heights runs h_0 = 0 > h_1 > ... > h_N = -1.  sigma_patch is
    (x0, x1, y0, y1) in the plane z = 0; d0_box is (x0, x1, y0, y1, z0, z1)
    with z0 = 0.  interface_points[k] is P_{k+1}, the centroid of the flat
    interface at height h_k (P_1 is the centroid of sigma_patch).
    """

    r0: float
    n_layers: int
    heights: tuple
    sigma_patch: tuple
    d0_box: tuple
    lipschitz: float
    interface_points: tuple

    @property
    def omega_volume(self):
        return 1.0

    def layer_of(self, z):
        """Subdomain index m with h_m < z < h_{m-1}; 0 for z > 0."""
        if z > 0.0:
            return 0
        m = int(np.searchsorted(-np.asarray(self.heights), -z, side="left"))
        return min(max(m, 1), self.n_layers)


def build_layered_geometry(r0, n_layers, heights, sigma_patch, d0_box,
                           lipschitz=1.0):
    """Validate the layered-domain data and record the chain points.

    Raises NonMonotoneHeights, D0NotAboveSigma or FlatPortionTooSmall when
    the corresponding assumption fails.
    """
    heights = tuple(float(h) for h in heights)
    sigma_patch = tuple(float(v) for v in sigma_patch)
    d0_box = tuple(float(v) for v in d0_box)
    r0 = float(r0)

    if r0 <= 0.0 or lipschitz <= 0.0 or n_layers < 1:
        raise GeometryError("r0, lipschitz and layer count must be positive")
    if len(heights) != n_layers + 1:
        raise NonMonotoneHeights(
            f"expected {n_layers + 1} heights for {n_layers} layers, "
            f"got {len(heights)}")
    if heights[0] != 0.0 or heights[-1] != -1.0:
        raise NonMonotoneHeights("heights must span (-1, 0): h_0 = 0, h_N = -1")
    if any(b >= a for a, b in zip(heights, heights[1:])):
        raise NonMonotoneHeights(f"heights not strictly decreasing: {heights}")

    sx0, sx1, sy0, sy1 = sigma_patch
    if not (0.0 <= sx0 < sx1 <= 1.0 and 0.0 <= sy0 < sy1 <= 1.0):
        raise GeometryError(f"sigma_patch not an ordered rectangle in the "
                            f"unit square: {sigma_patch}")

    dx0, dx1, dy0, dy1, dz0, dz1 = d0_box
    if dz0 != 0.0 or not (0.0 < dz1):
        raise D0NotAboveSigma("d0_box must sit on z = 0 with positive height")
    # the open box {0 < z < dz1} must lie inside {0 < z < r0/3}
    if dz1 > r0 / 3.0 + _SNAP:
        raise D0NotAboveSigma(
            f"d0_box top {dz1} not inside the slab 0 < z < r0/3 = {r0 / 3.0}")
    if not (dx0 < dx1 and dy0 < dy1):
        raise D0NotAboveSigma(f"d0_box degenerate: {d0_box}")
    margin = r0 / 100.0
    if (dx0 - sx0 < margin or sx1 - dx1 < margin
            or dy0 - sy0 < margin or sy1 - dy1 < margin):
        raise D0NotAboveSigma(
            "closure of the d0_box bottom face must be strictly inside "
            f"sigma_patch (margin >= r0/100 = {margin})")

    # Every flat interface must host a portion of size r0/3: interior
    # interfaces are full unit squares, the boundary one is sigma_patch.
    min_extent = min(1.0, sx1 - sx0, sy1 - sy0)
    if min_extent < r0 / 3.0 - _SNAP:
        raise FlatPortionTooSmall(
            f"smallest flat extent {min_extent} is below r0/3 = {r0 / 3.0}")

    pts = [np.array([(sx0 + sx1) / 2.0, (sy0 + sy1) / 2.0, 0.0])]
    for h in heights[1:-1]:
        pts.append(np.array([0.5, 0.5, h]))
    pts = tuple(p for p in pts)
    for p in pts:
        p.setflags(write=False)

    return GeometrySpec(r0=r0, n_layers=n_layers, heights=heights,
                        sigma_patch=sigma_patch, d0_box=d0_box,
                        lipschitz=float(lipschitz), interface_points=pts)


def _snap_index(value, resolution, what):
    scaled = value * resolution
    idx = round(scaled)
    if abs(scaled - idx) > _SNAP * max(1.0, resolution):
        raise IncommensurateGeometry(
            f"{what} = {value} does not lie on the 1/{resolution} grid")
    return int(idx)


class Mesh:
    """Conforming tetrahedral mesh of the augmented domain.

    vertices: (nv, 3) float; cells: (nc, 4) int with positive orientation;
    cell_domain: (nc,) int, 0 for D0 cells, m >= 1 for layer D_m.
    boundary_facets maps each true boundary triangle to SIGMA or OUTER;
    sigma_facets lists every facet tiling Sigma, including those interior
    to the augmented domain under the D0 footprint.

    Immutable after construction (arrays are write-protected); safe to
    share across threads for read-only queries.
    """

    def __init__(self, spec, resolution):
        self.spec = spec
        self.resolution = int(resolution)
        if self.resolution < 2:
            raise GeometryError("resolution must be >= 2")
        self._build()

    # -- construction --------------------------------------------------

    def _build(self):
        res = self.resolution
        spec = self.spec
        step = 1.0 / res

        layer_k = [_snap_index(h, res, "layer height") for h in spec.heights]
        sx0, sx1, sy0, sy1 = (_snap_index(v, res, "sigma_patch bound")
                              for v in spec.sigma_patch)
        dx0, dx1, dy0, dy1, dz0, dz1 = (
            _snap_index(v, res, "d0_box bound") for v in spec.d0_box)

        # cube index blocks: Omega fills the unit box below z=0, D0 sits
        # above the patch footprint.
        oi, oj, ok = np.meshgrid(np.arange(res), np.arange(res),
                                 np.arange(-res, 0), indexing="ij")
        cubes = [np.column_stack([oi.ravel(), oj.ravel(), ok.ravel()])]
        di, dj, dk = np.meshgrid(np.arange(dx0, dx1), np.arange(dy0, dy1),
                                 np.arange(dz0, dz1), indexing="ij")
        cubes.append(np.column_stack([di.ravel(), dj.ravel(), dk.ravel()]))
        cubes = np.vstack(cubes)
        order = np.lexsort((cubes[:, 2], cubes[:, 1], cubes[:, 0]))
        cubes = cubes[order]

        corner_offsets = np.array([[a, b, c] for a in (0, 1) for b in (0, 1)
                                   for c in (0, 1)])
        corners = cubes[:, None, :] + corner_offsets[None, :, :]
        corners = corners.reshape(-1, 3)
        # lexicographic vertex ordering by grid index
        verts_idx = np.unique(corners, axis=0)
        self.grid_index = verts_idx
        key = self._keys(verts_idx)
        self._vert_keys = key  # sorted because unique rows are lex-sorted

        self.vertices = verts_idx * step
        self.vertices[:, 2] = verts_idx[:, 2] * step  # exact grid coords

        cube_corner_ids = np.searchsorted(key, self._keys(corners))
        cube_corner_ids = cube_corner_ids.reshape(-1, 8)

        # corner_offsets index: (a,b,c) -> 4a + 2b + c
        def cid(off):
            return 4 * off[0] + 2 * off[1] + off[2]

        ncubes = cubes.shape[0]
        cells = np.empty((ncubes * 6, 4), dtype=np.int64)
        for rank, perm in enumerate(_PERMS):
            offs = [np.zeros(3, dtype=int)]
            for axis in perm:
                nxt = offs[-1].copy()
                nxt[axis] += 1
                offs.append(nxt)
            local = [cid(o) for o in offs]
            # odd permutations give negative volume; swap the last two
            parity = sum(1 for i in range(3) for j in range(i + 1, 3)
                         if perm[i] > perm[j]) % 2
            if parity:
                local[2], local[3] = local[3], local[2]
            # cube-major layout: cells of cube c sit at 6c..6c+5 in perm order
            cells[rank::6] = cube_corner_ids[:, local]
        self.cells = cells

        zc = (cubes[:, 2] + 0.5) * step
        dom_cube = np.where(
            cubes[:, 2] >= 0, 0,
            np.searchsorted(-np.asarray(spec.heights), -zc, side="left"))
        self.cell_domain = np.repeat(dom_cube, 6).astype(np.int64)

        self._cube_keys = self._keys(cubes)
        self._cube_index = cubes

        v = self.vertices
        e = v[cells[:, 1:]] - v[cells[:, :1]]
        vol = np.linalg.det(e) / 6.0
        if np.any(vol <= 0.0):
            raise DegenerateCell("non-positive cell volume in structured mesh")
        self.cell_volumes = vol

        self._build_facets(sx0, sx1, sy0, sy1)

        self.step = step
        for arr in (self.vertices, self.cells, self.cell_domain,
                    self.cell_volumes, self.grid_index,
                    self.boundary_facet_vertices, self.sigma_facets,
                    self.boundary_vertices, self.sigma_vertices):
            arr.setflags(write=False)

    def _keys(self, idx):
        # encode (i, j, k) grid triples into a single sortable integer
        base = 4 * self.resolution + 8
        shifted = idx + np.array([1, 1, self.resolution + 1])
        return (shifted[:, 0] * base + shifted[:, 1]) * base + shifted[:, 2]

    def _build_facets(self, sx0, sx1, sy0, sy1):
        cells = self.cells
        faces = np.concatenate([cells[:, [1, 2, 3]], cells[:, [0, 2, 3]],
                                cells[:, [0, 1, 3]], cells[:, [0, 1, 2]]])
        faces_sorted = np.sort(faces, axis=1)
        order = np.lexsort((faces_sorted[:, 2], faces_sorted[:, 1],
                            faces_sorted[:, 0]))
        fs = faces_sorted[order]
        new = np.ones(len(fs), dtype=bool)
        new[1:] = np.any(fs[1:] != fs[:-1], axis=1)
        group_ids = np.cumsum(new) - 1
        counts = np.bincount(group_ids)
        if counts.max() > 2:
            raise DegenerateCell("facet shared by more than two cells")
        uniq = fs[new]

        gi = self.grid_index
        on_top_plane = np.all(gi[uniq][:, :, 2] == 0, axis=1)
        cx = self.vertices[uniq].mean(axis=1)
        # centroid test against the patch rectangle in physical coords
        px0, px1, py0, py1 = (sx0 / self.resolution, sx1 / self.resolution,
                              sy0 / self.resolution, sy1 / self.resolution)
        in_patch = ((cx[:, 0] > px0) & (cx[:, 0] < px1)
                    & (cx[:, 1] > py0) & (cx[:, 1] < py1))
        sigma_mask = on_top_plane & in_patch
        self.sigma_facets = uniq[sigma_mask]

        boundary_mask = counts == 1
        bnd = uniq[boundary_mask]
        self.boundary_facet_vertices = bnd
        bnd_sigma = sigma_mask[boundary_mask]
        self.boundary_facet_markers = np.where(bnd_sigma, SIGMA, OUTER)

        self.boundary_vertices = np.unique(bnd)
        sig_verts = np.unique(self.sigma_facets) if len(self.sigma_facets) \
            else np.array([], dtype=np.int64)
        self.sigma_vertices = sig_verts

    # -- queries --------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def facet_areas(self, facets):
        v = self.vertices
        a = v[facets[:, 1]] - v[facets[:, 0]]
        b = v[facets[:, 2]] - v[facets[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)

    def interior_vertices(self):
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.nonzero(mask)[0]

    def locate(self, points):
        """Containing cell and barycentric coordinates for each point.

        Points must lie in the closed augmented domain; ties on cell
        boundaries are resolved deterministically (stable coordinate
        sort), so repeated calls give identical results.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        res = self.resolution
        scaled = pts * res
        cube = np.floor(scaled).astype(np.int64)
        cube[:, 0] = np.clip(cube[:, 0], 0, res - 1)
        cube[:, 1] = np.clip(cube[:, 1], 0, res - 1)
        kx0, kx1, ky0, ky1, kz0, kz1 = (
            _snap_index(v, res, "d0_box bound") for v in self.spec.d0_box)
        above = scaled[:, 2] > 0
        cube[above, 0] = np.clip(cube[above, 0], kx0, kx1 - 1)
        cube[above, 1] = np.clip(cube[above, 1], ky0, ky1 - 1)
        cube[above, 2] = np.clip(cube[above, 2], 0, kz1 - 1)
        cube[~above, 2] = np.clip(cube[~above, 2], -res, -1)

        keys = self._keys(cube)
        pos = np.searchsorted(self._cube_keys, keys)
        if np.any(pos >= len(self._cube_keys)) or \
                np.any(self._cube_keys[np.minimum(pos, len(self._cube_keys) - 1)] != keys):
            raise GeometryError("point outside the augmented domain")

        u = scaled - cube
        u = np.clip(u, 0.0, 1.0)
        order = np.argsort(-u, axis=1, kind="stable")
        cells = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 4))
        u_sorted = np.take_along_axis(u, order, axis=1)
        bary[:, 0] = 1.0 - u_sorted[:, 0]
        bary[:, 1] = u_sorted[:, 0] - u_sorted[:, 1]
        bary[:, 2] = u_sorted[:, 1] - u_sorted[:, 2]
        bary[:, 3] = u_sorted[:, 2]
        for i in range(len(pts)):
            perm = tuple(order[i])
            rank = _PERM_RANK[perm]
            parity = sum(1 for a in range(3) for b in range(a + 1, 3)
                         if perm[a] > perm[b]) % 2
            cells[i] = pos[i] * 6 + rank
            if parity:
                bary[i, 2], bary[i, 3] = bary[i, 3], bary[i, 2]
        return cells, bary

    def eval_p1(self, nodal, points):
        """Evaluate a P1 nodal field at arbitrary points."""
        cells, bary = self.locate(points)
        vals = np.einsum("pi,pi->p", nodal[self.cells[cells]], bary)
        return vals if np.ndim(points) > 1 else float(vals[0])

    def quad_points(self, degree=2):
        """4-point second-order quadrature nodes/weights for every cell."""
        lam = np.full((4, 4), (5.0 - np.sqrt(5.0)) / 20.0)
        np.fill_diagonal(lam, (5.0 + 3.0 * np.sqrt(5.0)) / 20.0)
        pts = np.einsum("qa,cax->cqx", lam, self.vertices[self.cells])
        w = np.repeat(self.cell_volumes[:, None] / 4.0, 4, axis=1)
        return pts, w


def build_augmented_mesh(spec, resolution):
    """Mesh the augmented domain with interface-aligned tetrahedra.

    All layer planes, the sigma patch bounds and the D0 faces must lie on
    the grid of step 1/resolution (IncommensurateGeometry otherwise).
    """
    return Mesh(spec, resolution)


@dataclass(frozen=True)
class PoleRegion:
    """Tensor Gauss-Legendre rule over a pole box inside D0."""

    box: tuple
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def volume(self):
        b = self.box
        return (b[1] - b[0]) * (b[3] - b[2]) * (b[5] - b[4])


def pole_quadrature(box, per_axis, spec=None):
    """Gauss-Legendre product rule on an axis-aligned pole box.

    When a GeometrySpec is supplied the box must be compactly inside its
    D0 with margin r0/100 (RegionTouchesBoundary otherwise).
    """
    box = tuple(float(v) for v in box)
    if per_axis < 1:
        raise GeometryError("per_axis must be >= 1")
    x0, x1, y0, y1, z0, z1 = box
    if not (x0 < x1 and y0 < y1 and z0 < z1):
        raise GeometryError(f"degenerate pole box {box}")
    if spec is not None:
        d = spec.d0_box
        m = spec.r0 / 100.0
        inside = (x0 - d[0] >= m and d[1] - x1 >= m and y0 - d[2] >= m
                  and d[3] - y1 >= m and z0 - d[4] >= m and d[5] - z1 >= m)
        if not inside:
            raise RegionTouchesBoundary(
                f"pole box {box} not compactly inside D0 {d} "
                f"(margin r0/100 = {m})")

    g, w = np.polynomial.legendre.leggauss(per_axis)
    axes = []
    wts = []
    for lo, hi in ((x0, x1), (y0, y1), (z0, z1)):
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        axes.append(mid + half * g)
        wts.append(half * w)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    wx, wy, wz = np.meshgrid(*wts, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    weights = (wx * wy * wz).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return PoleRegion(box=box, nodes=nodes, weights=weights)


def physical_submesh(mesh):
    """Restrict the augmented mesh to the physical domain Omega.

    Returns (submesh, vertex_map) where vertex_map[i] is the parent
    vertex id of submesh vertex i.  The submesh is a full Mesh-compatible
    object; under the D0 footprint Sigma becomes true boundary.
    """
    keep = mesh.cell_domain >= 1
    cells = mesh.cells[keep]
    used = np.unique(cells)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))

    sub = Mesh.__new__(Mesh)
    sub.spec = mesh.spec
    sub.resolution = mesh.resolution
    sub.step = mesh.step
    sub.vertices = mesh.vertices[used].copy()
    sub.grid_index = mesh.grid_index[used].copy()
    sub.cells = remap[cells]
    sub.cell_domain = mesh.cell_domain[keep].copy()
    sub.cell_volumes = mesh.cell_volumes[keep].copy()
    sub._cube_keys = None
    sub._cube_index = None

    res = mesh.resolution
    sx0, sx1, sy0, sy1 = (_snap_index(v, res, "sigma_patch bound")
                          for v in mesh.spec.sigma_patch)
    sub._build_facets(sx0, sx1, sy0, sy1)
    for arr in (sub.vertices, sub.cells, sub.cell_domain, sub.cell_volumes,
                sub.grid_index, sub.boundary_facet_vertices,
                sub.sigma_facets, sub.boundary_vertices, sub.sigma_vertices):
        arr.setflags(write=False)
    return sub, used


def sigma_interior_vertices(mesh):
    """Vertices strictly inside the open sigma patch on the z = 0 plane."""
    sx0, sx1, sy0, sy1 = mesh.spec.sigma_patch
    v = mesh.vertices
    on_plane = mesh.grid_index[:, 2] == 0
    tol = 1e-12
    inside = ((v[:, 0] > sx0 + tol) & (v[:, 0] < sx1 - tol)
              & (v[:, 1] > sy0 + tol) & (v[:, 1] < sy1 - tol))
    return np.nonzero(on_plane & inside)[0]


def dump_mesh(mesh, stream):
    """ASCII mesh dump, deterministic lexicographic ordering.

    Format: header `mesh n=3 v=<nv> c=<nc>`, one vertex per line
    (3 floats, 17 significant digits), one cell per line (4 vertex ids +
    domain marker), then boundary facets (3 ids + marker name).
    """
    stream.write(f"mesh n=3 v={mesh.n_vertices} c={mesh.n_cells}\n")
    for p in mesh.vertices:
        stream.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    for cell, dom in zip(mesh.cells, mesh.cell_domain):
        stream.write(f"{cell[0]} {cell[1]} {cell[2]} {cell[3]} {dom}\n")
    order = np.lexsort((mesh.boundary_facet_vertices[:, 2],
                        mesh.boundary_facet_vertices[:, 1],
                        mesh.boundary_facet_vertices[:, 0]))
    for idx in order:
        f = mesh.boundary_facet_vertices[idx]
        m = mesh.boundary_facet_markers[idx]
        stream.write(f"{f[0]} {f[1]} {f[2]} {m}\n")
