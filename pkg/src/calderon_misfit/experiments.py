"""Scripted numerical probes: stability sweeps, scaling fits, interface
asymptotics, chain-smallness evaluation, and misfit-driven reconstruction.

Every probe is deterministic for a fixed seed and configuration; worker
threads only parallelize independent pair/pole computations and reduce in
fixed order.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem, misfit
from .conductivity import (AffinePatch, Conductivity, gamma_distance,
                           layer_corners, linf_distance)
from .errors import (ChainPointOutsideMesh, ExperimentError,
                     LineSearchFailure, RadiiBelowResolution,
                     SamplerExhausted, ZeroPerturbation)
from .geometry import build_augmented_mesh, pole_quadrature
from .kernels import (TwoLayerParams, two_layer_fundamental,
                      two_layer_gradient)
from .parallel import ordered_map
from .smallness import chain_parameters, h_bar, omega_iter

_FLIP = np.array([1.0, 1.0, -1.0])


@dataclass
class MisfitSetup:
    """One meshed configuration with its two pole regions."""

    spec: object
    resolution: int
    mesh: object
    dy: object
    dz: object


def default_pole_boxes(spec, resolution):
    """Two disjoint pole sub-boxes of D0 honoring all clearances.

    The boxes are inset from the D0 boundary by at least one mesh cell
    and r0/100, split along x, and keep the poles at least two cells
    above Sigma whenever the box height allows it.
    """
    d = spec.d0_box
    h = 1.0 / resolution
    m = spec.r0 / 100.0
    ix = max(h, m) + 0.02 * (d[1] - d[0])
    iy = max(h, m) + 0.02 * (d[3] - d[2])
    z_lo = d[4] + max(min(2.0 * h, (d[5] - d[4]) / 3.0), max(h, m))
    z_hi = d[5] - max(h, m) - 0.02 * (d[5] - d[4])
    if z_lo >= z_hi:
        raise ExperimentError("D0 too shallow for a pole band at this "
                              "resolution")
    x_mid = 0.5 * (d[0] + d[1])
    gap = 0.02 * (d[1] - d[0])
    dy_box = (d[0] + ix, x_mid - gap, d[2] + iy, d[3] - iy, z_lo, z_hi)
    dz_box = (x_mid + gap, d[1] - ix, d[2] + iy, d[3] - iy, z_lo, z_hi)
    return dy_box, dz_box


def make_setup(spec, resolution, dy_box=None, dz_box=None, per_axis=2):
    if dy_box is None or dz_box is None:
        dflt = default_pole_boxes(spec, resolution)
        dy_box = dy_box if dy_box is not None else dflt[0]
        dz_box = dz_box if dz_box is not None else dflt[1]
    mesh = build_augmented_mesh(spec, resolution)
    dy = pole_quadrature(dy_box, per_axis, spec)
    dz = pole_quadrature(dz_box, per_axis, spec)
    return MisfitSetup(spec=spec, resolution=resolution, mesh=mesh,
                       dy=dy, dz=dz)


# -- conductivity sampling -------------------------------------------------


def sample_conductivity(rng, spec, a_field, gamma_bar=5.0, max_tries=10000):
    """Rejection-sample admissible affine coefficients layer by layer."""
    patches = []
    for m in range(1, spec.n_layers + 1):
        corners = layer_corners(spec, m)
        for attempt in range(max_tries):
            s = rng.uniform(0.6, 1.8)
            S = rng.uniform(-0.35, 0.35, size=3)
            vals = s + corners @ S
            if vals.min() >= 1.0 / gamma_bar and vals.max() <= gamma_bar:
                patches.append(AffinePatch(m, float(s), tuple(S)))
                break
        else:
            raise SamplerExhausted(
                f"no admissible coefficients for layer {m} after "
                f"{max_tries} tries")
    return Conductivity(patches=tuple(patches), a_field=a_field)


# -- stability sweep -------------------------------------------------------


@dataclass
class StabilityReport:
    """Per-pair stability data and the empirical constants of the run."""

    records: list
    summary: dict
    mesh_meta: dict
    seed: int

    def to_dict(self):
        return {"schema_version": 1, "seed": self.seed,
                "mesh": self.mesh_meta, "records": self.records,
                "summary": self.summary}

    def to_csv_rows(self):
        cols = ("pair", "E", "sigma_dist", "sqrt_j", "dn_diff",
                "ratio_theorem", "ratio_corollary", "degenerate")
        rows = [cols]
        for r in self.records:
            rows.append(tuple(r[c] for c in cols))
        return rows


def stability_sweep(spec, resolution, n_pairs, rng_seed, a_field=None,
                    gamma_bar=5.0, dy_box=None, dz_box=None, per_axis=2,
                    threads=None, pairs=None):
    """Draw admissible conductivity pairs and tabulate E, sqrt(J) and the
    D-N operator gap with their ratios.

    Deterministic for a fixed seed: all coefficients are drawn up front
    in pair order; the pair computations are independent and reduced in
    index order regardless of the worker count.  An explict `pairs` list
    overrides the sampler (e.g. to force a degenerate equal pair).
    """
    if n_pairs < 1:
        raise ExperimentError("n_pairs must be >= 1")
    if a_field is None:
        a_field = misfit.identity_conductivity(spec.n_layers).a_field
    setup = make_setup(spec, resolution, dy_box, dz_box, per_axis)
    rng = np.random.default_rng(rng_seed)
    if pairs is None:
        pairs = [(sample_conductivity(rng, spec, a_field, gamma_bar),
                  sample_conductivity(rng, spec, a_field, gamma_bar))
                 for _ in range(n_pairs)]
    else:
        pairs = list(pairs)
        n_pairs = len(pairs)

    def run_pair(item):
        idx, (c1, c2) = item
        dist = linf_distance(c1, c2, setup.mesh)
        j, rep = misfit.misfit_J(c1, c2, setup.mesh, setup.dy, setup.dz)
        dn = misfit.dn_norm_diff(c1, c2, setup.mesh)
        sqrt_j = math.sqrt(max(j, 0.0))
        degenerate = j <= rep.j_floor
        rec = {"pair": idx, "E": dist["E"], "sigma_dist": dist["sigma_dist"],
               "argmax_layer": dist["K"], "sqrt_j": sqrt_j,
               "dn_diff": dn.value, "dn_converged": dn.converged,
               "degenerate": bool(degenerate)}
        rec["ratio_theorem"] = (dist["sigma_dist"] / sqrt_j
                                if not degenerate else 0.0)
        rec["ratio_corollary"] = (dist["sigma_dist"] / dn.value
                                  if dn.value > 0.0 else 0.0)
        rec["ratio_j_dn"] = (sqrt_j / dn.value if dn.value > 0.0 else 0.0)
        return rec

    records = ordered_map(run_pair, list(enumerate(pairs)), threads)
    live = [r for r in records if not r["degenerate"]]
    summary = {
        "n_pairs": n_pairs,
        "n_degenerate": sum(r["degenerate"] for r in records),
        "max_ratio_theorem": max((r["ratio_theorem"] for r in live),
                                 default=0.0),
        "max_ratio_corollary": max((r["ratio_corollary"] for r in live),
                                   default=0.0),
        "c_misfit_vs_dn": max((r["ratio_j_dn"] for r in live), default=0.0),
    }
    mesh_meta = {"resolution": resolution,
                 "n_vertices": setup.mesh.n_vertices,
                 "n_cells": setup.mesh.n_cells,
                 "dy_box": list(setup.dy.box), "dz_box": list(setup.dz.box)}
    return StabilityReport(records=records, summary=summary,
                           mesh_meta=mesh_meta, seed=rng_seed)


# -- scaling probe ----------------------------------------------------------


@dataclass
class ScalingReport:
    t_grid: list
    e_values: list
    j_values: list
    slope_j_vs_t: float
    slope_sqrtj_vs_e: float
    e_linearity_error: float

    def to_dict(self):
        return {"schema_version": 1, "t_grid": self.t_grid,
                "e_values": self.e_values, "j_values": self.j_values,
                "slope_j_vs_t": self.slope_j_vs_t,
                "slope_sqrtj_vs_e": self.slope_sqrtj_vs_e,
                "e_linearity_error": self.e_linearity_error}


def perturbed(c, deltas, t):
    """c + t * delta patch by patch."""
    by_m = {d.m: d for d in deltas}
    patches = []
    for p in c.patches:
        d = by_m.get(p.m)
        if d is None:
            patches.append(p)
        else:
            patches.append(AffinePatch(p.m, p.s + t * d.s,
                                       tuple(np.asarray(p.S)
                                             + t * np.asarray(d.S))))
    return Conductivity(patches=tuple(patches), a_field=c.a_field)


def scaling_probe(setup, c1, deltas, t_grid):
    """Least-squares slope of log J against log t for a perturbation ray.

    The affine-family distance E(t) is exactly linear in t (asserted to
    1e-12); the expected slope of log J is 2 in the linearized regime.
    """
    deltas = tuple(deltas)
    if all(d.s == 0.0 and not any(d.S) for d in deltas):
        raise ZeroPerturbation("perturbation direction is identically zero")
    t_grid = [float(t) for t in t_grid]
    if any(t <= 0.0 for t in t_grid) or len(t_grid) < 2:
        raise ExperimentError("t_grid must hold at least two positive steps")

    e_vals, j_vals = [], []
    for t in t_grid:
        c2 = perturbed(c1, deltas, t)
        e_vals.append(gamma_distance(c1, c2, setup.spec)[0])
        j_vals.append(misfit.misfit_J(c1, c2, setup.mesh, setup.dy,
                                      setup.dz)[0])
    e1 = e_vals[0] / t_grid[0]
    lin_err = max(abs(e - t * e1) / (t * e1) for e, t in zip(e_vals, t_grid))
    assert lin_err <= 1e-12, f"affine E(t) not linear: {lin_err}"

    lt = np.log(t_grid)
    slope_j = float(np.polyfit(lt, np.log(j_vals), 1)[0])
    slope_se = float(np.polyfit(np.log(e_vals),
                                0.5 * np.log(j_vals), 1)[0])
    return ScalingReport(t_grid=t_grid, e_values=e_vals, j_values=j_vals,
                         slope_j_vs_t=slope_j, slope_sqrtj_vs_e=slope_se,
                         e_linearity_error=float(lin_err))


# -- interface asymptotics ---------------------------------------------------


class TwoLayerInterfaceKernel:
    """Frozen two-layer kernel attached to an interior interface point.

    Local coordinates put the deeper layer D_{k+1} in the upper half
    space (the chain orientation), so physical z flips sign; the frozen
    matrix transforms accordingly.
    """

    name = "two_layer"

    def __init__(self, pole, anchor, params):
        self.pole = np.asarray(pole, dtype=float)
        self.anchor = np.asarray(anchor, dtype=float)
        self.params = params
        self._pole_loc = (self.pole - self.anchor) * _FLIP

    def _local(self, points):
        return (np.atleast_2d(np.asarray(points, dtype=float))
                - self.anchor) * _FLIP

    def value(self, points):
        vals = -two_layer_fundamental(self._local(points), self._pole_loc,
                                      self.params, on_interface="limit")
        return float(vals[0]) if np.ndim(points) == 1 else vals

    def grad(self, points):
        g = -two_layer_gradient(self._local(points), self._pole_loc,
                                self.params, on_interface="limit")
        return g * _FLIP


def interface_kernel_params(spec, c, k):
    """Frozen coefficients at P_{k+1}: the layer above maps to the local
    lower half space (gamma_minus), the layer below to the upper."""
    P = spec.interface_points[k]
    if k == 0:
        gamma_above = 1.0
    else:
        gamma_above = float(c.gamma_at(P[None, :], np.array([k]))[0])
    gamma_below = float(c.gamma_at(P[None, :], np.array([k + 1]))[0])
    A = c.a_field.eval(P)
    A_loc = np.diag(_FLIP) @ A @ np.diag(_FLIP)
    params = TwoLayerParams(gamma_plus=gamma_below, gamma_minus=gamma_above,
                            A0=A_loc)
    return P, params, gamma_above, gamma_below


@dataclass
class AsymptoticsReport:
    interface: int
    gamma_above: float
    gamma_below: float
    radii: list
    rows: list
    fitted_exponent: float
    monotone_relative_residual: bool

    def to_dict(self):
        return {"schema_version": 1, "interface": self.interface,
                "gamma_above": self.gamma_above,
                "gamma_below": self.gamma_below, "radii": self.radii,
                "rows": self.rows, "fitted_exponent": self.fitted_exponent,
                "monotone_relative_residual":
                    self.monotone_relative_residual}


def asymptotics_probe(spec, c, k, radii, resolution, probe_shift=None,
                      mesh=None):
    """Residual of G against its frozen two-layer leading term near an
    interface, along poles y_r above and points x_r below.

    The leading term is 2/(gamma_k + gamma_k+1) det(J) |J(x-y)|^(2-n)
    normalized as a positive kernel; its relative residual must shrink as
    r does when the expansion holds.  The probe axis is shifted half a
    cell off the interface centroid so no pole lands on a mesh vertex.
    """
    if mesh is None:
        mesh = build_augmented_mesh(spec, resolution)
    h = mesh.step
    radii = sorted((float(r) for r in radii), reverse=True)
    if radii[-1] < 2.0 * h - 1e-12:
        raise RadiiBelowResolution(
            f"smallest radius {radii[-1]} is under two cells ({2 * h})")
    P, params, g_above, g_below = interface_kernel_params(spec, c, k)
    shift = probe_shift if probe_shift is not None else 0.5 * h
    axis = P + np.array([shift, shift, 0.0])

    h_above = spec.d0_box[5] if k == 0 else spec.heights[k - 1]
    h_below = spec.heights[k + 1]
    if axis[2] + radii[0] >= h_above or axis[2] - radii[0] <= h_below:
        raise ChainPointOutsideMesh(
            f"largest radius {radii[0]} leaves the layers adjacent to "
            f"interface {k}")

    sys = fem.assemble(mesh, c)
    c_tilde = 2.0 / (g_above + g_below)
    detj = params.frame.det_J
    J = params.frame.J

    def leading(x, y):
        # |J_loc (x_loc - y_loc)| equals |J (x - y)| under the flip
        d = np.linalg.norm(J @ ((x - y) * _FLIP))
        return c_tilde * detj / (4.0 * math.pi * d)

    rows = []
    for r in radii:
        y = axis + np.array([0.0, 0.0, r])
        x = axis - np.array([0.0, 0.0, r])
        gy = fem.green(sys, y, kernel=TwoLayerInterfaceKernel(y, P, params))
        gx = fem.green(sys, x, kernel=TwoLayerInterfaceKernel(x, P, params))
        val = gy.value(x)
        val_swap = gx.value(y)
        lead = leading(x, y)
        res = abs(val - lead)
        res_swap = abs(val_swap - lead)

        fd = h / 4.0
        grad_num = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = fd
            grad_num[i] = (gy.value(x + e) - gy.value(x - e)) / (2.0 * fd)
        dvec = (x - y) * _FLIP
        dd = np.linalg.norm(J @ dvec)
        grad_lead = -c_tilde * detj / (4.0 * math.pi) * \
            (J.T @ (J @ dvec)) / dd ** 3 * _FLIP
        grad_res = float(np.linalg.norm(grad_num - grad_lead))

        rows.append({"r": r, "g_value": float(val),
                     "g_value_swapped": float(val_swap),
                     "leading": float(lead), "residual": float(res),
                     "residual_swapped": float(res_swap),
                     "relative_residual": float(res / abs(val)),
                     "reciprocity_gap": float(abs(res - res_swap)
                                              / max(res, res_swap, 1e-300)),
                     "gradient_residual": grad_res})

    rel = [row["relative_residual"] for row in rows]
    mono = all(a > b for a, b in zip(rel, rel[1:]))
    resid = [row["residual"] for row in rows]
    expo = float(np.polyfit(np.log(radii), np.log(resid), 1)[0]) \
        if len(radii) > 1 else 0.0
    return AsymptoticsReport(interface=k, gamma_above=g_above,
                             gamma_below=g_below, radii=list(radii),
                             rows=rows, fitted_exponent=expo,
                             monotone_relative_residual=bool(mono))


# -- chain smallness ---------------------------------------------------------


@dataclass
class SmallnessReport:
    k: int
    r: float
    h_bar: int
    chain_point: list
    lhs: float
    e_value: float
    eps0: float
    sqrt_j: float
    rhs_by_constant: dict
    smallest_valid_constant: object

    def to_dict(self):
        return {"schema_version": 1, "k": self.k, "r": self.r,
                "h_bar": self.h_bar, "chain_point": self.chain_point,
                "lhs": self.lhs, "e_value": self.e_value, "eps0": self.eps0,
                "sqrt_j": self.sqrt_j,
                "rhs_by_constant": self.rhs_by_constant,
                "smallest_valid_constant": self.smallest_valid_constant}


def smallness_probe(setup, c1, c2, k, r, constants=(2.0, 5.0, 10.0, 50.0)):
    """Evaluate the propagation-of-smallness inequality at the chain point.

    eps0 is the measured sup of |S_U0| over the pole grids scaled by
    r0^(n-2) (one of several defensible normalizations; sqrt(J) is logged
    alongside).  The right-hand side is tabulated over a grid of candidate
    constants and the smallest validating one is reported, never asserted.
    """
    spec = setup.spec
    mesh = setup.mesh
    if not 0 <= k <= spec.n_layers - 1:
        raise ExperimentError(f"chain index k = {k} outside the chain "
                              f"0..{spec.n_layers - 1}")
    cp = chain_parameters(spec.lipschitz, spec.r0)
    hb = h_bar(r, cp)
    lam = cp.lam(hb)
    P, params1, _, _ = interface_kernel_params(spec, c1, k)
    _, params2, _, _ = interface_kernel_params(spec, c2, k)
    w = P + np.array([0.0, 0.0, lam])   # into D_k, toward Sigma
    if w[2] >= spec.d0_box[5] - 1e-12 or \
            (w[2] > 0 and not (spec.d0_box[0] < w[0] < spec.d0_box[1]
                               and spec.d0_box[2] < w[1] < spec.d0_box[3])):
        raise ChainPointOutsideMesh(
            f"chain point {tuple(w)} (lambda_{hb} = {lam}) leaves the "
            f"augmented domain")

    sys1 = fem.assemble(mesh, c1)
    sys2 = fem.assemble(mesh, c2)
    g1 = fem.green(sys1, w, kernel=TwoLayerInterfaceKernel(w, P, params1))
    g2 = fem.green(sys2, w, kernel=TwoLayerInterfaceKernel(w, P, params2))
    lhs = abs(misfit.s_volume(k, g1, g2, c1, c2, mesh))

    S, _ = misfit.sample_matrix(c1, c2, mesh, setup.dy, setup.dz,
                                sys1=sys1, sys2=sys2)
    sup_s = float(np.abs(S).max())
    eps0 = spec.r0 * sup_s           # r0^(n-2) normalization, n = 3
    j = float(np.einsum("p,q,pq->", setup.dy.weights, setup.dz.weights,
                        S * S))
    e_val = gamma_distance(c1, c2, spec)[0]

    rhs = {}
    smallest = None
    for C in constants:
        ratio = eps0 / (e_val + eps0) if e_val + eps0 > 0 else 1.0
        val = (C ** hb) * (e_val + eps0) * \
            omega_iter(1.0 / C, 2 * k, ratio) ** ((1.0 / C) ** hb)
        rhs[str(C)] = float(val)
        if smallest is None and lhs <= val:
            smallest = C
    return SmallnessReport(k=k, r=float(r), h_bar=hb,
                           chain_point=[float(v) for v in w], lhs=float(lhs),
                           e_value=float(e_val), eps0=float(eps0),
                           sqrt_j=float(math.sqrt(max(j, 0.0))),
                           rhs_by_constant=rhs,
                           smallest_valid_constant=smallest)


# -- reconstruction ----------------------------------------------------------


@dataclass
class ReconstructionResult:
    conductivity: object
    trace: list
    converged: bool
    iterations: int
    objective: float

    def to_dict(self):
        coeffs = [{"m": p.m, "s": p.s, "S": list(p.S)}
                  for p in self.conductivity.patches]
        return {"schema_version": 1, "converged": self.converged,
                "iterations": self.iterations, "objective": self.objective,
                "coefficients": coeffs, "trace": self.trace}

    def to_csv_rows(self):
        rows = [("iter", "objective", "E_to_truth", "damping")]
        for t in self.trace:
            rows.append((t["iter"], t["objective"], t["E_to_truth"],
                         t["damping"]))
        return rows


def _pack(c):
    return np.concatenate([[p.s] + list(p.S) for p in c.patches])


def _unpack(theta, template):
    patches = []
    for i, p in enumerate(template.patches):
        s = float(theta[4 * i])
        S = tuple(theta[4 * i + 1: 4 * i + 4])
        patches.append(AffinePatch(p.m, s, S))
    return Conductivity(patches=tuple(patches), a_field=template.a_field)


def _admissible(c, spec, gamma_bar):
    for p in c.patches:
        vals = p.gamma(layer_corners(spec, p.m))
        if vals.min() < 1.0 / gamma_bar or vals.max() > gamma_bar:
            return False
    return True


def reconstruct(setup, c_true, c_init, max_iter=20, tol=1e-8,
                gamma_bar=5.0, fd_step=1e-4, threads=None):
    """Damped Gauss-Newton on the affine coefficients against cached
    true-model data.

    The residual vector stacks sqrt(w_p w_q) S_U0(y_p, z_q; c, c_true);
    its squared norm is the misfit J(c, c_true).  Steps backtrack until
    the objective decreases and the iterate stays in the admissible box;
    damping underflow below 1e-8 raises LineSearchFailure.  The iterate
    path, objective and exact distance to the truth are traced.
    """
    spec, mesh = setup.spec, setup.mesh
    if not _admissible(c_init, spec, gamma_bar):
        raise ExperimentError("initial guess violates the admissible box")

    sys_true = fem.assemble(mesh, c_true)
    G_true = fem.green_many(sys_true, setup.dz.nodes)
    F2 = np.column_stack([g.flux_on_sigma() for g in G_true])
    T2 = np.column_stack([g.trace_on_sigma() for g in G_true])
    wgt = np.sqrt(np.outer(setup.dy.weights, setup.dz.weights)).ravel()

    def residual(c):
        sys_c = fem.assemble(mesh, c)
        G1 = fem.green_many(sys_c, setup.dy.nodes)
        F1 = np.column_stack([g.flux_on_sigma() for g in G1])
        T1 = np.column_stack([g.trace_on_sigma() for g in G1])
        S = F1.T @ T2 - (F2.T @ T1).T
        return wgt * S.ravel()

    theta = _pack(c_init)
    template = c_init
    r0_vec = residual(c_init)
    obj = float(r0_vec @ r0_vec)
    _, rep0 = misfit.misfit_J(c_true, c_true, mesh, setup.dy, setup.dz)
    floor = max(rep0.j_floor, 1e-300)
    trace = [{"iter": 0, "objective": obj,
              "E_to_truth": gamma_distance(c_init, c_true, spec)[0],
              "damping": 1.0}]
    if obj <= floor:
        return ReconstructionResult(conductivity=c_init, trace=trace,
                                    converged=True, iterations=0,
                                    objective=obj)

    n_par = len(theta)
    for it in range(1, max_iter + 1):
        def column(i):
            tp = theta.copy()
            tp[i] += fd_step
            return (residual(_unpack(tp, template)) - r0_vec) / fd_step

        cols = ordered_map(column, range(n_par), threads)
        Jac = np.column_stack(cols)
        step, *_ = np.linalg.lstsq(Jac, -r0_vec, rcond=None)

        alpha = 1.0
        accepted = False
        while alpha >= 1e-8:
            cand = _unpack(theta + alpha * step, template)
            if _admissible(cand, spec, gamma_bar):
                r_new = residual(cand)
                obj_new = float(r_new @ r_new)
                if obj_new < obj:
                    theta = theta + alpha * step
                    r0_vec, obj = r_new, obj_new
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise LineSearchFailure(
                f"damping underflow at iteration {it} (objective {obj})")
        trace.append({"iter": it, "objective": obj,
                      "E_to_truth": gamma_distance(_unpack(theta, template),
                                                   c_true, spec)[0],
                      "damping": alpha})
        if float(np.max(np.abs(alpha * step))) < tol or obj <= floor:
            return ReconstructionResult(conductivity=_unpack(theta, template),
                                        trace=trace, converged=True,
                                        iterations=it, objective=obj)
    return ReconstructionResult(conductivity=_unpack(theta, template),
                                trace=trace, converged=False,
                                iterations=max_iter, objective=obj)
