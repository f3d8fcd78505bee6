"""Closed-form singular kernels and the anisotropy frame.

Conventions.  The classical fundamental solution used throughout is

    Gamma(x, y) = |x - y|^(2-n) / (n (2 - n) omega_n),

which is negative for n >= 3 and satisfies Delta Gamma = +delta.  Green
functions of the forward solver follow the opposite sign convention
(div(sigma grad G) = -delta, G > 0), so solver-side code subtracts the
negated kernels; everything in this module is the raw closed form.

The two-layer kernel H is the image-type fundamental solution for a
piecewise-constant scalar times a frozen constant matrix across the
planar interface {x_n = 0}, expressed through the linear change of
coordinates L = R J with J the inverse symmetric square root of the
frozen matrix.
"""

from dataclasses import dataclass
from math import gamma as _gamma_fn
from math import pi

import numpy as np

from .errors import (AsymmetricInput, CoincidentPoints, DimensionTooSmall,
                     NotPositiveDefinite, OnInterface,
                     ProbeTooCloseToSingularity)


def unit_ball_volume(n):
    """Volume of the unit ball in R^n, n >= 3."""
    n = int(n)
    if n < 3:
        raise DimensionTooSmall(f"dimension {n} < 3")
    return 2.0 * pi ** (n / 2.0) / (n * _gamma_fn(n / 2.0))


def _gamma_const(n):
    return 1.0 / (n * (2.0 - n) * unit_ball_volume(n))


def laplace_fundamental(x, y, n=3):
    """Gamma(x, y); negative for n >= 3, symmetric in its arguments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(x - y, axis=-1)
    if np.any(r == 0.0):
        raise CoincidentPoints("laplace_fundamental at coincident points")
    return _gamma_const(n) * r ** (2.0 - n)


def laplace_fundamental_grad(x, y, n=3):
    """Gradient of Gamma(., y) with respect to x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise CoincidentPoints("gradient at coincident points")
    coef = _gamma_const(n) * (2.0 - n) * r ** (-n)
    return coef[..., None] * d if d.ndim > 1 else coef * d


@dataclass(frozen=True)
class AnisotropyFrame:
    """Change of coordinates L = R J flattening a frozen matrix A(0).

    J is the symmetric square root of A(0)^-1; R is the planar rotation
    taking v/|v| (v = sqrt(A(0)) e_n) to e_n and fixing the orthogonal
    complement of span{e_n, v}.  L_star carries the reflected last row
    used by the image term.
    """

    J: np.ndarray
    R: np.ndarray
    L_map: np.ndarray
    L_star: np.ndarray
    v_norm: float
    det_J: float


def build_frame(A0, tol=1e-12):
    """Anisotropy frame of a symmetric positive-definite matrix."""
    A0 = np.asarray(A0, dtype=float)
    n = A0.shape[0]
    if np.abs(A0 - A0.T).max() > tol:
        raise AsymmetricInput("frame input must be symmetric")
    A0 = 0.5 * (A0 + A0.T)
    w, V = np.linalg.eigh(A0)
    if w.min() <= 0.0:
        raise NotPositiveDefinite(f"eigenvalues {w} not all positive")
    J = (V / np.sqrt(w)) @ V.T            # sqrt(A0^-1), SPD
    sqrtA = (V * np.sqrt(w)) @ V.T
    v = sqrtA[:, -1]                      # sqrt(A0) e_n
    v_norm = float(np.linalg.norm(v))
    u = v / v_norm

    e_n = np.zeros(n)
    e_n[-1] = 1.0
    c = float(u @ e_n)
    rest = e_n - c * u
    s = float(np.linalg.norm(rest))
    if s < 1e-14:
        R = np.eye(n)                     # v parallel to e_n, angle zero
    else:
        w_vec = rest / s
        R = (np.eye(n)
             + (c - 1.0) * (np.outer(u, u) + np.outer(w_vec, w_vec))
             + s * (np.outer(w_vec, u) - np.outer(u, w_vec)))
    L = R @ J
    L_star = L.copy()
    L_star[-1, :] *= -1.0
    for arr in (J, R, L, L_star):
        arr.setflags(write=False)
    return AnisotropyFrame(J=J, R=R, L_map=L, L_star=L_star,
                           v_norm=v_norm, det_J=float(np.linalg.det(J)))


@dataclass(frozen=True)
class TwoLayerParams:
    """Frozen coefficients across {x_n = 0}: gamma_plus above, gamma_minus
    below, constant matrix A0."""

    gamma_plus: float
    gamma_minus: float
    A0: np.ndarray

    def __post_init__(self):
        if self.gamma_plus <= 0.0 or self.gamma_minus <= 0.0:
            raise NotPositiveDefinite("layer scalars must be positive")
        A0 = np.asarray(self.A0, dtype=float)
        if np.abs(A0 - A0.T).max() > 1e-12:
            raise AsymmetricInput("A0 must be symmetric")
        A0 = 0.5 * (A0 + A0.T)
        A0.setflags(write=False)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "frame", build_frame(A0))

    @property
    def dim(self):
        return self.A0.shape[0]


def _branch_coefs(p, side):
    gp, gm = p.gamma_plus, p.gamma_minus
    if side > 0:
        return 1.0 / gp, (gp - gm) / (gp * (gp + gm))
    return 1.0 / gm, (gm - gp) / (gm * (gp + gm))


def two_layer_fundamental(xi, eta, p, on_interface="raise"):
    """Two-layer image kernel H(xi, eta) for frozen coefficients.

    Branches follow the sign pattern of (xi_n, eta_n): same-side points
    combine the direct and the mirrored kernel, opposite sides use the
    transmission coefficient 2/(gamma_plus + gamma_minus).  Points exactly
    on {x_n = 0} raise OnInterface unless on_interface="limit", in which
    case the common one-sided limit (the transmission branch) is used.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    single = xi.ndim == 1 and eta.ndim == 1
    X = np.atleast_2d(xi)
    Y = np.atleast_2d(eta)
    X, Y = np.broadcast_arrays(X, Y)
    n = p.dim
    fr = p.frame
    L, Ls, detJ = fr.L_map, fr.L_star, fr.det_J
    gp, gm = p.gamma_plus, p.gamma_minus

    xs = X[:, -1]
    ys = Y[:, -1]
    if on_interface == "raise" and (np.any(xs == 0.0) or np.any(ys == 0.0)):
        raise OnInterface("H branch undefined exactly on the interface")

    LX = X @ L.T
    LY = Y @ L.T
    LsY = Y @ Ls.T
    r_direct = np.linalg.norm(LX - LY, axis=-1)
    r_image = np.linalg.norm(LX - LsY, axis=-1)
    if np.any(r_direct == 0.0):
        raise CoincidentPoints("two_layer_fundamental at coincident points")
    c = _gamma_const(n)
    g_direct = c * r_direct ** (2.0 - n)
    # the image kernel only enters same-side branches, where its pole
    # (the mirrored source) cannot coincide with the evaluation point
    g_image = c * np.where(r_image > 0.0, r_image, 1.0) ** (2.0 - n)

    out = np.empty(len(X))
    cross = xs * ys <= 0.0    # includes on-interface limits
    out[cross] = detJ * (2.0 / (gp + gm)) * g_direct[cross]
    for side in (1, -1):
        mask = (~cross) & ((xs > 0) if side > 0 else (xs < 0))
        if np.any(mask):
            cd, ci = _branch_coefs(p, side)
            out[mask] = detJ * (cd * g_direct[mask] + ci * g_image[mask])
    return float(out[0]) if single else out


def two_layer_gradient(xi, eta, p, on_interface="raise"):
    """Analytic gradient of H(., eta) with respect to xi."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    single = xi.ndim == 1 and eta.ndim == 1
    X = np.atleast_2d(xi)
    Y = np.atleast_2d(eta)
    X, Y = np.broadcast_arrays(X, Y)
    n = p.dim
    fr = p.frame
    L, Ls, detJ = fr.L_map, fr.L_star, fr.det_J
    gp, gm = p.gamma_plus, p.gamma_minus

    xs = X[:, -1]
    ys = Y[:, -1]
    if on_interface == "raise" and (np.any(xs == 0.0) or np.any(ys == 0.0)):
        raise OnInterface("H branch undefined exactly on the interface")

    LX = X @ L.T
    dd = LX - Y @ L.T
    di = LX - Y @ Ls.T
    rd = np.linalg.norm(dd, axis=-1)
    ri = np.linalg.norm(di, axis=-1)
    if np.any(rd == 0.0):
        raise CoincidentPoints("gradient at coincident points")
    c = _gamma_const(n) * (2.0 - n)
    grad_direct = (c * rd ** (-n))[:, None] * (dd @ L)
    ri = np.where(ri > 0.0, ri, 1.0)
    grad_image = (c * ri ** (-n))[:, None] * (di @ L)

    out = np.empty_like(grad_direct)
    cross = xs * ys <= 0.0
    out[cross] = detJ * (2.0 / (gp + gm)) * grad_direct[cross]
    for side in (1, -1):
        mask = (~cross) & ((xs > 0) if side > 0 else (xs < 0))
        if np.any(mask):
            cd, ci = _branch_coefs(p, side)
            out[mask] = detJ * (cd * grad_direct[mask] + ci * grad_image[mask])
    return out[0] if single else out


def _gamma0(z, p):
    return np.where(z > 0.0, p.gamma_plus, p.gamma_minus)


@dataclass(frozen=True)
class TwoLayerReport:
    """Residuals of the transmission and PDE checks for one parameter set."""

    max_pde_residual: float
    max_pde_relative: float
    max_value_jump: float
    max_flux_jump: float
    rows: tuple

    def to_csv_rows(self):
        header = ("kind", "x1", "x2", "x3", "residual")
        return (header,) + self.rows


def verify_two_layer(p, n_probes=24, seed=0, fd_step=1e-4, pole=None):
    """Meshless check that H satisfies its PDE and transmission conditions.

    The operator residual div(gamma0 A0 grad H) is estimated by central
    differences of the analytic gradient (step fd_step); the value jump
    across {x_n = 0} uses matched probes at offset 1e-9 and the conormal
    flux jump uses analytic gradients at offset 1e-6.  Probe points stay
    at least 10*fd_step away from the pole and the interface.
    """
    rng = np.random.default_rng(seed)
    n = p.dim
    eta = np.asarray(pole if pole is not None else
                     np.concatenate([np.zeros(n - 1), [0.8]]), dtype=float)
    if abs(eta[-1]) < 10 * fd_step:
        raise ProbeTooCloseToSingularity("pole too close to the interface")
    A0 = p.A0

    def conormal(points):
        g = two_layer_gradient(points, eta, p)
        return _gamma0(points[:, -1], p)[:, None] * (g @ A0.T)

    # PDE residual at random probes on both sides, away from pole/interface
    probes = rng.uniform(-1.0, 1.0, size=(n_probes, n))
    probes[:, -1] = np.where(probes[:, -1] >= 0.0,
                             probes[:, -1] + 10 * fd_step + 0.05,
                             probes[:, -1] - 10 * fd_step - 0.05)
    keep = np.linalg.norm(probes - eta, axis=1) > max(10 * fd_step, 0.2)
    probes = probes[keep]

    rows = []
    max_res, max_rel = 0.0, 0.0
    for x in probes:
        div = 0.0
        for i in range(n):
            e = np.zeros(n)
            e[i] = fd_step
            div += (conormal((x + e)[None, :])[0, i]
                    - conormal((x - e)[None, :])[0, i]) / (2.0 * fd_step)
        hval = two_layer_fundamental(x, eta, p)
        max_res = max(max_res, abs(div))
        max_rel = max(max_rel, abs(div) / max(abs(hval), 1e-300))
        rows.append(("pde", float(x[0]), float(x[1]), float(x[-1]),
                     float(div)))

    # transmission checks along vertical probe pairs
    base = rng.uniform(-1.0, 1.0, size=(n_probes, n))
    base[:, -1] = 0.0
    keep = np.linalg.norm(base - np.append(eta[:-1], 0.0), axis=1) > 0.3
    base = base[keep]
    dv = 1e-9
    df = 1e-6
    max_vjump, max_fjump = 0.0, 0.0
    for b in base:
        up = b.copy()
        dn = b.copy()
        up[-1] = dv
        dn[-1] = -dv
        vj = abs(two_layer_fundamental(up, eta, p)
                 - two_layer_fundamental(dn, eta, p))
        up[-1] = df
        dn[-1] = -df
        fj = abs(conormal(up[None, :])[0, -1] - conormal(dn[None, :])[0, -1])
        max_vjump = max(max_vjump, vj)
        max_fjump = max(max_fjump, fj)
        rows.append(("value_jump", float(b[0]), float(b[1]), 0.0, float(vj)))
        rows.append(("flux_jump", float(b[0]), float(b[1]), 0.0, float(fj)))

    return TwoLayerReport(max_pde_residual=max_res, max_pde_relative=max_rel,
                          max_value_jump=max_vjump, max_flux_jump=max_fjump,
                          rows=tuple(rows))
