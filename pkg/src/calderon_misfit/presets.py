"""Reference configurations used by the demos and the acceptance suite.

All plane coordinates are commensurate with the resolutions each preset
is meant for (the misfit reference works at 8 and 16, the sweep geometry
carries a per-resolution D0 because no box strictly inside the patch can
sit on both the 1/6 and the 1/8 grid, and the shared pole boxes do not
need grid alignment).
"""

import numpy as np

from .conductivity import AffinePatch, Conductivity, MatrixFieldSpec
from .geometry import build_layered_geometry

MILD_ANISOTROPY = np.array([[1.3, 0.2, 0.0],
                            [0.2, 1.0, 0.1],
                            [0.0, 0.1, 0.8]])


def reference_spec(n_layers=2):
    """Misfit/identity geometry for resolutions 8 and 16."""
    heights = {1: (0.0, -1.0), 2: (0.0, -0.5, -1.0),
               3: (0.0, -0.25, -0.5, -1.0)}[n_layers]
    return build_layered_geometry(
        r0=2.9, n_layers=n_layers, heights=heights,
        sigma_patch=(0.0, 1.0, 0.0, 1.0),
        d0_box=(0.125, 0.875, 0.125, 0.875, 0.0, 0.875))


def reference_pole_boxes():
    """Disjoint pole bands in the sweet spot of the reference D0."""
    dy = (0.275, 0.425, 0.35, 0.65, 0.35, 0.45)
    dz = (0.575, 0.725, 0.35, 0.65, 0.35, 0.45)
    return dy, dz


def reference_field(kind="anisotropic"):
    if kind == "identity":
        return MatrixFieldSpec(kind="constant", A0=np.eye(3))
    if kind == "anisotropic":
        return MatrixFieldSpec(kind="constant", A0=MILD_ANISOTROPY)
    if kind == "affine":
        a1z = np.diag([0.1, 0.05, 0.1])
        zeros = np.zeros((3, 3))
        return MatrixFieldSpec(kind="affine", A0=MILD_ANISOTROPY,
                               A1=(zeros, zeros, a1z))
    raise ValueError(f"unknown field preset {kind!r}")


def reference_conductivities(a_field=None):
    a = a_field if a_field is not None else reference_field()
    c1 = Conductivity(patches=(AffinePatch(1, 1.3, (0.1, 0.0, 0.25)),
                               AffinePatch(2, 0.9, (0.0, 0.2, 0.0))),
                      a_field=a)
    c2 = Conductivity(patches=(AffinePatch(1, 1.1, (0.0, -0.1, 0.2)),
                               AffinePatch(2, 1.2, (0.1, 0.0, -0.2))),
                      a_field=a)
    return c1, c2


def sweep_spec(resolution):
    """Stability-sweep geometry for resolutions 6 and 8.

    Heights and the patch live on both grids; only the D0 lateral extent
    differs (1/6-multiples vs 1/8-multiples), while the pole boxes below
    are shared verbatim so the sampled functionals are comparable.
    """
    if resolution % 4 == 0:
        d0 = (0.25, 0.75, 0.25, 0.75, 0.0, 0.5)
    elif resolution % 6 == 0:
        d0 = (1.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0, 0.0, 0.5)
    else:
        raise ValueError(f"sweep preset needs a resolution divisible by 4 "
                         f"or 6, got {resolution}")
    return build_layered_geometry(
        r0=2.0, n_layers=2, heights=(0.0, -0.5, -1.0),
        sigma_patch=(0.0, 1.0, 0.0, 1.0), d0_box=d0)


def sweep_pole_boxes():
    dy = (0.39, 0.49, 0.39, 0.61, 0.18, 0.32)
    dz = (0.51, 0.61, 0.39, 0.61, 0.18, 0.32)
    return dy, dz


def coarse_spec(n_layers=1):
    """Reconstruction geometry on the 1/6 grid."""
    heights = {1: (0.0, -1.0), 2: (0.0, -0.5, -1.0)}[n_layers]
    return build_layered_geometry(
        r0=2.0, n_layers=n_layers, heights=heights,
        sigma_patch=(0.0, 1.0, 0.0, 1.0),
        d0_box=(1.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0, 0.0, 0.5))


def coarse_pole_boxes():
    dy = (0.36, 0.48, 0.36, 0.64, 0.19, 0.31)
    dz = (0.52, 0.64, 0.36, 0.64, 0.19, 0.31)
    return dy, dz


def asymptotics_spec():
    """Two-layer probe geometry on the 1/20 grid."""
    return build_layered_geometry(
        r0=2.0, n_layers=2, heights=(0.0, -0.5, -1.0),
        sigma_patch=(0.0, 1.0, 0.0, 1.0),
        d0_box=(0.25, 0.75, 0.25, 0.75, 0.0, 0.6))


def two_layer_conductivity(gamma_top=2.0, gamma_bottom=1.0, a_field=None):
    """Piecewise-constant two-layer medium (the asymptotics test case)."""
    a = a_field if a_field is not None else reference_field("identity")
    return Conductivity(patches=(AffinePatch(1, gamma_top, (0, 0, 0)),
                                 AffinePatch(2, gamma_bottom, (0, 0, 0))),
                        a_field=a)
