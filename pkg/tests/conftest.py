import numpy as np
import pytest

from calderon_misfit import fem, presets
from calderon_misfit.geometry import build_augmented_mesh, pole_quadrature


@pytest.fixture(scope="session")
def ref_spec():
    return presets.reference_spec(n_layers=2)


@pytest.fixture(scope="session")
def ref_mesh8(ref_spec):
    return build_augmented_mesh(ref_spec, 8)


@pytest.fixture(scope="session")
def ref_mesh16(ref_spec):
    return build_augmented_mesh(ref_spec, 16)


@pytest.fixture(scope="session")
def ref_conds():
    return presets.reference_conductivities()


@pytest.fixture(scope="session")
def ref_systems8(ref_mesh8, ref_conds):
    c1, c2 = ref_conds
    return fem.assemble(ref_mesh8, c1), fem.assemble(ref_mesh8, c2)


@pytest.fixture(scope="session")
def ref_regions(ref_spec):
    dy_box, dz_box = presets.reference_pole_boxes()
    return (pole_quadrature(dy_box, 2, ref_spec),
            pole_quadrature(dz_box, 2, ref_spec))


@pytest.fixture(scope="session")
def tall_spec():
    """Wide-open D0 covering most of the top face; minimal screening."""
    from calderon_misfit.geometry import build_layered_geometry
    return build_layered_geometry(
        r0=3.0, n_layers=1, heights=(0.0, -1.0),
        sigma_patch=(0.0, 1.0, 0.0, 1.0),
        d0_box=(0.05, 0.95, 0.05, 0.95, 0.0, 0.95))


@pytest.fixture(scope="session")
def tall_sys(tall_spec):
    from calderon_misfit import misfit
    mesh = build_augmented_mesh(tall_spec, 20)
    return fem.assemble(mesh, misfit.identity_conductivity(1))


@pytest.fixture(scope="session")
def small_spec():
    """Quick N=1 geometry on the 1/4 grid for cheap FEM tests."""
    from calderon_misfit.geometry import build_layered_geometry
    return build_layered_geometry(
        r0=0.8, n_layers=1, heights=(0.0, -1.0),
        sigma_patch=(0.0, 1.0, 0.0, 1.0),
        d0_box=(0.25, 0.75, 0.25, 0.75, 0.0, 0.25))


@pytest.fixture(scope="session")
def small_mesh(small_spec):
    return build_augmented_mesh(small_spec, 4)
