import numpy as np
import pytest

from thzcabin.data import cabin_scene_path, material_db_path, tds_material_db_path
from thzcabin.scene import Box, Facet, Material, MaterialDb, Scene, load_material_db, load_scene


def quad(v0, v1, v2, v3, material):
    """Two triangles covering a planar quad."""
    return [Facet((v0, v1, v2), material), Facet((v0, v2, v3), material)]


def shoebox_facets(lx=5.0, ly=2.0, lz=1.5, material="steel"):
    """The 12-facet axis-aligned box [0,lx]x[0,ly]x[0,lz]."""
    facets = []
    facets += quad((0, 0, 0), (lx, 0, 0), (lx, ly, 0), (0, ly, 0), material)
    facets += quad((0, 0, lz), (0, ly, lz), (lx, ly, lz), (lx, 0, lz), material)
    facets += quad((0, 0, 0), (0, ly, 0), (0, ly, lz), (0, 0, lz), material)
    facets += quad((lx, 0, 0), (lx, 0, lz), (lx, ly, lz), (lx, ly, 0), material)
    facets += quad((0, 0, 0), (0, 0, lz), (lx, 0, lz), (lx, 0, 0), material)
    facets += quad((0, ly, 0), (lx, ly, 0), (lx, ly, lz), (0, ly, lz), material)
    return facets


@pytest.fixture(scope="session")
def material_db():
    return load_material_db(material_db_path())


@pytest.fixture(scope="session")
def tds_db():
    return load_material_db(tds_material_db_path())


@pytest.fixture(scope="session")
def cabin():
    return load_scene(cabin_scene_path())


@pytest.fixture(scope="session")
def shoebox(material_db):
    return Scene(
        facets=tuple(shoebox_facets()),
        tx={"t": (1.0, 0.5, 1.0)},
        rx={"r": (4.0, 1.5, 0.8)},
        bounds=Box((0.0, 0.0, 0.0), (5.0, 2.0, 1.5)),
        materials=material_db,
    )


@pytest.fixture(scope="session")
def empty_scene():
    return Scene(
        facets=(),
        tx={},
        rx={},
        bounds=Box((-10.0, -10.0, -10.0), (10.0, 10.0, 10.0)),
    )


@pytest.fixture(scope="session")
def single_material_db():
    return MaterialDb([Material("glass", complex(6.25, -29.96582871), 0.004, 2.42)])


def free_space_problem(n_rx=160, seed=0, pth=0.0, box=0.6):
    """Empty box with a centered gaussian receiver cloud; statistical links."""
    from thzcabin.optimize import OptProblem
    from thzcabin.planning import PlanConfig, RxPopulation

    scene = Scene((), {}, {}, Box((0.0, 0.0, 0.0), (box, box, box)))
    rng = np.random.default_rng(seed)
    pts = rng.normal(box / 2.0, box / 7.5, (6 * n_rx, 3))
    pts = pts[np.all((pts > 0.0) & (pts < box), axis=1)][:n_rx]
    cfg = PlanConfig(pathloss_model="statistical", molecular_absorption_db_per_m=0.0)
    return OptProblem(
        scene=scene,
        cfg=cfg,
        rx_pop=RxPopulation(pts),
        n_tx=1,
        bounds=scene.bounds,
        coverage_threshold_gamma_db=0.0,
        min_coverage_p_th=pth,
        candidates={
            "corner": (box / 12.0,) * 3,
            "center": (box / 2.0,) * 3,
        },
    )
