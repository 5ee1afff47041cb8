"""THz in-cabin channel toolkit.

Deterministic image-method ray tracing over facet scenes, VNA-style channel
synthesis and multipath extraction, hybrid deterministic/stochastic cluster
modeling, and SINR/coverage/rate planning with Powell placement optimization.
"""

from ._version import __version__
from .channel import (
    AngleDelayGrid,
    CfrGrid,
    Mpc,
    MpcSet,
    cfr_to_cir,
    extract_mpcs,
    omni_pdp,
    padp,
    reflection_loss_of_path,
    synthesize_cfr,
)
from .hybrid import (
    Cluster,
    EmpiricalCdf,
    HybridModel,
    cluster_mpcs,
    identify_material,
    load_hybrid_model,
    save_hybrid_model,
    synthesize_realization,
)
from .materials import (
    ReflectionQuery,
    fresnel_coefficient,
    reflection_loss_db,
    slab_reflection,
    unpolarized_reflection_loss_db,
)
from .optimize import (
    OptProblem,
    PowellResult,
    objective,
    powell_maximize,
    stage1_screen,
    stage2_refine,
)
from .planning import (
    CoverageMap,
    PlanConfig,
    RxPopulation,
    average_rate_bps,
    coverage_curve,
    coverage_map,
    coverage_probability,
    received_power_db,
    sample_rx_population,
    sinr_db,
)
from .raytrace import (
    HumanBox,
    PathRecord,
    TraceConfig,
    four_sector_merge,
    sector_filter,
    trace,
)
from .scene import (
    Box,
    Facet,
    Material,
    MaterialDb,
    Scene,
    is_occluded,
    load_material_db,
    load_scene,
    ray_facet_intersect,
    save_scene,
)

__all__ = [
    "__version__",
    "AngleDelayGrid", "CfrGrid", "Mpc", "MpcSet", "cfr_to_cir", "extract_mpcs",
    "omni_pdp", "padp", "reflection_loss_of_path", "synthesize_cfr",
    "Cluster", "EmpiricalCdf", "HybridModel", "cluster_mpcs",
    "identify_material", "load_hybrid_model", "save_hybrid_model",
    "synthesize_realization",
    "ReflectionQuery", "fresnel_coefficient", "reflection_loss_db",
    "slab_reflection", "unpolarized_reflection_loss_db",
    "OptProblem", "PowellResult", "objective", "powell_maximize",
    "stage1_screen", "stage2_refine",
    "CoverageMap", "PlanConfig", "RxPopulation", "average_rate_bps",
    "coverage_curve", "coverage_map", "coverage_probability",
    "received_power_db", "sample_rx_population", "sinr_db",
    "HumanBox", "PathRecord", "TraceConfig", "four_sector_merge",
    "sector_filter", "trace",
    "Box", "Facet", "Material", "MaterialDb", "Scene", "is_occluded",
    "load_material_db", "load_scene", "ray_facet_intersect", "save_scene",
]
