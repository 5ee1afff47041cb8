"""Bundled example fixtures: a stylized cabin scene and material databases.

The cabin is a shoebox-plus-benches stand-in for a vehicle interior, not a
measured car body; it exists so the pipeline can run end to end out of the
box. The `materials.csv` entries are tuned so each material reproduces its
reference reflection loss at normal incidence and 300 GHz.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def _path(name: str) -> Path:
    return Path(resources.files(__package__) / name)


def cabin_scene_path() -> Path:
    return _path("cabin.json")


def material_db_path() -> Path:
    return _path("materials.csv")


def tds_material_db_path() -> Path:
    """Database used by the cluster material-identification examples."""
    return _path("materials_tds.csv")
