"""Hexagonal panel structures: lattice, form finding, planarization, fabrication."""

from .hexgrid import HexMesh, TriGrid, build_hex_mesh, hex_neighbors, subdivide_triangle, validate_hex_mesh
from .physics import SimulationParams, SpringDefaults, SpringSystem, build_spring_system, simulate_to_equilibrium
from .planarize import PlanarizeSettings, fit_plane, planarity_error, planarize
from .pipeline import PipelineConfig, load_config, run_pipeline

__all__ = [
    "HexMesh",
    "TriGrid",
    "build_hex_mesh",
    "hex_neighbors",
    "subdivide_triangle",
    "validate_hex_mesh",
    "SimulationParams",
    "SpringDefaults",
    "SpringSystem",
    "build_spring_system",
    "simulate_to_equilibrium",
    "PlanarizeSettings",
    "fit_plane",
    "planarity_error",
    "planarize",
    "PipelineConfig",
    "load_config",
    "run_pipeline",
]

__version__ = "0.1.0"
