"""Steady-state compact thermal model for 2D and stacked 3D dies."""
from .analysis import Reference, ThermalReport, build_report
from .mesher import Mesh, SparseSystem, assemble, build_system, discretize, power_vector
from .model import (
    Block, Floorplan, FloorplanError, GridSpec, Layer, Material, PackageModel, Stack,
    check_floorplan, fill_background, validate_floorplan,
)
from .pipeline import run_stack, solve_stack
from .solver import NonConvergence, TemperatureField, solve_dense, solve_steady

__version__ = "0.1.0"

__all__ = [
    "Block", "Floorplan", "FloorplanError", "GridSpec", "Layer", "Material", "Mesh", "NonConvergence",
    "PackageModel", "Reference", "SparseSystem", "Stack", "TemperatureField", "ThermalReport",
    "assemble", "build_report", "build_system", "check_floorplan", "discretize", "fill_background",
    "power_vector", "run_stack", "solve_dense", "solve_stack", "solve_steady", "validate_floorplan",
]
