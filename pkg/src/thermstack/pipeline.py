"""Stack -> mesh -> system -> field -> report."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .analysis import Reference, ThermalReport, build_report
from .mesher import Mesh, SparseSystem, build_system
from .model import GridSpec, Stack, fill_background
from .solver import DEFAULT_REL_TOL, TemperatureField, solve_steady


@dataclass(frozen=True, eq=False)
class Solution:
    mesh: Mesh
    system: SparseSystem
    field: TemperatureField


def ensure_filled(stack: Stack) -> Stack:
    """Background-fill every layer that still has uncovered die area."""
    layers = []
    for layer in stack.layers:
        fp = layer.floorplan
        covered = sum(b.area for b in fp.blocks)
        if abs(covered - fp.area) > 1e-12 * fp.area:
            fp = fill_background(fp)
        layers.append(replace(layer, floorplan=fp))
    return replace(stack, layers=tuple(layers))


def solve_stack(stack: Stack, grid: GridSpec, rel_tol: float = DEFAULT_REL_TOL,
                max_iter: int | None = None) -> Solution:
    mesh, system = build_system(ensure_filled(stack), grid)
    return Solution(mesh, system, solve_steady(system, rel_tol, max_iter))


def run_stack(stack: Stack, grid: GridSpec, scenario: str | None = None,
              references: list[Reference] | None = None, rel_tol: float = DEFAULT_REL_TOL) -> ThermalReport:
    sol = solve_stack(stack, grid, rel_tol)
    return build_report(sol.field, sol.mesh, scenario, references)
