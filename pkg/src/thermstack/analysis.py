"""Reductions of a solved temperature field into report observables."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .mesher import Mesh
from .model import GridSpec
from .solver import TemperatureField


class AnalysisError(ValueError):
    pass


class BlockStats(NamedTuple):
    name: str
    layer: str
    layer_index: int
    power: float
    min: float
    max: float
    avg: float


class LayerStats(NamedTuple):
    name: str
    index: int
    min: float
    max: float
    avg: float
    proc_max: float | None  # max over powered blocks, None when the layer has none


class Extreme(NamedTuple):
    value: float
    layer: str
    x: float
    y: float
    z: float


@dataclass
class Reference:
    observable: str
    published: float
    source: str
    computed: float | None = None
    note: str = ""
    compare: bool = True  # False for values flagged as unreliable in the source

    @property
    def delta(self) -> float | None:
        if self.computed is None:
            return None
        return self.computed - self.published


@dataclass
class ThermalReport:
    grid: GridSpec
    ambient: float
    total_power: float
    blocks: list[BlockStats]
    layers: list[LayerStats]
    peak: Extreme
    lowest: Extreme
    solver: dict
    scenario: str | None = None
    references: list[Reference] = field(default_factory=list)
    layer_maps: list[np.ndarray] = field(default_factory=list)

    def layer(self, key: int | str) -> LayerStats:
        for ls in self.layers:
            if ls.index == key or ls.name == key:
                return ls
        raise KeyError(key)

    def observable(self, name: str) -> float:
        """Look up a named observable (``peak``, ``lowest``, ``<layer>_proc_peak``, ``<layer>_max``)."""
        if name == "peak":
            return self.peak.value
        if name == "lowest":
            return self.lowest.value
        for ls in self.layers:
            if name == f"{ls.name}_proc_peak":
                if ls.proc_max is None:
                    raise AnalysisError(f"layer {ls.name} has no processor blocks")
                return ls.proc_max
            if name == f"{ls.name}_max":
                return ls.max
        raise KeyError(name)

    def rows(self):
        """(scope, name, min, max, avg) rows in a fixed order for tabular output."""
        for b in self.blocks:
            yield ("block", f"{b.layer}/{b.name}", b.min, b.max, b.avg)
        for ls in self.layers:
            yield ("layer", ls.name, ls.min, ls.max, ls.avg)
            if ls.proc_max is not None:
                yield ("layer", f"{ls.name}_procs", None, ls.proc_max, None)
        yield ("global", "peak", None, self.peak.value, None)
        yield ("global", "lowest", self.lowest.value, None, None)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny},
            "ambient_K": self.ambient,
            "total_power_W": self.total_power,
            "global": {
                "peak": _extreme_dict(self.peak),
                "lowest": _extreme_dict(self.lowest),
            },
            "layers": [
                {"name": ls.name, "index": ls.index, "min_K": ls.min, "max_K": ls.max,
                 "avg_K": ls.avg, "proc_max_K": ls.proc_max}
                for ls in self.layers
            ],
            "blocks": [
                {"name": b.name, "layer": b.layer, "power_W": b.power,
                 "min_K": b.min, "max_K": b.max, "avg_K": b.avg}
                for b in self.blocks
            ],
            "references": [
                {"observable": r.observable, "published_K": r.published, "computed_K": r.computed,
                 "delta_K": r.delta, "source": r.source, "compared": r.compare, "note": r.note}
                for r in self.references
            ],
            "solver": dict(self.solver),
            "field": {
                "layout": "per layer, column maximum over slabs, row-major from y=0",
                "layers": [[float(v) for v in m.ravel()] for m in self.layer_maps],
            },
        }


def _extreme_dict(e: Extreme) -> dict:
    return {"K": e.value, "layer": e.layer, "x_m": e.x, "y_m": e.y, "z_m": e.z}


def _die_values(field_: TemperatureField | np.ndarray, mesh: Mesh) -> np.ndarray:
    values = field_.values if isinstance(field_, TemperatureField) else np.asarray(field_)
    if values.size < mesh.n_cells:
        raise AnalysisError(f"field has {values.size} values, mesh has {mesh.n_cells} cells")
    return values[:mesh.n_cells].reshape(mesh.n_slabs, mesh.ny, mesh.nx)


def slice_layer(field_, mesh: Mesh, layer: int, z_index: int) -> np.ndarray:
    """(ny, nx) temperatures of one slab of ``layer``."""
    if not 0 <= layer < len(mesh.stack.layers):
        raise IndexError(f"layer {layer} out of range")
    nz = mesh.stack.layers[layer].nz
    if not 0 <= z_index < nz:
        raise IndexError(f"z_index {z_index} out of range for layer with nz={nz}")
    return _die_values(field_, mesh)[mesh.layer_first_slab[layer] + z_index].copy()


def layer_map(field_, mesh: Mesh, layer: int) -> np.ndarray:
    """Column-wise maximum over the slabs of ``layer``: the map drawn per layer."""
    T = _die_values(field_, mesh)
    return T[list(mesh.slabs_of(layer))].max(axis=0)


def block_stats(field_, mesh: Mesh, include_background: bool = False) -> list[BlockStats]:
    T = _die_values(field_, mesh)
    out = []
    for li, layer in enumerate(mesh.stack.layers):
        slabs = list(mesh.slabs_of(li))
        vals = T[slabs]                              # (nz, ny, nx)
        vol = mesh.slab_dz[slabs][:, None, None] * mesh.dx * mesh.dy
        vol = np.broadcast_to(vol, vals.shape)
        owner = mesh.owners[li]
        for bi, b in enumerate(layer.floorplan.blocks):
            if b.is_background and not include_background:
                continue
            mask = owner == bi
            if not mask.any():
                continue
            v = vals[:, mask]
            w = vol[:, mask]
            out.append(BlockStats(b.name, layer.name, li, b.power, float(v.min()), float(v.max()),
                                  float(np.sum(v * w) / np.sum(w))))
    return out


def layer_stats(field_, mesh: Mesh) -> list[LayerStats]:
    T = _die_values(field_, mesh)
    out = []
    for li, layer in enumerate(mesh.stack.layers):
        vals = T[list(mesh.slabs_of(li))]
        powered = [bi for bi, b in enumerate(layer.floorplan.blocks) if b.power > 0]
        proc_max = None
        if powered:
            mask = np.isin(mesh.owners[li], powered)
            if mask.any():
                proc_max = float(vals[:, mask].max())
        out.append(LayerStats(layer.name, li, float(vals.min()), float(vals.max()), float(vals.mean()), proc_max))
    return out


def global_extremes(field_, mesh: Mesh) -> tuple[Extreme, Extreme]:
    """Peak and lowest die temperatures at cell centers; ties go to the lowest flat index."""
    flat = _die_values(field_, mesh).ravel()
    if flat.size == 0:
        raise AnalysisError("empty field")
    return _extreme_at(flat, mesh, int(np.argmax(flat))), _extreme_at(flat, mesh, int(np.argmin(flat)))


def _extreme_at(flat: np.ndarray, mesh: Mesh, idx: int) -> Extreme:
    cell = mesh.cell(idx)
    x, y, z = cell.center
    return Extreme(float(flat[idx]), mesh.stack.layers[cell.layer].name, x, y, z)


def layer_gap(report: ThermalReport, layer_a: int | str, layer_b: int | str) -> float:
    """Processor peak of ``layer_a`` minus processor peak of ``layer_b``."""
    a, b = report.layer(layer_a), report.layer(layer_b)
    for ls in (a, b):
        if ls.proc_max is None:
            raise AnalysisError(f"layer {ls.name} has no processor blocks")
    return a.proc_max - b.proc_max


def build_report(field_: TemperatureField, mesh: Mesh, scenario: str | None = None,
                 references: list[Reference] | None = None, include_background: bool = False) -> ThermalReport:
    peak, lowest = global_extremes(field_, mesh)
    report = ThermalReport(
        grid=mesh.grid,
        ambient=mesh.stack.package.ambient,
        total_power=mesh.stack.total_power,
        blocks=block_stats(field_, mesh, include_background),
        layers=layer_stats(field_, mesh),
        peak=peak,
        lowest=lowest,
        solver={"method": field_.method, "iterations": field_.iterations, "residual": field_.residual,
                "unknowns": int(field_.values.size)},
        scenario=scenario,
        references=[],
        layer_maps=[layer_map(field_, mesh, li) for li in range(len(mesh.stack.layers))],
    )
    for ref in references or []:
        try:
            computed = report.observable(ref.observable)
        except (KeyError, AnalysisError):
            computed = None
        report.references.append(replace(ref, computed=computed))
    return report
