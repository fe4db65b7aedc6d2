"""Finite-volume discretization of a layer stack and assembly of G·T = P.

Cells sit on a uniform nx-by-ny lateral grid; layer ``l`` is split into
``nz`` equal slabs.  Flat cell index is ``slab * nx * ny + iy * nx + ix``
with slabs numbered bottom to top.  After the ``n_cells`` die cells the
system carries the package unknowns: one spreader cell per lateral cell
(when the spreader has thickness) followed by a single heat-sink node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .model import Block, GridSpec, Material, Stack, check_floorplan


class MeshError(ValueError):
    pass


class Cell(NamedTuple):
    layer: int
    iz: int
    iy: int
    ix: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    material: Material
    block: str


@dataclass(frozen=True, eq=False)
class Mesh:
    stack: Stack
    grid: GridSpec
    slab_layer: np.ndarray   # (S,) layer index of each slab
    slab_dz: np.ndarray      # (S,) slab thickness
    slab_z0: np.ndarray      # (S,) bottom z of each slab
    layer_first_slab: tuple[int, ...]
    owners: tuple[np.ndarray, ...]  # per layer, (ny, nx) index into that layer's blocks

    @property
    def nx(self) -> int:
        return self.grid.nx

    @property
    def ny(self) -> int:
        return self.grid.ny

    @property
    def dx(self) -> float:
        return self.stack.die_width / self.grid.nx

    @property
    def dy(self) -> float:
        return self.stack.die_height / self.grid.ny

    @property
    def n_slabs(self) -> int:
        return len(self.slab_dz)

    @property
    def n_lateral(self) -> int:
        return self.grid.nx * self.grid.ny

    @property
    def n_cells(self) -> int:
        return self.n_slabs * self.n_lateral

    @property
    def package_slab(self) -> int:
        return self.n_slabs - 1 if self.stack.package.attach_side == "top" else 0

    def slabs_of(self, layer: int) -> range:
        first = self.layer_first_slab[layer]
        return range(first, first + self.stack.layers[layer].nz)

    def index(self, layer: int, iz: int, iy: int, ix: int) -> int:
        nz = self.stack.layers[layer].nz
        if not (0 <= iz < nz and 0 <= iy < self.ny and 0 <= ix < self.nx):
            raise IndexError(f"cell ({layer}, {iz}, {iy}, {ix}) out of range")
        return (self.layer_first_slab[layer] + iz) * self.n_lateral + iy * self.nx + ix

    def unravel(self, flat: int) -> tuple[int, int, int, int]:
        if not 0 <= flat < self.n_cells:
            raise IndexError(f"flat index {flat} out of range")
        slab, rem = divmod(int(flat), self.n_lateral)
        iy, ix = divmod(rem, self.nx)
        layer = int(self.slab_layer[slab])
        return layer, slab - self.layer_first_slab[layer], iy, ix

    def cell(self, flat: int) -> Cell:
        layer, iz, iy, ix = self.unravel(flat)
        slab = self.layer_first_slab[layer] + iz
        dz = float(self.slab_dz[slab])
        lay = self.stack.layers[layer]
        center = ((ix + 0.5) * self.dx, (iy + 0.5) * self.dy, float(self.slab_z0[slab]) + 0.5 * dz)
        owner = lay.floorplan.blocks[self.owners[layer][iy, ix]].name
        return Cell(layer, iz, iy, ix, center, (self.dx, self.dy, dz), lay.material, owner)

    def layer_block_mask(self, layer: int, block_index: int) -> np.ndarray:
        """(ny, nx) boolean footprint of cells owned by the block."""
        return self.owners[layer] == block_index


def _overlaps_1d(lo: float, hi: float, n: int, h: float) -> np.ndarray:
    edges = np.arange(n + 1) * h
    return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)


def footprint_overlap(block: Block, nx: int, ny: int, dx: float, dy: float) -> np.ndarray:
    """(ny, nx) area of each lateral cell covered by ``block``."""
    ox = _overlaps_1d(block.x, block.x2, nx, dx)
    oy = _overlaps_1d(block.y, block.y2, ny, dy)
    return np.outer(oy, ox)


def discretize(stack: Stack, grid: GridSpec) -> Mesh:
    """Cut the stack into cells and assign each lateral cell an owning block.

    Layer floorplans should already be background-filled; uncovered cells
    would otherwise have no owner.
    """
    nx, ny = grid.nx, grid.ny
    dx, dy = stack.die_width / nx, stack.die_height / ny
    if not (dx > 0 and dy > 0):
        raise MeshError("cell size must be positive")

    slab_layer, slab_dz = [], []
    first = []
    for li, layer in enumerate(stack.layers):
        first.append(len(slab_dz))
        slab_layer += [li] * layer.nz
        slab_dz += [layer.thickness / layer.nz] * layer.nz
    slab_dz = np.asarray(slab_dz)
    slab_z0 = np.concatenate([[0.0], np.cumsum(slab_dz)[:-1]])

    xc = (np.arange(nx) + 0.5) * dx
    yc = (np.arange(ny) + 0.5) * dy
    owners = []
    for layer in stack.layers:
        fp = check_floorplan(layer.floorplan)
        best = np.zeros((ny, nx))
        owner = np.full((ny, nx), -1, dtype=np.int64)
        for bi, b in enumerate(fp.blocks):
            ov = footprint_overlap(b, nx, ny, dx, dy)
            take = ov > best  # strict: ties keep the lower block index
            best[take] = ov[take]
            owner[take] = bi
        if (owner < 0).any():
            raise MeshError(f"layer {layer.name}: cells not covered by any block (fill background first)")
        for bi, b in enumerate(fp.blocks):
            if b.power > 0 and not (owner == bi).any():
                has_center = ((xc > b.x) & (xc < b.x2)).any() and ((yc > b.y) & (yc < b.y2)).any()
                if not has_center:
                    raise MeshError(
                        f"grid {grid} too coarse: powered block {b.name!r} in layer {layer.name} owns no cell"
                    )
        owners.append(owner)

    return Mesh(stack, grid, np.asarray(slab_layer), slab_dz, slab_z0, tuple(first), tuple(owners))


def series_conductance(area: float, *segments: tuple[float, float]) -> float:
    """Conductance of ``(length, conductivity)`` segments in series over ``area``."""
    r = sum(d / (k * area) for d, k in segments if d > 0)
    return 1.0 / r


def face_conductance(mesh: Mesh, a: int, b: int) -> float:
    """Two-half-cell series conductance across the face shared by cells ``a`` and ``b``."""
    la, za, ya, xa = mesh.unravel(a)
    lb, zb, yb, xb = mesh.unravel(b)
    sa = mesh.layer_first_slab[la] + za
    sb = mesh.layer_first_slab[lb] + zb
    ka = mesh.stack.layers[la].material.thermal_conductivity
    kb = mesh.stack.layers[lb].material.thermal_conductivity
    dza, dzb = float(mesh.slab_dz[sa]), float(mesh.slab_dz[sb])
    step = (abs(sa - sb), abs(ya - yb), abs(xa - xb))
    if step == (1, 0, 0):
        area = mesh.dx * mesh.dy
        return 1.0 / (dza / 2 / (ka * area) + dzb / 2 / (kb * area))
    if step == (0, 1, 0):
        area = mesh.dx * dza
        return 1.0 / (mesh.dy / 2 / (ka * area) + mesh.dy / 2 / (kb * area))
    if step == (0, 0, 1):
        area = mesh.dy * dza
        return 1.0 / (mesh.dx / 2 / (ka * area) + mesh.dx / 2 / (kb * area))
    raise MeshError(f"cells {a} and {b} do not share a face")


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Assembled conductance network.

    ``G`` is symmetric positive definite.  ``P = source + boundary`` where
    ``source`` holds injected block power and ``boundary`` the ambient
    coupling of the sink node.  ``face_cells``/``face_partner``/``face_g``
    describe the links carrying heat out of the die into the package.
    """

    G: sp.csr_matrix
    source: np.ndarray
    boundary: np.ndarray
    ambient: float
    n_cells: int
    sink_index: int
    g_ambient: float
    face_cells: np.ndarray
    face_partner: np.ndarray
    face_g: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self.source + self.boundary

    def with_source(self, source: np.ndarray) -> "SparseSystem":
        source = np.asarray(source, dtype=float)
        if source.shape != self.source.shape:
            raise ValueError(f"source has shape {source.shape}, expected {self.source.shape}")
        return SparseSystem(self.G, source, self.boundary, self.ambient, self.n_cells, self.sink_index,
                            self.g_ambient, self.face_cells, self.face_partner, self.face_g)

    def package_flux(self, T: np.ndarray) -> float:
        """Heat leaving the die through the package face for temperatures ``T``."""
        T = np.asarray(T)
        return float(np.sum(self.face_g * (T[self.face_cells] - T[self.face_partner])))

    def ambient_flux(self, T: np.ndarray) -> float:
        return float(self.g_ambient * (T[self.sink_index] - self.ambient))


def _lateral_pairs(nx: int, ny: int):
    idx = np.arange(nx * ny).reshape(ny, nx)
    return (idx[:, :-1].ravel(), idx[:, 1:].ravel()), (idx[:-1, :].ravel(), idx[1:, :].ravel())


def _edge_fin_conductance(pkg, edge_len: float, half_cell: float, overhang: float) -> float:
    """Conductance from a spreader edge cell through the overhanging rim to the sink node.

    The rim is a 1D fin of length ``overhang``: lateral sheet conductance
    k*t, leaking to the sink through half the spreader plus the sink base.
    """
    kt = pkg.spreader_conductivity * pkg.spreader_thickness
    r_area = pkg.spreader_thickness / (2 * pkg.spreader_conductivity) + pkg.sink_base_thickness / pkg.sink_conductivity
    m = math.sqrt(1.0 / (r_area * kt))
    g_fin = kt * m * math.tanh(m * overhang) * edge_len
    g_half = kt * edge_len / half_cell
    return 1.0 / (1.0 / g_half + 1.0 / g_fin)


def assemble(mesh: Mesh, stack: Stack | None = None) -> SparseSystem:
    """Build the conductance matrix; ``source`` is left at zero (see :func:`power_vector`)."""
    stack = stack or mesh.stack
    pkg = stack.package
    nx, ny, L = mesh.nx, mesh.ny, mesh.n_lateral
    dx, dy = mesh.dx, mesh.dy
    (xi, xj), (yi, yj) = _lateral_pairs(nx, ny)

    rows, cols, vals = [], [], []

    def link(i, j, g):
        g = np.broadcast_to(np.asarray(g, dtype=float), np.shape(i))
        rows.append(np.asarray(i))
        cols.append(np.asarray(j))
        vals.append(g)

    S = mesh.n_slabs
    ks = np.array([stack.layers[l].material.thermal_conductivity for l in mesh.slab_layer])
    for s in range(S):
        k, dz = ks[s], float(mesh.slab_dz[s])
        base = s * L
        ax = dy * dz
        link(base + xi, base + xj, 1.0 / (dx / 2 / (k * ax) + dx / 2 / (k * ax)))
        ay = dx * dz
        link(base + yi, base + yj, 1.0 / (dy / 2 / (k * ay) + dy / 2 / (k * ay)))
        if s + 1 < S:
            kb, dzb = ks[s + 1], float(mesh.slab_dz[s + 1])
            az = dx * dy
            cells = np.arange(L)
            link(base + cells, base + L + cells, 1.0 / (dz / 2 / (k * az) + dzb / 2 / (kb * az)))

    n_cells = mesh.n_cells
    f = mesh.package_slab
    kf, dzf = ks[f], float(mesh.slab_dz[f])
    area = dx * dy
    face_cells = f * L + np.arange(L)
    has_spreader = pkg.spreader_thickness > 0
    n = n_cells + (L if has_spreader else 0) + 1
    sink = n - 1
    if has_spreader:
        spr = n_cells + np.arange(L)
        g_face = series_conductance(area, (dzf / 2, kf), (pkg.interface_thickness, pkg.interface_conductivity),
                                    (pkg.spreader_thickness / 2, pkg.spreader_conductivity))
        link(face_cells, spr, g_face)
        face_partner = spr
        kt = pkg.spreader_conductivity * pkg.spreader_thickness
        link(n_cells + xi, n_cells + xj, kt * dy / dx)
        link(n_cells + yi, n_cells + yj, kt * dx / dy)
        g_down = series_conductance(area, (pkg.spreader_thickness / 2, pkg.spreader_conductivity),
                                    (pkg.sink_base_thickness, pkg.sink_conductivity))
        link(spr, np.full(L, sink), g_down)
        # overhang rim along the die edges; rim corners are neglected
        ov_x = (pkg.spreader_width - stack.die_width) / 2
        ov_y = (pkg.spreader_width - stack.die_height) / 2
        grid = np.arange(L).reshape(ny, nx)
        if ov_x > 0:
            g = _edge_fin_conductance(pkg, dy, dx / 2, ov_x)
            edge = np.concatenate([grid[:, 0], grid[:, -1]])
            link(n_cells + edge, np.full(edge.size, sink), g)
        if ov_y > 0:
            g = _edge_fin_conductance(pkg, dx, dy / 2, ov_y)
            edge = np.concatenate([grid[0, :], grid[-1, :]])
            link(n_cells + edge, np.full(edge.size, sink), g)
    else:
        g_face = series_conductance(area, (dzf / 2, kf), (pkg.interface_thickness, pkg.interface_conductivity),
                                    (pkg.sink_base_thickness, pkg.sink_conductivity))
        face_partner = np.full(L, sink)
        link(face_cells, face_partner, g_face)

    ri = np.concatenate(rows)
    ci = np.concatenate(cols)
    gv = np.concatenate(vals)
    g_amb = 1.0 / pkg.convection_resistance
    diag = np.bincount(ri, weights=gv, minlength=n) + np.bincount(ci, weights=gv, minlength=n)
    diag[sink] += g_amb
    all_r = np.concatenate([ri, ci, np.arange(n)])
    all_c = np.concatenate([ci, ri, np.arange(n)])
    all_v = np.concatenate([-gv, -gv, diag])
    G = sp.coo_matrix((all_v, (all_r, all_c)), shape=(n, n)).tocsr()
    G.sort_indices()

    boundary = np.zeros(n)
    boundary[sink] = pkg.ambient * g_amb
    face_g = np.broadcast_to(np.asarray(g_face, dtype=float), face_cells.shape).copy()
    return SparseSystem(G, np.zeros(n), boundary, pkg.ambient, n_cells, sink, g_amb,
                        face_cells, np.asarray(face_partner), face_g)


def power_vector(mesh: Mesh, powers: Sequence[dict[str, float] | None] | None = None, n: int | None = None) -> np.ndarray:
    """Distribute block power over cells.

    ``powers`` holds one name-to-watts map per layer (``None`` entries, or
    no argument at all, use the powers stored on the floorplan blocks).
    Each block's power is split by footprint-overlap area and evenly over
    the layer's slabs.  The returned vector has length ``n`` (defaults to
    ``mesh.n_cells``); package unknowns receive nothing.
    """
    n = mesh.n_cells if n is None else n
    out = np.zeros(n)
    stack = mesh.stack
    if powers is not None and len(powers) != len(stack.layers):
        raise ValueError(f"expected {len(stack.layers)} power maps, got {len(powers)}")
    L = mesh.n_lateral
    for li, layer in enumerate(stack.layers):
        fp = layer.floorplan
        pmap = None if powers is None else powers[li]
        if pmap is not None:
            unknown = sorted(set(pmap) - set(fp.names))
            if unknown:
                raise MeshError(f"layer {layer.name}: power given for unknown block(s) {unknown}")
        for b in fp.blocks:
            p = b.power if pmap is None else float(pmap.get(b.name, 0.0))
            if p < 0:
                raise MeshError(f"block {b.name}: negative power {p}")
            if p == 0:
                continue
            ov = footprint_overlap(b, mesh.nx, mesh.ny, mesh.dx, mesh.dy)
            total = ov.sum()
            if total <= 0:
                raise MeshError(f"powered block {b.name!r} covers no cell")
            share = (p * ov / total).ravel() / layer.nz
            for s in mesh.slabs_of(li):
                out[s * L:(s + 1) * L] += share
    return out


def build_system(stack: Stack, grid: GridSpec) -> tuple[Mesh, SparseSystem]:
    """Discretize, assemble and load block powers in one go."""
    mesh = discretize(stack, grid)
    system = assemble(mesh, stack)
    return mesh, system.with_source(power_vector(mesh, n=system.n))
