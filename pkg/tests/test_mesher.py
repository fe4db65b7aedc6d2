import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from thermstack.mesher import (
    MeshError, assemble, build_system, discretize, face_conductance, power_vector, series_conductance,
)
from thermstack.model import (
    Block, EPOXY_TIM, Floorplan, GridSpec, Layer, Material, PackageModel, SILICON, Stack, fill_background,
    silicon_layer, tim_layer,
)
from thermstack.scenarios import scenario
from thermstack.solver import solve_dense, solve_steady

DIE = 0.016


def one_layer(blocks=(), thickness=1.5e-4, nz=1, k=100.0, package=None):
    fp = fill_background(Floorplan(DIE, DIE, tuple(blocks)))
    return Stack((Layer("si", Material("si", k), thickness, fp, nz),), package or PackageModel())


def test_two_by_two_cells():
    mesh = discretize(one_layer(), GridSpec(2, 2))
    assert mesh.n_cells == 4
    for i in range(4):
        c = mesh.cell(i)
        assert c.size == pytest.approx((0.008, 0.008, 1.5e-4))
        assert c.material.thermal_conductivity == 100.0


def test_three_layer_cell_count():
    mesh = discretize(scenario("3d-direct").stack, GridSpec(64, 64))
    assert [l.nz for l in mesh.stack.layers] == [4, 1, 4]
    assert mesh.n_cells == 64 * 64 * 9 == 36864


def test_block_owns_exact_cells():
    mesh = discretize(scenario("2d-single").stack, GridSpec(64, 64))
    fp = mesh.stack.layers[0].floorplan
    bi = fp.names.index("cpu0")
    mask = mesh.owners[0] == bi
    assert mask.sum() == 16 * 16
    ys, xs = np.nonzero(mask)
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (48, 63, 0, 15)


def test_index_round_trip():
    mesh = discretize(scenario("3d-indirect").stack, GridSpec(5, 3))
    for flat in range(mesh.n_cells):
        assert mesh.index(*mesh.unravel(flat)) == flat


def test_face_conductance_hand_value():
    # 2x2 grid, 8 mm cells: lateral face area 0.008 * 0.008 = 6.4e-5 m^2, half-widths 0.004 m
    mesh = discretize(one_layer(thickness=0.008), GridSpec(2, 2))
    g = face_conductance(mesh, 0, 1)
    assert g == pytest.approx(0.8, rel=1e-12)
    assert g == face_conductance(mesh, 1, 0)
    assert g == pytest.approx(100 * 6.4e-5 / (2 * 0.004), rel=1e-12)
    system = assemble(mesh)
    assert system.G[0, 1] == pytest.approx(-0.8, rel=1e-12)
    with pytest.raises(MeshError):
        face_conductance(mesh, 0, 3)


def test_vertical_face_between_materials():
    stack = Stack((silicon_layer("si", fill_background(Floorplan(DIE, DIE)), nz=1),
                   tim_layer("tim", DIE, DIE, thickness=1.5e-4)), PackageModel())
    mesh = discretize(stack, GridSpec(4, 4))
    a, b = mesh.index(0, 0, 1, 1), mesh.index(1, 0, 1, 1)
    g = face_conductance(mesh, a, b)
    area = mesh.dx * mesh.dy
    g_si = SILICON.thermal_conductivity * area / 1.5e-4
    g_tim = EPOXY_TIM.thermal_conductivity * area / 1.5e-4
    assert g_tim < g < g_si
    assert g == face_conductance(mesh, b, a)
    assert series_conductance(area, (0.75e-4, 100.0), (0.75e-4, 4.0)) == pytest.approx(g, rel=1e-14)


@pytest.mark.parametrize("sid", ["2d-corners", "3d-indirect"])
def test_matrix_structure(sid):
    mesh, system = build_system(scenario(sid).stack, GridSpec(8, 8))
    G = system.G
    assert (G != G.T).nnz == 0
    assert np.all(G.diagonal() > 0)
    off = G - sp.diags(G.diagonal())
    assert off.max() <= 0
    # rows of cells with no package or ambient link sum to zero
    coupled = set(system.face_cells.tolist())
    interior = [i for i in range(system.n_cells) if i not in coupled]
    rows = np.asarray(G[interior].sum(axis=1)).ravel()
    assert np.abs(rows).max() <= 1e-12 * G.diagonal().max()
    scipy.linalg.cholesky(G.toarray())  # positive definite


def test_uniform_power_closed_form():
    """Uniform heating, no spreader overhang: every cell sits on the same 1D series chain."""
    t = 1.5e-4
    pkg = PackageModel(spreader_width=DIE)
    stack = one_layer([Block("all", 0, 0, DIE, DIE, 50.9)], thickness=t, package=pkg)
    mesh, system = build_system(stack, GridSpec(2, 2))
    T = solve_dense(system).values
    A = DIE * DIE
    r = (t / 2 / 100 + pkg.interface_thickness / pkg.interface_conductivity
         + pkg.spreader_thickness / pkg.spreader_conductivity + pkg.sink_base_thickness / pkg.sink_conductivity) / A
    expected = pkg.ambient + 50.9 * (pkg.convection_resistance + r)
    assert T[:4] == pytest.approx(np.full(4, expected), rel=1e-12)
    assert T[system.sink_index] == pytest.approx(pkg.ambient + 50.9 * pkg.convection_resistance, rel=1e-12)


def test_power_split():
    mesh = discretize(scenario("2d-single").stack, GridSpec(64, 64))
    p = power_vector(mesh)
    nz = p[p > 0]
    assert nz.size == 16 * 16 * 4
    assert np.allclose(nz, 50.9 / 1024, rtol=1e-13)


def test_source_totals():
    mesh, system = build_system(scenario("2d-corners").stack, GridSpec(16, 16))
    assert system.source.sum() == pytest.approx(203.6, rel=1e-12)
    zero = system.with_source(np.zeros(system.n))
    assert np.array_equal(zero.P, zero.boundary)
    assert np.count_nonzero(zero.P) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 24), st.integers(2, 24), st.integers(1, 6), st.floats(0, 0.012), st.floats(0, 0.012))
def test_source_total_independent_of_refinement(nx, ny, nz, x, y):
    blk = Block("b", x, y, 0.004, 0.004, 7.5)
    stack = one_layer([blk], nz=nz)
    try:
        mesh = discretize(stack, GridSpec(nx, ny))
    except MeshError:
        return  # block too small for this grid
    assert power_vector(mesh).sum() == pytest.approx(7.5, rel=1e-12)


def test_power_override_and_errors():
    mesh = discretize(scenario("2d-corners").stack, GridSpec(8, 8))
    p = power_vector(mesh, [{"cpu0": 1.0, "cpu1": 0.0, "cpu2": 0.0, "cpu3": 0.0}])
    assert p.sum() == pytest.approx(1.0)
    with pytest.raises(MeshError):
        power_vector(mesh, [{"gpu": 1.0}])
    with pytest.raises(ValueError):
        power_vector(mesh, [None, None])


def test_grid_too_coarse():
    stack = one_layer([Block("tiny", 0.0001, 0.0001, 0.0005, 0.0005, 1.0)])
    with pytest.raises(MeshError, match="too coarse"):
        discretize(stack, GridSpec(4, 4))


@pytest.mark.parametrize("sid", ["2d-single", "3d-direct", "3d-diag-indirect"])
def test_conservation(sid):
    mesh, system = build_system(scenario(sid).stack, GridSpec(32, 32))
    T = solve_steady(system).values
    total = system.source.sum()
    assert system.package_flux(T) == pytest.approx(total, rel=1e-3)
    assert system.ambient_flux(T) == pytest.approx(total, rel=1e-3)


def test_attach_bottom_couples_layer0():
    st_ = scenario("3d-direct").stack
    bottom = Stack(st_.layers, PackageModel(attach_side="bottom"))
    m_top, m_bot = discretize(st_, GridSpec(4, 4)), discretize(bottom, GridSpec(4, 4))
    assert m_top.package_slab == m_top.n_slabs - 1
    assert m_bot.package_slab == 0


def test_no_spreader_links_face_to_sink():
    stack = one_layer([Block("b", 0, 0, 0.004, 0.004, 5.0)], package=PackageModel(spreader_thickness=0.0))
    mesh, system = build_system(stack, GridSpec(4, 4))
    assert system.n == mesh.n_cells + 1
    T = solve_steady(system).values
    assert system.package_flux(T) == pytest.approx(5.0, rel=1e-6)
