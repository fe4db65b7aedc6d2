from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from thermstack.mesher import SparseSystem, build_system, power_vector
from thermstack.model import Block, Floorplan, GridSpec, PackageModel, Stack, fill_background, silicon_layer, tim_layer
from thermstack.scenarios import scenario
from thermstack.solver import (
    NonConvergence, SolverError, TemperatureField, default_max_iter, residual_norm, solve_dense, solve_steady,
)

AMB = 318.15


def raw_system(G, source, boundary=None, ambient=0.0):
    G = sp.csr_matrix(G)
    n = G.shape[0]
    boundary = np.zeros(n) if boundary is None else np.asarray(boundary, float)
    empty = np.zeros(0, dtype=int)
    return SparseSystem(G, np.asarray(source, float), boundary, ambient, n, n - 1, 0.0, empty, empty, np.zeros(0))


def test_one_node_closed_form():
    # one node tied to ambient through 0.1 K/W carrying 50.9 W
    sys1 = raw_system([[10.0]], [50.9], [AMB * 10.0], AMB)
    for f in (solve_steady(sys1), solve_dense(sys1)):
        assert f.values[0] == pytest.approx(AMB + 50.9 * 0.1, rel=1e-14)
        assert f.values[0] == pytest.approx(323.24, abs=1e-9)


def test_zero_power_is_ambient():
    _, system = build_system(scenario("3d-direct", power=0.0).stack, GridSpec(16, 16))
    f = solve_steady(system)
    assert f.iterations <= 1
    assert np.abs(f.values - AMB).max() <= 1e-9


def small_stack():
    fp0 = fill_background(Floorplan(0.016, 0.016, (Block("a", 0.0, 0.0, 0.008, 0.008, 10.0),)))
    fp1 = fill_background(Floorplan(0.016, 0.016, (Block("b", 0.008, 0.008, 0.008, 0.008, 4.0),)))
    return Stack((silicon_layer("l0", fp0, nz=1), tim_layer("t", 0.016, 0.016), silicon_layer("l1", fp1, nz=1)),
                 PackageModel())


def test_toy_system_matches_dense():
    _, system = build_system(small_stack(), GridSpec(3, 3))
    cg, dense = solve_steady(system, rel_tol=1e-12), solve_dense(system)
    assert np.abs(cg.values - dense.values).max() <= 1e-6
    assert dense.residual <= 1e-10 * np.linalg.norm(system.P)


@pytest.mark.parametrize("seed", range(3))
def test_manufactured_spd_solution(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(50, 50))
    G = M @ M.T + 50 * np.eye(50)
    T_star = rng.uniform(300, 400, 50)
    system = raw_system(G, G @ T_star)
    assert np.abs(solve_dense(system).values - T_star).max() <= 1e-8
    assert np.abs(solve_steady(system, rel_tol=1e-14).values - T_star).max() <= 1e-8


def test_residual_norm_properties():
    _, system = build_system(small_stack(), GridSpec(3, 3))
    exact = solve_dense(system)
    assert residual_norm(system, exact) <= 1e-10 * np.linalg.norm(system.P)
    at_ambient = np.full(system.n, system.ambient)
    assert residual_norm(system, at_ambient) == pytest.approx(np.linalg.norm(system.source), rel=1e-12)
    i = 4
    bumped = exact.values.copy()
    bumped[i] += 1.0
    col = system.G[:, [i]].toarray().ravel()
    assert residual_norm(system, bumped) == pytest.approx(np.linalg.norm(col), rel=1e-8)
    with pytest.raises(ValueError):
        residual_norm(system, np.zeros(3))


def test_nonconvergence_raises():
    _, system = build_system(scenario("2d-corners").stack, GridSpec(16, 16))
    with pytest.raises(NonConvergence) as err:
        solve_steady(system, max_iter=2)
    assert err.value.iterations == 2
    assert default_max_iter(10000) == 5000


def test_invalid_inputs():
    with pytest.raises(ValueError):
        solve_steady(raw_system([[1.0]], [1.0]), rel_tol=0)
    with pytest.raises(SolverError):
        solve_steady(raw_system([[1.0, 2.0], [2.0, 1.0]], [1.0, 0.0]))
    with pytest.raises(SolverError):
        solve_dense(raw_system([[1.0, 2.0], [2.0, 1.0]], [1.0, 0.0]))
    with pytest.raises(SolverError):
        TemperatureField(np.array([np.nan]), 0, 0.0)


@pytest.fixture(scope="module")
def corner_system():
    return build_system(scenario("3d-indirect").stack, GridSpec(16, 16))


@pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
def test_linearity(corner_system, alpha):
    _, system = corner_system
    base = solve_steady(system).values - AMB
    scaled = solve_steady(system.with_source(alpha * system.source)).values - AMB
    assert np.abs(scaled - alpha * base).max() <= 1e-6 * np.abs(alpha * base).max()


def test_superposition(corner_system):
    mesh, system = corner_system
    names = [{b.name: b.power for b in l.floorplan.blocks if b.power > 0 and b.name.endswith("0")} or None
             for l in mesh.stack.layers]
    p1 = power_vector(mesh, [m if m is not None else {} for m in names], n=system.n)
    p2 = system.source - p1
    assert p1.sum() > 0 and p2.sum() > 0
    e1 = solve_steady(system.with_source(p1)).values - AMB
    e2 = solve_steady(system.with_source(p2)).values - AMB
    e = solve_steady(system).values - AMB
    assert np.abs(e - (e1 + e2)).max() <= 1e-6 * np.abs(e).max()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.floats(0.1, 20.0), st.floats(0.01, 5.0))
def test_monotone_and_maximum_principle(i, j, p, extra):
    blocks = (Block("a", i * 0.004, j * 0.004, 0.004, 0.004, p),
              Block("b", ((i + 2) % 4) * 0.004, ((j + 1) % 4) * 0.004, 0.004, 0.004, 1.0))
    stack = Stack((silicon_layer("l", fill_background(Floorplan(0.016, 0.016, blocks)), nz=2),), PackageModel())
    mesh, system = build_system(stack, GridSpec(8, 8))
    T = solve_dense(system).values
    assert T.min() >= AMB
    die = T[:mesh.n_cells]
    assert die.argmin() in set(system.face_cells.tolist())
    hotter = stack.layers[0].floorplan.with_powers({"a": p + extra})
    layer = replace(stack.layers[0], floorplan=hotter)
    _, sys2 = build_system(replace(stack, layers=(layer,)), GridSpec(8, 8))
    T2 = solve_dense(sys2).values
    assert np.all(T2 >= T - 1e-9)
