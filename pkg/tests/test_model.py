import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermstack.model import (
    Block, Floorplan, FloorplanError, GridSpec, Layer, Material, PackageModel, SILICON, Stack,
    check_floorplan, fill_background, silicon_layer, tim_layer, validate_floorplan,
)
from thermstack.scenarios import SCENARIO_IDS, scenario

DIE = 0.016


def kinds(violations):
    return sorted(v.kind for v in violations)


def test_corner_block_is_valid():
    fp = Floorplan(DIE, DIE, (Block("cpu0", 0.012, 0.0, 0.004, 0.004, 50.9),))
    assert validate_floorplan(fp) == []
    assert fp.blocks[0].area == pytest.approx(1.6e-5, rel=1e-12)


def test_identical_blocks_overlap():
    b = Block("a", 0.0, 0.0, 0.004, 0.004)
    fp = Floorplan(DIE, DIE, (b, Block("b", 0.0, 0.0, 0.004, 0.004)))
    (v,) = validate_floorplan(fp)
    assert v.kind == "overlap"
    assert v.blocks == ("a", "b")
    assert v.area == pytest.approx(1.6e-5)


def test_out_of_die():
    fp = Floorplan(DIE, DIE, (Block("a", 0.015, 0.0, 0.004, 0.004),))
    assert kinds(validate_floorplan(fp)) == ["out-of-die"]


def test_touching_edges_do_not_overlap():
    fp = Floorplan(DIE, DIE, tuple(Block(f"c{i}", i * 0.004, 0.006, 0.004, 0.004) for i in range(4)))
    assert validate_floorplan(fp) == []


def test_all_violation_kinds_reported_together():
    fp = Floorplan(DIE, DIE, (
        Block("a", 0.0, 0.0, 0.004, 0.004),
        Block("a", 0.01, 0.01, 0.004, 0.004),
        Block("z", 0.0, 0.0, 0.0, 0.004),
        Block("neg", 0.005, 0.0, 0.001, 0.001, -1.0),
        Block("far", 0.02, 0.0, 0.001, 0.001),
    ))
    assert kinds(validate_floorplan(fp)) == [
        "duplicate-name", "negative-power", "nonpositive-dimension", "out-of-die"]
    with pytest.raises(FloorplanError) as err:
        check_floorplan(fp)
    assert len(err.value.violations) == 4


def test_fill_empty_floorplan():
    out = fill_background(Floorplan(DIE, DIE))
    assert len(out.blocks) == 1
    (b,) = out.blocks
    assert b.is_background and b.power == 0
    assert (b.x, b.y, b.width, b.height) == (0.0, 0.0, DIE, DIE)


def test_fill_corner_block_area():
    fp = Floorplan(DIE, DIE, (Block("cpu0", 0.012, 0.0, 0.004, 0.004, 50.9),))
    out = fill_background(fp)
    bg = sum(b.area for b in out.blocks if b.is_background)
    assert bg == pytest.approx(0.000256 - 0.000016, rel=1e-12)
    assert validate_floorplan(out) == []


def test_fill_fully_covered_unchanged():
    fp = Floorplan(DIE, DIE, tuple(
        Block(f"t{i}{j}", i * 0.008, j * 0.008, 0.008, 0.008) for i in range(2) for j in range(2)))
    assert fill_background(fp) == fp


def test_fill_rejects_invalid():
    fp = Floorplan(DIE, DIE, (Block("a", 0.015, 0.0, 0.004, 0.004),))
    with pytest.raises(FloorplanError):
        fill_background(fp)


@pytest.mark.parametrize("sid", SCENARIO_IDS)
def test_scenario_floorplans_valid(sid):
    for layer in scenario(sid).stack.layers:
        assert validate_floorplan(layer.floorplan) == []


# Random valid floorplans: blocks on a coarse lattice so they never overlap.
lattice_blocks = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(1, 3), st.integers(1, 3)),
    max_size=8,
)


def _lattice_floorplan(cells, w=0.016, h=0.012):
    dx, dy = w / 8, h / 8
    taken, blocks = set(), []
    for i, (cx, cy, sw, sh) in enumerate(cells):
        sw, sh = min(sw, 8 - cx), min(sh, 8 - cy)
        fp_cells = {(cx + a, cy + b) for a in range(sw) for b in range(sh)}
        if fp_cells & taken:
            continue
        taken |= fp_cells
        blocks.append(Block(f"b{i}", cx * dx, cy * dy, sw * dx, sh * dy, float(i)))
    return Floorplan(w, h, tuple(blocks))


@settings(max_examples=100, deadline=None)
@given(lattice_blocks)
def test_fill_tiles_die_exactly(cells):
    fp = _lattice_floorplan(cells)
    out = fill_background(fp)
    assert sum(b.area for b in out.blocks) == pytest.approx(fp.area, rel=1e-12)
    assert validate_floorplan(out) == []
    assert out.blocks[:len(fp.blocks)] == fp.blocks


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(1, 6), st.integers(1, 6)),
                min_size=1, max_size=6), st.randoms())
def test_validation_order_independent(cells, rnd):
    blocks = [Block(f"b{i % 4}", x * 1e-3, y * 1e-3, w * 1e-3, h * 1e-3) for i, (x, y, w, h) in enumerate(cells)]
    shuffled = blocks[:]
    rnd.shuffle(shuffled)
    a = validate_floorplan(Floorplan(DIE, DIE, tuple(blocks)))
    b = validate_floorplan(Floorplan(DIE, DIE, tuple(shuffled)))
    assert sorted(map(str, a)) == sorted(map(str, b))


def test_type_invariants():
    with pytest.raises(ValueError):
        Material("x", 0.0)
    with pytest.raises(ValueError):
        Material("x", 1.0, -1.0)
    with pytest.raises(ValueError):
        Layer("l", SILICON, 0.0, Floorplan(DIE, DIE))
    with pytest.raises(ValueError):
        Layer("l", SILICON, 1e-4, Floorplan(DIE, DIE), nz=0)
    with pytest.raises(ValueError):
        PackageModel(convection_resistance=0.0)
    with pytest.raises(ValueError):
        PackageModel(attach_side="left")
    with pytest.raises(ValueError):
        Stack((), PackageModel())
    with pytest.raises(ValueError):
        Stack((silicon_layer("a", Floorplan(DIE, DIE)), tim_layer("b", 0.01, 0.01)), PackageModel())


def test_grid_spec():
    assert GridSpec.parse("64x32") == GridSpec(64, 32)
    assert str(GridSpec(8, 4)) == "8x4"
    for bad in ("1x4", "64", "axb", "0x0"):
        with pytest.raises(ValueError):
            GridSpec.parse(bad)


def test_with_powers():
    fp = Floorplan(DIE, DIE, (Block("a", 0, 0, 0.004, 0.004), Block("b", 0.004, 0, 0.004, 0.004, 2.0)))
    out = fp.with_powers({"a": 50.9})
    assert out.block("a").power == 50.9 and out.block("b").power == 2.0
    assert out.total_power == pytest.approx(52.9)
    with pytest.raises(KeyError):
        fp.with_powers({"nope": 1.0})
