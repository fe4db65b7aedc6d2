"""Thermal-aware placement of processor blocks on a lattice.

Blocks have the same material as the background, so the conductance
matrix does not depend on where they sit.  :class:`Evaluator` exploits
this: it solves once per (block shape, layer, lattice slot) for a unit
power response and scores any placement by superposition.  The full
pipeline (:func:`peak_objective`) is kept for re-scoring and checks.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .mesher import build_system, discretize, power_vector
from .model import Block, Floorplan, GridSpec, Stack, fill_background
from .pipeline import ensure_filled, solve_stack
from .solver import solve_steady

MAX_CANDIDATES = 100_000
TIE_TOL = 1e-9
BASIS_REL_TOL = 1e-12


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class PlacementBlock:
    name: str
    width: float
    height: float
    power: float
    layer: int = 0

    @property
    def shape(self) -> tuple[float, float, float]:
        return (self.width, self.height, self.power)


class Slot(NamedTuple):
    layer: int
    x: float
    y: float


Placement = tuple[Slot, ...]


@dataclass(frozen=True)
class PlacementProblem:
    """Blocks to place on ``movable_layers`` of ``stack`` at multiples of ``step``.

    The floorplans of the template stack are ignored; each evaluation
    builds fresh floorplans holding only the placed blocks.
    """

    stack: Stack
    blocks: tuple[PlacementBlock, ...]
    step: float
    grid: GridSpec = GridSpec(32, 32)
    final_grid: GridSpec | None = GridSpec(64, 64)
    movable_layers: tuple[int, ...] = (0,)
    fixed_layer_counts: bool = False
    rescore_top: int = 5

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "movable_layers", tuple(self.movable_layers))
        if not self.step > 0:
            raise PlacementError("step must be > 0")
        for extent in (self.stack.die_width, self.stack.die_height):
            if abs(extent / self.step - round(extent / self.step)) > 1e-9:
                raise PlacementError(f"step {self.step} does not divide die extent {extent}")
        for b in self.blocks:
            if b.width > self.stack.die_width or b.height > self.stack.die_height:
                raise PlacementError(f"block {b.name} does not fit on the die")
            if b.layer not in self.movable_layers:
                raise PlacementError(f"block {b.name} starts on non-movable layer {b.layer}")

    @property
    def nlat(self) -> tuple[int, int]:
        return (round(self.stack.die_width / self.step), round(self.stack.die_height / self.step))

    def positions(self, block: PlacementBlock) -> list[tuple[int, int]]:
        """Lattice indices (i, j) at which ``block`` fits inside the die."""
        nx, ny = self.nlat
        xs = [i for i in range(nx + 1) if i * self.step + block.width <= self.stack.die_width * (1 + 1e-12)]
        ys = [j for j in range(ny + 1) if j * self.step + block.height <= self.stack.die_height * (1 + 1e-12)]
        return [(i, j) for j in ys for i in xs]


def to_index(problem: PlacementProblem, slot: Slot) -> tuple[int, int, int]:
    return (slot.layer, round(slot.y / problem.step), round(slot.x / problem.step))


def from_index(problem: PlacementProblem, layer: int, j: int, i: int) -> Slot:
    return Slot(layer, i * problem.step, j * problem.step)


def _rect(problem, block, slot) -> Block:
    return Block(block.name, slot.x, slot.y, block.width, block.height, block.power)


def is_valid(problem: PlacementProblem, placement: Placement) -> bool:
    if len(placement) != len(problem.blocks):
        return False
    W, H = problem.stack.die_width, problem.stack.die_height
    rects = []
    for b, s in zip(problem.blocks, placement):
        if s.layer not in problem.movable_layers:
            return False
        r = _rect(problem, b, s)
        if r.x < -1e-12 or r.y < -1e-12 or r.x2 > W * (1 + 1e-12) or r.y2 > H * (1 + 1e-12):
            return False
        rects.append((s.layer, r))
    for (la, a), (lb, b) in itertools.combinations(rects, 2):
        if la == lb and a.overlap_area(b) > 1e-15:
            return False
    if problem.fixed_layer_counts:
        if Counter(s.layer for s in placement) != Counter(b.layer for b in problem.blocks):
            return False
    return True


def placement_stack(problem: PlacementProblem, placement: Placement) -> Stack:
    if not is_valid(problem, placement):
        raise PlacementError(f"invalid placement {placement}")
    layers = []
    for li, layer in enumerate(problem.stack.layers):
        blocks = tuple(_rect(problem, b, s) for b, s in zip(problem.blocks, placement) if s.layer == li)
        fp = fill_background(Floorplan(problem.stack.die_width, problem.stack.die_height, blocks))
        layers.append(replace(layer, floorplan=fp))
    return replace(problem.stack, layers=tuple(layers))


def peak_objective(problem: PlacementProblem, placement: Placement, grid: GridSpec | None = None) -> float:
    """Global peak temperature of ``placement`` through the full solve pipeline."""
    sol = solve_stack(placement_stack(problem, placement), grid or problem.grid)
    return float(sol.field.values[:sol.mesh.n_cells].max())


def placement_hash(placement: Placement) -> str:
    text = ";".join(f"{s.layer}:{s.x:.12g}:{s.y:.12g}" for s in placement)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


class Evaluator:
    """Peak-temperature objective by superposition of unit-power responses."""

    def __init__(self, problem: PlacementProblem, grid: GridSpec | None = None):
        self.problem = problem
        self.grid = grid or problem.grid
        base = replace(problem.stack, layers=tuple(
            replace(l, floorplan=fill_background(Floorplan(problem.stack.die_width, problem.stack.die_height)))
            for l in problem.stack.layers))
        self.mesh, self.system = build_system(base, self.grid)
        self.ambient = problem.stack.package.ambient
        self._cache: dict[tuple, np.ndarray] = {}
        self.evaluations = 0

    def response(self, block: PlacementBlock, slot: Slot) -> np.ndarray:
        """Excess temperature over the die cells for 1 W in ``block`` at ``slot``."""
        key = (block.width, block.height, to_index(self.problem, slot))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        unit = replace(block, power=1.0)
        fp = fill_background(Floorplan(self.problem.stack.die_width, self.problem.stack.die_height,
                                       (_rect(self.problem, unit, slot),)))
        layers = [replace(l, floorplan=fp if li == slot.layer else l.floorplan)
                  for li, l in enumerate(self.mesh.stack.layers)]
        stack = replace(self.mesh.stack, layers=tuple(layers))
        mesh = discretize(stack, self.grid)
        src = power_vector(mesh, n=self.system.n)
        field_ = solve_steady(self.system.with_source(src), BASIS_REL_TOL)
        resp = field_.values[:self.mesh.n_cells] - self.ambient
        self._cache[key] = resp
        return resp

    def __call__(self, placement: Placement) -> float:
        if not self.problem.blocks:
            return self.ambient
        self.evaluations += 1
        total = None
        for b, s in zip(self.problem.blocks, placement):
            if b.power == 0:
                continue
            r = b.power * self.response(b, s)
            total = r if total is None else total + r
        if total is None:
            return self.ambient
        return self.ambient + float(total.max())


# ---------------------------------------------------------------- symmetry

def _symmetries(problem: PlacementProblem):
    """Lattice maps (i, j, w_cells, h_cells) -> (i', j') of the die's symmetry group that keep every block on the lattice."""
    nx, ny = problem.nlat
    step = problem.step
    sizes = [(b.width / step, b.height / step) for b in problem.blocks]
    on_lattice = all(abs(w - round(w)) < 1e-9 and abs(h - round(h)) < 1e-9 for w, h in sizes)
    square_blocks = all(abs(b.width - b.height) < 1e-15 for b in problem.blocks)
    maps = [lambda i, j, w, h: (i, j)]
    if not on_lattice:
        return maps
    maps += [
        lambda i, j, w, h: (nx - i - w, j),
        lambda i, j, w, h: (i, ny - j - h),
        lambda i, j, w, h: (nx - i - w, ny - j - h),
    ]
    if nx == ny and square_blocks:
        maps += [
            lambda i, j, w, h: (j, i),
            lambda i, j, w, h: (ny - j - h, i),
            lambda i, j, w, h: (j, nx - i - w),
            lambda i, j, w, h: (ny - j - h, nx - i - w),
        ]
    return maps


def _classes(problem: PlacementProblem) -> list[int]:
    """Class id per block; blocks with identical shape and power are interchangeable."""
    ids: dict[tuple, int] = {}
    return [ids.setdefault(b.shape, len(ids)) for b in problem.blocks]


def canonical_key(problem: PlacementProblem, placement: Placement, maps=None, classes=None) -> tuple:
    """Lexicographically least (class, layer, y, x) description over the symmetry orbit."""
    maps = maps or _symmetries(problem)
    classes = classes or _classes(problem)
    step = problem.step
    base = [(c, to_index(problem, s), round(b.width / step), round(b.height / step))
            for c, s, b in zip(classes, placement, problem.blocks)]
    best = None
    for m in maps:
        key = []
        for c, (layer, j, i), w, h in base:
            i2, j2 = m(i, j, w, h)
            key.append((c, layer, j2, i2))
        key = tuple(sorted(key))
        if best is None or key < best:
            best = key
    return best


def from_key(problem: PlacementProblem, key: tuple) -> Placement:
    classes = _classes(problem)
    pools: dict[int, list] = {}
    for c, layer, j, i in key:
        pools.setdefault(c, []).append(from_index(problem, layer, j, i))
    return tuple(pools[c].pop(0) for c in classes)


# ---------------------------------------------------------------- exhaustive

@dataclass
class SearchResult:
    best: Placement
    objective: float          # on problem.final_grid (or problem.grid without one)
    coarse_objective: float   # on problem.grid
    evaluated: list[tuple[Placement, float]] = field(default_factory=list)
    trace: "SearchTrace | None" = None


def _rescore(problem: PlacementProblem, ranked: list[tuple[float, tuple, Placement]]):
    """Re-score the best few candidates on the final grid; returns (placement, final, coarse)."""
    top = ranked[:max(1, problem.rescore_top)]
    if problem.final_grid is None:
        obj, _, pl = top[0]
        return pl, obj, obj
    rescored = []
    for coarse, key, pl in top:
        rescored.append((peak_objective(problem, pl, problem.final_grid), key, pl, coarse))
    best_final = min(r[0] for r in rescored)
    final, key, pl, coarse = min((r for r in rescored if r[0] <= best_final + TIE_TOL), key=lambda r: r[1])
    return pl, final, coarse


def candidate_count(problem: PlacementProblem) -> int:
    """Upper bound on raw placements (before overlap and symmetry filtering)."""
    classes = _classes(problem)
    total = 1
    for c, n in Counter(classes).items():
        blk = problem.blocks[classes.index(c)]
        nslots = len(problem.positions(blk)) * len(problem.movable_layers)
        total *= math.comb(nslots, n)
    return total


def enumerate_placements(problem: PlacementProblem):
    """Yield one valid placement per symmetry orbit, with its canonical key."""
    classes = _classes(problem)
    maps = _symmetries(problem)
    bound = candidate_count(problem)
    if bound / len(maps) > MAX_CANDIDATES:
        raise PlacementError(
            f"about {bound // len(maps)} candidates after symmetry reduction exceeds {MAX_CANDIDATES}"
        )
    members = {}
    for bi, c in enumerate(classes):
        members.setdefault(c, []).append(bi)
    choices = []
    for c, idxs in members.items():
        blk = problem.blocks[idxs[0]]
        slots = [from_index(problem, layer, j, i)
                 for layer in problem.movable_layers for i, j in problem.positions(blk)]
        slots.sort(key=lambda s: to_index(problem, s))
        choices.append((idxs, list(itertools.combinations(slots, len(idxs)))))
    seen = set()
    for combo in itertools.product(*(ch for _, ch in choices)):
        slots = [None] * len(problem.blocks)
        for (idxs, _), chosen in zip(choices, combo):
            for bi, s in zip(idxs, chosen):
                slots[bi] = s
        placement = tuple(slots)
        if not is_valid(problem, placement):
            continue
        key = canonical_key(problem, placement, maps, classes)
        if key in seen:
            continue
        seen.add(key)
        yield key, from_key(problem, key)


def optimize_exhaustive(problem: PlacementProblem, evaluator: Evaluator | None = None) -> SearchResult:
    """Score every lattice placement modulo die symmetry; ties go to the least (layer, y, x) key."""
    ev = evaluator or Evaluator(problem)
    if not problem.blocks:
        return SearchResult((), ev.ambient, ev.ambient, [])
    scored = [(ev(pl), key, pl) for key, pl in enumerate_placements(problem)]
    if not scored:
        raise PlacementError("no valid placement exists")
    best = min(s[0] for s in scored)
    # near-ties with the optimum are ordered by key alone
    ranked = sorted(scored, key=lambda s: (s[0] if s[0] > best + TIE_TOL else best, s[1]))
    pl, final, coarse = _rescore(problem, ranked)
    return SearchResult(pl, final, coarse, [(p, o) for o, _, p in scored])


# ---------------------------------------------------------------- annealing

class Schedule(NamedTuple):
    t0: float = 20.0
    cooling: float = 0.9
    epochs: int = 50
    moves_per_epoch: int = 40


class TraceEntry(NamedTuple):
    iteration: int
    placement_hash: str
    objective: float
    accepted: bool
    best: float


@dataclass
class SearchTrace:
    seed: int
    entries: list[TraceEntry] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [f"# seed {self.seed}", "iteration,placement_hash,objective_K,accepted,best_K"]
        for e in self.entries:
            lines.append(f"{e.iteration},{e.placement_hash},{e.objective:.9f},{int(e.accepted)},{e.best:.9f}")
        return "\n".join(lines) + "\n"


def initial_placement(problem: PlacementProblem) -> Placement:
    """Greedy first fit: each block takes the first free lattice slot on its own layer."""
    placed: list[Slot] = []
    for bi, b in enumerate(problem.blocks):
        for i, j in problem.positions(b):
            s = from_index(problem, b.layer, j, i)
            trial = tuple(placed) + (s,)
            sub = replace(problem, blocks=problem.blocks[:bi + 1], fixed_layer_counts=False)
            if is_valid(sub, trial):
                placed.append(s)
                break
        else:
            raise PlacementError(f"no valid initial position for block {b.name}")
    return tuple(placed)


def _propose(problem: PlacementProblem, placement: Placement, rng: np.random.Generator, classes) -> Placement:
    kinds = ["translate"]
    if len(set(classes)) > 1:
        kinds.append("swap")
    if len(problem.movable_layers) > 1 and not problem.fixed_layer_counts:
        kinds.append("layer")
    kind = kinds[int(rng.integers(len(kinds)))]
    pl = list(placement)
    n = len(pl)
    if kind == "translate":
        bi = int(rng.integers(n))
        dx, dy = ((1, 0), (-1, 0), (0, 1), (0, -1))[int(rng.integers(4))]
        s = pl[bi]
        pl[bi] = Slot(s.layer, s.x + dx * problem.step, s.y + dy * problem.step)
    elif kind == "swap":
        a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
        pl[a], pl[b] = pl[b], pl[a]
    else:
        bi = int(rng.integers(n))
        others = [l for l in problem.movable_layers if l != pl[bi].layer]
        layer = others[int(rng.integers(len(others)))]
        pl[bi] = Slot(layer, pl[bi].x, pl[bi].y)
    # snap to lattice so repeated float steps cannot drift
    return tuple(from_index(problem, *to_index(problem, s)) for s in pl)


def optimize_anneal(problem: PlacementProblem, seed: int = 0, schedule: Schedule = Schedule(),
                    evaluator: Evaluator | None = None, start: Placement | None = None,
                    max_tries: int = 200) -> SearchResult:
    """Metropolis annealing over translate / swap / layer moves; deterministic for a seed."""
    ev = evaluator or Evaluator(problem)
    rng = np.random.default_rng(seed)
    classes = _classes(problem)
    current = start if start is not None else initial_placement(problem)
    if not is_valid(problem, current):
        raise PlacementError("initial placement is invalid")
    cur_obj = ev(current)
    best, best_obj = current, cur_obj
    trace = SearchTrace(seed)
    trace.entries.append(TraceEntry(0, placement_hash(current), cur_obj, True, best_obj))
    pool = {canonical_key(problem, current): (cur_obj, current)}
    if not problem.blocks:
        return SearchResult(current, cur_obj, cur_obj, [], trace)
    temp = schedule.t0
    it = 0
    for _ in range(schedule.epochs):
        for _ in range(schedule.moves_per_epoch):
            for _ in range(max_tries):
                cand = _propose(problem, current, rng, classes)
                if is_valid(problem, cand):
                    break
            else:
                continue
            it += 1
            obj = ev(cand)
            delta = obj - cur_obj
            accept = delta <= 0 or rng.random() < math.exp(-delta / temp)
            if accept:
                current, cur_obj = cand, obj
            if obj < best_obj:
                best, best_obj = cand, obj
            pool.setdefault(canonical_key(problem, cand), (obj, cand))
            trace.entries.append(TraceEntry(it, placement_hash(cand), obj, accept, best_obj))
        temp *= schedule.cooling
    ranked = sorted(((o, k, p) for k, (o, p) in pool.items()), key=lambda s: (s[0], s[1]))
    pl, final, coarse = _rescore(problem, ranked)
    return SearchResult(pl, final, coarse, [], trace)


# ---------------------------------------------------------------- helpers

def min_pairwise_distance(problem: PlacementProblem, placement: Placement) -> float:
    """Smallest center-to-center lateral distance between blocks on the same layer (inf if none)."""
    best = math.inf
    for (a, sa), (b, sb) in itertools.combinations(zip(problem.blocks, placement), 2):
        if sa.layer != sb.layer:
            continue
        d = math.hypot(sa.x + a.width / 2 - sb.x - b.width / 2, sa.y + a.height / 2 - sb.y - b.height / 2)
        best = min(best, d)
    return best


def vertical_overlap(problem: PlacementProblem, placement: Placement) -> float:
    """Total footprint overlap area between blocks on different layers."""
    total = 0.0
    for (a, sa), (b, sb) in itertools.combinations(zip(problem.blocks, placement), 2):
        if sa.layer != sb.layer:
            total += _rect(problem, a, sa).overlap_area(_rect(problem, b, sb))
    return total


def floorplans_for(problem: PlacementProblem, placement: Placement) -> dict[int, Floorplan]:
    out = {}
    for li in problem.movable_layers:
        blocks = tuple(_rect(problem, b, s) for b, s in zip(problem.blocks, placement) if s.layer == li)
        out[li] = Floorplan(problem.stack.die_width, problem.stack.die_height, blocks)
    return out


def problem_from_stack(stack: Stack, step: float, movable_layers: Sequence[int] | None = None,
                       **kwargs) -> PlacementProblem:
    """Placement problem whose blocks are the non-background blocks of ``stack``."""
    blocks = []
    for li, layer in enumerate(stack.layers):
        for b in layer.floorplan.blocks:
            if not b.is_background:
                blocks.append(PlacementBlock(b.name, b.width, b.height, b.power, li))
    if movable_layers is None:
        movable_layers = sorted({b.layer for b in blocks}) or [0]
    return PlacementProblem(ensure_filled(stack), tuple(blocks), step, movable_layers=tuple(movable_layers), **kwargs)


def processor_problem(layers: int = 1, fixed_layer_counts: bool = False, **kwargs) -> PlacementProblem:
    """Four 4 mm, 50.9 W processors on the 16 mm die; ``layers`` is 1 (2D) or 3 (Si/TIM/Si)."""
    from .scenarios import DIE, PROC, PROC_POWER, scenario

    if layers == 1:
        stack = scenario("2d-corners").stack
        blocks = tuple(PlacementBlock(f"cpu{i}", PROC, PROC, PROC_POWER, 0) for i in range(4))
        movable = (0,)
    elif layers == 3:
        stack = scenario("3d-indirect").stack
        blocks = tuple(PlacementBlock(f"cpu{i}", PROC, PROC, PROC_POWER, 0 if i < 2 else 2) for i in range(4))
        movable = (0, 2)
    else:
        raise ValueError("layers must be 1 or 3")
    return PlacementProblem(stack, blocks, PROC, movable_layers=movable, fixed_layer_counts=fixed_layer_counts,
                            **kwargs)


OPTIMIZE_KEYS = {"step_m", "method", "seed", "t0_K", "cooling", "epochs", "moves_per_epoch",
                 "objective_grid", "final_grid", "fixed_layer_counts", "movable_layers"}


@dataclass(frozen=True)
class ProblemConfig:
    problem: PlacementProblem
    method: str = "anneal"
    seed: int = 0
    schedule: Schedule = Schedule()


def load_problem(path) -> ProblemConfig:
    """Read a stack config with an ``[optimize]`` section.

    The blocks in the layer floorplans are the blocks to place; their file
    positions serve as the annealer's starting placement.
    """
    from pathlib import Path

    from .formats import FormatError, _number, parse_sections, parse_stack_config

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    stack, _grid = parse_stack_config(text, path.parent, source=str(path), extra_sections=("optimize",))
    opts = [s for s in parse_sections(text, str(path)) if s.name == "optimize"]
    if len(opts) != 1:
        raise FormatError("expected exactly one [optimize] section", None, str(path))
    sec = opts[0]
    items = {}
    for key, (value, lineno) in sec.items.items():
        if key not in OPTIMIZE_KEYS:
            raise FormatError(f"unknown key {key!r} in [optimize]", lineno, str(path))
        items[key] = (value, lineno)

    def num(key, default):
        if key not in items:
            return default
        value, lineno = items[key]
        return _number(value, lineno, key, str(path))

    if "step_m" not in items:
        raise FormatError("[optimize] is missing 'step_m'", sec.line, str(path))
    kwargs = {}
    try:
        if "objective_grid" in items:
            kwargs["grid"] = GridSpec.parse(items["objective_grid"][0])
        if "final_grid" in items:
            value = items["final_grid"][0]
            kwargs["final_grid"] = None if value.lower() == "none" else GridSpec.parse(value)
    except ValueError as exc:
        raise FormatError(str(exc), sec.line, str(path)) from exc
    if "fixed_layer_counts" in items:
        kwargs["fixed_layer_counts"] = items["fixed_layer_counts"][0].lower() in ("1", "true", "yes")
    movable = None
    if "movable_layers" in items:
        movable = [int(v) for v in items["movable_layers"][0].replace(",", " ").split()]
    method = items.get("method", ("anneal", 0))[0].lower()
    if method not in ("anneal", "exhaustive"):
        raise FormatError(f"unknown method {method!r}", items["method"][1], str(path))
    try:
        problem = problem_from_stack(stack, num("step_m", None), movable, **kwargs)
    except PlacementError as exc:
        raise FormatError(str(exc), sec.line, str(path)) from exc
    schedule = Schedule(num("t0_K", 20.0), num("cooling", 0.9), int(num("epochs", 50)),
                        int(num("moves_per_epoch", 40)))
    return ProblemConfig(problem, method, int(num("seed", 0)), schedule)


def start_placement(problem: PlacementProblem) -> Placement | None:
    """Placement read from the problem's own floorplans, if it is a valid lattice placement."""
    slots = []
    for b in problem.blocks:
        blk = problem.stack.layers[b.layer].floorplan.block(b.name)
        slot = Slot(b.layer, blk.x, blk.y)
        snapped = from_index(problem, *to_index(problem, slot))
        if abs(snapped.x - slot.x) > 1e-12 or abs(snapped.y - slot.y) > 1e-12:
            return None
        slots.append(snapped)
    placement = tuple(slots)
    return placement if is_valid(problem, placement) else None
