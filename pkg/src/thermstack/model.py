"""Geometry, materials, layer stacks and the package model.

Everything is SI: meters, watts, kelvin.  All types are frozen dataclasses;
helpers return new objects instead of mutating.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Literal

# Absolute overlap area below which two rectangles are considered touching.
OVERLAP_TOL = 1e-15
# Relative slack on the die boundary check (float sums such as 0.012 + 0.004).
EDGE_TOL = 1e-9

BACKGROUND_PREFIX = "_bg"


class FloorplanError(ValueError):
    """Raised when a floorplan is structurally invalid."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Material:
    name: str
    thermal_conductivity: float
    volumetric_heat_capacity: float = 1.75e6  # carried, unused in steady state

    def __post_init__(self):
        if not self.thermal_conductivity > 0:
            raise ValueError(f"material {self.name}: conductivity must be > 0")
        if not self.volumetric_heat_capacity > 0:
            raise ValueError(f"material {self.name}: heat capacity must be > 0")


SILICON = Material("silicon", 100.0, 1.75e6)
EPOXY_TIM = Material("tim", 4.0, 4.0e6)

SILICON_THICKNESS = 1.5e-4
TIM_THICKNESS = 2.2e-5


@dataclass(frozen=True)
class Block:
    name: str
    x: float
    y: float
    width: float
    height: float
    power: float = 0.0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def x2(self) -> float:
        return self.x + self.width

    @property
    def y2(self) -> float:
        return self.y + self.height

    @property
    def is_background(self) -> bool:
        return self.name.startswith(BACKGROUND_PREFIX)

    def overlap_area(self, other: "Block") -> float:
        w = min(self.x2, other.x2) - max(self.x, other.x)
        h = min(self.y2, other.y2) - max(self.y, other.y)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h


@dataclass(frozen=True)
class Floorplan:
    die_width: float
    die_height: float
    blocks: tuple[Block, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def area(self) -> float:
        return self.die_width * self.die_height

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    @property
    def total_power(self) -> float:
        return sum(b.power for b in self.blocks)

    def with_powers(self, powers: dict[str, float]) -> "Floorplan":
        """Return a copy with block powers taken from ``powers``.

        Blocks not named in ``powers`` keep their current power.  Naming a
        block that does not exist is an error.
        """
        unknown = set(powers) - set(self.names)
        if unknown:
            raise KeyError(f"power entries for unknown blocks: {sorted(unknown)}")
        blocks = tuple(replace(b, power=float(powers.get(b.name, b.power))) for b in self.blocks)
        return replace(self, blocks=blocks)

    def with_die(self, width: float, height: float) -> "Floorplan":
        return replace(self, die_width=width, die_height=height)


@dataclass(frozen=True)
class Layer:
    name: str
    material: Material
    thickness: float
    floorplan: Floorplan
    nz: int = 1

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"layer {self.name}: thickness must be > 0")
        if int(self.nz) != self.nz or self.nz < 1:
            raise ValueError(f"layer {self.name}: nz must be a positive integer")


@dataclass(frozen=True)
class PackageModel:
    """Heat removal path attached to one face of the stack.

    The die face couples through a thin interface into a copper spreader
    slab, the spreader into an isothermal heat-sink node through the sink
    base, and the sink node to ambient through ``convection_resistance``.
    A spreader wider than the die contributes an overhang rim along the
    die edges.
    """

    ambient: float = 318.15
    convection_resistance: float = 0.1
    spreader_thickness: float = 1.0e-3
    spreader_conductivity: float = 400.0
    sink_base_thickness: float = 6.9e-3
    sink_conductivity: float = 400.0
    attach_side: Literal["top", "bottom"] = "top"
    spreader_width: float = 0.03
    interface_thickness: float = 1.0e-5
    interface_conductivity: float = 4.0

    def __post_init__(self):
        if not self.ambient > 0:
            raise ValueError("ambient must be > 0 K")
        if not self.convection_resistance > 0:
            raise ValueError("convection_resistance must be > 0")
        for name in ("spreader_thickness", "sink_base_thickness", "interface_thickness", "spreader_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("spreader_conductivity", "sink_conductivity", "interface_conductivity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.attach_side not in ("top", "bottom"):
            raise ValueError(f"attach_side must be 'top' or 'bottom', got {self.attach_side!r}")


@dataclass(frozen=True)
class Stack:
    layers: tuple[Layer, ...]
    package: PackageModel = field(default_factory=PackageModel)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a stack needs at least one layer")
        w, h = self.die_width, self.die_height
        for layer in self.layers:
            fp = layer.floorplan
            if abs(fp.die_width - w) > EDGE_TOL * w or abs(fp.die_height - h) > EDGE_TOL * h:
                raise ValueError(
                    f"layer {layer.name}: die {fp.die_width}x{fp.die_height} "
                    f"differs from {w}x{h}"
                )

    @property
    def die_width(self) -> float:
        return self.layers[0].floorplan.die_width

    @property
    def die_height(self) -> float:
        return self.layers[0].floorplan.die_height

    @property
    def total_power(self) -> float:
        return sum(layer.floorplan.total_power for layer in self.layers)

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2 integers, got {self.nx}x{self.ny}")

    def __str__(self):
        return f"{self.nx}x{self.ny}"

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.lower().split("x")
        if len(parts) != 2:
            raise ValueError(f"grid must look like NXxNY, got {text!r}")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ValueError(f"grid must look like NXxNY, got {text!r}") from exc


@dataclass(frozen=True)
class Violation:
    kind: str  # "out-of-die" | "nonpositive-dimension" | "duplicate-name" | "overlap" | "negative-power"
    blocks: tuple[str, ...]
    detail: str
    area: float = 0.0

    def __str__(self):
        return f"{self.kind}: {', '.join(self.blocks)}: {self.detail}"


def validate_floorplan(fp: Floorplan) -> list[Violation]:
    """Return every violation in ``fp``; an empty list means the floorplan is valid.

    Pairs are reported with names sorted so the result does not depend on
    block order.
    """
    out: list[Violation] = []
    if not (fp.die_width > 0 and fp.die_height > 0):
        out.append(Violation("nonpositive-dimension", ("<die>",), f"die {fp.die_width}x{fp.die_height}"))
    seen: dict[str, int] = {}
    for b in fp.blocks:
        seen[b.name] = seen.get(b.name, 0) + 1
    for name in sorted(n for n, c in seen.items() if c > 1):
        out.append(Violation("duplicate-name", (name,), f"appears {seen[name]} times"))

    tx = EDGE_TOL * max(fp.die_width, 0.0)
    ty = EDGE_TOL * max(fp.die_height, 0.0)
    for b in sorted(fp.blocks, key=_block_key):
        if not (b.width > 0 and b.height > 0):
            out.append(Violation("nonpositive-dimension", (b.name,), f"size {b.width}x{b.height}"))
            continue
        if b.power < 0:
            out.append(Violation("negative-power", (b.name,), f"power {b.power}"))
        if b.x < -tx or b.y < -ty or b.x2 > fp.die_width + tx or b.y2 > fp.die_height + ty:
            out.append(Violation(
                "out-of-die", (b.name,),
                f"[{b.x}, {b.x2}]x[{b.y}, {b.y2}] outside [0, {fp.die_width}]x[0, {fp.die_height}]",
            ))

    ordered = sorted((b for b in fp.blocks if b.width > 0 and b.height > 0), key=_block_key)
    for a, b in itertools.combinations(ordered, 2):
        area = a.overlap_area(b)
        if area > OVERLAP_TOL:
            out.append(Violation("overlap", (a.name, b.name), f"overlap area {area:.6g} m^2", area))
    return out


def _block_key(b: Block):
    return (b.name, b.x, b.y, b.width, b.height, b.power)


def check_floorplan(fp: Floorplan) -> Floorplan:
    violations = validate_floorplan(fp)
    if violations:
        raise FloorplanError(violations)
    return fp


def fill_background(fp: Floorplan) -> Floorplan:
    """Tile the die area not covered by blocks with zero-power ``_bg<k>`` blocks.

    The uncovered region is cut along every block edge into elementary
    rectangles, which are merged along rows and then between rows with
    identical spans.
    """
    check_floorplan(fp)
    blocks = [b for b in fp.blocks]
    xs = sorted({0.0, fp.die_width, *(_clip(b.x, fp.die_width) for b in blocks),
                 *(_clip(b.x2, fp.die_width) for b in blocks)})
    ys = sorted({0.0, fp.die_height, *(_clip(b.y, fp.die_height) for b in blocks),
                 *(_clip(b.y2, fp.die_height) for b in blocks)})
    xs = _dedupe(xs, EDGE_TOL * fp.die_width)
    ys = _dedupe(ys, EDGE_TOL * fp.die_height)

    # row spans: list of (x0, x1) uncovered intervals for each elementary row
    rows = []
    for j in range(len(ys) - 1):
        y0, y1 = ys[j], ys[j + 1]
        spans = []
        start = None
        for i in range(len(xs) - 1):
            x0, x1 = xs[i], xs[i + 1]
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            covered = any(b.x < cx < b.x2 and b.y < cy < b.y2 for b in blocks)
            if not covered and start is None:
                start = x0
            elif covered and start is not None:
                spans.append((start, x0))
                start = None
        if start is not None:
            spans.append((start, xs[-1]))
        rows.append((y0, y1, spans))

    # merge vertically: a span stays open while consecutive rows repeat it
    top = ys[-1]
    closed = []
    open_spans = {}
    for y0, y1, spans in rows:
        current = set(spans)
        for span in list(open_spans):
            if span not in current:
                closed.append((span[0], open_spans.pop(span), span[1], y0))
        for span in spans:
            open_spans.setdefault(span, y0)
    for span, ystart in open_spans.items():
        closed.append((span[0], ystart, span[1], top))
    closed.sort(key=lambda r: (r[1], r[0]))

    bg = tuple(
        Block(f"{BACKGROUND_PREFIX}{k}", x0, y0, x1 - x0, y1 - y0, 0.0)
        for k, (x0, y0, x1, y1) in enumerate(closed)
    )
    return replace(fp, blocks=tuple(blocks) + bg)


def _clip(v: float, hi: float) -> float:
    return min(max(v, 0.0), hi)


def _dedupe(values: list[float], tol: float) -> list[float]:
    out = [values[0]]
    for v in values[1:]:
        if v - out[-1] > tol:
            out.append(v)
    out[-1] = values[-1]
    return out


def silicon_layer(name: str, floorplan: Floorplan, thickness: float = SILICON_THICKNESS, nz: int = 4) -> Layer:
    return Layer(name, SILICON, thickness, floorplan, nz)


def tim_layer(name: str, die_width: float, die_height: float, thickness: float = TIM_THICKNESS, nz: int = 1) -> Layer:
    return Layer(name, EPOXY_TIM, thickness, fill_background(Floorplan(die_width, die_height)), nz)
