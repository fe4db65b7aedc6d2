"""Text formats: floorplans, power maps, stack configs, reports and PPM maps."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import (
    Block, Floorplan, GridSpec, Layer, Material, PackageModel, Stack,
    fill_background, validate_floorplan,
)


class FormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _number(token: str, line: int, what: str, source: str | None = None) -> float:
    if not _NUMBER.match(token):
        raise FormatError(f"malformed number {token!r} for {what}", line, source)
    return float(token)


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def fmt_num(v: float) -> str:
    return f"{v:.17g}"


# ---------------------------------------------------------------- floorplans

def parse_floorplan(text: str, die_width: float = 0.0, die_height: float = 0.0,
                    source: str | None = None) -> Floorplan:
    """Parse ``<name> <width> <height> <left_x> <bottom_y>`` lines.

    Die dimensions are not part of the file; pass them in or attach them
    later with :meth:`Floorplan.with_die`.
    """
    blocks = []
    seen = set()
    for lineno, line in _data_lines(text):
        fields = line.split()
        if len(fields) != 5:
            raise FormatError(f"expected 5 fields, got {len(fields)}", lineno, source)
        name = fields[0]
        w, h, x, y = (_number(t, lineno, k, source) for t, k in zip(fields[1:], ("width", "height", "x", "y")))
        if name in seen:
            raise FormatError(f"duplicate block name {name!r}", lineno, source)
        if not (w > 0 and h > 0):
            raise FormatError(f"block {name!r} has nonpositive dimension {w}x{h}", lineno, source)
        seen.add(name)
        blocks.append(Block(name, x, y, w, h, 0.0))
    return Floorplan(die_width, die_height, tuple(blocks))


def write_floorplan(fp: Floorplan, include_background: bool = False) -> str:
    lines = ["# name width_m height_m left_x_m bottom_y_m"]
    for b in fp.blocks:
        if b.is_background and not include_background:
            continue
        lines.append(" ".join([b.name, fmt_num(b.width), fmt_num(b.height), fmt_num(b.x), fmt_num(b.y)]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- power maps

def parse_power(text: str, source: str | None = None) -> dict[str, float]:
    out: dict[str, float] = {}
    for lineno, line in _data_lines(text):
        fields = line.split()
        if len(fields) != 2:
            raise FormatError(f"expected '<name> <watts>', got {len(fields)} fields", lineno, source)
        name, value = fields[0], _number(fields[1], lineno, "power", source)
        if value < 0:
            raise FormatError(f"negative power {value} for {name!r}", lineno, source)
        if name in out:
            raise FormatError(f"duplicate power entry {name!r}", lineno, source)
        out[name] = value
    return out


def write_power(powers: dict[str, float]) -> str:
    return "".join(f"{name} {fmt_num(p)}\n" for name, p in powers.items())


# ---------------------------------------------------------------- stack config

DIE_KEYS = {"width", "height", "nx", "ny"}
PACKAGE_KEYS = {
    "ambient_K": "ambient",
    "convection_resistance_K_per_W": "convection_resistance",
    "spreader_thickness_m": "spreader_thickness",
    "spreader_k": "spreader_conductivity",
    "sink_thickness_m": "sink_base_thickness",
    "sink_k": "sink_conductivity",
    "attach_side": "attach_side",
    "spreader_width_m": "spreader_width",
    "interface_thickness_m": "interface_thickness",
    "interface_k": "interface_conductivity",
}
LAYER_KEYS = {"name", "material_k", "material_cv", "thickness_m", "nz", "floorplan", "power"}


@dataclass
class Section:
    name: str
    line: int
    items: dict[str, tuple[str, int]] = field(default_factory=dict)


def parse_sections(text: str, source: str | None = None) -> list[Section]:
    """Split INI-style text into sections, keeping repeats and line numbers."""
    sections: list[Section] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"malformed section header {raw.strip()!r}", lineno, source)
            sections.append(Section(line[1:-1].strip().lower(), lineno))
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if not sections:
            raise FormatError("key outside of any section", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        sec = sections[-1]
        if key in sec.items:
            raise FormatError(f"duplicate key {key!r} in [{sec.name}]", lineno, source)
        sec.items[key] = (value, lineno)
    return sections


def _check_keys(sec: Section, allowed: Iterable[str], source):
    for key, (_, lineno) in sec.items.items():
        if key not in allowed:
            raise FormatError(f"unknown key {key!r} in [{sec.name}]", lineno, source)


def _num_item(sec: Section, key: str, source, default=None) -> float:
    if key not in sec.items:
        if default is None:
            raise FormatError(f"[{sec.name}] is missing {key!r}", sec.line, source)
        return default
    value, lineno = sec.items[key]
    return _number(value, lineno, key, source)


def _int_item(sec: Section, key: str, source, default=None) -> int:
    v = _num_item(sec, key, source, default)
    if v != int(v):
        raise FormatError(f"{key} must be an integer, got {v}", sec.items[key][1], source)
    return int(v)


def _read_ref(base: Path, value: str, lineno: int, source) -> tuple[str, str]:
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    try:
        return str(path), path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", lineno, source) from exc


def parse_stack_config(text: str, base_dir: str | os.PathLike = ".", source: str | None = None,
                       extra_sections: Iterable[str] = (), check: bool = True) -> tuple[Stack, GridSpec]:
    """Build a (Stack, GridSpec) from config text.

    Floorplan and power paths are resolved relative to ``base_dir`` (the
    config file's directory).  Layers are listed bottom to top.  A layer
    without a floorplan is plain material; its ``nz`` defaults to 1,
    otherwise to 4.  With ``check=False`` floorplans are returned as read,
    neither validated nor background-filled.
    """
    base = Path(base_dir)
    sections = parse_sections(text, source)
    allowed = {"die", "package", "layer", *extra_sections}
    for sec in sections:
        if sec.name not in allowed:
            raise FormatError(f"unknown section [{sec.name}]", sec.line, source)
    dies = [s for s in sections if s.name == "die"]
    if len(dies) != 1:
        raise FormatError(f"expected exactly one [die] section, found {len(dies)}", None, source)
    die = dies[0]
    _check_keys(die, DIE_KEYS, source)
    width = _num_item(die, "width", source)
    height = _num_item(die, "height", source)
    try:
        grid = GridSpec(_int_item(die, "nx", source, 64), _int_item(die, "ny", source, 64))
    except ValueError as exc:
        raise FormatError(str(exc), die.line, source) from exc

    pkgs = [s for s in sections if s.name == "package"]
    if len(pkgs) > 1:
        raise FormatError("more than one [package] section", pkgs[1].line, source)
    pkg_kwargs = {}
    if pkgs:
        _check_keys(pkgs[0], PACKAGE_KEYS, source)
        for key, (value, lineno) in pkgs[0].items.items():
            attr = PACKAGE_KEYS[key]
            pkg_kwargs[attr] = value.lower() if attr == "attach_side" else _number(value, lineno, key, source)
    try:
        package = PackageModel(**pkg_kwargs)
    except ValueError as exc:
        raise FormatError(str(exc), pkgs[0].line if pkgs else None, source) from exc

    layer_secs = [s for s in sections if s.name == "layer"]
    if not layer_secs:
        raise FormatError("missing [layer] section", None, source)
    layers = []
    for i, sec in enumerate(layer_secs):
        _check_keys(sec, LAYER_KEYS, source)
        name = sec.items.get("name", (f"layer{i}", 0))[0]
        k = _num_item(sec, "material_k", source)
        cv = _num_item(sec, "material_cv", source, 1.75e6)
        thickness = _num_item(sec, "thickness_m", source)
        if "floorplan" in sec.items:
            value, lineno = sec.items["floorplan"]
            path, body = _read_ref(base, value, lineno, source)
            fp = parse_floorplan(body, width, height, source=path)
            nz_default = 4
        else:
            fp = Floorplan(width, height)
            nz_default = 1
        if "power" in sec.items:
            value, lineno = sec.items["power"]
            path, body = _read_ref(base, value, lineno, source)
            powers = parse_power(body, source=path)
            try:
                fp = fp.with_powers(powers)
            except KeyError as exc:
                raise FormatError(str(exc.args[0]), lineno, source) from exc
        if check:
            violations = validate_floorplan(fp)
            if violations:
                raise FormatError(f"layer {name}: invalid floorplan: " + "; ".join(map(str, violations)),
                                  sec.line, source)
            fp = fill_background(fp)
        try:
            layers.append(Layer(name, Material(name, k, cv), thickness, fp,
                                _int_item(sec, "nz", source, nz_default)))
        except ValueError as exc:
            raise FormatError(str(exc), sec.line, source) from exc
    return Stack(tuple(layers), package), grid


def load_stack_config(path: str | os.PathLike, **kwargs) -> tuple[Stack, GridSpec]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_stack_config(text, path.parent, source=str(path), **kwargs)


# ---------------------------------------------------------------- reports

CSV_COLUMNS = ("scope", "name", "min_K", "max_K", "avg_K")


def _csv_num(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_report(report, fmt: str = "json") -> str:
    """Serialize a :class:`~thermstack.analysis.ThermalReport` as ``json`` or ``csv``."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=1, allow_nan=False) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows():
        scope, name, lo, hi, avg = row
        w.writerow([scope, name, _csv_num(lo), _csv_num(hi), _csv_num(avg)])
    return buf.getvalue()


def read_report_json(text: str) -> dict:
    return json.loads(text)


# ---------------------------------------------------------------- colormap / PPM

COLOR_STOPS = (
    (0.0, (0, 0, 139)),      # dark blue
    (0.2, (0, 128, 255)),    # light blue
    (0.4, (0, 200, 0)),      # green
    (0.6, (255, 255, 0)),    # yellow
    (0.8, (255, 140, 0)),    # orange
    (1.0, (255, 0, 0)),      # red
)
_STOP_RGB = np.array([c for _, c in COLOR_STOPS], dtype=float)
_NSEG = len(COLOR_STOPS) - 1
_EPS = 1e-9


def colormap_lookup(t_norm: float) -> tuple[int, int, int]:
    """Map a normalized temperature to RGB by linear interpolation between stops.

    Inputs outside [0, 1] are clamped; channels are floored to integers.
    """
    t = float(t_norm)
    if math.isnan(t):
        raise ValueError("colormap_lookup got NaN")
    t = min(max(t, 0.0), 1.0)
    pos = t * _NSEG
    i = min(int(pos), _NSEG - 1)
    f = pos - i
    c = _STOP_RGB[i] + (_STOP_RGB[i + 1] - _STOP_RGB[i]) * f
    return tuple(int(math.floor(v + _EPS)) for v in c)


def colormap_array(t_norm: np.ndarray) -> np.ndarray:
    """Vectorized :func:`colormap_lookup`; returns uint8 array of shape ``t.shape + (3,)``."""
    t = np.asarray(t_norm, dtype=float)
    if np.isnan(t).any():
        raise ValueError("colormap got NaN")
    t = np.clip(t, 0.0, 1.0)
    pos = t * _NSEG
    i = np.minimum(pos.astype(np.int64), _NSEG - 1)
    f = (pos - i)[..., None]
    c = _STOP_RGB[i] + (_STOP_RGB[i + 1] - _STOP_RGB[i]) * f
    return np.floor(c + _EPS).astype(np.uint8)


def render_ppm(field2d, t_min: float | None = None, t_max: float | None = None) -> bytes:
    """Encode a (ny, nx) temperature grid as binary PPM.

    Row 0 of ``field2d`` is y = 0 (bottom of the die); the image is flipped
    so its first row is the top edge.  The range defaults to the field's
    own min and max.
    """
    a = np.asarray(field2d, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("render_ppm needs a non-empty 2D field")
    lo = float(a.min()) if t_min is None else float(t_min)
    hi = float(a.max()) if t_max is None else float(t_max)
    if not hi > lo:
        if t_min is None and t_max is None:
            hi = lo + 1.0  # flat field: render everything at the low end
        else:
            raise ValueError(f"t_max ({hi}) must exceed t_min ({lo})")
    rgb = colormap_array((a - lo) / (hi - lo))[::-1]
    ny, nx = a.shape
    return b"P6\n%d %d\n255\n" % (nx, ny) + rgb.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 image produced by :func:`render_ppm` into (rows, cols, 3) uint8."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    nx, ny = map(int, parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only maxval 255 is supported")
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != nx * ny * 3:
        raise ValueError("truncated PPM payload")
    return pix.reshape(ny, nx, 3)
