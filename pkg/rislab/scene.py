"""
Declarative enclosure description and its realization into dipole lists.

Geometry is in wavelengths at the center frequency. Walls are fences of
environment dipoles spaced lambda/4, the RIS elements are single dipoles whose
resonance frequency encodes their bit, and each scattering object is a small
dipole cluster moving along one closed trajectory.
"""
import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import ValidationError

from .errors import PlacementError, SceneFormatError, ShapeMismatchError
from .labels import (
    COLLISION_TOL,
    ENVIRONMENT_PROPS,
    FENCE_SPACING,
    RIS_CHI,
    RIS_GAMMA_L,
    RIS_STATE_MAP,
    ROLE_BS,
    ROLE_OBJECT,
    ROLE_RIS,
    ROLE_SENSE,
    ROLE_UE,
    ROLE_WALL,
    TRANSCEIVER_PROPS,
)
from .schemas import DipoleProperties, FrequencyGrid
from .wavesim import SceneInstance

Point = tuple[float, float]

SCENE_HEADER = "# rislab scene v1"

TRANSCEIVER = DipoleProperties.of(TRANSCEIVER_PROPS)
ENVIRONMENT = DipoleProperties.of(ENVIRONMENT_PROPS)


# ============================================================
# CONFIGURATION / STATE
# ============================================================

@dataclass(frozen=True)
class RISConfig:
    bits: tuple[int, ...]
    state_map: dict[int, float] = field(default_factory=lambda: dict(RIS_STATE_MAP), compare=False)

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ShapeMismatchError(f"RIS bits must be 0/1 (got {self.bits})")

    @classmethod
    def zeros(cls, n_ris: int) -> "RISConfig":
        return cls(bits=(0,) * n_ris)

    @classmethod
    def from_string(cls, text: str) -> "RISConfig":
        if any(ch not in "01" for ch in text):
            raise ShapeMismatchError(f"RIS bitstring must contain only 0/1 (got {text!r})")
        return cls(bits=tuple(int(ch) for ch in text))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def resonances(self) -> list[float]:
        return [self.state_map[b] for b in self.bits]


@dataclass(frozen=True)
class SOState:
    """
    Path parameter of every scattering object. Any finite value is accepted;
    placement wraps it modulo 1 into [0, 1), so t and t + 1 realize the same
    scene. Sampled states always lie in [0, 1).
    """

    t: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.t):
            raise ShapeMismatchError("SO path parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.t, dtype=np.float64)


# ============================================================
# TEMPLATE
# ============================================================

@dataclass(frozen=True)
class UEGrid:
    x0: float
    y0: float
    x1: float
    y1: float
    nx: int
    ny: int

    def sites(self) -> np.ndarray:
        # site index = iy * nx + ix
        xs = np.linspace(self.x0, self.x1, self.nx) if self.nx > 1 else np.array([self.x0])
        ys = np.linspace(self.y0, self.y1, self.ny) if self.ny > 1 else np.array([self.y0])
        return np.array([(x, y) for y in ys for x in xs], dtype=np.float64)


@dataclass(frozen=True)
class ObjectSpec:
    props: DipoleProperties
    offsets: tuple[Point, ...]
    phase: float = 0.0


@dataclass(frozen=True)
class SceneTemplate:
    grid: FrequencyGrid
    bs: Point
    ue_grid: UEGrid
    walls: tuple[tuple[float, float, float, float], ...]
    ris_sites: tuple[Point, ...]
    sense_idx: tuple[int, ...]
    objects: tuple[ObjectSpec, ...]
    trajectory: tuple[Point, ...]

    @property
    def n_ris(self) -> int:
        return len(self.ris_sites)

    @property
    def s_ris(self) -> int:
        return len(self.sense_idx)

    @property
    def n_obj(self) -> int:
        return len(self.objects)

    @property
    def ue_sites(self) -> np.ndarray:
        return self.ue_grid.sites()

    def site_index(self, u) -> int:
        sites = self.ue_sites
        d = np.hypot(sites[:, 0] - u[0], sites[:, 1] - u[1])
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise PlacementError(f"position {tuple(u)} is not a UE site of the template")
        return i


# ============================================================
# GEOMETRY
# ============================================================

def build_fence(a: Point, b: Point, spacing: float, props: DipoleProperties) -> list[tuple[Point, DipoleProperties]]:
    """Dipoles from a to b every `spacing`, endpoint b always included."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    length = math.hypot(bx - ax, by - ay)
    if length == 0.0:
        raise PlacementError("fence endpoints coincide")
    if not spacing > 0:
        raise PlacementError("fence spacing must be positive")
    steps = int(math.floor(length / spacing + 1e-9))
    out = []
    for j in range(steps + 1):
        s = j * spacing / length
        out.append(((ax + s * (bx - ax), ay + s * (by - ay)), props))
    if abs(length - steps * spacing) <= 1e-9:
        out[-1] = ((bx, by), props)
    else:
        out.append(((bx, by), props))
    return out


def _trajectory_point(path: tuple[Point, ...], t: float) -> Point:
    pts = np.asarray(path + (path[0],), dtype=np.float64)
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    total = float(seg.sum())
    s = (t % 1.0) * total
    for i, ln in enumerate(seg):
        if s <= ln or i == len(seg) - 1:
            frac = 0.0 if ln == 0 else min(s / ln, 1.0)
            p = pts[i] + frac * (pts[i + 1] - pts[i])
            return float(p[0]), float(p[1])
        s -= ln
    raise AssertionError("unreachable")


def object_positions(tpl: SceneTemplate, p: SOState) -> list[list[Point]]:
    if len(p.t) != tpl.n_obj:
        raise ShapeMismatchError(f"SO state has {len(p.t)} entries, template has {tpl.n_obj} objects")
    out = []
    for obj, t in zip(tpl.objects, p.t):
        cx, cy = _trajectory_point(tpl.trajectory, (t % 1.0) + obj.phase)
        out.append([(cx + dx, cy + dy) for dx, dy in obj.offsets])
    return out


def realize(tpl: SceneTemplate, k: RISConfig, p: SOState, ue_site: int | None) -> SceneInstance:
    """
    Flat dipole list in the order BS, UE, walls, RIS, objects.
    ue_site=None leaves the UE out (base scene for site sweeps).
    """
    if len(k) != tpl.n_ris:
        raise ShapeMismatchError(f"RIS config has {len(k)} bits, template has {tpl.n_ris} elements")

    dipoles: list[tuple[Point, DipoleProperties, str]] = [(tpl.bs, TRANSCEIVER, ROLE_BS)]
    if ue_site is not None:
        sites = tpl.ue_sites
        if not 0 <= ue_site < len(sites):
            raise ShapeMismatchError(f"UE site {ue_site} out of range [0, {len(sites)})")
        dipoles.append(((float(sites[ue_site][0]), float(sites[ue_site][1])), TRANSCEIVER, ROLE_UE))

    for x0, y0, x1, y1 in tpl.walls:
        dipoles.extend((pos, props, ROLE_WALL) for pos, props in build_fence((x0, y0), (x1, y1), FENCE_SPACING, ENVIRONMENT))

    sense = set(tpl.sense_idx)
    for i, (site, f_res) in enumerate(zip(tpl.ris_sites, k.resonances())):
        props = DipoleProperties(f_res=f_res, chi=RIS_CHI, gamma_l=RIS_GAMMA_L)
        dipoles.append((site, props, ROLE_SENSE if i in sense else ROLE_RIS))

    for obj, cluster in zip(tpl.objects, object_positions(tpl, p)):
        dipoles.extend((pos, obj.props, ROLE_OBJECT) for pos in cluster)

    scene = SceneInstance.from_dipoles(dipoles)
    _check_collisions(scene)
    return scene


def _check_collisions(scene: SceneInstance) -> None:
    pos = scene.positions
    iu = np.triu_indices(len(pos), 1)
    diff = pos[iu[0]] - pos[iu[1]]
    d = np.hypot(diff[:, 0], diff[:, 1])
    if d.size and d.min() < COLLISION_TOL:
        bad = int(np.argmin(d))
        i, j = int(iu[0][bad]), int(iu[1][bad])
        raise PlacementError(
            f"{scene.roles[j]} dipole {j} collides with {scene.roles[i]} dipole {i} (distance {d[bad]:.3e})"
        )


def sample_so_state(rng: np.random.Generator, tpl: SceneTemplate) -> SOState:
    if tpl.n_obj < 1:
        raise ShapeMismatchError("template has no scattering objects")
    return SOState(t=tuple(float(v) for v in rng.random(tpl.n_obj)))


# ============================================================
# DEFAULT ENCLOSURE
# ============================================================

ENCLOSURE_SIDE = 15.0
FENCE_FRACTION = 0.8
OBJECT_PROPS = DipoleProperties(f_res=1.2, chi=0.5, gamma_l=1.0)


def default_template(n_ris: int = 20, grid: FrequencyGrid | None = None) -> SceneTemplate:
    """
    15 x 15 enclosure: fences over 80% of each wall (pinwheel), RIS groups in
    the openings, BS near a corner, 5 x 5 UE grid, four 2x2 objects on a
    rectangular loop.
    """
    if n_ris < 4:
        raise ShapeMismatchError("default template needs at least 4 RIS elements (one group per wall)")
    side = ENCLOSURE_SIDE
    cover = FENCE_FRACTION * side
    gap = side - cover

    walls = (
        (0.0, 0.0, cover, 0.0),
        (side, 0.0, side, cover),
        (side, side, gap, side),
        (0.0, side, 0.0, gap),
    )
    # opening start and unit direction per wall
    openings = (
        ((cover, 0.0), (1.0, 0.0)),
        ((side, cover), (0.0, 1.0)),
        ((gap, side), (-1.0, 0.0)),
        ((0.0, gap), (0.0, -1.0)),
    )
    counts = [n_ris // 4 + (1 if w < n_ris % 4 else 0) for w in range(4)]

    ris_sites: list[Point] = []
    sense: list[int] = []
    for (start, direction), count in zip(openings, counts):
        first = len(ris_sites)
        for j in range(count):
            s = gap * (j + 0.5) / count
            ris_sites.append((start[0] + s * direction[0], start[1] + s * direction[1]))
        sense.append(first)
        if count >= 2:
            sense.append(first + count // 2)

    h = 0.125
    offsets = ((-h, -h), (h, -h), (-h, h), (h, h))
    objects = tuple(ObjectSpec(props=OBJECT_PROPS, offsets=offsets, phase=0.25 * j) for j in range(4))

    return SceneTemplate(
        grid=grid or FrequencyGrid(),
        bs=(1.5, 1.5),
        ue_grid=UEGrid(4.0, 4.0, 11.0, 11.0, 5, 5),
        walls=walls,
        ris_sites=tuple(ris_sites),
        sense_idx=tuple(sense),
        objects=objects,
        trajectory=((3.0, 3.0), (12.0, 3.0), (12.0, 12.0), (3.0, 12.0)),
    )


# ============================================================
# SCENE FILE
# ============================================================

_SECTIONS = ("frequency", "bs", "ue_grid", "wall", "ris", "sense", "object", "trajectory")
_REQUIRED = ("frequency", "bs", "ue_grid", "wall", "ris", "trajectory")


def _num(v: float) -> str:
    return repr(float(v))


def write_scene(tpl: SceneTemplate) -> str:
    g = tpl.grid
    u = tpl.ue_grid
    lines = [SCENE_HEADER, ""]
    lines += ["[frequency]", f"{_num(g.f_center)} {_num(g.half_band)} {g.n_points}", ""]
    lines += ["[bs]", f"{_num(tpl.bs[0])} {_num(tpl.bs[1])}", ""]
    lines += ["[ue_grid]", " ".join([_num(u.x0), _num(u.y0), _num(u.x1), _num(u.y1), str(u.nx), str(u.ny)]), ""]
    lines += ["[wall]"] + [" ".join(_num(v) for v in w) for w in tpl.walls] + [""]
    lines += ["[ris]"] + [f"{_num(x)} {_num(y)}" for x, y in tpl.ris_sites] + [""]
    if tpl.sense_idx:
        lines += ["[sense]", " ".join(str(i) for i in tpl.sense_idx), ""]
    for obj in tpl.objects:
        p = obj.props
        lines += ["[object]", f"{_num(p.f_res)} {_num(p.chi)} {_num(p.gamma_l)}", f"phase {_num(obj.phase)}"]
        lines += [f"offset {_num(dx)} {_num(dy)}" for dx, dy in obj.offsets] + [""]
    lines += ["[trajectory]"] + [f"{_num(x)} {_num(y)}" for x, y in tpl.trajectory]
    return "\n".join(lines) + "\n"


def scene_hash(tpl: SceneTemplate) -> str:
    return hashlib.sha256(write_scene(tpl).encode("utf-8")).hexdigest()


def _floats(fields: list[str], n: int, line_no: int, section: str) -> list[float]:
    if len(fields) != n:
        raise SceneFormatError(f"[{section}] expects {n} fields, got {len(fields)}", line_no, section)
    try:
        return [float(v) for v in fields]
    except ValueError:
        raise SceneFormatError(f"[{section}] non-numeric field in {' '.join(fields)!r}", line_no, section)


def _ints(fields: list[str], line_no: int, section: str) -> list[int]:
    try:
        return [int(v) for v in fields]
    except ValueError:
        raise SceneFormatError(f"[{section}] expects integers, got {' '.join(fields)!r}", line_no, section)


def parse_scene(text: str) -> SceneTemplate:
    section = None
    seen: set[str] = set()
    singles: dict[str, tuple[list[str], int]] = {}
    walls, ris, sense, trajectory = [], [], [], []
    objects: list[dict] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SceneFormatError(f"malformed section header {line!r}", line_no)
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise SceneFormatError(f"unknown section [{section}]", line_no, section)
            if section in ("frequency", "bs", "ue_grid") and section in seen:
                raise SceneFormatError(f"section [{section}] appears twice", line_no, section)
            if section == "object":
                objects.append({"line": line_no, "props": None, "phase": 0.0, "offsets": []})
            seen.add(section)
            continue
        if section is None:
            raise SceneFormatError("entity line before any section header", line_no)

        fields = line.split()
        if section in ("frequency", "bs", "ue_grid"):
            if section in singles:
                raise SceneFormatError(f"[{section}] takes a single entity line", line_no, section)
            singles[section] = (fields, line_no)
        elif section == "wall":
            walls.append(tuple(_floats(fields, 4, line_no, section)))
        elif section == "ris":
            ris.append(tuple(_floats(fields, 2, line_no, section)))
        elif section == "sense":
            sense.extend(_ints(fields, line_no, section))
        elif section == "trajectory":
            trajectory.append(tuple(_floats(fields, 2, line_no, section)))
        elif section == "object":
            obj = objects[-1]
            if fields[0] == "offset":
                obj["offsets"].append(tuple(_floats(fields[1:], 2, line_no, section)))
            elif fields[0] == "phase":
                obj["phase"] = _floats(fields[1:], 1, line_no, section)[0]
            elif obj["props"] is None:
                f_res, chi, gamma_l = _floats(fields, 3, line_no, section)
                try:
                    obj["props"] = DipoleProperties(f_res=f_res, chi=chi, gamma_l=gamma_l)
                except ValidationError as e:
                    raise SceneFormatError(f"[object] invalid dipole properties: {e.errors()[0]['msg']}", line_no, section)
            else:
                raise SceneFormatError(f"[object] unexpected line {line!r}", line_no, section)

    for name in _REQUIRED:
        if name not in seen:
            raise SceneFormatError(f"missing [{name}] section", section=name)
    for name in ("frequency", "bs", "ue_grid"):
        if name not in singles:
            raise SceneFormatError(f"[{name}] section is empty", section=name)

    fields, line_no = singles["frequency"]
    if len(fields) != 3:
        raise SceneFormatError("[frequency] expects f_center half_band n_points", line_no, "frequency")
    f_center, half_band = _floats(fields[:2], 2, line_no, "frequency")
    n_points = _ints(fields[2:], line_no, "frequency")[0]
    try:
        grid = FrequencyGrid(f_center=f_center, half_band=half_band, n_points=n_points)
    except ValidationError as e:
        raise SceneFormatError(f"[frequency] {e.errors()[0]['msg']}", line_no, "frequency")

    fields, line_no = singles["bs"]
    bs = tuple(_floats(fields, 2, line_no, "bs"))

    fields, line_no = singles["ue_grid"]
    if len(fields) != 6:
        raise SceneFormatError("[ue_grid] expects x0 y0 x1 y1 nx ny", line_no, "ue_grid")
    x0, y0, x1, y1 = _floats(fields[:4], 4, line_no, "ue_grid")
    nx, ny = _ints(fields[4:], line_no, "ue_grid")
    if nx < 1 or ny < 1:
        raise SceneFormatError("[ue_grid] nx and ny must be >= 1", line_no, "ue_grid")

    specs = []
    for obj in objects:
        if obj["props"] is None:
            raise SceneFormatError("[object] missing 'f_res chi gamma_l' line", obj["line"], "object")
        if not obj["offsets"]:
            raise SceneFormatError("[object] needs at least one offset line", obj["line"], "object")
        specs.append(ObjectSpec(props=obj["props"], offsets=tuple(obj["offsets"]), phase=obj["phase"]))

    tpl = SceneTemplate(
        grid=grid,
        bs=bs,
        ue_grid=UEGrid(x0, y0, x1, y1, nx, ny),
        walls=tuple(walls),
        ris_sites=tuple(ris),
        sense_idx=tuple(sense),
        objects=tuple(specs),
        trajectory=tuple(trajectory),
    )
    validate_template(tpl)
    return tpl


def validate_template(tpl: SceneTemplate) -> None:
    if not tpl.walls:
        raise SceneFormatError("at least one wall is required", section="wall")
    if tpl.n_ris < 1:
        raise SceneFormatError("at least one RIS element is required", section="ris")
    if len(set(tpl.sense_idx)) != len(tpl.sense_idx):
        raise SceneFormatError("sense indices must be distinct", section="sense")
    for i in tpl.sense_idx:
        if not 0 <= i < tpl.n_ris:
            raise SceneFormatError(f"sense index {i} outside [0, {tpl.n_ris})", section="sense")
    if len(tpl.trajectory) < 2:
        raise SceneFormatError("trajectory needs at least 2 vertices", section="trajectory")
    closed = tpl.trajectory + (tpl.trajectory[0],)
    if sum(math.dist(a, b) for a, b in itertools.pairwise(closed)) == 0.0:
        raise SceneFormatError("trajectory has zero length", section="trajectory")
    for w in tpl.walls:
        if w[:2] == w[2:]:
            raise SceneFormatError(f"wall {w} has coincident endpoints", section="wall")

    xs = [v for w in tpl.walls for v in (w[0], w[2])]
    ys = [v for w in tpl.walls for v in (w[1], w[3])]
    lo_x, hi_x, lo_y, hi_y = min(xs), max(xs), min(ys), max(ys)
    reach = max((math.hypot(dx, dy) for obj in tpl.objects for dx, dy in obj.offsets), default=0.0)

    def inside(pt: Point, margin: float = 0.0) -> bool:
        tol = 1e-9
        return (lo_x - tol <= pt[0] - margin and pt[0] + margin <= hi_x + tol
                and lo_y - tol <= pt[1] - margin and pt[1] + margin <= hi_y + tol)

    u = tpl.ue_grid
    checks = [("bs", tpl.bs, 0.0), ("ue_grid", (u.x0, u.y0), 0.0), ("ue_grid", (u.x1, u.y1), 0.0)]
    checks += [("ris", site, 0.0) for site in tpl.ris_sites]
    checks += [("trajectory", v, reach) for v in tpl.trajectory]
    for name, pt, margin in checks:
        if not inside(pt, margin):
            raise SceneFormatError(f"[{name}] point {pt} lies outside the walls", section=name)
