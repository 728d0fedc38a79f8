"""Lattice geometry: primitives, attachments, cell sets, rasters.

Figures live on the unit grid at quarter-cell resolution: every cell
(x, y) is split by both diagonals into four quadrant triangles
S(0), E(1), N(2), W(3).  An isosceles right triangle with unit legs is a
pair of adjacent quadrants of one cell (sw = S+W, se = S+E, ne = N+E,
nw = N+W), so overlap, rotation, equality and side tests are all exact
integer arithmetic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

S, E, N, W = 0, 1, 2, 3

TRIANGLE_QUADS = {
    "sw": (S, W),
    "se": (S, E),
    "ne": (N, E),
    "nw": (N, W),
}

QUAD_AREA = 0.25
ORIENTATIONS = (0, 90, 180, 270)


class GeometryError(ValueError):
    """Base for geometry validation failures."""


class MalformedSpecError(GeometryError):
    pass


class OverlapError(GeometryError):
    pass


class DisconnectedError(GeometryError):
    pass


class CanvasOverflowError(GeometryError):
    pass


# A bare cell is (x, y, quad); a labeled cell appends the primitive id.
Cell = tuple[int, int, int]
LabeledCell = tuple[int, int, int, str]
CellSet = frozenset[LabeledCell]


def rotate_quad_cell(x: int, y: int, q: int) -> Cell:
    """One counterclockwise quarter turn about the origin."""
    return (-1 - y, x, (q + 1) % 4)


def rotate_point(x: int, y: int) -> tuple[int, int]:
    return (-y, x)


def rotate_cells_raw(cells: Iterable[LabeledCell], quarter_turns: int) -> frozenset[LabeledCell]:
    k = quarter_turns % 4
    out = cells if isinstance(cells, frozenset) else frozenset(cells)
    for _ in range(k):
        out = frozenset((-1 - y, x, (q + 1) % 4, lab) for (x, y, q, lab) in out)
    return out


def canonicalize(cells: Iterable[LabeledCell]) -> CellSet:
    """Translate so the bounding box touches x = 0 and y = 0."""
    cs = list(cells)
    if not cs:
        return frozenset()
    mx = min(c[0] for c in cs)
    my = min(c[1] for c in cs)
    return frozenset((x - mx, y - my, q, lab) for (x, y, q, lab) in cs)


def rotate_cells(cells: Iterable[LabeledCell], quarter_turns: int) -> CellSet:
    return canonicalize(rotate_cells_raw(cells, quarter_turns))


def translate_cells(cells: Iterable[LabeledCell], dx: int, dy: int) -> frozenset[LabeledCell]:
    return frozenset((x + dx, y + dy, q, lab) for (x, y, q, lab) in cells)


def strip_labels(cells: Iterable[LabeledCell]) -> frozenset[Cell]:
    return frozenset((x, y, q) for (x, y, q, _) in cells)


def cells_sort_key(cells: CellSet) -> tuple:
    return tuple(sorted(cells))


def rotation_invariant_signature(cells: CellSet) -> tuple:
    """Least sorted canonical form over the four global rotations."""
    return min(cells_sort_key(rotate_cells(cells, k)) for k in range(4))


def symmetry_order(cells: CellSet) -> int:
    """Largest k in {1,2,4} with rot(360/k) mapping the figure to itself."""
    canon = canonicalize(cells)
    if rotate_cells(canon, 1) == canon:
        return 4
    if rotate_cells(canon, 2) == canon:
        return 2
    return 1


# --------------------------------------------------------------------------
# Sides

# A side is a directed segment (x1, y1, x2, y2) with the figure interior on
# its left; kind "u" is an axis-aligned unit edge, "d" a full cell diagonal.


@dataclass(frozen=True, order=True)
class Side:
    x1: int
    y1: int
    x2: int
    y2: int
    kind: str

    def vector(self) -> tuple[int, int]:
        return (self.x2 - self.x1, self.y2 - self.y1)

    def rotated(self) -> "Side":
        a = rotate_point(self.x1, self.y1)
        b = rotate_point(self.x2, self.y2)
        return Side(a[0], a[1], b[0], b[1], self.kind)

    def translated(self, dx: int, dy: int) -> "Side":
        return Side(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy, self.kind)

    def undirected(self) -> tuple:
        a = (self.x1, self.y1)
        b = (self.x2, self.y2)
        return (min(a, b), max(a, b))


def boundary_sides(cells: Iterable[LabeledCell]) -> list[Side]:
    """Unit and diagonal boundary sides of a union of labeled quads.

    Each valid figure decomposes per cell into one of {}, sw, se, ne, nw,
    full; diagonal boundary pieces therefore always pair into whole
    cell diagonals.
    """
    occ = strip_labels(cells)
    by_cell: dict[tuple[int, int], set[int]] = {}
    for (x, y, q) in occ:
        by_cell.setdefault((x, y), set()).add(q)
    sides: list[Side] = []
    for (x, y, q) in occ:
        if q == S and (x, y - 1, N) not in occ:
            sides.append(Side(x, y, x + 1, y, "u"))
        elif q == E and (x + 1, y, W) not in occ:
            sides.append(Side(x + 1, y, x + 1, y + 1, "u"))
        elif q == N and (x, y + 1, S) not in occ:
            sides.append(Side(x + 1, y + 1, x, y + 1, "u"))
        elif q == W and (x - 1, y, E) not in occ:
            sides.append(Side(x, y + 1, x, y, "u"))
    for (x, y), quads in by_cell.items():
        lower_sw = {S, W} <= quads
        upper_ne = {N, E} <= quads
        if lower_sw != upper_ne:
            # "/" diagonal from (x+1, y) to (x, y+1)
            if lower_sw:
                sides.append(Side(x + 1, y, x, y + 1, "d"))
            else:
                sides.append(Side(x, y + 1, x + 1, y, "d"))
        lower_se = {S, E} <= quads
        upper_nw = {N, W} <= quads
        if lower_se != upper_nw:
            # "\" diagonal from (x, y) to (x+1, y+1)
            if lower_se:
                sides.append(Side(x + 1, y + 1, x, y, "d"))
            else:
                sides.append(Side(x, y, x + 1, y + 1, "d"))
    sides.sort()
    return sides


# --------------------------------------------------------------------------
# Primitives


@dataclass(frozen=True)
class Primitive:
    id: str
    triangles: tuple[tuple[int, int, str], ...]
    cells: CellSet = field(repr=False)
    sides: tuple[Side, ...] = field(repr=False)
    color: str = "#888888"

    @property
    def symmetry(self) -> int:
        return symmetry_order(self.cells)


def _quads_of_triangle(x: int, y: int, kind: str, label: str) -> list[LabeledCell]:
    if kind not in TRIANGLE_QUADS:
        raise MalformedSpecError(f"unknown triangle kind {kind!r}")
    return [(x, y, q, label) for q in TRIANGLE_QUADS[kind]]


_QUAD_NEIGHBORS = {
    S: ((0, 0, E), (0, 0, W), (0, -1, N)),
    E: ((0, 0, S), (0, 0, N), (1, 0, W)),
    N: ((0, 0, E), (0, 0, W), (0, 1, S)),
    W: ((0, 0, S), (0, 0, N), (-1, 0, E)),
}


def quad_components(occ: frozenset[Cell]) -> int:
    """Number of edge-connected components of a quad set."""
    remaining = set(occ)
    comps = 0
    while remaining:
        comps += 1
        stack = [remaining.pop()]
        while stack:
            x, y, q = stack.pop()
            for dx, dy, nq in _QUAD_NEIGHBORS[q]:
                nb = (x + dx, y + dy, nq)
                if nb in remaining:
                    remaining.remove(nb)
                    stack.append(nb)
    return comps


def euler_characteristic(occ: frozenset[Cell]) -> int:
    """V - E + F of the quad complex; 1 for a disc (no holes)."""
    verts: set[tuple[int, int, int]] = set()  # doubled coords: centers allowed
    edges: set[tuple] = set()
    corner = {
        S: ((0, 0), (2, 0)),
        E: ((2, 0), (2, 2)),
        N: ((2, 2), (0, 2)),
        W: ((0, 2), (0, 0)),
    }
    for (x, y, q) in occ:
        c = (2 * x + 1, 2 * y + 1)
        a, b = corner[q]
        pa = (2 * x + a[0], 2 * y + a[1])
        pb = (2 * x + b[0], 2 * y + b[1])
        for p in (pa, pb, c):
            verts.add(p)
        for u, v in ((pa, pb), (pa, c), (pb, c)):
            edges.add((min(u, v), max(u, v)))
    return len(verts) - len(edges) + len(occ)


def build_primitive(
    pid: str, triangles: Sequence[Sequence], color: str = "#888888"
) -> Primitive:
    """Validate and derive a four-triangle primitive."""
    if len(triangles) != 4:
        raise MalformedSpecError(f"{pid}: expected 4 triangles, got {len(triangles)}")
    placed: list[tuple[int, int, str]] = []
    for t in triangles:
        if len(t) != 3:
            raise MalformedSpecError(f"{pid}: triangle spec {t!r} is not (x, y, kind)")
        x, y, kind = t
        if not (isinstance(x, int) and isinstance(y, int)):
            raise MalformedSpecError(f"{pid}: non-lattice triangle position {t!r}")
        placed.append((x, y, str(kind)))
    quads: set[LabeledCell] = set()
    for (x, y, kind) in placed:
        for cell in _quads_of_triangle(x, y, kind, pid):
            if cell in quads:
                raise OverlapError(f"{pid}: triangles overlap at {cell[:3]}")
            quads.add(cell)
    occ = strip_labels(quads)
    if quad_components(occ) != 1:
        raise DisconnectedError(f"{pid}: triangle union is not edge-connected")
    if euler_characteristic(occ) != 1:
        raise GeometryError(f"{pid}: boundary is not a single simple polygon")
    cells = canonicalize(quads)
    sides = tuple(boundary_sides(cells))
    return Primitive(
        id=pid,
        triangles=tuple(sorted(placed)),
        cells=cells,
        sides=sides,
        color=color,
    )


def area(cells: Iterable[LabeledCell]) -> float:
    return QUAD_AREA * len(set(strip_labels(cells)))


# --------------------------------------------------------------------------
# Attachments


@dataclass(frozen=True)
class Placement:
    """Pose of primitive b relative to primitive a at orientation 0.

    `placement_id` is the 1-based position in the frozen pair ordering;
    ids 1..n_configs are the orbit (Configuration) representatives.
    """

    pair: tuple[str, str]
    placement_id: int
    rot: int
    dx: int
    dy: int
    config_id: int  # id of this placement's orbit representative


@dataclass(frozen=True)
class Configuration:
    pair: tuple[str, str]
    config_id: int
    rot: int
    dx: int
    dy: int
    orbit_size: int


def pose_cells(prim: Primitive, rot: int, dx: int, dy: int, label: str | None = None) -> frozenset[LabeledCell]:
    lab = prim.id if label is None else label
    cells = frozenset((x, y, q, lab) for (x, y, q, _) in prim.cells)
    cells = rotate_cells_raw(cells, rot)
    return translate_cells(cells, dx, dy)


def _rotated_sides(prim: Primitive, rot: int) -> list[Side]:
    sides = list(prim.sides)
    for _ in range(rot % 4):
        sides = [s.rotated() for s in sides]
    return sides


def attachment_poses(target_cells: Iterable[LabeledCell], prim: Primitive) -> list[tuple[int, int, int]]:
    """Distinct poses (rot, dx, dy) of `prim` sharing a full side with the
    target figure and not overlapping it.  Sorted, deduplicated."""
    target = frozenset(target_cells)
    target_occ = strip_labels(target)
    tsides = boundary_sides(target)
    poses: set[tuple[int, int, int]] = set()
    for rot in range(4):
        bsides = _rotated_sides(prim, rot)
        bcells = rotate_cells_raw(frozenset(prim.cells), rot)
        bocc = strip_labels(bcells)
        by_vec: dict[tuple[int, int, str], list[Side]] = {}
        for sb in bsides:
            v = sb.vector()
            by_vec.setdefault((v[0], v[1], sb.kind), []).append(sb)
        for sa in tsides:
            va = sa.vector()
            # b's side must run opposite to a's so their interiors face away
            for sb in by_vec.get((-va[0], -va[1], sa.kind), ()):
                dx = sa.x2 - sb.x1
                dy = sa.y2 - sb.y1
                key = (rot, dx, dy)
                if key in poses:
                    continue
                moved = frozenset((x + dx, y + dy, q) for (x, y, q) in bocc)
                if moved & target_occ:
                    continue
                poses.add(key)
    return sorted(poses)


@dataclass(frozen=True)
class PairTable:
    pair: tuple[str, str]
    placements: tuple[Placement, ...]
    configs: tuple[Configuration, ...]
    # every geometrically valid raw pose -> placement id of the stored
    # representative with the identical pair figure
    aliases: tuple[tuple[tuple[int, int, int], int], ...] = ()

    def by_pose(self) -> dict[tuple[int, int, int], int]:
        return dict(self.aliases)

    def placement(self, placement_id: int) -> Placement:
        if not 1 <= placement_id <= len(self.placements):
            raise InvalidConfigIdError(
                f"pair {self.pair}: placement id {placement_id} outside 1..{len(self.placements)}"
            )
        return self.placements[placement_id - 1]


class InvalidConfigIdError(GeometryError):
    pass


def enumerate_placements(a: Primitive, b: Primitive) -> PairTable:
    """Exhaustive raw placements of b against a (a at orientation 0),
    deduplicated by resulting figure, orbit representatives first."""
    raw: list[tuple[int, int, int]] = attachment_poses(
        frozenset((x, y, q, a.id) for (x, y, q, _) in a.cells), b
    )
    # merge only poses whose placed b-cells coincide in place (rotation
    # variants of a symmetric b): those are indistinguishable in any
    # assembly context.  Translation or role-swap twins that merely yield
    # congruent pair figures stay distinct placements; orbit grouping
    # below still assigns them one configuration.
    seen_bcells: dict[tuple, int] = {}
    kept: list[tuple[int, int, int]] = []
    figures: list[CellSet] = []
    alias_of_pose: dict[tuple[int, int, int], int] = {}
    acELLS = frozenset((x, y, q, a.id) for (x, y, q, _) in a.cells)
    for pose in raw:
        rot, dx, dy = pose
        bkey = tuple(sorted(pose_cells(b, rot, dx, dy)))
        if bkey in seen_bcells:
            alias_of_pose[pose] = seen_bcells[bkey]
            continue
        seen_bcells[bkey] = len(kept)
        alias_of_pose[pose] = len(kept)
        kept.append(pose)
        figures.append(canonicalize(acELLS | pose_cells(b, rot, dx, dy)))
    # orbit grouping by rotation-invariant signature
    orbit_of: dict[tuple, list[int]] = {}
    for i, fig in enumerate(figures):
        orbit_of.setdefault(rotation_invariant_signature(fig), []).append(i)
    rep_indices: list[int] = []
    rep_orbit: dict[int, int] = {}
    for i in range(len(kept)):
        sig = rotation_invariant_signature(figures[i])
        members = orbit_of[sig]
        rep = members[0]
        rep_orbit[i] = rep
        if rep == i:
            rep_indices.append(i)
    order = rep_indices + [i for i in range(len(kept)) if i not in set(rep_indices)]
    placement_id_of_index = {idx: pid for pid, idx in enumerate(order, start=1)}
    placements = []
    for pid, idx in enumerate(order, start=1):
        rot, dx, dy = kept[idx]
        placements.append(
            Placement(
                pair=(a.id, b.id),
                placement_id=pid,
                rot=rot,
                dx=dx,
                dy=dy,
                config_id=placement_id_of_index[rep_orbit[idx]],
            )
        )
    configs = []
    for pid, idx in enumerate(order, start=1):
        if rep_orbit[idx] != idx:
            continue
        rot, dx, dy = kept[idx]
        sig = rotation_invariant_signature(figures[idx])
        configs.append(
            Configuration(
                pair=(a.id, b.id),
                config_id=pid,
                rot=rot,
                dx=dx,
                dy=dy,
                orbit_size=len(orbit_of[sig]),
            )
        )
    aliases = tuple(
        sorted(
            (pose, placement_id_of_index[idx])
            for pose, idx in alias_of_pose.items()
        )
    )
    return PairTable(
        pair=(a.id, b.id),
        placements=tuple(placements),
        configs=tuple(configs),
        aliases=aliases,
    )


def enumerate_attachments(a: Primitive, b: Primitive) -> list[Configuration]:
    return list(enumerate_placements(a, b).configs)


def config_cross_index(a: Primitive, b: Primitive) -> dict[int, int]:
    """Map config ids of (a, b) onto config ids of (b, a) denoting the same
    figure up to rotation and translation."""
    tab_ab = enumerate_placements(a, b)
    tab_ba = enumerate_placements(b, a)

    def sig_of(prim1: Primitive, prim2: Primitive, cfg: Configuration) -> tuple:
        fig = canonicalize(
            frozenset((x, y, q, prim1.id) for (x, y, q, _) in prim1.cells)
            | pose_cells(prim2, cfg.rot, cfg.dx, cfg.dy)
        )
        return rotation_invariant_signature(fig)

    sig_ba = {sig_of(b, a, cfg): cfg.config_id for cfg in tab_ba.configs}
    out = {}
    for cfg in tab_ab.configs:
        out[cfg.config_id] = sig_ba[sig_of(a, b, cfg)]
    return out


class AttachmentTables:
    """Per-ordered-pair placement tables for a primitive bank."""

    def __init__(self, bank: Sequence[Primitive]):
        self.primitives: dict[str, Primitive] = {p.id: p for p in bank}
        if len(self.primitives) != len(bank):
            raise MalformedSpecError("duplicate primitive ids in bank")
        self._tables: dict[tuple[str, str], PairTable] = {}

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.primitives)

    def primitive(self, pid: str) -> Primitive:
        if pid not in self.primitives:
            raise UnknownPrimitiveError(f"unknown primitive {pid!r}")
        return self.primitives[pid]

    def table(self, aid: str, bid: str) -> PairTable:
        key = (aid, bid)
        if key not in self._tables:
            self._tables[key] = enumerate_placements(self.primitive(aid), self.primitive(bid))
        return self._tables[key]

    def n_placements(self, aid: str, bid: str) -> int:
        return len(self.table(aid, bid).placements)

    def n_configs(self, aid: str, bid: str) -> int:
        return len(self.table(aid, bid).configs)


class UnknownPrimitiveError(GeometryError):
    pass


# --------------------------------------------------------------------------
# Raster


def _hex_rgb(color: str) -> tuple[int, int, int]:
    c = color.lstrip("#")
    return (int(c[0:2], 16), int(c[2:4], 16), int(c[4:6], 16))


def render(
    cells: Iterable[LabeledCell],
    cell_px: int,
    palette: Mapping[str, str],
    background: str = "#ffffff",
    canvas_px: tuple[int, int] | None = None,
    max_px: int = 4096,
) -> np.ndarray:
    """Deterministic RGB raster of a canonical cell set.

    Quadrant of a pixel is decided from its center with the tie priority
    S > E > N > W, so identical cell sets give byte-identical rasters.
    """
    if cell_px < 1:
        raise MalformedSpecError("cell_px must be >= 1")
    cs = canonicalize(cells)
    if cs:
        w_cells = max(x for (x, y, q, _) in cs) + 1
        h_cells = max(y for (x, y, q, _) in cs) + 1
    else:
        w_cells = h_cells = 0
    if canvas_px is None:
        canvas = (max(1, w_cells * cell_px), max(1, h_cells * cell_px))
    else:
        canvas = canvas_px
    if canvas[0] > max_px or canvas[1] > max_px or w_cells * cell_px > canvas[0] or h_cells * cell_px > canvas[1]:
        raise CanvasOverflowError(
            f"figure {w_cells}x{h_cells} cells at {cell_px}px exceeds canvas {canvas}"
        )
    bg = _hex_rgb(background)
    img = np.empty((canvas[1], canvas[0], 3), dtype=np.uint8)
    img[:, :] = bg
    if not cs:
        return img
    # center the figure on the canvas (integer offset, deterministic)
    ox = (canvas[0] - w_cells * cell_px) // 2
    oy = (canvas[1] - h_cells * cell_px) // 2
    by_cell: dict[tuple[int, int], dict[int, str]] = {}
    for (x, y, q, lab) in cs:
        by_cell.setdefault((x, y), {})[q] = lab
    for (x, y), quads in sorted(by_cell.items()):
        for py in range(cell_px):
            for px in range(cell_px):
                u = (px + 0.5) / cell_px
                v = (py + 0.5) / cell_px
                q = _quad_of_point(u, v)
                lab = quads.get(q)
                if lab is None:
                    continue
                gx = ox + x * cell_px + px
                gy = oy + y * cell_px + py
                img[canvas[1] - 1 - gy, gx] = _hex_rgb(palette.get(lab, "#000000"))
    return img


def _quad_of_point(u: float, v: float) -> int:
    below_main = v <= u       # on/below "\"
    below_anti = v <= 1.0 - u  # on/below "/"
    if below_main and below_anti:
        return S
    if below_main:
        return E
    if below_anti:
        return W
    return N


def render_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def render_png(img: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
