"""Figure tokens: string format, parsing, and exhaustive universe enumeration.

String format (frozen, see docs/format.md):

    "(" <prim ids> ")" "+" <attachment items> "+" <orientation degrees>

The attachment substring has one item per part beyond the first, joined
by ".".  The second part's item is a bare placement id (its target is
always part 1); items of later parts are "<target part>:<placement id>".
Placement ids are 1-based per ordered primitive pair, with configuration
(rotation-orbit) representatives occupying ids 1..n_configs, so a
two-part string like "(p1p2)+1+180" names the pair's first configuration
rotated 180 degrees.

Token identity is canonical cell-set identity: build order and redundant
orientation labels of rotationally symmetric figures do not distinguish
tokens (symmetric-orientation merging can be disabled per universe).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    AttachmentTables,
    CellSet,
    GeometryError,
    InvalidConfigIdError,
    LabeledCell,
    Primitive,
    UnknownPrimitiveError,
    attachment_poses,
    boundary_sides,
    canonicalize,
    cells_sort_key,
    pose_cells,
    rotate_cells,
    rotate_cells_raw,
    rotate_point,
    strip_labels,
    translate_cells,
)


class TokenError(ValueError):
    pass


class ParseError(TokenError):
    pass


class InvalidTokenError(TokenError):
    """Structurally parseable but geometrically invalid (overlap)."""


class BudgetExceededError(TokenError):
    pass


Pose = tuple[str, int, int, int]  # (prim id, rot, dx, dy)
AttachItem = tuple[int, int]      # (target part index 1-based, placement id)


@dataclass(frozen=True)
class Token:
    index: int
    string: str
    parts: tuple[str, ...]
    orientation: int
    cells: CellSet

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def __str__(self) -> str:  # pragma: no cover
        return self.string


def token_to_string(t: Token) -> str:
    return t.string


# ---------------------------------------------------------------------------
# Text layer


def serialize(parts: Sequence[str], items: Sequence[AttachItem], orientation: int) -> str:
    frags = []
    for i, (target, pid) in enumerate(items):
        if i == 0:
            if target != 1:
                raise TokenError("second part must attach to part 1")
            frags.append(str(pid))
        else:
            frags.append(f"{target}:{pid}")
    return "({}){}+{}+{}".format("".join(parts), "", ".".join(frags), orientation)


_TOKEN_RE = re.compile(r"^\(([^()+]*)\)\+([^+]*)\+(\d+)$")


def _tokenize_ids(blob: str, known_ids: Sequence[str] | None) -> tuple[str, ...]:
    if known_ids:
        ids = []
        rest = blob
        by_len = sorted(known_ids, key=len, reverse=True)
        while rest:
            for pid in by_len:
                if rest.startswith(pid):
                    ids.append(pid)
                    rest = rest[len(pid):]
                    break
            else:
                # leave the unknown tail as one id so the caller can report it
                m = re.match(r"[A-Za-z_]+\d*", rest)
                if not m:
                    raise ParseError(f"cannot tokenize part ids in {blob!r}")
                ids.append(m.group(0))
                rest = rest[len(m.group(0)):]
        return tuple(ids)
    ids = tuple(re.findall(r"[A-Za-z_]+\d*", blob))
    if "".join(ids) != blob:
        raise ParseError(f"cannot tokenize part ids in {blob!r}")
    return ids


def parse_text(
    s: str, known_ids: Sequence[str] | None = None
) -> tuple[tuple[str, ...], tuple[AttachItem, ...], int]:
    """Split a token string into part ids, attachment items, orientation."""
    m = _TOKEN_RE.match(s.strip())
    if not m:
        raise ParseError(f"malformed token string {s!r}")
    ids_blob, attach_blob, orient_blob = m.groups()
    ids = _tokenize_ids(ids_blob, known_ids)
    if not ids:
        raise ParseError(f"no part ids in {s!r}")
    orientation = int(orient_blob)
    if orientation not in (0, 90, 180, 270):
        raise ParseError(f"orientation {orientation} not one of 0/90/180/270")
    items: list[AttachItem] = []
    if attach_blob:
        for i, frag in enumerate(attach_blob.split(".")):
            if ":" in frag:
                t, p = frag.split(":", 1)
                items.append((int(t), int(p)))
            else:
                items.append((1, int(frag)))
    if len(items) != len(ids) - 1:
        raise ParseError(
            f"{s!r}: {len(ids)} parts need {len(ids) - 1} attachment items, got {len(items)}"
        )
    for i, (target, pid) in enumerate(items):
        part_no = i + 2
        if not 1 <= target < part_no:
            raise ParseError(f"{s!r}: part {part_no} targets invalid part {target}")
    return ids, tuple(items), orientation


# ---------------------------------------------------------------------------
# Assembly


def assemble_poses(tables: AttachmentTables, ids: Sequence[str], items: Sequence[AttachItem]) -> list[Pose]:
    """Instantiate poses from attachment items; part 1 at rotation 0."""
    for pid in ids:
        tables.primitive(pid)  # raises UnknownPrimitive
    poses: list[Pose] = [(ids[0], 0, 0, 0)]
    occupied = set(strip_labels(pose_cells(tables.primitive(ids[0]), 0, 0, 0)))
    for i, (target, placement_id) in enumerate(items):
        part_no = i + 2
        tid, trot, tdx, tdy = poses[target - 1]
        table = tables.table(tid, ids[i + 1])
        pl = table.placement(placement_id)  # raises InvalidConfigId
        # placement is relative to the target at rotation 0: rotate along
        rot = (pl.rot + trot) % 4
        rdx, rdy = pl.dx, pl.dy
        for _ in range(trot % 4):
            rdx, rdy = rotate_point(rdx, rdy)
        dx, dy = tdx + rdx, tdy + rdy
        new_cells = strip_labels(pose_cells(tables.primitive(ids[i + 1]), rot, dx, dy))
        if new_cells & occupied:
            raise InvalidTokenError(
                f"part {part_no} ({ids[i + 1]}) overlaps the assembly"
            )
        occupied |= new_cells
        poses.append((ids[i + 1], rot, dx, dy))
    return poses


def poses_cells(tables: AttachmentTables, poses: Iterable[Pose]) -> frozenset[LabeledCell]:
    out: set[LabeledCell] = set()
    for (pid, rot, dx, dy) in poses:
        out |= pose_cells(tables.primitive(pid), rot, dx, dy)
    return frozenset(out)


def relative_pose(base: Pose, other: Pose) -> tuple[int, int, int]:
    """Pose of `other` in the frame where `base` sits at rotation 0."""
    _, br, bx, by = base
    _, orot, ox, oy = other
    rel_rot = (orot - br) % 4
    dx, dy = ox - bx, oy - by
    for _ in range((-br) % 4):
        dx, dy = rotate_point(dx, dy)
    return rel_rot, dx, dy


def rotate_pose(p: Pose, k: int) -> Pose:
    pid, rot, dx, dy = p
    for _ in range(k % 4):
        dx, dy = rotate_point(dx, dy)
    return (pid, (rot + k) % 4, dx, dy)


def decompose(cells: CellSet, tables: AttachmentTables) -> list[tuple[Pose, ...]]:
    """All decompositions of a labeled cell set into primitive poses."""
    results: set[tuple[Pose, ...]] = set()
    prim_rot_cells: dict[tuple[str, int], CellSet] = {}

    def rotated(pid: str, rot: int) -> CellSet:
        key = (pid, rot)
        if key not in prim_rot_cells:
            prim_rot_cells[key] = rotate_cells_raw(tables.primitive(pid).cells, rot)
        return prim_rot_cells[key]

    def recurse(uncovered: frozenset[LabeledCell], acc: tuple[Pose, ...]):
        if not uncovered:
            results.add(tuple(sorted(acc)))
            return
        anchor = min(uncovered)
        ax, ay, aq, alab = anchor
        for rot in range(4):
            base = rotated(alab, rot)
            for (bx, by, bq, _) in base:
                if bq != aq:
                    continue
                dx, dy = ax - bx, ay - by
                placed = translate_cells(base, dx, dy)
                if placed <= uncovered:
                    recurse(uncovered - placed, acc + ((alab, rot, dx, dy),))

    recurse(frozenset(cells), ())
    return sorted(results)


def candidate_strings(
    cells: CellSet,
    tables: AttachmentTables,
    fixed_orientation: int | None = None,
) -> list[str]:
    """All serializations of a canonical cell set (every decomposition,
    build order and attachment encoding).

    Items are found by aliasing each part's actual pose to the stored
    representative placement with the identical pair figure; the running
    poses are kept in parse semantics so parsing any produced string
    reconstructs exactly `cells`.
    """
    out: set[str] = set()
    alias_cache: dict[tuple[str, str], dict] = {}

    def alias(aid: str, bid: str):
        key = (aid, bid)
        if key not in alias_cache:
            alias_cache[key] = tables.table(aid, bid).by_pose()
        return alias_cache[key]

    for D in decompose(cells, tables):
        for order in permutations(range(len(D))):
            poses = [D[i] for i in order]
            orientation = poses[0][1] * 90
            if fixed_orientation is not None and orientation != fixed_orientation:
                continue
            ids = tuple(p[0] for p in poses)

            def extend(k: int, parsed: tuple[Pose, ...], items: tuple[AttachItem, ...]):
                if k == len(poses):
                    out.add(serialize(ids, items, orientation))
                    return
                targets = (0,) if k == 1 else range(k)
                for j in targets:
                    rel = relative_pose(parsed[j], poses[k])
                    pid = alias(parsed[j][0], poses[k][0]).get(rel)
                    if pid is None:
                        continue
                    rep = tables.table(parsed[j][0], poses[k][0]).placement(pid)
                    # pose the representative relative to the parsed target,
                    # mirroring assemble_poses
                    _, trot, tdx, tdy = parsed[j]
                    rot = (rep.rot + trot) % 4
                    rdx, rdy = rep.dx, rep.dy
                    for _ in range(trot % 4):
                        rdx, rdy = rotate_point(rdx, rdy)
                    new_pose: Pose = (poses[k][0], rot, tdx + rdx, tdy + rdy)
                    extend(k + 1, parsed + (new_pose,), items + ((j + 1, pid),))

            extend(1, (poses[0],), ())
    return sorted(out)


def canonical_string(cells: CellSet, tables: AttachmentTables, fixed_orientation: int | None = None) -> str:
    cands = candidate_strings(cells, tables, fixed_orientation)
    if not cands:
        raise TokenError("cell set admits no valid build sequence")
    return cands[0]


# ---------------------------------------------------------------------------
# Universe


class TokenUniverse:
    """Exhaustive deduplicated token set over a bank, with the sequential
    null-distribution mass accumulated per token."""

    def __init__(
        self,
        bank_ids: tuple[str, ...],
        tokens: list[Token],
        null_logp: np.ndarray,
        merge_symmetric: bool,
        max_parts: int,
    ):
        self.bank_ids = bank_ids
        self.tokens = tokens
        self.null_logp = null_logp
        self.merge_symmetric = merge_symmetric
        self.max_parts = max_parts
        self.by_string: dict[str, int] = {t.string: t.index for t in tokens}
        self.by_cells: dict[tuple, int] = {}
        for t in tokens:
            key = self._cells_key(t.cells, t.orientation)
            self.by_cells[key] = t.index
        self.rotation_perm = np.array(
            [self._rotated_index(t) for t in tokens], dtype=np.int64
        )
        self.label_sets: list[frozenset[str]] = [
            frozenset(lab for (_, _, _, lab) in t.cells) for t in tokens
        ]
        self.part_counts = np.array([t.n_parts for t in tokens], dtype=np.int64)

    def _cells_key(self, cells: CellSet, orientation: int) -> tuple:
        if self.merge_symmetric:
            return cells_sort_key(cells)
        return (cells_sort_key(cells), orientation)

    def _rotated_index(self, t: Token) -> int:
        cells = rotate_cells(t.cells, 1)
        key = self._cells_key(cells, (t.orientation + 90) % 360)
        return self.by_cells[key]

    def __len__(self) -> int:
        return len(self.tokens)

    def index_of_cells(self, cells: CellSet, orientation: int | None = None) -> int:
        key = self._cells_key(canonicalize(cells), 0 if orientation is None else orientation)
        if key not in self.by_cells:
            raise TokenError("figure not in universe")
        return self.by_cells[key]

    def strata(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for t in self.tokens:
            out[t.n_parts] = out.get(t.n_parts, 0) + 1
        return out

    def null_logprob(self, index: int) -> float:
        return float(self.null_logp[index])

    def export_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.tokens:
                fh.write(
                    json.dumps(
                        {
                            "string": t.string,
                            "parts": list(t.parts),
                            "orientation": t.orientation,
                            "cells": sorted(t.cells),
                            "null_logprob": self.null_logp[t.index],
                        }
                    )
                    + "\n"
                )


def attach_results(cells: frozenset[LabeledCell], prim: Primitive) -> list[frozenset[LabeledCell]]:
    """Distinct figures obtained by attaching `prim` to the assembly;
    poses yielding identical cells are merged."""
    seen = set()
    out = []
    for (rot, dx, dy) in attachment_poses(cells, prim):
        new = cells | pose_cells(prim, rot, dx, dy)
        key = cells_sort_key(frozenset(new))
        if key not in seen:
            seen.add(key)
            out.append(frozenset(new))
    return out


def build_universe(
    tables: AttachmentTables,
    bank_ids: Sequence[str] | None = None,
    max_parts: int = 3,
    merge_symmetric: bool = True,
    budget: int = 2_000_000,
) -> TokenUniverse:
    """Enumerate every valid token of 1..max_parts parts over the bank and
    accumulate the sequential null-generation probability per token.

    The walker is a DP over assembly states (canonical labeled cell sets,
    first part unrotated); global orientation is applied at termination.
    """
    ids = tuple(bank_ids) if bank_ids is not None else tables.ids
    for pid in ids:
        tables.primitive(pid)
    bank = [tables.primitive(pid) for pid in ids]
    nb = len(bank)

    # state -> mass; keyed by sorted canonical cells
    level: dict[tuple, tuple[frozenset[LabeledCell], float]] = {}
    token_mass: dict[tuple, float] = {}
    token_repr: dict[tuple, tuple[CellSet, int]] = {}
    n_states = 0

    def canon_key(cells: frozenset[LabeledCell]) -> tuple[tuple, frozenset[LabeledCell]]:
        c = canonicalize(cells)
        return cells_sort_key(c), c

    def cells_key_for_token(cells: CellSet, orientation: int) -> tuple:
        if merge_symmetric:
            return cells_sort_key(cells)
        return (cells_sort_key(cells), orientation)

    for p in bank:
        key, c = canon_key(frozenset(p.cells))
        k0, m0 = level.get(key, (None, 0.0))
        level[key] = (c, m0 + 1.0 / nb)

    results_memo: dict[tuple[tuple, str], list[frozenset[LabeledCell]]] = {}

    def options(cells_key: tuple, cells: frozenset[LabeledCell]):
        opts = []
        for q in bank:
            memo_key = (cells_key, q.id)
            if memo_key not in results_memo:
                results_memo[memo_key] = attach_results(cells, q)
            if results_memo[memo_key]:
                opts.append((q, results_memo[memo_key]))
        return opts

    for n_parts in range(1, max_parts + 1):
        next_level: dict[tuple, tuple[frozenset[LabeledCell], float]] = {}
        for key, (cells, mass) in level.items():
            n_states += 1
            if n_states > budget:
                raise BudgetExceededError(f"assembly state budget {budget} exceeded")
            if n_parts < max_parts:
                opts = options(key, cells)
                support = 1 + len(opts)  # terminate + attachable primitives
                term_factor = 1.0 / support
                for q, figures in opts:
                    step = (1.0 / support) * (1.0 / len(figures))
                    for fig in figures:
                        nkey, ncanon = canon_key(fig)
                        prev = next_level.get(nkey)
                        next_level[nkey] = (ncanon, (0.0 if prev is None else prev[1]) + mass * step)
            else:
                term_factor = 1.0
            for theta in range(4):
                rotated = rotate_cells(cells, theta)
                tkey = cells_key_for_token(rotated, theta * 90)
                token_mass[tkey] = token_mass.get(tkey, 0.0) + mass * term_factor * 0.25
                if tkey not in token_repr or (rotated, theta * 90) < token_repr[tkey]:
                    token_repr[tkey] = (rotated, theta * 90)
        level = next_level
        if len(token_mass) > budget:
            raise BudgetExceededError(f"token budget {budget} exceeded")

    # canonical strings and stable ordering
    entries = []
    for tkey, (cells, orientation) in token_repr.items():
        fixed = orientation if not merge_symmetric else None
        s = canonical_string(cells, tables, fixed_orientation=fixed)
        ids_, items_, orient_ = parse_text(s)
        entries.append((s, ids_, orient_, cells, token_mass[tkey]))
    entries.sort(key=lambda e: (len(e[1]), e[0]))
    tokens = []
    null = np.empty(len(entries))
    for i, (s, ids_, orient_, cells, mass) in enumerate(entries):
        tokens.append(Token(index=i, string=s, parts=ids_, orientation=orient_, cells=cells))
        null[i] = math.log(mass) if mass > 0 else -math.inf
    return TokenUniverse(
        bank_ids=ids,
        tokens=tokens,
        null_logp=null,
        merge_symmetric=merge_symmetric,
        max_parts=max_parts,
    )


def parse_token(s: str, tables: AttachmentTables, universe: TokenUniverse | None = None) -> Token:
    """Parse, validate and canonicalize a token string.

    With a universe, the canonical registered token is returned; otherwise a
    detached token carrying the canonical serialization of its own build.
    """
    ids, items, orientation = parse_text(s, known_ids=tuple(tables.primitives))
    poses = assemble_poses(tables, ids, items)
    cells = canonicalize(
        rotate_cells_raw(poses_cells(tables, poses), orientation // 90)
    )
    if universe is not None:
        idx = universe.index_of_cells(cells, orientation if not universe.merge_symmetric else None)
        return universe.tokens[idx]
    canon = canonical_string(cells, tables)
    cids, citems, corient = parse_text(canon)
    return Token(index=-1, string=canon, parts=cids, orientation=corient, cells=cells)


def sample_null(
    universe: TokenUniverse,
    tables: AttachmentTables,
    rng: np.random.Generator,
) -> Token:
    """Draw one token from the sequential null distribution."""
    bank = [tables.primitive(pid) for pid in universe.bank_ids]
    first = bank[rng.integers(len(bank))]
    cells = frozenset(first.cells)
    for _ in range(2, universe.max_parts + 1):
        opts = [(q, attach_results(cells, q)) for q in bank]
        opts = [(q, figs) for q, figs in opts if figs]
        choice = int(rng.integers(1 + len(opts)))
        if choice == 0:
            break
        q, figs = opts[choice - 1]
        cells = figs[int(rng.integers(len(figs)))]
    theta = int(rng.integers(4))
    rotated = rotate_cells(cells, theta)
    idx = universe.index_of_cells(rotated, theta * 90 if not universe.merge_symmetric else None)
    return universe.tokens[idx]
