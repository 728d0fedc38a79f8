"""Reconstructed primitive bank and named unit-test shapes.

The behavioral study's exact nine part shapes are only published as
figures; this bank is a reconstruction with the same construction rules
(four isosceles right triangles each, area 2) and is flagged approximate.
Every bank primitive keeps at least one unit side so that all pairs admit
at least one attachment.
"""

from __future__ import annotations

from .geometry import Primitive, build_primitive

# Default colors; participants saw outlines, the colors exist for rasters.
# The nine shapes are pairwise non-congruent up to rotation+translation.
_BANK_SPECS: dict[str, tuple[list[tuple[int, int, str]], str]] = {
    # 2x1 rectangle (2-fold symmetric)
    "p1": ([(0, 0, "sw"), (0, 0, "ne"), (1, 0, "sw"), (1, 0, "ne")], "#e6194b"),
    # big right triangle with legs 2
    "p2": ([(0, 0, "sw"), (0, 0, "ne"), (0, 1, "sw"), (1, 0, "sw")], "#3cb44b"),
    # parallelogram leaning right (2-fold symmetric)
    "p3": ([(0, 0, "se"), (1, 0, "sw"), (1, 0, "ne"), (2, 0, "nw")], "#ffe119"),
    # square with a roof wedge and a foot
    "p4": ([(0, 0, "sw"), (0, 0, "ne"), (0, 1, "se"), (1, 0, "sw")], "#4363d8"),
    # four-blade zigzag
    "p5": ([(0, 0, "se"), (0, 1, "ne"), (1, 0, "nw"), (1, 1, "sw")], "#f58231"),
    # square with an offset diagonal cap
    "p6": ([(0, 0, "sw"), (0, 0, "ne"), (1, 0, "nw"), (1, 1, "se")], "#911eb4"),
    # hooked wedge
    "p7": ([(0, 0, "ne"), (0, 1, "se"), (1, 0, "sw"), (1, 1, "sw")], "#42d4f4"),
    # lightning bolt
    "p8": ([(0, 0, "se"), (1, 0, "nw"), (1, 1, "se"), (2, 1, "sw")], "#f032e6"),
    # boat hull
    "p9": ([(0, 0, "se"), (1, 0, "sw"), (1, 0, "ne"), (2, 0, "sw")], "#bfef45"),
}

# 4-fold-symmetric diamond: unit-test fixture, not part of the main bank
# (its sides are all diagonal, so it cannot attach to all-unit-side parts).
DIAMOND_SPEC = [(0, 0, "ne"), (1, 0, "nw"), (1, 1, "sw"), (0, 1, "se")]


def bank_primitive(pid: str) -> Primitive:
    triangles, color = _BANK_SPECS[pid]
    return build_primitive(pid, triangles, color)


def full_bank() -> list[Primitive]:
    return [bank_primitive(pid) for pid in _BANK_SPECS]


def bank_subset(ids: list[str] | tuple[str, ...]) -> list[Primitive]:
    return [bank_primitive(pid) for pid in ids]


def diamond(pid: str = "pd") -> Primitive:
    return build_primitive(pid, DIAMOND_SPEC, "#222222")
