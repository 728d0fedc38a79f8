"""Program evaluation: extensions over the enumerated universe and the
size-principle likelihood.

Set-level expressions denote sets of universe token indices in the
unrotated build frame; the top-level rotation node applies orientation
(fixed angle) or closes the set under all four orientations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import AttachmentTables, canonicalize, pose_cells
from .grammar import Grammar, GrammarError, NotDerivableError, Program, validate_program
from .tokens import Token, TokenUniverse, attach_results


class EvalError(ValueError):
    pass


class EmptyExtensionError(EvalError):
    pass


@dataclass(frozen=True)
class Extension:
    tokens: frozenset[int]

    @property
    def size(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Hypothesis:
    program: Program
    extension: Extension
    log_prior_raw: float  # at T_p = 1 under the grammar it was scored with

    @property
    def size(self) -> int:
        return self.extension.size


class EvalContext:
    """Immutable per-bank evaluation tables with a shared memo."""

    def __init__(self, tables: AttachmentTables, universe: TokenUniverse):
        self.tables = tables
        self.universe = universe
        self.bank_ids = universe.bank_ids
        self._singles: dict[str, int] = {}
        for pid in self.bank_ids:
            prim = tables.primitive(pid)
            self._singles[pid] = universe.index_of_cells(
                canonicalize(prim.cells), 0 if not universe.merge_symmetric else None
            )
        self._placement_figs: dict[tuple[str, str], tuple[int, ...]] = {}
        self._has_idx: dict[str, frozenset[int]] = {}
        for pid in self.bank_ids:
            self._has_idx[pid] = frozenset(
                t.index for t in universe.tokens if pid in universe.label_sets[t.index]
            )
        self._only_idx: dict[tuple[str, ...], frozenset[int]] = {}
        self._extend_memo: dict[tuple[int, str], frozenset[int]] = {}
        self._memo: dict[Program, frozenset[int]] = {}
        perm = universe.rotation_perm
        self._perms = [np.arange(len(universe), dtype=np.int64)]
        for _ in range(3):
            self._perms.append(perm[self._perms[-1]])

    # -- primitive set denotations ------------------------------------------

    def single_fig(self, pid: str) -> int:
        return self._singles[pid]

    def placement_figs(self, a: str, b: str) -> tuple[int, ...]:
        key = (min(a, b), max(a, b))
        if key not in self._placement_figs:
            aprim = self.tables.primitive(key[0])
            bprim = self.tables.primitive(key[1])
            acells = frozenset((x, y, q, aprim.id) for (x, y, q, _) in aprim.cells)
            figs = []
            for pl in self.tables.table(key[0], key[1]).placements:
                cells = canonicalize(acells | pose_cells(bprim, pl.rot, pl.dx, pl.dy))
                figs.append(self.universe.index_of_cells(cells, 0 if not self.universe.merge_symmetric else None))
            self._placement_figs[key] = tuple(figs)
        return self._placement_figs[key]

    def has_index(self, pid: str) -> frozenset[int]:
        return self._has_idx[pid]

    def only_index(self, pset: tuple[str, ...]) -> frozenset[int]:
        key = tuple(sorted(pset))
        if key not in self._only_idx:
            allowed = set(key)
            self._only_idx[key] = frozenset(
                t.index
                for t in self.universe.tokens
                if self.universe.label_sets[t.index] <= allowed
            )
        return self._only_idx[key]

    def extend_fig(self, fig: int, pid: str) -> frozenset[int]:
        key = (fig, pid)
        if key not in self._extend_memo:
            prim = self.tables.primitive(pid)
            cells = self.universe.tokens[fig].cells
            out = set()
            for new in attach_results(cells, prim):
                try:
                    out.add(
                        self.universe.index_of_cells(
                            canonicalize(new), 0 if not self.universe.merge_symmetric else None
                        )
                    )
                except Exception:
                    continue  # outside the enumerated universe (part cap)
            self._extend_memo[key] = frozenset(out)
        return self._extend_memo[key]

    def rotate_ids(self, ids: frozenset[int], quarter_turns: int) -> frozenset[int]:
        perm = self._perms[quarter_turns % 4]
        return frozenset(int(perm[i]) for i in ids)


def evaluate(program: Program, ctx: EvalContext, grammar: Grammar | None = None) -> Extension:
    """Denotational evaluation; raises EmptyExtension for empty results."""
    if grammar is not None:
        validate_program(program, grammar)
    if program in ctx._memo:
        ids = ctx._memo[program]
    else:
        ids = _eval_top(program, ctx)
        ctx._memo[program] = ids
    if not ids:
        raise EmptyExtensionError(f"empty extension for {program!r}")
    return Extension(tokens=ids)


def _eval_pair(node: Program, ctx: EvalContext) -> frozenset[int]:
    if node[0] == "pair_all":
        return frozenset(ctx.placement_figs(node[1], node[2]))
    _, a, b, k = node
    figs = ctx.placement_figs(a, b)
    if not 1 <= k <= len(figs):
        raise EvalError(f"config {k} out of range for ({a},{b})")
    return frozenset({figs[k - 1]})


def _eval_set(node: Program, ctx: EvalContext) -> frozenset[int]:
    kind = node[0]
    if kind in ("pair_all", "pair_at"):
        return _eval_pair(node, ctx)
    if kind == "has":
        return ctx.has_index(node[1])
    if kind == "only":
        return ctx.only_index(node[1])
    if kind == "single":
        return frozenset({ctx.single_fig(node[1])})
    if kind == "extend":
        base = _eval_pair(node[1], ctx)
        out: set[int] = set()
        for fig in base:
            out |= ctx.extend_fig(fig, node[2])
        return frozenset(out)
    if kind == "map":
        xbody, src = node[1], node[2]
        out = set()
        for s in src:
            out |= _eval_set(_instantiate(xbody, s), ctx)
        return frozenset(out)
    raise EvalError(f"unknown set node {kind}")


def _instantiate(xbody: Program, s: str) -> Program:
    kind = xbody[0]
    if kind == "xx":
        return ("pair_all", s, s)
    if kind == "xpair_extend":
        return ("extend", xbody[1], s)
    if kind == "xx_extend_fixed":
        return ("extend", ("pair_all", s, s), xbody[1])
    if kind == "xx_extend_x":
        return ("extend", ("pair_all", s, s), s)
    raise EvalError(f"unknown lambda body {kind}")


def _eval_top(program: Program, ctx: EvalContext) -> frozenset[int]:
    kind = program[0]
    base = _eval_set(program[1], ctx)
    if kind == "rotate_at":
        return ctx.rotate_ids(base, program[2] // 90)
    if kind == "rotate_all":
        out: set[int] = set()
        for k in range(4):
            out |= ctx.rotate_ids(base, k)
        return frozenset(out)
    raise EvalError(f"program must be rooted at a rotation node, got {kind}")


def make_hypothesis(program: Program, ctx: EvalContext, grammar: Grammar) -> Hypothesis:
    from .grammar import log_prior

    ext = evaluate(program, ctx, grammar)
    return Hypothesis(program=program, extension=ext, log_prior_raw=log_prior(grammar, program))


def log_likelihood(h: Hypothesis, exemplars: Sequence[int | Token], T_l: float = 1.0) -> float:
    """(1/T_l) * sum_i [log 1(x_i in h) - log |h|]."""
    if T_l <= 0:
        raise EvalError("likelihood temperature must be positive")
    size = h.extension.size
    total = 0.0
    for x in exemplars:
        idx = x.index if isinstance(x, Token) else int(x)
        if idx not in h.extension.tokens:
            return -math.inf
        total += -math.log(size)
    return total / T_l


def membership(y: int | Token, h: Hypothesis) -> bool:
    idx = y.index if isinstance(y, Token) else int(y)
    return idx in h.extension.tokens
