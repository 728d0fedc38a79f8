"""Trial fixtures: few-shot concept trials with exemplars, test items
tagged by novelty type, partial-pattern annotations and bias sets.

21 type templates; the ten harder ones run in both 3- and 6-exemplar
conditions, giving 31 trial types per primitive assignment.  Each type is
instantiated under several random 4-primitive assignments drawn from the
9-primitive bank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fixtures
from .geometry import AttachmentTables
from .grammar import Grammar, default_grammar, lesion
from .interpreter import EvalContext
from .tokens import TokenUniverse, build_universe

NOVELTY_TYPES = (
    "identity",
    "novel_rotation",
    "novel_attachment",
    "more_parts",
    "other_primitive",
    "part",
    "subpart",
    "broader",
    "fewer",
    "other",
)


@dataclass(frozen=True)
class TestItem:
    string: str
    novelty: str


@dataclass(frozen=True)
class PartialPattern:
    kind: str  # "rotations" | "primitives"
    arity: int  # parts per token in the pattern
    completion: tuple[str, ...]
    reconfigure: tuple[str, ...]


@dataclass(frozen=True)
class TrialFixture:
    trial_id: str
    type_id: str
    assignment: int
    bank: tuple[str, ...]
    exemplars: tuple[str, ...]
    test_items: tuple[TestItem, ...]
    partial_pattern: PartialPattern | None = None
    bias_sets: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "type_id": self.type_id,
            "assignment": self.assignment,
            "bank": list(self.bank),
            "exemplars": list(self.exemplars),
            "test_items": [{"string": t.string, "novelty": t.novelty} for t in self.test_items],
            "partial_pattern": (
                None
                if self.partial_pattern is None
                else {
                    "kind": self.partial_pattern.kind,
                    "arity": self.partial_pattern.arity,
                    "completion": list(self.partial_pattern.completion),
                    "reconfigure": list(self.partial_pattern.reconfigure),
                }
            ),
            "bias_sets": {k: list(v) for k, v in sorted(self.bias_sets.items())},
        }

    @classmethod
    def from_json(cls, blob: dict) -> "TrialFixture":
        pp = blob.get("partial_pattern")
        return cls(
            trial_id=blob["trial_id"],
            type_id=blob["type_id"],
            assignment=blob["assignment"],
            bank=tuple(blob["bank"]),
            exemplars=tuple(blob["exemplars"]),
            test_items=tuple(TestItem(t["string"], t["novelty"]) for t in blob["test_items"]),
            partial_pattern=(
                None
                if pp is None
                else PartialPattern(
                    pp["kind"], pp["arity"], tuple(pp["completion"]), tuple(pp["reconfigure"])
                )
            ),
            bias_sets={k: tuple(v) for k, v in blob.get("bias_sets", {}).items()},
        )


def save_trials(trials: Sequence[TrialFixture], path) -> None:
    with open(path, "w") as fh:
        json.dump([t.to_json() for t in trials], fh, indent=1, sort_keys=True)


def load_trials(path) -> list[TrialFixture]:
    with open(path) as fh:
        return [TrialFixture.from_json(b) for b in json.load(fh)]


# ---------------------------------------------------------------------------
# Bank cache: tables/universe/context per primitive subset


class BankCache:
    def __init__(self, max_parts: int = 3, merge_symmetric: bool = True):
        self.max_parts = max_parts
        self.merge_symmetric = merge_symmetric
        self._cache: dict[frozenset, tuple[AttachmentTables, TokenUniverse, EvalContext]] = {}

    def get(self, bank_ids: Sequence[str]):
        key = frozenset(bank_ids)
        if key not in self._cache:
            prims = fixtures.bank_subset(sorted(key))
            tables = AttachmentTables(prims)
            universe = build_universe(
                tables, max_parts=self.max_parts, merge_symmetric=self.merge_symmetric
            )
            ctx = EvalContext(tables, universe)
            self._cache[key] = (tables, universe, ctx)
        return self._cache[key]


@dataclass
class TrialBundle:
    fixture: TrialFixture
    tables: AttachmentTables
    universe: TokenUniverse
    ctx: EvalContext
    grammar: Grammar
    exemplar_ids: tuple[int, ...]
    item_ids: tuple[int, ...]

    @property
    def trial_id(self) -> str:
        return self.fixture.trial_id


# ---------------------------------------------------------------------------
# Token-id helpers used by the recipes


class _Kit:
    def __init__(self, bank: tuple[str, ...], tables, universe, ctx):
        self.bank = bank
        self.tables = tables
        self.universe = universe
        self.ctx = ctx

    def rot(self, tid: int, quarters: int) -> int:
        for _ in range(quarters % 4):
            tid = int(self.universe.rotation_perm[tid])
        return tid

    def single(self, pid: str, theta: int = 0) -> int:
        return self.rot(self.ctx.single_fig(pid), theta)

    def n_pair(self, a: str, b: str) -> int:
        return len(self.ctx.placement_figs(a, b))

    def pair(self, a: str, b: str, k: int = 1, theta: int = 0) -> int:
        figs = self.ctx.placement_figs(a, b)
        return self.rot(figs[(k - 1) % len(figs)], theta)

    def extend(self, base_tid: int, pid: str, i: int = 0, theta: int = 0) -> int:
        options = sorted(self.ctx.extend_fig(base_tid, pid))
        if not options:
            raise ValueError(f"no extension of token {base_tid} by {pid}")
        return self.rot(options[i % len(options)], theta)

    def string(self, tid: int) -> str:
        return self.universe.tokens[tid].string

    def orbit(self, tid: int) -> list[int]:
        out = []
        cur = tid
        for _ in range(4):
            if cur not in out:
                out.append(cur)
            cur = int(self.universe.rotation_perm[cur])
        return out


# ---------------------------------------------------------------------------
# Type recipes: each returns (exemplar ids, partial pattern or None)


def _recipe(type_id: str, kit: _Kit, six: bool):
    A, B, C, D = kit.bank
    u = kit.universe

    def rotations_pattern(base: int, arity: int):
        orbit = [kit.rot(base, t) for t in range(4)]
        support = orbit[:3]
        completion = [orbit[3]] if len(set(orbit)) == 4 else []
        return support, PartialPattern(
            kind="rotations",
            arity=arity,
            completion=tuple(kit.string(t) for t in completion),
            reconfigure=(),
        )

    if type_id == "t01":
        return [kit.pair(A, B, 1)], None
    if type_id == "t02":
        t = kit.pair(A, B, 1)
        return [t, t, t], None
    if type_id == "t03":
        support, pp = rotations_pattern(kit.pair(A, B, 1), arity=2)
        return support, pp
    if type_id == "t04":
        return [kit.pair(A, B, k) for k in (1, 2, 3)], None
    if type_id == "t05":
        return [kit.pair(A, B, 1), kit.pair(A, C, 1), kit.pair(A, D, 1)], None
    if type_id == "t06":
        support = [kit.pair(p, p, 1) for p in (A, B, C)]
        pp = PartialPattern(
            kind="primitives",
            arity=2,
            completion=tuple(
                kit.string(t) for t in sorted(set(kit.orbit(kit.pair(D, D, 1))))
            ),
            reconfigure=(),
        )
        return support, pp
    if type_id == "t07":
        return [kit.single(A)], None
    if type_id == "t08":
        support, pp = rotations_pattern(kit.single(A), arity=1)
        return support, pp
    if type_id == "t09":
        support = [kit.single(p) for p in (A, B, C)]
        pp = PartialPattern(
            kind="primitives",
            arity=1,
            completion=tuple(kit.string(t) for t in sorted(set(kit.orbit(kit.single(D))))),
            reconfigure=(),
        )
        return support, pp
    if type_id == "t10":
        return [kit.single(A), kit.single(B), kit.pair(A, B, 1)], None
    if type_id == "t11":
        return [kit.extend(kit.pair(A, B, 1), C)], None
    if type_id == "t12":
        base = kit.pair(A, B, 1)
        ex = [kit.extend(base, C), kit.extend(base, D), kit.extend(base, A)]
        if six:
            ex += [kit.extend(base, B), kit.extend(base, C, 1), kit.extend(base, D, 1)]
        return ex, None
    if type_id == "t13":
        ex = [kit.pair(A, B, 1), kit.pair(A, C, 1), kit.extend(kit.pair(A, B, 1), C)]
        if six:
            ex += [kit.pair(A, B, 2, theta=1), kit.extend(kit.pair(A, C, 1), D), kit.single(A)]
        return ex, None
    if type_id == "t14":
        ex = [kit.extend(kit.pair(p, p, 1), A) for p in (B, C, D)]
        if six:
            ex += [kit.extend(kit.pair(p, p, 1), A, 1) for p in (B, C, D)]
        return ex, None
    if type_id == "t15":
        support = [
            kit.pair(A, A, 1, theta=0),
            kit.pair(B, B, 1, theta=1),
            kit.pair(C, C, 1, theta=2),
        ]
        if six:
            support += [
                kit.pair(A, A, 2, theta=0),
                kit.pair(B, B, 2, theta=1),
                kit.pair(C, C, 2, theta=2),
            ]
        completion = sorted(set(kit.orbit(kit.pair(D, D, 1))))
        pp = PartialPattern(
            kind="primitives",
            arity=2,
            completion=tuple(kit.string(t) for t in completion),
            reconfigure=(),
        )
        return support, pp
    if type_id == "t16":
        ex = [kit.single(A), kit.single(A, 1), kit.pair(A, A, 1)]
        if six:
            ex += [kit.single(A, 2), kit.pair(A, A, 1, theta=1), kit.pair(A, A, 2)]
        return ex, None
    if type_id == "t17":
        ex = [kit.pair(A, B, 1), kit.pair(A, B, 2, 1), kit.pair(A, B, 3, 2)]
        if six:
            ex += [kit.pair(A, B, 4), kit.pair(A, B, 5, 1), kit.pair(A, B, 1, 3)]
        return ex, None
    if type_id == "t18":
        ex = [kit.single(A), kit.pair(A, B, 1, 1), kit.extend(kit.pair(A, C, 1), D, 0, 2)]
        if six:
            ex += [kit.pair(A, D, 1), kit.extend(kit.pair(A, B, 1), B), kit.single(A, 3)]
        return ex, None
    if type_id == "t19":
        base = kit.extend(kit.pair(A, B, 1), C)
        ex = [kit.rot(base, t) for t in range(3)]
        if six:
            second = kit.extend(kit.pair(A, B, 1), C, 1)
            ex += [kit.rot(second, t) for t in range(3)]
        return ex, None
    if type_id == "t20":
        ex = [kit.single(A), kit.pair(B, C, 1), kit.pair(A, B, 1, 1)]
        if six:
            ex += [kit.single(B, 1), kit.pair(A, C, 1), kit.pair(B, C, 2, 2)]
        return ex, None
    if type_id == "t21":
        ex = [kit.extend(kit.pair(p, p, 1), p) for p in (A, B, C)]
        if six:
            ex += [kit.extend(kit.pair(p, p, 1), p, 1) for p in (A, B, C)]
        return ex, None
    raise ValueError(f"unknown trial type {type_id}")


BASE_TYPES = tuple(f"t{i:02d}" for i in range(1, 12))
HARD_TYPES = tuple(f"t{i:02d}" for i in range(12, 22))


def all_trial_type_ids() -> tuple[str, ...]:
    """31 trial types: 11 base + 10 hard in 3- and 6-exemplar conditions."""
    out = list(BASE_TYPES)
    for t in HARD_TYPES:
        out.extend([f"{t}-3x", f"{t}-6x"])
    return tuple(out)


# ---------------------------------------------------------------------------
# Test items


def _build_items(kit: _Kit, exemplar_ids: list[int], rng: np.random.Generator):
    u = kit.universe
    exemplars = list(dict.fromkeys(exemplar_ids))
    ex_set = set(exemplars)
    used_prims = sorted({p for t in exemplars for p in u.tokens[t].parts})
    unused = [p for p in kit.bank if p not in used_prims]
    items: list[tuple[int, str]] = []
    seen: set[int] = set()

    def add(tid: int | None, novelty: str):
        if tid is None or tid in seen:
            return
        seen.add(tid)
        items.append((tid, novelty))

    add(exemplars[0], "identity")
    # novel rotation of the first exemplar
    for t in range(1, 4):
        r = kit.rot(exemplars[0], t)
        if r not in ex_set:
            add(r, "novel_rotation")
            break
    # novel attachment: same parts, different placement
    first = u.tokens[exemplars[0]]
    if first.n_parts == 2:
        a, b = first.parts
        for k in range(1, kit.n_pair(a, b) + 1):
            cand = kit.pair(a, b, k)
            if cand not in ex_set and all(kit.rot(cand, t) not in ex_set for t in range(4)):
                add(cand, "novel_attachment")
                break
    # more parts: extend the first exemplar
    if first.n_parts < 3:
        try:
            add(kit.extend(exemplars[0], used_prims[0]), "more_parts")
        except ValueError:
            pass
    # other primitive: a single unseen-in-exemplars bank primitive
    if unused:
        add(kit.single(unused[0]), "other_primitive")
    # part: one part of a multi-part exemplar
    if first.n_parts >= 2:
        add(kit.single(first.parts[0]), "part")
        if first.parts[1] != first.parts[0]:
            add(kit.single(first.parts[1], 1), "part")
    # subpart / fewer for 3-part exemplars
    three = [t for t in exemplars if u.tokens[t].n_parts == 3]
    if three:
        parts = u.tokens[three[0]].parts
        add(kit.pair(parts[0], parts[1], 1), "fewer")
    # broader: a token mixing a used and an unused primitive
    if unused and used_prims:
        add(kit.pair(used_prims[0], unused[0], 1), "broader")
    elif len(used_prims) >= 2:
        add(kit.pair(used_prims[0], used_prims[1], 2, 1), "broader")
    # other: unrelated arrangement of the two least-used primitives
    tail = [p for p in kit.bank if p not in used_prims[:1]]
    if len(tail) >= 2:
        add(kit.pair(tail[-2], tail[-1], 2, 1), "other")
    # pad with pseudo-random universe members to reach at least 9 items
    while len(items) < 9:
        cand = int(rng.integers(len(u)))
        add(cand, "other")
    return items[:13]


def _bias_sets(kit: _Kit, exemplar_ids: list[int], pp: PartialPattern | None):
    u = kit.universe
    ex = list(dict.fromkeys(exemplar_ids))
    ex_set = set(ex)
    out: dict[str, tuple[str, ...]] = {}
    rot_set = []
    for t in ex:
        for k in range(1, 4):
            r = kit.rot(t, k)
            if r not in ex_set:
                rot_set.append(r)
    if rot_set:
        out["orientation_invariance"] = tuple(
            sorted({kit.string(t) for t in rot_set})
        )
    att = []
    for t in ex:
        tok = u.tokens[t]
        if tok.n_parts == 2:
            a, b = tok.parts
            for k in range(1, kit.n_pair(a, b) + 1):
                cand = kit.pair(a, b, k)
                orbit = set(kit.orbit(cand))
                if not (orbit & ex_set):
                    att.extend(orbit)
    if att:
        out["attachment_invariance"] = tuple(sorted({kit.string(t) for t in att}))
    if pp is not None:
        out["completion"] = pp.completion
        reconf = _reconfigure_set(kit, ex)
        reconf = tuple(s for s in reconf if s not in set(pp.completion))
        out["reconfigure"] = reconf
    return out


def _reconfigure_set(kit: _Kit, exemplar_ids: list[int]) -> tuple[str, ...]:
    """Tokens whose parts come only from the support, whose part multiset
    contains some support token's, and whose figure is novel."""
    u = kit.universe
    ex_set = set(exemplar_ids)
    support_prims = {p for t in exemplar_ids for p in u.tokens[t].parts}
    support_multisets = [tuple(sorted(u.tokens[t].parts)) for t in exemplar_ids]
    out = []
    for tok in u.tokens:
        if tok.index in ex_set:
            continue
        parts = tok.parts
        if not set(parts) <= support_prims:
            continue
        ms = tuple(sorted(parts))
        ok = False
        for sm in support_multisets:
            counts = {p: ms.count(p) for p in set(sm)}
            if all(counts.get(p, 0) >= sm.count(p) for p in set(sm)):
                ok = True
                break
        if ok:
            out.append(tok.string)
    return tuple(sorted(out))


# ---------------------------------------------------------------------------
# Assignment sampling and top-level generation


def _draw_bank(rng: np.random.Generator, need_asymmetric_lead: bool) -> tuple[str, ...]:
    pool = list(fixtures._BANK_SPECS)
    prims = {p.id: p for p in fixtures.full_bank()}
    while True:
        ids = list(rng.choice(pool, size=4, replace=False))
        if need_asymmetric_lead:
            asym = [i for i in ids if prims[i].symmetry == 1]
            if not asym:
                continue
            lead = asym[0]
            ids.remove(lead)
            ids = [lead] + ids
        return tuple(str(i) for i in ids)


def generate_trials(
    seed: int = 0,
    types: Sequence[str] | None = None,
    n_assignments: int = 5,
    cache: BankCache | None = None,
) -> list[TrialBundle]:
    """Instantiate trial fixtures with runtime handles, deterministically."""
    cache = cache or BankCache()
    import zlib

    type_ids = tuple(types) if types is not None else all_trial_type_ids()
    bundles: list[TrialBundle] = []
    for type_id in type_ids:
        base = type_id.split("-")[0]
        six = type_id.endswith("-6x")
        needs_asym = base in ("t03", "t08", "t19")
        seqs = np.random.SeedSequence(
            (seed, zlib.crc32(type_id.encode()))
        ).spawn(n_assignments)
        for a_idx in range(n_assignments):
            rng = np.random.default_rng(seqs[a_idx])
            bank = _draw_bank(rng, needs_asym)
            tables, universe, ctx = cache.get(bank)
            kit = _Kit(bank, tables, universe, ctx)
            exemplar_ids, pp = _recipe(base, kit, six)
            items = _build_items(kit, list(exemplar_ids), rng)
            bias = _bias_sets(kit, list(exemplar_ids), pp)
            fixture = TrialFixture(
                trial_id=f"{type_id}-a{a_idx}",
                type_id=type_id,
                assignment=a_idx,
                bank=bank,
                exemplars=tuple(kit.string(t) for t in exemplar_ids),
                test_items=tuple(
                    TestItem(kit.string(t), novelty) for t, novelty in items
                ),
                partial_pattern=pp,
                bias_sets=bias,
            )
            grammar = default_grammar(tables, bank_ids=tuple(sorted(bank)))
            bundles.append(
                TrialBundle(
                    fixture=fixture,
                    tables=tables,
                    universe=universe,
                    ctx=ctx,
                    grammar=grammar,
                    exemplar_ids=tuple(exemplar_ids),
                    item_ids=tuple(t for t, _ in items),
                )
            )
    return bundles


def bundle_from_fixture(fixture: TrialFixture, cache: BankCache | None = None) -> TrialBundle:
    """Rehydrate runtime handles for a fixture loaded from JSON."""
    from .tokens import parse_token

    cache = cache or BankCache()
    tables, universe, ctx = cache.get(fixture.bank)
    grammar = default_grammar(tables, bank_ids=tuple(sorted(fixture.bank)))
    ex = tuple(parse_token(s, tables, universe).index for s in fixture.exemplars)
    items = tuple(parse_token(t.string, tables, universe).index for t in fixture.test_items)
    return TrialBundle(
        fixture=fixture,
        tables=tables,
        universe=universe,
        ctx=ctx,
        grammar=grammar,
        exemplar_ids=ex,
        item_ids=items,
    )
