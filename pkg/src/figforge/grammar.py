"""Concept DSL: probabilistic context-free grammar, prior, sampling, lesions.

Programs are nested tuples:

    ("rotate_all", SET)                   (rotate E)        orientation-closed
    ("rotate_at", SET, angle)             (rotate* E 180)   fixed orientation
    ("pair_all", a, b)                    (attach a b)      every configuration
    ("pair_at", a, b, k)                  (attach* a b 1)   configuration k
    ("has", p)                            (has p)           defining part
    ("only", (p, q, ...))                 (only p q)        restricted vocabulary
    ("single", p)                         (single p)        one-part concept
    ("extend", PAIRish, p)                (extend E p)      pair plus third part
    ("map", XBODY, (p, q, ...))           (map (lambda x B) (set p q))

Lambda bodies (XBODY) take one of four forms:

    ("xx",)                               (attach x x)
    ("xpair_extend", PAIR)                (extend E x)
    ("xx_extend_fixed", p)                (extend (attach x x) p)
    ("xx_extend_x",)                      (extend (attach x x) x)

The eight behaviorally meaningful probabilities are p_RI (START ->
rotate_all), p_AI (PAIR -> pair_all) and the six SET branch
probabilities; all other expansions stay uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .geometry import AttachmentTables


class GrammarError(ValueError):
    pass


class NotDerivableError(GrammarError):
    pass


class AllRulesLesionedError(GrammarError):
    pass


class DepthExceededError(GrammarError):
    pass


Program = tuple

SET_RULES = ("pair", "has", "only", "map", "single", "extend")
START_RULES = ("rotate_all", "rotate_at")
PAIR_RULES = ("pair_all", "pair_at")
XBODY_RULES = ("xx", "xpair_extend", "xx_extend_fixed", "xx_extend_x")
ANGLES = (0, 90, 180, 270)

FITTED_PARAM_NAMES = (
    "p_ri",
    "p_ai",
    "set_pair",
    "set_has",
    "set_only",
    "set_map",
    "set_single",
    "set_extend",
)

# layout of the theta-dependent rule-count feature vector
COUNT_INDEX = {
    ("START", "rotate_all"): 0,
    ("START", "rotate_at"): 1,
    ("SET", "pair"): 2,
    ("SET", "has"): 3,
    ("SET", "only"): 4,
    ("SET", "map"): 5,
    ("SET", "single"): 6,
    ("SET", "extend"): 7,
    ("PAIR", "pair_all"): 8,
    ("PAIR", "pair_at"): 9,
}
N_COUNTS = 10


def part_subsets(bank_ids: Sequence[str]) -> tuple[tuple[str, ...], ...]:
    out = []
    for r in range(2, len(bank_ids) + 1):
        out.extend(tuple(c) for c in combinations(sorted(bank_ids), r))
    return tuple(out)


@dataclass(frozen=True)
class Grammar:
    bank_ids: tuple[str, ...]
    n_configs: dict[tuple[str, str], int] = field(hash=False)
    theta_start: tuple[float, float] = (0.5, 0.5)
    theta_set: tuple[float, ...] = tuple([1 / 6] * 6)
    theta_pair: tuple[float, float] = (0.5, 0.5)
    lesions: frozenset[str] = frozenset()

    @property
    def psets(self) -> tuple[tuple[str, ...], ...]:
        return part_subsets(self.bank_ids)

    @property
    def p_ri(self) -> float:
        return self.theta_start[0]

    @property
    def p_ai(self) -> float:
        return self.theta_pair[0]

    def fitted_mask(self) -> tuple[str, ...]:
        names = list(FITTED_PARAM_NAMES)
        if "dp_off" in self.lesions:
            names.remove("set_has")
        if "var_off" in self.lesions:
            names.remove("set_map")
        return tuple(names)

    def params_vector(self) -> np.ndarray:
        return np.array([self.p_ri, self.p_ai, *self.theta_set])

    def config_range(self, a: str, b: str) -> int:
        key = (min(a, b), max(a, b))
        if key not in self.n_configs:
            raise GrammarError(f"no configuration table for pair {key}")
        return self.n_configs[key]

    def log_theta(self) -> np.ndarray:
        probs = np.array([*self.theta_start, *self.theta_set, *self.theta_pair])
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def with_params(
        self,
        p_ri: float | None = None,
        p_ai: float | None = None,
        theta_set: Sequence[float] | None = None,
    ) -> "Grammar":
        ts = self.theta_start if p_ri is None else (float(p_ri), 1.0 - float(p_ri))
        tp = self.theta_pair if p_ai is None else (float(p_ai), 1.0 - float(p_ai))
        tset = self.theta_set if theta_set is None else tuple(float(v) for v in theta_set)
        if abs(sum(tset) - 1.0) > 1e-9:
            raise GrammarError(f"SET probabilities sum to {sum(tset)}, not 1")
        for name, vec in (("START", ts), ("SET", tset), ("PAIR", tp)):
            if any(v < -1e-12 for v in vec):
                raise GrammarError(f"negative probability in {name}")
        g = Grammar(
            bank_ids=self.bank_ids,
            n_configs=self.n_configs,
            theta_start=ts,
            theta_set=tset,
            theta_pair=tp,
            lesions=self.lesions,
        )
        _check_lesion_consistency(g)
        return g


def _check_lesion_consistency(g: Grammar) -> None:
    if "dp_off" in g.lesions and g.theta_set[SET_RULES.index("has")] != 0.0:
        raise GrammarError("dp_off grammar with nonzero has-probability")
    if "var_off" in g.lesions and g.theta_set[SET_RULES.index("map")] != 0.0:
        raise GrammarError("var_off grammar with nonzero map-probability")
    for name, vec in (("START", g.theta_start), ("SET", g.theta_set), ("PAIR", g.theta_pair)):
        if all(v == 0.0 for v in vec):
            raise AllRulesLesionedError(f"every {name} rule has probability zero")


def default_grammar(tables: AttachmentTables, bank_ids: Sequence[str] | None = None) -> Grammar:
    ids = tuple(bank_ids) if bank_ids is not None else tables.ids
    n_configs = {}
    for i, a in enumerate(sorted(ids)):
        for b in sorted(ids)[i:]:
            n_configs[(a, b)] = tables.n_configs(a, b)
    return Grammar(bank_ids=ids, n_configs=n_configs)


def lesion(g: Grammar, dp_off: bool = False, var_off: bool = False) -> Grammar:
    """Zero out ablated SET branches and renormalize the survivors."""
    flags = set(g.lesions)
    vec = list(g.theta_set)
    if dp_off:
        flags.add("dp_off")
        vec[SET_RULES.index("has")] = 0.0
    if var_off:
        flags.add("var_off")
        vec[SET_RULES.index("map")] = 0.0
    total = sum(vec)
    if total == 0:
        raise AllRulesLesionedError("every SET rule has probability zero")
    vec = [v / total for v in vec]
    out = Grammar(
        bank_ids=g.bank_ids,
        n_configs=g.n_configs,
        theta_start=g.theta_start,
        theta_set=tuple(vec),
        theta_pair=g.theta_pair,
        lesions=frozenset(flags),
    )
    _check_lesion_consistency(out)
    return out


# ---------------------------------------------------------------------------
# Structure helpers


def rule_counts(program: Program) -> np.ndarray:
    """Counts of theta-dependent expansions in the derivation."""
    counts = np.zeros(N_COUNTS, dtype=np.int64)

    def visit_pair(node):
        kind = node[0]
        counts[COUNT_INDEX[("PAIR", kind)]] += 1

    kind = program[0]
    counts[COUNT_INDEX[("START", kind)]] += 1
    body = program[1]
    set_kind = body[0]
    if set_kind in ("pair_all", "pair_at"):
        counts[COUNT_INDEX[("SET", "pair")]] += 1
        visit_pair(body)
    elif set_kind == "extend":
        counts[COUNT_INDEX[("SET", "extend")]] += 1
        visit_pair(body[1])
    elif set_kind == "map":
        counts[COUNT_INDEX[("SET", "map")]] += 1
        xbody = body[1]
        if xbody[0] == "xpair_extend":
            visit_pair(xbody[1])
    elif set_kind in ("has", "only", "single"):
        counts[COUNT_INDEX[("SET", set_kind)]] += 1
    else:
        raise GrammarError(f"unknown SET node {set_kind}")
    return counts


def _const_parts(program: Program, g: Grammar) -> float:
    """Log-probability mass from uniform (unfitted) expansions: PART, PSET,
    ANGLE, CONFIG and XBODY choices."""
    n_part = len(g.bank_ids)
    n_pset = len(g.psets)
    log_part = -math.log(n_part)
    out = 0.0
    kind = program[0]
    if kind == "rotate_at":
        out += -math.log(len(ANGLES))
    body = program[1]

    def pair_const(node):
        nonlocal out
        if node[0] == "pair_all":
            out += 2 * log_part
        else:
            _, a, b, k = node
            out += 2 * log_part - math.log(g.config_range(a, b))

    set_kind = body[0]
    if set_kind in ("pair_all", "pair_at"):
        pair_const(body)
    elif set_kind == "has":
        out += log_part
    elif set_kind == "only":
        out += -math.log(n_pset)
    elif set_kind == "single":
        out += log_part
    elif set_kind == "extend":
        pair_const(body[1])
        out += log_part
    elif set_kind == "map":
        xbody = body[1]
        out += -math.log(len(XBODY_RULES))  # lambda-body form
        out += -math.log(n_pset)  # source set
        if xbody[0] == "xpair_extend":
            pair_const(xbody[1])
        elif xbody[0] == "xx_extend_fixed":
            out += log_part
    return out


def uses_rule(program: Program, nt: str, rule: str) -> bool:
    counts = rule_counts(program)
    return counts[COUNT_INDEX[(nt, rule)]] > 0


def log_prior(g: Grammar, program: Program, T_p: float = 1.0) -> float:
    """(1 / T_p) * log P(program; theta); NotDerivable under a lesion."""
    validate_program(program, g)
    counts = rule_counts(program)
    theta = np.array([*g.theta_start, *g.theta_set, *g.theta_pair])
    used = counts > 0
    if np.any(theta[used] == 0.0):
        raise NotDerivableError("program uses a rule with probability zero")
    lp = float(np.dot(counts, np.where(used, np.log(np.where(theta > 0, theta, 1.0)), 0.0)))
    lp += _const_parts(program, g)
    if T_p <= 0:
        raise GrammarError("prior temperature must be positive")
    return lp / T_p


def validate_program(program: Program, g: Grammar) -> None:
    """Well-typedness plus literal validity against the bank."""
    def check_part(p):
        if p not in g.bank_ids:
            raise NotDerivableError(f"part {p!r} not in bank")

    def check_pair(node):
        if node[0] == "pair_all":
            _, a, b = node
            check_part(a)
            check_part(b)
        elif node[0] == "pair_at":
            _, a, b, k = node
            check_part(a)
            check_part(b)
            if not 1 <= k <= g.config_range(a, b):
                raise NotDerivableError(
                    f"config {k} outside 1..{g.config_range(a, b)} for ({a},{b})"
                )
        else:
            raise NotDerivableError(f"expected pair node, got {node[0]}")

    if program[0] == "rotate_at":
        if program[2] not in ANGLES:
            raise NotDerivableError(f"bad angle {program[2]}")
    elif program[0] != "rotate_all":
        raise NotDerivableError(f"program must start with a rotation node, got {program[0]}")
    body = program[1]
    kind = body[0]
    if kind in ("pair_all", "pair_at"):
        check_pair(body)
    elif kind == "has":
        check_part(body[1])
    elif kind == "single":
        check_part(body[1])
    elif kind == "only":
        if body[1] not in g.psets:
            raise NotDerivableError(f"part set {body[1]} not a grammar option")
    elif kind == "extend":
        check_pair(body[1])
        check_part(body[2])
    elif kind == "map":
        xbody, src = body[1], body[2]
        if src not in g.psets:
            raise NotDerivableError(f"part set {src} not a grammar option")
        if xbody[0] == "xpair_extend":
            check_pair(xbody[1])
        elif xbody[0] == "xx_extend_fixed":
            check_part(xbody[1])
        elif xbody[0] not in ("xx", "xx_extend_x"):
            raise NotDerivableError(f"unknown lambda body {xbody[0]}")
    else:
        raise NotDerivableError(f"unknown SET node {kind}")


def program_depth(program: Program) -> int:
    def depth(node) -> int:
        if not isinstance(node, tuple):
            return 1
        if not node:
            return 1
        return 1 + max((depth(c) for c in node[1:]), default=0)

    return depth(program)


# ---------------------------------------------------------------------------
# Sampling and enumeration


def _choose(rng: np.random.Generator, probs: Sequence[float]) -> int:
    return int(rng.choice(len(probs), p=np.asarray(probs)))


def sample_program(
    g: Grammar,
    rng: np.random.Generator,
    max_depth: int = 12,
    overflow_counter: dict | None = None,
    max_resamples: int = 1000,
) -> Program:
    """Ancestral sample from the prior, resampling on depth overflow.  The
    grammar is finite, so overflow never fires at the default cap."""
    overflow = overflow_counter if overflow_counter is not None else {"n": 0}
    for _ in range(max_resamples):
        try:
            return _sample(g, rng, max_depth, overflow)
        except DepthExceededError:
            continue
    raise DepthExceededError(f"{max_resamples} resamples exceeded depth {max_depth}")


def _sample(g: Grammar, rng, max_depth: int, overflow: dict) -> Program:
    ids = g.bank_ids

    def part() -> str:
        return ids[_choose(rng, [1 / len(ids)] * len(ids))]

    def pair_node() -> Program:
        r = _choose(rng, g.theta_pair)
        a, b = part(), part()
        if r == 0:
            return ("pair_all", a, b)
        k = 1 + _choose(rng, [1 / g.config_range(a, b)] * g.config_range(a, b))
        return ("pair_at", a, b, k)

    def pset() -> tuple[str, ...]:
        opts = g.psets
        return opts[_choose(rng, [1 / len(opts)] * len(opts))]

    s = _choose(rng, g.theta_set)
    set_kind = SET_RULES[s]
    if set_kind == "pair":
        body: Program = pair_node()
    elif set_kind == "has":
        body = ("has", part())
    elif set_kind == "only":
        body = ("only", pset())
    elif set_kind == "single":
        body = ("single", part())
    elif set_kind == "extend":
        body = ("extend", pair_node(), part())
    else:  # map
        xb = XBODY_RULES[_choose(rng, [1 / 4] * 4)]
        if xb == "xx":
            xbody: Program = ("xx",)
        elif xb == "xpair_extend":
            xbody = ("xpair_extend", pair_node())
        elif xb == "xx_extend_fixed":
            xbody = ("xx_extend_fixed", part())
        else:
            xbody = ("xx_extend_x",)
        body = ("map", xbody, pset())
    if _choose(rng, g.theta_start) == 0:
        prog: Program = ("rotate_all", body)
    else:
        prog = ("rotate_at", body, ANGLES[_choose(rng, [1 / 4] * 4)])
    if program_depth(prog) > max_depth:
        overflow["n"] += 1
        raise DepthExceededError("sampled program exceeded depth cap")
    return prog


def enumerate_programs(
    g: Grammar, max_depth: int | None = None, limit: int | None = None
) -> list[tuple[Program, float]]:
    """Exhaustive (program, log prior) enumeration; the grammar is finite.

    Programs using lesioned rules are excluded.  `max_depth` truncates by
    AST height; `limit` guards runaway counts.
    """
    ids = sorted(g.bank_ids)
    pairs: list[Program] = []
    if g.theta_pair[0] > 0:
        pairs.extend(("pair_all", a, b) for a in ids for b in ids)
    if g.theta_pair[1] > 0:
        for a in ids:
            for b in ids:
                pairs.extend(("pair_at", a, b, k) for k in range(1, g.config_range(a, b) + 1))
    bodies: list[Program] = []
    tset = g.theta_set
    if tset[SET_RULES.index("pair")] > 0:
        bodies.extend(pairs)
    if tset[SET_RULES.index("has")] > 0:
        bodies.extend(("has", p) for p in ids)
    if tset[SET_RULES.index("only")] > 0:
        bodies.extend(("only", s) for s in g.psets)
    if tset[SET_RULES.index("map")] > 0:
        xbodies: list[Program] = [("xx",), ("xx_extend_x",)]
        xbodies.extend(("xpair_extend", pr) for pr in pairs)
        xbodies.extend(("xx_extend_fixed", p) for p in ids)
        bodies.extend(("map", xb, s) for xb in xbodies for s in g.psets)
    if tset[SET_RULES.index("single")] > 0:
        bodies.extend(("single", p) for p in ids)
    if tset[SET_RULES.index("extend")] > 0:
        bodies.extend(("extend", pr, p) for pr in pairs for p in ids)
    programs: list[Program] = []
    if g.theta_start[0] > 0:
        programs.extend(("rotate_all", b) for b in bodies)
    if g.theta_start[1] > 0:
        programs.extend(("rotate_at", b, ang) for b in bodies for ang in ANGLES)
    out = []
    for p in programs:
        if max_depth is not None and program_depth(p) > max_depth:
            continue
        out.append((p, log_prior(g, p)))
        if limit is not None and len(out) > limit:
            raise GrammarError(f"enumeration exceeded limit {limit}")
    return out


def spectral_radius(g: Grammar) -> float:
    """Spectral radius of the nonterminal mean matrix (0 for this finite
    grammar; kept as the subcriticality contract)."""
    nts = ["START", "SET", "PAIR", "XBODY"]
    idx = {nt: i for i, nt in enumerate(nts)}
    m = np.zeros((4, 4))
    m[idx["START"], idx["SET"]] = 1.0
    tset = g.theta_set
    m[idx["SET"], idx["PAIR"]] = tset[SET_RULES.index("pair")] + tset[SET_RULES.index("extend")]
    m[idx["SET"], idx["XBODY"]] = tset[SET_RULES.index("map")]
    m[idx["XBODY"], idx["PAIR"]] = 0.25  # xpair_extend
    return float(max(abs(np.linalg.eigvals(m))))


# ---------------------------------------------------------------------------
# Surface syntax


def program_to_sexpr(program: Program) -> str:
    def pair_s(node) -> str:
        if node[0] == "pair_all":
            return f"(attach {node[1]} {node[2]})"
        return f"(attach* {node[1]} {node[2]} {node[3]})"

    def body_s(node) -> str:
        kind = node[0]
        if kind in ("pair_all", "pair_at"):
            return pair_s(node)
        if kind == "has":
            return f"(has {node[1]})"
        if kind == "only":
            return "(only {})".format(" ".join(node[1]))
        if kind == "single":
            return f"(single {node[1]})"
        if kind == "extend":
            return f"(extend {pair_s(node[1])} {node[2]})"
        if kind == "map":
            xbody = node[1]
            if xbody[0] == "xx":
                bs = "(attach x x)"
            elif xbody[0] == "xpair_extend":
                bs = f"(extend {pair_s(xbody[1])} x)"
            elif xbody[0] == "xx_extend_fixed":
                bs = f"(extend (attach x x) {xbody[1]})"
            else:
                bs = "(extend (attach x x) x)"
            return "(map (lambda x {}) (set {}))".format(bs, " ".join(node[2]))
        raise GrammarError(f"unknown node {kind}")

    if program[0] == "rotate_all":
        return f"(rotate {body_s(program[1])})"
    return f"(rotate* {body_s(program[1])} {program[2]})"


def _read_sexpr(text: str):
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()

    def read(pos):
        if tokens[pos] == "(":
            out = []
            pos += 1
            while tokens[pos] != ")":
                node, pos = read(pos)
                out.append(node)
            return out, pos + 1
        return tokens[pos], pos + 1

    tree, pos = read(0)
    if pos != len(tokens):
        raise GrammarError(f"trailing tokens in {text!r}")
    return tree


def parse_sexpr(text: str) -> Program:
    tree = _read_sexpr(text)

    def as_pair(node) -> Program:
        if node[0] == "attach" and len(node) == 3:
            return ("pair_all", node[1], node[2])
        if node[0] == "attach*" and len(node) == 4:
            return ("pair_at", node[1], node[2], int(node[3]))
        raise GrammarError(f"expected attach form, got {node}")

    def as_body(node) -> Program:
        head = node[0]
        if head in ("attach", "attach*"):
            return as_pair(node)
        if head == "has":
            return ("has", node[1])
        if head == "only":
            return ("only", tuple(node[1:]))
        if head == "single":
            return ("single", node[1])
        if head == "extend":
            inner, last = node[1], node[2]
            if last == "x":
                if inner == ["attach", "x", "x"]:
                    raise GrammarError("bare lambda body outside map")
                raise GrammarError("variable outside lambda")
            if inner == ["attach", "x", "x"]:
                raise GrammarError("variable outside lambda")
            return ("extend", as_pair(inner), last)
        if head == "map":
            lam, src = node[1], node[2]
            if lam[0] != "lambda" or lam[1] != "x":
                raise GrammarError(f"expected (lambda x ...), got {lam}")
            if src[0] != "set":
                raise GrammarError(f"expected (set ...), got {src}")
            b = lam[2]
            if b == ["attach", "x", "x"]:
                xbody: Program = ("xx",)
            elif b[0] == "extend" and b[2] == "x" and b[1] == ["attach", "x", "x"]:
                xbody = ("xx_extend_x",)
            elif b[0] == "extend" and b[2] == "x":
                xbody = ("xpair_extend", as_pair(b[1]))
            elif b[0] == "extend" and b[1] == ["attach", "x", "x"]:
                xbody = ("xx_extend_fixed", b[2])
            else:
                raise GrammarError(f"unsupported lambda body {b}")
            return ("map", xbody, tuple(src[1:]))
        raise GrammarError(f"unknown body form {head}")

    if tree[0] == "rotate" and len(tree) == 2:
        return ("rotate_all", as_body(tree[1]))
    if tree[0] == "rotate*" and len(tree) == 3:
        return ("rotate_at", as_body(tree[1]), int(tree[2]))
    raise GrammarError(f"program must be (rotate ...) or (rotate* ...): {tree[0]}")
