"""Hypothesis-space construction by tree-regeneration MCMC, tempered
posteriors, classification and the generation predictive."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import grammar as gr
from .grammar import Grammar, NotDerivableError, Program
from .interpreter import (
    EmptyExtensionError,
    EvalContext,
    Extension,
    Hypothesis,
    evaluate,
    log_likelihood,
)
from .tokens import Token, TokenUniverse


class InferenceError(ValueError):
    pass


class NoViableHypothesisError(InferenceError):
    pass


# ---------------------------------------------------------------------------
# Fit parameters


@dataclass(frozen=True)
class FitParams:
    p_ri: float = 0.5
    p_ai: float = 0.5
    theta_set: tuple[float, ...] = tuple([1 / 6] * 6)
    alpha: float = 0.95
    beta: float = 0.5
    T_p: float = 1.0
    T_l: float = 1.0

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise InferenceError("alpha and beta must lie in [0, 1]")
        if not (self.T_p > 0 and self.T_l > 0):
            raise InferenceError("temperatures must be positive")
        if not (0.0 <= self.p_ri <= 1.0 and 0.0 <= self.p_ai <= 1.0):
            raise InferenceError("p_ri and p_ai must lie in [0, 1]")
        if abs(sum(self.theta_set) - 1.0) > 1e-8 or any(v < 0 for v in self.theta_set):
            raise InferenceError("theta_set must be a probability vector")

    def log_theta_vector(self) -> np.ndarray:
        """log-probabilities aligned with grammar.COUNT_INDEX."""
        probs = np.array(
            [
                self.p_ri,
                1.0 - self.p_ri,
                *self.theta_set,
                self.p_ai,
                1.0 - self.p_ai,
            ]
        )
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def apply_to(self, g: Grammar) -> Grammar:
        return g.with_params(p_ri=self.p_ri, p_ai=self.p_ai, theta_set=self.theta_set)


# ---------------------------------------------------------------------------
# Tree-regeneration MCMC

# Regeneration sites: nonterminal positions resampled from the prior.  PART
# operands of attach nodes regenerate together with their configuration id
# (the id range depends on the operand pair), all other sites individually.


def _sites(program: Program) -> list[tuple]:
    sites: list[tuple] = [("start",), ("set",)]
    body = program[1]
    kind = body[0]
    if program[0] == "rotate_at":
        sites.append(("angle",))
    if kind in ("pair_all", "pair_at"):
        sites.append(("pair", "body"))
        if kind == "pair_at":
            sites.append(("config", "body"))
    elif kind == "has" or kind == "single":
        sites.append(("part", "body", 1))
    elif kind == "only":
        sites.append(("pset", "body", 1))
    elif kind == "extend":
        sites.append(("pair", "inner"))
        if body[1][0] == "pair_at":
            sites.append(("config", "inner"))
        sites.append(("part", "body", 2))
    elif kind == "map":
        sites.append(("xbody",))
        sites.append(("pset", "body", 2))
        xbody = body[1]
        if xbody[0] == "xpair_extend":
            sites.append(("pair", "xinner"))
            if xbody[1][0] == "pair_at":
                sites.append(("config", "xinner"))
        elif xbody[0] == "xx_extend_fixed":
            sites.append(("part", "xbody", 1))
    return sites


def _sample_pair(g: Grammar, rng: np.random.Generator) -> tuple[Program, float]:
    ids = g.bank_ids
    lp = 0.0
    a = ids[int(rng.integers(len(ids)))]
    b = ids[int(rng.integers(len(ids)))]
    lp += -2 * math.log(len(ids))
    if rng.random() < g.theta_pair[0]:
        return ("pair_all", a, b), lp + math.log(g.theta_pair[0])
    k = 1 + int(rng.integers(g.config_range(a, b)))
    return ("pair_at", a, b, k), lp + math.log(g.theta_pair[1]) - math.log(
        g.config_range(a, b)
    )


def _logp_pair(g: Grammar, node: Program) -> float:
    ids = g.bank_ids
    lp = -2 * math.log(len(ids))
    if node[0] == "pair_all":
        return lp + math.log(g.theta_pair[0])
    return lp + math.log(g.theta_pair[1]) - math.log(g.config_range(node[1], node[2]))


def _get_pair(program: Program, where: str) -> Program:
    if where == "body":
        return program[1]
    if where == "inner":
        return program[1][1]
    return program[1][1][1]  # xinner


def _replace_pair(program: Program, where: str, new: Program) -> Program:
    body = program[1]
    if where == "body":
        new_body = new
    elif where == "inner":
        new_body = (body[0], new) + body[2:]
    else:  # xinner
        xbody = body[1]
        new_body = (body[0], (xbody[0], new)) + body[2:]
    return (program[0], new_body) + program[2:]


def _regen(
    g: Grammar, program: Program, site: tuple, rng: np.random.Generator
) -> tuple[Program, float, float]:
    """Resample the site from the prior; returns (new_program, logq_new,
    logq_old) for the regenerated fragment."""
    kind = site[0]
    ids = g.bank_ids
    body = program[1]
    if kind == "start":
        # resample the whole program
        new = gr.sample_program(g, rng)
        return new, gr.log_prior(g, new), gr.log_prior(g, program)
    if kind == "set":
        old_body_lp = _set_logp(g, body)
        new_body, new_lp = _sample_set(g, rng)
        return (program[0], new_body) + program[2:], new_lp, old_body_lp
    if kind == "angle":
        new_angle = gr.ANGLES[int(rng.integers(4))]
        return (program[0], body, new_angle), -math.log(4), -math.log(4)
    if kind == "pair":
        old = _get_pair(program, site[1])
        new, new_lp = _sample_pair(g, rng)
        return _replace_pair(program, site[1], new), new_lp, _logp_pair(g, old)
    if kind == "config":
        old = _get_pair(program, site[1])
        _, a, b, _k = old
        n = g.config_range(a, b)
        new_k = 1 + int(rng.integers(n))
        new = ("pair_at", a, b, new_k)
        return _replace_pair(program, site[1], new), -math.log(n), -math.log(n)
    if kind == "part":
        new_part = ids[int(rng.integers(len(ids)))]
        lp = -math.log(len(ids))
        if site[1] == "body":
            new_body = body[: site[2]] + (new_part,) + body[site[2] + 1:]
            return (program[0], new_body) + program[2:], lp, lp
        xbody = body[1]
        new_x = xbody[: site[2]] + (new_part,) + xbody[site[2] + 1:]
        return (program[0], (body[0], new_x) + body[2:]) + program[2:], lp, lp
    if kind == "pset":
        opts = g.psets
        new_set = opts[int(rng.integers(len(opts)))]
        lp = -math.log(len(opts))
        new_body = body[: site[2]] + (new_set,) + body[site[2] + 1:]
        return (program[0], new_body) + program[2:], lp, lp
    if kind == "xbody":
        old_lp = _xbody_logp(g, body[1])
        new_x, new_lp = _sample_xbody(g, rng)
        return (program[0], (body[0], new_x, body[2])) + program[2:], new_lp, old_lp
    raise InferenceError(f"unknown site {site}")


def _sample_set(g: Grammar, rng: np.random.Generator) -> tuple[Program, float]:
    probs = np.asarray(g.theta_set)
    s = int(rng.choice(6, p=probs))
    name = gr.SET_RULES[s]
    lp = math.log(probs[s])
    ids = g.bank_ids
    if name == "pair":
        node, sub = _sample_pair(g, rng)
        return node, lp + sub
    if name == "has":
        return ("has", ids[int(rng.integers(len(ids)))]), lp - math.log(len(ids))
    if name == "only":
        opts = g.psets
        return ("only", opts[int(rng.integers(len(opts)))]), lp - math.log(len(opts))
    if name == "single":
        return ("single", ids[int(rng.integers(len(ids)))]), lp - math.log(len(ids))
    if name == "extend":
        node, sub = _sample_pair(g, rng)
        part = ids[int(rng.integers(len(ids)))]
        return ("extend", node, part), lp + sub - math.log(len(ids))
    xb, xlp = _sample_xbody(g, rng)
    opts = g.psets
    return ("map", xb, opts[int(rng.integers(len(opts)))]), lp + xlp - math.log(len(opts))


def _sample_xbody(g: Grammar, rng: np.random.Generator) -> tuple[Program, float]:
    ids = g.bank_ids
    r = int(rng.integers(4))
    lp = -math.log(4)
    if r == 0:
        return ("xx",), lp
    if r == 1:
        node, sub = _sample_pair(g, rng)
        return ("xpair_extend", node), lp + sub
    if r == 2:
        return ("xx_extend_fixed", ids[int(rng.integers(len(ids)))]), lp - math.log(len(ids))
    return ("xx_extend_x",), lp


def _xbody_logp(g: Grammar, xbody: Program) -> float:
    lp = -math.log(4)
    if xbody[0] == "xpair_extend":
        return lp + _logp_pair(g, xbody[1])
    if xbody[0] == "xx_extend_fixed":
        return lp - math.log(len(g.bank_ids))
    return lp


def _set_logp(g: Grammar, body: Program) -> float:
    kind = body[0]
    tset = g.theta_set
    ids = g.bank_ids
    if kind in ("pair_all", "pair_at"):
        return math.log(tset[gr.SET_RULES.index("pair")]) + _logp_pair(g, body)
    if kind == "has":
        return math.log(tset[1]) - math.log(len(ids))
    if kind == "only":
        return math.log(tset[2]) - math.log(len(g.psets))
    if kind == "map":
        return math.log(tset[3]) + _xbody_logp(g, body[1]) - math.log(len(g.psets))
    if kind == "single":
        return math.log(tset[4]) - math.log(len(ids))
    return math.log(tset[5]) + _logp_pair(g, body[1]) - math.log(len(ids))


@dataclass
class ChainRecord:
    program: Program
    log_prior: float
    log_lik: float
    visits: int = 0

    @property
    def score(self) -> float:
        return self.log_prior + self.log_lik


@dataclass
class ChainResult:
    records: dict[Program, ChainRecord]
    accepted: int = 0
    proposed: int = 0

    def visited(self) -> list[ChainRecord]:
        return list(self.records.values())


def _score_program(
    program: Program, g: Grammar, ctx: EvalContext, exemplars: Sequence[int]
) -> tuple[float, float]:
    try:
        lp = gr.log_prior(g, program)
    except NotDerivableError:
        return -math.inf, -math.inf
    try:
        ext = evaluate(program, ctx, g)
    except EmptyExtensionError:
        return lp, -math.inf
    h = Hypothesis(program=program, extension=ext, log_prior_raw=lp)
    return lp, log_likelihood(h, exemplars)


def init_program(
    g: Grammar,
    ctx: EvalContext,
    exemplars: Sequence[int],
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> Program:
    """Prior sample conditioned on finite likelihood (rejection, capped)."""
    last = None
    for _ in range(max_tries):
        p = gr.sample_program(g, rng)
        last = p
        _, ll = _score_program(p, g, ctx, exemplars)
        if ll > -math.inf:
            return p
    return last


def mcmc_chain(
    g: Grammar,
    ctx: EvalContext,
    exemplars: Sequence[int],
    steps: int,
    rng: np.random.Generator,
    init: Program | None = None,
) -> ChainResult:
    """Metropolis-Hastings over programs; the proposal regenerates a
    uniformly chosen site from the grammar prior."""
    current = init if init is not None else init_program(g, ctx, exemplars, rng)
    cur_lp, cur_ll = _score_program(current, g, ctx, exemplars)
    result = ChainResult(records={})

    def record(p: Program, lp: float, ll: float):
        rec = result.records.get(p)
        if rec is None:
            result.records[p] = rec = ChainRecord(program=p, log_prior=lp, log_lik=ll)
        rec.visits += 1

    record(current, cur_lp, cur_ll)
    for _ in range(steps):
        sites = _sites(current)
        site = sites[int(rng.integers(len(sites)))]
        proposal, logq_new, logq_old = _regen(g, current, site, rng)
        result.proposed += 1
        prop_lp, prop_ll = _score_program(proposal, g, ctx, exemplars)
        cur_score = cur_lp + cur_ll
        prop_score = prop_lp + prop_ll
        n_sites_cur = len(sites)
        n_sites_prop = len(_sites(proposal))
        if prop_score == -math.inf:
            accept = False
        elif cur_score == -math.inf:
            accept = True
        else:
            log_a = (
                prop_score
                - cur_score
                + (logq_old - math.log(n_sites_prop))
                - (logq_new - math.log(n_sites_cur))
            )
            accept = log_a >= 0 or rng.random() < math.exp(log_a)
        if accept:
            current, cur_lp, cur_ll = proposal, prop_lp, prop_ll
            result.accepted += 1
        record(current, cur_lp, cur_ll)
    return result


# ---------------------------------------------------------------------------
# Hypothesis space


@dataclass(frozen=True)
class TrialContext:
    trial_id: str
    tables: object
    universe: TokenUniverse
    ctx: EvalContext
    grammar: Grammar
    exemplar_ids: tuple[int, ...]


@dataclass
class HypothesisSpace:
    sexprs: list[str]
    programs: list[Program]
    provenance: dict[str, list[str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.programs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {"entries": self.sexprs, "provenance": self.provenance, "meta": self.meta},
                fh,
                indent=1,
                sort_keys=True,
            )

    @classmethod
    def load(cls, path) -> "HypothesisSpace":
        with open(path) as fh:
            blob = json.load(fh)
        programs = [gr.parse_sexpr(s) for s in blob["entries"]]
        return cls(
            sexprs=list(blob["entries"]),
            programs=programs,
            provenance={k: list(v) for k, v in blob.get("provenance", {}).items()},
            meta=blob.get("meta", {}),
        )


def build_space(
    trials: Sequence[TrialContext],
    chains: int = 3,
    steps: int = 100_000,
    top_k: int = 200,
    seed: int = 0,
) -> HypothesisSpace:
    """Run per-trial chains, keep each trial's top-k unique hypotheses by
    posterior score, and merge across trials (dedup by serialized program)."""
    space_sexprs: dict[str, Program] = {}
    provenance: dict[str, list[str]] = {}
    root = np.random.SeedSequence(seed)
    trial_seeds = root.spawn(len(trials))
    for trial, tseed in zip(trials, trial_seeds):
        merged: dict[Program, ChainRecord] = {}
        for chain_seq in tseed.spawn(chains):
            rng = np.random.default_rng(chain_seq)
            res = mcmc_chain(trial.grammar, trial.ctx, trial.exemplar_ids, steps, rng)
            for p, rec in res.records.items():
                if rec.score == -math.inf:
                    continue
                prev = merged.get(p)
                if prev is None:
                    merged[p] = rec
                else:
                    prev.visits += rec.visits
        ranked = sorted(
            merged.values(), key=lambda r: (-r.score, gr.program_to_sexpr(r.program))
        )[:top_k]
        kept = [gr.program_to_sexpr(r.program) for r in ranked]
        provenance[trial.trial_id] = kept
        for r, s in zip(ranked, kept):
            space_sexprs.setdefault(s, r.program)
    sexprs = sorted(space_sexprs)
    return HypothesisSpace(
        sexprs=sexprs,
        programs=[space_sexprs[s] for s in sexprs],
        provenance=provenance,
        meta={"chains": chains, "steps": steps, "top_k": top_k, "seed": seed},
    )


# ---------------------------------------------------------------------------
# Posterior and predictions


class TrialView:
    """Per-trial slice of a hypothesis space with cached score features."""

    def __init__(self, space: HypothesisSpace, trial: TrialContext):
        self.space = space
        self.trial = trial
        entries = []
        for s, p in zip(space.sexprs, space.programs):
            try:
                gr.validate_program(p, trial.grammar)
                ext = evaluate(p, trial.ctx, trial.grammar)
            except (NotDerivableError, EmptyExtensionError):
                continue
            ll = log_likelihood(
                Hypothesis(program=p, extension=ext, log_prior_raw=0.0),
                trial.exemplar_ids,
            )
            if ll == -math.inf:
                continue
            entries.append((s, p, ext, ll))
        if not entries:
            raise NoViableHypothesisError(
                f"trial {trial.trial_id}: no viable hypothesis in the space"
            )
        self.sexprs = [e[0] for e in entries]
        self.programs = [e[1] for e in entries]
        self.extensions = [e[2] for e in entries]
        self.log_lik_raw = np.array([e[3] for e in entries])
        self.counts = np.stack([gr.rule_counts(p) for p in self.programs])
        self.const_prior = np.array(
            [gr._const_parts(p, trial.grammar) for p in self.programs]
        )
        self.sizes = np.array([e.size for e in self.extensions], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.programs)

    def membership_vector(self, token_id: int) -> np.ndarray:
        return np.array([token_id in e.tokens for e in self.extensions], dtype=bool)


@dataclass(frozen=True)
class Posterior:
    view: TrialView
    weights: np.ndarray

    def top(self, n: int = 10) -> list[tuple[str, float]]:
        order = np.argsort(-self.weights)[:n]
        return [(self.view.sexprs[i], float(self.weights[i])) for i in order]


def posterior(view: TrialView, params: FitParams) -> Posterior:
    """Weights proportional to P(h)^(1/T_p) * P(X|h)^(1/T_l) over the
    finite viable slice."""
    params.validate()
    log_theta = params.log_theta_vector()
    used = view.counts > 0
    if np.any(used & np.isneginf(log_theta)[None, :]):
        # lesioned or zero-probability rules: those hypotheses drop out
        prior_term = view.counts @ np.where(np.isneginf(log_theta), 0.0, log_theta)
        prior_term = np.where(
            (used & np.isneginf(log_theta)[None, :]).any(axis=1), -np.inf, prior_term
        )
    else:
        prior_term = view.counts @ log_theta
    log_w = (prior_term + view.const_prior) / params.T_p + view.log_lik_raw / params.T_l
    finite = np.isfinite(log_w)
    if not finite.any():
        raise NoViableHypothesisError(f"trial {view.trial.trial_id}: all weights zero")
    m = log_w[finite].max()
    w = np.zeros_like(log_w)
    w[finite] = np.exp(log_w[finite] - m)
    total = w.sum()
    return Posterior(view=view, weights=w / total)


def classify(
    y: int | Token, post: Posterior, params: FitParams
) -> float:
    """P(yes) = alpha * P(y in h | X) + (1 - alpha) * beta."""
    idx = y.index if isinstance(y, Token) else int(y)
    member = post.view.membership_vector(idx)
    return float(params.alpha * post.weights[member].sum() + (1 - params.alpha) * params.beta)


def null_token_logprob(y: int | Token, universe: TokenUniverse) -> float:
    idx = y.index if isinstance(y, Token) else int(y)
    return float(universe.null_logp[idx])


def predictive_logprob(y: int | Token, post: Posterior, params: FitParams) -> float:
    """log of alpha * sum_h w_h [y in h]/|h| + (1-alpha) * P0(y)."""
    idx = y.index if isinstance(y, Token) else int(y)
    member = post.view.membership_vector(idx)
    concept = (post.weights[member] / post.view.sizes[member]).sum()
    base = math.exp(null_token_logprob(idx, post.view.trial.universe))
    p = params.alpha * concept + (1 - params.alpha) * base
    return math.log(p) if p > 0 else -math.inf


def sample_predictive(
    post: Posterior, params: FitParams, rng: np.random.Generator
) -> int:
    """Draw a token id from the posterior predictive."""
    h = int(rng.choice(len(post.weights), p=post.weights / post.weights.sum()))
    if rng.random() < params.alpha:
        ext = sorted(post.view.extensions[h].tokens)
        return int(ext[int(rng.integers(len(ext)))])
    from .tokens import sample_null

    return sample_null(post.view.trial.universe, post.view.trial.tables, rng).index


def score_tokens(
    tokens: Sequence[int | Token], post: Posterior, params: FitParams
) -> list[float]:
    return [predictive_logprob(t, post, params) for t in tokens]
