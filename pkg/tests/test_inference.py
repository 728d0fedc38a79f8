"""MCMC, posterior, classification, predictive tests."""

import math

import numpy as np
import pytest

from figforge import grammar as gr
from figforge import inference as inf
from figforge.interpreter import EvalContext, evaluate


@pytest.fixture(scope="module")
def ctx2(tables2, universe2):
    return EvalContext(tables2, universe2)


@pytest.fixture(scope="module")
def g2(tables2):
    return gr.default_grammar(tables2)


@pytest.fixture(scope="module")
def g2_small(g2):
    # no map / no extend: a few hundred programs, exhaustively enumerable
    return g2.with_params(theta_set=(0.3, 0.3, 0.2, 0.0, 0.2, 0.0))


def exact_posterior(g, ctx, exemplars):
    probs = {}
    for p, lp in gr.enumerate_programs(g):
        lp2, ll = inf._score_program(p, g, ctx, exemplars)
        if ll == -math.inf:
            continue
        probs[p] = lp2 + ll
    m = max(probs.values())
    z = sum(math.exp(v - m) for v in probs.values())
    return {p: math.exp(v - m) / z for p, v in probs.items()}


class TestMcmcChain:
    def test_zero_steps_returns_initial(self, g2, ctx2):
        rng = np.random.default_rng(0)
        x = [ctx2.single_fig("p2")]
        res = inf.mcmc_chain(g2, ctx2, x, steps=0, rng=rng)
        assert len(res.records) == 1

    def test_same_seed_identical(self, g2, ctx2):
        x = [ctx2.single_fig("p2")]
        r1 = inf.mcmc_chain(g2, ctx2, x, steps=2000, rng=np.random.default_rng(42))
        r2 = inf.mcmc_chain(g2, ctx2, x, steps=2000, rng=np.random.default_rng(42))
        assert list(r1.records) == list(r2.records)
        assert [r.visits for r in r1.records.values()] == [
            r.visits for r in r2.records.values()
        ]

    def test_visit_frequency_tracks_exact_posterior(self, g2_small, ctx2):
        # smoke-scale total-variation check; the strict 1e5-step version
        # lives in the acceptance suite
        x = sorted(evaluate(gr.parse_sexpr("(rotate (attach* p2 p4 1))"), ctx2).tokens)[:2]
        exact = exact_posterior(g2_small, ctx2, x)
        res = inf.mcmc_chain(
            g2_small, ctx2, x, steps=30_000, rng=np.random.default_rng(7)
        )
        total = sum(r.visits for r in res.records.values())
        tv = 0.5 * sum(
            abs(exact.get(p, 0.0) - res.records[p].visits / total if p in res.records else exact.get(p, 0.0))
            for p in set(exact) | set(res.records)
        )
        assert tv < 0.12

    def test_all_visited_consistent_after_init(self, g2, ctx2):
        x = [ctx2.single_fig("p4")]
        res = inf.mcmc_chain(g2, ctx2, x, steps=3000, rng=np.random.default_rng(5))
        bad = [r for r in res.records.values() if r.log_lik == -math.inf]
        assert len(bad) <= 1  # at most a failed init state


class TestBuildSpace:
    def _trials(self, tables2, universe2, ctx2, g2):
        ex1 = sorted(evaluate(gr.parse_sexpr("(rotate (attach* p2 p4 1))"), ctx2).tokens)[:2]
        ex2 = [ctx2.single_fig("p2")]
        return [
            inf.TrialContext("t1", tables2, universe2, ctx2, g2, tuple(ex1)),
            inf.TrialContext("t2", tables2, universe2, ctx2, g2, tuple(ex2)),
        ]

    def test_topk_bound(self, tables2, universe2, ctx2, g2):
        trials = self._trials(tables2, universe2, ctx2, g2)
        space = inf.build_space(trials, chains=1, steps=500, top_k=1, seed=3)
        assert len(space) <= len(trials)

    def test_exemplars_covered(self, tables2, universe2, ctx2, g2):
        trials = self._trials(tables2, universe2, ctx2, g2)
        space = inf.build_space(trials, chains=2, steps=2000, top_k=50, seed=4)
        for trial in trials:
            view = inf.TrialView(space, trial)
            for x in trial.exemplar_ids:
                assert view.membership_vector(x).any()

    def test_deterministic(self, tables2, universe2, ctx2, g2):
        trials = self._trials(tables2, universe2, ctx2, g2)
        s1 = inf.build_space(trials, chains=2, steps=800, top_k=20, seed=9)
        s2 = inf.build_space(trials, chains=2, steps=800, top_k=20, seed=9)
        assert s1.sexprs == s2.sexprs and s1.provenance == s2.provenance

    def test_save_load_roundtrip(self, tables2, universe2, ctx2, g2, tmp_path):
        trials = self._trials(tables2, universe2, ctx2, g2)
        space = inf.build_space(trials, chains=1, steps=500, top_k=10, seed=1)
        path = tmp_path / "space.json"
        space.save(path)
        back = inf.HypothesisSpace.load(path)
        assert back.sexprs == space.sexprs
        assert back.programs == space.programs


def make_view(space_programs, trial):
    sexprs = [gr.program_to_sexpr(p) for p in space_programs]
    space = inf.HypothesisSpace(sexprs=sexprs, programs=list(space_programs))
    return inf.TrialView(space, trial)


class TestPosterior:
    def _trial(self, tables2, universe2, ctx2, g2, exemplars):
        return inf.TrialContext("t", tables2, universe2, ctx2, g2, tuple(exemplars))

    def test_single_consistent_weight_one(self, tables2, universe2, ctx2, g2):
        p_good = gr.parse_sexpr("(rotate (attach* p2 p4 1))")
        p_bad = gr.parse_sexpr("(rotate (single p2))")
        x = sorted(evaluate(p_good, ctx2).tokens)[:1]
        trial = self._trial(tables2, universe2, ctx2, g2, x)
        view = make_view([p_good, p_bad], trial)
        post = inf.posterior(view, inf.FitParams())
        assert len(view) == 1  # inconsistent hypothesis pruned
        assert post.weights[0] == pytest.approx(1.0)

    def test_size_principle_arithmetic(self, tables2, universe2, ctx2, g2):
        # equal priors (T_p huge): weights proportional to (1/|h|)^k
        p_small = gr.parse_sexpr("(rotate (attach* p2 p4 1))")
        p_big = gr.parse_sexpr("(rotate (attach p2 p4))")
        x = sorted(evaluate(p_small, ctx2).tokens)[:1]
        trial = self._trial(tables2, universe2, ctx2, g2, x)
        view = make_view([p_small, p_big], trial)
        params = inf.FitParams(T_p=1e12)
        post = inf.posterior(view, params)
        i_small = view.sexprs.index(gr.program_to_sexpr(p_small))
        i_big = 1 - i_small
        s_small, s_big = view.sizes[i_small], view.sizes[i_big]
        expected_ratio = s_big / s_small
        assert post.weights[i_small] / post.weights[i_big] == pytest.approx(
            expected_ratio, rel=1e-6
        )
        # the spec's worked case: sizes 2 and 4 give weights (2/3, 1/3)
        if (s_small, s_big) == (4, 16):
            pass  # informative only; arithmetic asserted above

    def test_likelihood_tempering_limit(self, tables2, universe2, ctx2, g2):
        p1 = gr.parse_sexpr("(rotate (attach* p2 p4 1))")
        p2 = gr.parse_sexpr("(rotate (attach p2 p4))")
        x = sorted(evaluate(p1, ctx2).tokens)[:1]
        trial = self._trial(tables2, universe2, ctx2, g2, x)
        view = make_view([p1, p2], trial)
        post = inf.posterior(view, inf.FitParams(T_l=1e12))
        lp = np.array([gr.log_prior(g2, p) for p in view.programs])
        expected = np.exp(lp - lp.max())
        expected /= expected.sum()
        assert np.allclose(post.weights, expected, atol=1e-6)

    def test_no_viable_raises(self, tables2, universe2, ctx2, g2):
        p = gr.parse_sexpr("(rotate (single p2))")
        x = [ctx2.single_fig("p4")]
        trial = self._trial(tables2, universe2, ctx2, g2, x)
        with pytest.raises(inf.NoViableHypothesisError):
            make_view([p], trial)


class TestClassify:
    def _post(self, tables2, universe2, ctx2, g2, alpha=1.0, beta=0.5):
        p1 = gr.parse_sexpr("(rotate (attach* p2 p4 1))")
        p2 = gr.parse_sexpr("(rotate (attach p2 p4))")
        x = sorted(evaluate(p1, ctx2).tokens)[:1]
        trial = inf.TrialContext("t", tables2, universe2, ctx2, g2, tuple(x))
        view = make_view([p1, p2], trial)
        params = inf.FitParams(alpha=alpha, beta=beta)
        return inf.posterior(view, params), params, x

    def test_alpha_one_member_everywhere(self, tables2, universe2, ctx2, g2):
        post, params, x = self._post(tables2, universe2, ctx2, g2, alpha=1.0)
        assert inf.classify(x[0], post, params) == pytest.approx(1.0)

    def test_alpha_zero_pure_lapse(self, tables2, universe2, ctx2, g2):
        post, params, x = self._post(tables2, universe2, ctx2, g2, alpha=0.0, beta=0.37)
        for y in [0, 5, x[0]]:
            assert inf.classify(y, post, params) == pytest.approx(0.37)

    def test_exemplar_at_least_alpha(self, tables2, universe2, ctx2, g2):
        post, params, x = self._post(tables2, universe2, ctx2, g2, alpha=0.8, beta=0.1)
        assert inf.classify(x[0], post, params) >= 0.8

    def test_output_range(self, tables2, universe2, ctx2, g2):
        post, params, _ = self._post(tables2, universe2, ctx2, g2, alpha=0.7, beta=0.4)
        lo = params.beta * (1 - params.alpha)
        hi = params.alpha + (1 - params.alpha) * params.beta
        for y in range(0, len(universe2.tokens), 97):
            assert lo - 1e-12 <= inf.classify(y, post, params) <= hi + 1e-12


class TestPredictive:
    def _post(self, tables2, universe2, ctx2, g2, **kw):
        p1 = gr.parse_sexpr("(rotate (attach* p2 p4 1))")
        x = sorted(evaluate(p1, ctx2).tokens)[:1]
        trial = inf.TrialContext("t", tables2, universe2, ctx2, g2, tuple(x))
        view = make_view([p1], trial)
        params = inf.FitParams(**kw)
        return inf.posterior(view, params), params

    def test_alpha_one_uniform_over_extension(self, tables2, universe2, ctx2, g2):
        post, params = self._post(tables2, universe2, ctx2, g2, alpha=1.0)
        ext = sorted(post.view.extensions[0].tokens)
        assert post.view.sizes[0] == len(ext)
        for y in ext:
            assert math.exp(inf.predictive_logprob(y, post, params)) == pytest.approx(
                1 / len(ext)
            )
        outside = next(i for i in range(len(universe2)) if i not in ext)
        assert inf.predictive_logprob(outside, post, params) == -math.inf

    def test_alpha_zero_equals_null(self, tables2, universe2, ctx2, g2):
        post, params = self._post(tables2, universe2, ctx2, g2, alpha=0.0)
        for y in range(0, len(universe2), 211):
            assert inf.predictive_logprob(y, post, params) == pytest.approx(
                inf.null_token_logprob(y, universe2), abs=1e-12
            )

    def test_normalization(self, tables2, universe2, ctx2, g2):
        post, params = self._post(tables2, universe2, ctx2, g2, alpha=0.7)
        total = math.fsum(
            math.exp(inf.predictive_logprob(y, post, params))
            for y in range(len(universe2))
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_sampler_matches_logprob(self, tables2, universe2, ctx2, g2):
        post, params = self._post(tables2, universe2, ctx2, g2, alpha=0.85)
        rng = np.random.default_rng(11)
        n = 20_000
        counts = np.zeros(len(universe2))
        for _ in range(n):
            counts[inf.sample_predictive(post, params, rng)] += 1
        probs = np.array(
            [math.exp(inf.predictive_logprob(y, post, params)) for y in range(len(universe2))]
        )
        for idx in np.argsort(-probs)[:6]:
            sd = math.sqrt(n * probs[idx] * (1 - probs[idx]))
            assert abs(counts[idx] - n * probs[idx]) <= 4 * sd + 1

    def test_score_tokens(self, tables2, universe2, ctx2, g2):
        post, params = self._post(tables2, universe2, ctx2, g2, alpha=1.0)
        assert inf.score_tokens([], post, params) == []
        x = post.view.trial.exemplar_ids
        scores = inf.score_tokens(list(x), post, params)
        max_size = post.view.sizes.max()
        assert all(s >= -math.log(max_size) - 1e-9 for s in scores)


class TestLesionedSpaceSubset:
    def test_no_dp_subset_of_full(self, tables2, universe2, ctx2, g2):
        gl = gr.lesion(g2, dp_off=True)
        x = [ctx2.single_fig("p2")]
        t_full = inf.TrialContext("t", tables2, universe2, ctx2, g2, tuple(x))
        t_les = inf.TrialContext("t", tables2, universe2, ctx2, gl, tuple(x))
        full = inf.build_space([t_full], chains=1, steps=3000, top_k=100, seed=2)
        les = inf.build_space([t_les], chains=1, steps=3000, top_k=100, seed=2)
        full_exts = {
            s: evaluate(p, ctx2).tokens for s, p in zip(full.sexprs, full.programs)
        }
        for s, p in zip(les.sexprs, les.programs):
            assert p[1][0] != "has"
            ext = evaluate(p, ctx2).tokens
            if s in full_exts:
                assert full_exts[s] == ext
