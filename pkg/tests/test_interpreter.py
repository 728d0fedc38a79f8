"""Evaluation semantics and size-principle likelihood."""

import math

import pytest

from figforge import grammar as gr
from figforge import interpreter as ip
from figforge.geometry import rotate_cells, symmetry_order, cells_sort_key
from figforge.tokens import build_universe


@pytest.fixture(scope="module")
def ctx4(tables4, universe4):
    return ip.EvalContext(tables4, universe4)


@pytest.fixture(scope="module")
def g4(tables4):
    return gr.default_grammar(tables4)


class TestEvaluate:
    def test_fully_specified_program_is_singleton(self, ctx4, g4):
        p = gr.parse_sexpr("(rotate* (attach* p2 p4 1) 180)")
        ext = ip.evaluate(p, ctx4, g4)
        assert ext.size == 1
        tok = ctx4.universe.tokens[next(iter(ext.tokens))]
        base = ctx4.universe.tokens[ctx4.placement_figs("p2", "p4")[0]]
        assert tok.cells == rotate_cells(base.cells, 2)

    def test_map_doubles_over_bank(self, ctx4, g4):
        src = tuple(sorted(ctx4.bank_ids))
        p = ("rotate_all", ("map", ("xx",), src))
        ext = ip.evaluate(p, ctx4, g4)
        expected = set()
        for s in src:
            sub = ip.evaluate(("rotate_all", ("pair_all", s, s)), ctx4, g4)
            expected |= sub.tokens
        assert ext.tokens == frozenset(expected)

    def test_two_fold_symmetric_config_extension_two(self, ctx4, g4):
        # oracle: explicit rotation + dedup of the config's cells
        figs = ctx4.placement_figs("p1", "p1")
        two_fold = None
        for k, fig in enumerate(figs, start=1):
            cells = ctx4.universe.tokens[fig].cells
            if symmetry_order(cells) == 2:
                two_fold = (k, cells)
                break
        assert two_fold is not None
        k, cells = two_fold
        oracle = {cells_sort_key(rotate_cells(cells, t)) for t in range(4)}
        assert len(oracle) == 2
        ext = ip.evaluate(("rotate_all", ("pair_at", "p1", "p1", k)), ctx4, g4)
        assert ext.size == 2

    def test_rotate_all_closure_invariant(self, ctx4, g4):
        for s in ["(rotate (has p2))", "(rotate (attach p1 p5))", "(rotate (single p4))"]:
            ext = ip.evaluate(gr.parse_sexpr(s), ctx4, g4)
            assert ctx4.rotate_ids(ext.tokens, 1) == ext.tokens

    def test_has_covers_all_part_counts(self, ctx4, g4):
        ext = ip.evaluate(("rotate_all", ("has", "p2")), ctx4, g4)
        counts = {ctx4.universe.tokens[i].n_parts for i in ext.tokens}
        assert counts == {1, 2, 3}

    def test_only_restricts_vocabulary(self, ctx4, g4):
        ext = ip.evaluate(("rotate_all", ("only", ("p1", "p2"))), ctx4, g4)
        for i in ext.tokens:
            assert ctx4.universe.label_sets[i] <= {"p1", "p2"}
        # and it contains every such token
        direct = {
            t.index
            for t in ctx4.universe.tokens
            if ctx4.universe.label_sets[t.index] <= {"p1", "p2"}
        }
        assert ext.tokens == frozenset(direct)

    def test_map_coverage_union_bruteforce(self, ctx4, g4):
        src = ("p1", "p2", "p4")
        p = ("rotate_at", ("map", ("xx_extend_fixed", "p5"), src), 90)
        ext = ip.evaluate(p, ctx4, g4)
        brute = set()
        for s in src:
            brute |= ip.evaluate(
                ("rotate_at", ("extend", ("pair_all", s, s), "p5"), 90), ctx4, g4
            ).tokens
        assert ext.tokens == frozenset(brute)

    def test_determinism_and_purity(self, ctx4, g4):
        p = gr.parse_sexpr("(rotate (extend (attach p1 p2) p4))")
        e1 = ip.evaluate(p, ctx4, g4)
        e2 = ip.evaluate(p, ctx4, g4)
        assert e1.tokens == e2.tokens

    def test_empty_extension_flagged(self, tables2):
        # a 3-part concept against a 2-part-capped universe has no members
        uni2 = build_universe(tables2, max_parts=2)
        ctx = ip.EvalContext(tables2, uni2)
        g = gr.default_grammar(tables2)
        with pytest.raises(ip.EmptyExtensionError):
            ip.evaluate(("rotate_all", ("extend", ("pair_all", "p2", "p4"), "p2")), ctx, g)


class TestLikelihood:
    def _hyp(self, ctx4, g4, sexpr):
        return ip.make_hypothesis(gr.parse_sexpr(sexpr), ctx4, g4)

    def test_eq3_direct(self, ctx4, g4):
        h = self._hyp(ctx4, g4, "(rotate (attach* p2 p4 1))")
        ids = sorted(h.extension.tokens)
        assert h.size == 4
        ll = ip.log_likelihood(h, ids[:2], T_l=1.0)
        assert ll == pytest.approx(math.log(1 / 16), abs=1e-12)

    def test_nonmember_is_minus_inf(self, ctx4, g4):
        h = self._hyp(ctx4, g4, "(rotate (attach* p2 p4 1))")
        outside = ctx4.single_fig("p1")
        assert outside not in h.extension.tokens
        assert ip.log_likelihood(h, [outside]) == -math.inf

    def test_size_principle_ordering(self, ctx4, g4):
        small = self._hyp(ctx4, g4, "(rotate (attach p2 p4))")
        big = self._hyp(ctx4, g4, "(rotate (has p2))")
        shared = sorted(small.extension.tokens & big.extension.tokens)[:2]
        assert shared and small.size < big.size
        assert ip.log_likelihood(small, shared) > ip.log_likelihood(big, shared)

    def test_likelihood_temperature(self, ctx4, g4):
        h = self._hyp(ctx4, g4, "(rotate (attach* p2 p4 1))")
        x = sorted(h.extension.tokens)[:1]
        assert ip.log_likelihood(h, x, T_l=2.0) == pytest.approx(
            ip.log_likelihood(h, x, T_l=1.0) / 2.0
        )


class TestMembership:
    def test_definitional_equivalence(self, ctx4, g4):
        p = gr.parse_sexpr("(rotate (attach p1 p4))")
        h = ip.make_hypothesis(p, ctx4, g4)
        ext = ip.evaluate(p, ctx4, g4)
        for i in list(ext.tokens)[:5]:
            assert ip.membership(i, h)
        outside = next(i for i in range(len(ctx4.universe)) if i not in ext.tokens)
        assert not ip.membership(outside, h)

    def test_unseen_primitive_not_member(self, ctx4, g4):
        h = ip.make_hypothesis(gr.parse_sexpr("(rotate (attach* p2 p4 1))"), ctx4, g4)
        y = ctx4.single_fig("p5")
        assert not ip.membership(y, h)
