import pytest
from sklearn.base import clone

from rankcot.errors import BackendError, ConfigError, InputError
from rankcot.gateway import MockRule
from rankcot.refinement import (
    REFINERS,
    AnswerGenerator,
    NoRefinement,
    RankCoTRefiner,
    RerankRefiner,
    SummaryRefiner,
    answer,
    make_refiner,
    parse_relevance_label,
    refine_none,
    refine_rankcot,
    refine_rerank,
    refine_summary,
)
from rankcot.types import REFINEMENT_METHODS, QueryRecord, RefinementOutput
from helpers import scored

Q = QueryRecord("q1", "What is australia's location in the world and region?", ("Oceania",))


def docs_abc():
    return [scored("d1", "alpha text", 1), scored("d2", "beta text", 2), scored("d3", "gamma text", 3)]


class TestNoRefinement:
    def test_concatenation(self):
        out = refine_none(Q, [scored("a", "A", 1), scored("b", "B", 2)])
        assert out.text == "A\n\nB"
        assert out.method == "none"

    def test_char_len_arithmetic(self):
        docs = [scored(f"d{i}", "x" * (i + 3), i + 1) for i in range(5)]
        out = refine_none(Q, docs)
        assert out.char_len == sum(len(d.text) for d in docs) + 4 * len("\n\n")

    def test_out_of_order_input_sorted_by_rank(self):
        docs = [scored("c", "C", 3), scored("a", "A", 1), scored("b", "B", 2)]
        expected = "\n\n".join(d.text for d in sorted(docs, key=lambda d: d.rank))
        assert refine_none(Q, docs).text == expected

    def test_empty_docs_rejected(self):
        with pytest.raises(InputError):
            refine_none(Q, [])

    def test_custom_separator(self):
        assert refine_none(Q, docs_abc(), doc_separator=" | ").text == "alpha text | beta text | gamma text"


class TestRerank:
    def test_parse_labels(self):
        assert parse_relevance_label(" yes, it is relevant.") is True
        assert parse_relevance_label("No.") is False
        assert parse_relevance_label("**YES**") is True
        assert parse_relevance_label("maybe") is None

    def test_keep_yes_drop_no(self, make_gateway):
        gw = make_gateway([("alpha", ("YES",)), ("beta", ("NO",)), ("gamma", ("YES",))])
        out = refine_rerank(Q, docs_abc(), gw)
        assert out.kept_doc_ids == ("d1", "d3")
        assert out.text == "alpha text\n\ngamma text"
        assert gw.backend.calls == 3

    def test_all_dropped(self, make_gateway):
        out = refine_rerank(Q, docs_abc(), make_gateway(default="NO"))
        assert out.text == "" and out.kept_doc_ids == () and out.char_len == 0

    def test_normalized_yes_is_kept(self, make_gateway):
        gw = make_gateway([("alpha", ("yes, it is relevant.",))], default="NO")
        assert refine_rerank(Q, docs_abc(), gw).kept_doc_ids == ("d1",)

    def test_unparseable_fails_open_and_counts(self, make_gateway, caplog):
        gw = make_gateway([("beta", ("I cannot tell",))], default="NO")
        refiner = RerankRefiner(gateway=gw).fit()
        with caplog.at_level("WARNING"):
            out = refiner.refine(Q, docs_abc())
        assert out.kept_doc_ids == ("d2",)
        assert refiner.unparsed_labels == 1
        assert any("unparseable" in r.message for r in caplog.records)

    def test_gateway_error_fails_whole_query(self, make_gateway):
        gw = make_gateway([MockRule("beta", error="down")], default="YES")
        with pytest.raises(BackendError):
            refine_rerank(Q, docs_abc(), gw)

    def test_kept_text_is_substring_concatenation(self, make_gateway):
        gw = make_gateway([("gamma", ("NO",))], default="YES")
        out = refine_rerank(Q, docs_abc(), gw)
        assert out.text == "\n\n".join(d.text for d in docs_abc() if d.doc_id in out.kept_doc_ids)

    def test_prompt_contains_query_and_single_document(self, make_gateway):
        gw = make_gateway(default="YES")
        refine_rerank(Q, docs_abc(), gw)
        prompts = [r.rendered_prompt for r in gw.backend.requests]
        assert all(Q.question in p for p in prompts)
        assert ["alpha" in p for p in prompts] == [True, False, False]

    def test_requires_gateway(self):
        with pytest.raises(ConfigError):
            RerankRefiner().fit()


class TestGenerative:
    def test_summary_pass_through(self, make_gateway):
        out = refine_summary(Q, docs_abc(), make_gateway(default="  S  "))
        assert out.text == "S" and out.method == "summary"

    def test_summary_prompt_has_all_docs_in_rank_order(self, make_gateway):
        gw = make_gateway(default="S")
        docs = [scored(f"d{i}", f"text number {i}", i) for i in (5, 3, 1, 4, 2)]
        refine_summary(Q, docs, gw)
        prompt = gw.backend.requests[0].rendered_prompt
        positions = [prompt.index(f"text number {i}") for i in range(1, 6)]
        assert positions == sorted(positions)
        assert gw.backend.calls == 1

    def test_empty_completion_rejected(self, make_gateway):
        with pytest.raises(BackendError, match="empty refinement"):
            refine_summary(Q, docs_abc(), make_gateway(default="   "))

    def test_rankcot(self, make_gateway):
        out = refine_rankcot(Q, docs_abc(), make_gateway(default="C"))
        assert out.text == "C" and out.method == "rankcot" and out.kept_doc_ids is None
        assert "kept_doc_ids" not in out.to_dict()

    def test_rankcot_uses_cot_template(self, make_gateway):
        gw = make_gateway(default="C")
        refine_rankcot(Q, docs_abc(), gw)
        assert "step by step" in gw.backend.requests[0].rendered_prompt

    def test_rankcot_empty_rejected(self, make_gateway):
        with pytest.raises(BackendError):
            refine_rankcot(Q, docs_abc(), make_gateway(default=""))


class TestDispatch:
    def test_every_method_has_a_refiner(self):
        assert set(REFINERS) == set(REFINEMENT_METHODS)
        for method, cls in REFINERS.items():
            assert cls.method == method

    def test_unknown_method(self):
        with pytest.raises(InputError):
            make_refiner("chain_of_note")

    @pytest.mark.parametrize("method", REFINEMENT_METHODS)
    def test_char_len_matches_text(self, method, make_gateway):
        gw = make_gateway(default="YES this is output")
        refiner = make_refiner(method, gateway=gw)
        for out in refiner.fit().transform([(Q, docs_abc()), (Q, docs_abc()[:1])]):
            assert out.char_len == len(out.text)
            assert out.method == method

    @pytest.mark.parametrize("method, calls", [("none", 0), ("rerank", 3), ("summary", 1), ("rankcot", 1)])
    def test_call_counts(self, method, calls, make_gateway):
        gw = make_gateway(default="YES")
        make_refiner(method, gateway=gw).refine(Q, docs_abc())
        assert gw.backend.calls == calls

    def test_transform_parallel_matches_serial(self, make_gateway):
        gw = make_gateway([("alpha", ("NO",))], default="YES")
        pairs = [(QueryRecord(f"q{i}", f"question {i}", ("x",)), docs_abc()) for i in range(6)]
        serial = RerankRefiner(gateway=gw).transform(pairs)
        parallel = RerankRefiner(gateway=gw, max_workers=4).transform(pairs)
        assert serial == parallel

    def test_estimator_params(self):
        est = SummaryRefiner(doc_separator="\n", temperature=0.0)
        params = est.get_params()
        assert params["doc_separator"] == "\n"
        assert clone(est).get_params()["doc_separator"] == "\n"
        assert isinstance(NoRefinement().fit(), NoRefinement)
        assert isinstance(RankCoTRefiner, type)

    def test_transform_rejects_bad_input(self):
        with pytest.raises(TypeError):
            NoRefinement().transform(["not a pair"])


class TestAnswer:
    def test_case_study_answer(self, make_gateway):
        ctx = RefinementOutput("rankcot", "q1", "Australia ... in the region of Oceania.")
        rec = answer(Q, ctx, make_gateway([("Oceania", ("Oceania",))]))
        assert rec.answer == "Oceania"
        assert rec.method == "rankcot"
        assert rec.refinement_text == ctx.text and rec.refinement_len == len(ctx.text)

    def test_closed_book_prompt_has_no_documents(self, make_gateway):
        gw = make_gateway(default="A")
        rec = answer(Q, None, gw)
        assert rec.method == "closed_book"
        assert "Background" not in gw.backend.requests[0].rendered_prompt
        assert not rec.empty_context

    def test_empty_rerank_context_flagged(self, make_gateway):
        gw = make_gateway(default="A")
        rec = answer(Q, RefinementOutput("rerank", "q1", "", kept_doc_ids=()), gw)
        assert rec.empty_context
        assert "Background:\n\n" in gw.backend.requests[0].rendered_prompt

    def test_generator_estimator(self, make_gateway):
        gw = make_gateway(default="A")
        ctx = RefinementOutput("summary", "q1", "S")
        recs = AnswerGenerator(gateway=gw, max_workers=2).fit().predict([(Q, ctx), (Q, None)])
        assert [r.method for r in recs] == ["summary", "closed_book"]

    def test_gateway_error_propagates(self, make_gateway):
        with pytest.raises(BackendError):
            answer(Q, None, make_gateway([MockRule("Question", error="x")]))
