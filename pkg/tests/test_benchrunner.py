import json
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import MockChatServer, reply, silk_like_bank, wrong_answer
from mergeforge.benchrunner import (
    BENCHMARK,
    CONVERSATION,
    ChatFamily,
    QType,
    Question,
    ScoreReport,
    Transcript,
    average_scores,
    build_prompt,
    collect_transcript,
    grade,
    load_questions,
    normalize_answer,
    query_endpoint,
    relative_improvement,
    render_chat,
    render_messages,
    write_questions,
)
from mergeforge.errors import (
    EmptyInput,
    HttpError,
    MalformedResponse,
    NetworkError,
    RoleOrderError,
    SchemaError,
    UnknownQuestionId,
    ZeroBaseline,
)


class TestQuestions:
    def test_silk_composition_round_trip(self, tmp_path):
        bank = silk_like_bank()
        for suffix in (".csv", ".jsonl"):
            path = tmp_path / f"bank{suffix}"
            write_questions(bank, path)
            loaded = load_questions(path)
            assert loaded == bank
            assert len(loaded) == 159
            assert sum(q.qtype is QType.MC for q in loaded) == 81
            assert sum(q.qtype is QType.TF for q in loaded) == 78
            basic = [q for q in loaded if q.assessment_area == "basic"]
            assert len(basic) == 105 and sum(q.qtype is QType.MC for q in basic) == 50

    def test_mc_with_tf_key(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,question,qtype,answer,category,assessment_area,reference\n"
                        "1,ok?,TF,T,bio,basic,\n2,which?,MC,T,bio,basic,\n")
        with pytest.raises(SchemaError) as exc:
            load_questions(path)
        assert (exc.value.row, exc.value.field) == (2, "answer")

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        (tmp_path / "e.jsonl").write_text("")
        assert load_questions(tmp_path / "e.csv") == []
        assert load_questions(tmp_path / "e.jsonl") == []

    def test_tf_words_accepted_as_keys(self, tmp_path):
        path = tmp_path / "b.jsonl"
        path.write_text(json.dumps({"id": "x", "question": "q", "qtype": "tf", "answer": "True"}) + "\n")
        assert load_questions(path)[0].answer_key == "T"


class TestPrompts:
    def test_exact_bytes(self):
        q = Question("1", "Is silk a protein? T/F", QType.TF, "T")
        assert build_prompt(q) == (
            "You respond with one word or letter. Select the correct answer to this question: "
            "Is silk a protein? T/F\n\nThe correct answer is:"
        )
        assert build_prompt("") == (
            "You respond with one word or letter. Select the correct answer to this question: \n\nThe correct answer is:"
        )

    def test_llama(self):
        assert render_chat(ChatFamily.LLAMA, "sys", ["hi"]) == (
            "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\nsys<|eot_id|>\n"
            "<|start_header_id|>user<|end_header_id|>\n\nhi<|eot_id|>\n"
            "<|start_header_id|>assistant<|end_header_id|>\n\n"
        )

    def test_mistral(self):
        assert render_chat("mistral", "sys", ["hi"]) == "<s>[INST] sys\n\nhi[/INST]"

    def test_smollm(self):
        assert render_chat("smollm", "sys", ["hi"]) == (
            "<|im_start|>system\nsys<|im_end|>\n<|im_start|>user\nhi<|im_end|>\n<|im_start|>assistant\n"
        )

    def test_multi_turn_follow_reference_blocks(self):
        turns = ["user query 1", "response 1", "user query 2"]
        assert render_chat("llama", "system message", turns) == (
            "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\nsystem message<|eot_id|>\n"
            "<|start_header_id|>user<|end_header_id|>\n\nuser query 1<|eot_id|>\n"
            "<|start_header_id|>assistant<|end_header_id|>\n\nresponse 1<|eot_id|>\n\n"
            "<|start_header_id|>user<|end_header_id|>\n\nuser query 2<|eot_id|>\n"
            "<|start_header_id|>assistant<|end_header_id|>\n\n"
        )
        assert render_chat("mistral", "system message", turns) == (
            "<s>[INST] system message\n\nuser query 1[/INST] response 1</s>[INST] user query 2[/INST]"
        )
        assert render_chat("smollm", "system message", turns + ["response 2"]) == (
            "<|im_start|>system\nsystem message<|im_end|>\n"
            "<|im_start|>user\nuser query 1<|im_end|>\n"
            "<|im_start|>assistant\nresponse 1<|im_end|>\n"
            "<|im_start|>user\nuser query 2<|im_end|>\n"
            "<|im_start|>assistant\nresponse 2<|im_end|>\n"
        )

    def test_role_order(self):
        with pytest.raises(RoleOrderError):
            render_chat("llama", "", [])
        with pytest.raises(RoleOrderError):
            render_chat("llama", "", [("assistant", "x")])
        with pytest.raises(RoleOrderError):
            render_messages("smollm", [{"role": "user", "content": "a"}, {"role": "user", "content": "b"}])

    def test_render_messages(self):
        msgs = [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]
        assert render_messages("mistral", msgs) == render_chat("mistral", "sys", ["hi"])


class TestNormalize:
    @pytest.mark.parametrize(
        "raw,qtype,want",
        [
            (" b) ", "MC", "B"),
            ("True.", "TF", "T"),
            ("The answer is B", "MC", None),
            ("A. Strength and elasticity", "MC", "A"),
            ("(c)", "MC", "C"),
            ("false", "TF", "F"),
            ("F", "TF", "F"),
            ("True", "MC", None),
            ("E", "MC", None),
            ("", "MC", None),
            ("'D'", "MC", "D"),
        ],
    )
    def test_rules(self, raw, qtype, want):
        assert normalize_answer(raw, qtype) == want

    @given(st.text(max_size=20), st.sampled_from(["MC", "TF"]))
    def test_idempotent(self, raw, qtype):
        once = normalize_answer(raw, qtype)
        if once is not None:
            assert normalize_answer(once, qtype) == once


def _bank4():
    return [Question(f"q{i}", "?", QType.MC, "A", "c") for i in range(4)]


class TestGrade:
    def test_three_of_four(self):
        tr = Transcript("m", [("q0", "A"), ("q1", "A"), ("q2", "A"), ("q3", "B")])
        assert grade(tr, _bank4()).overall_accuracy == 0.75

    def test_empty_transcript(self):
        bank = [Question(f"q{i}", "?", QType.TF, "T") for i in range(10)]
        r = grade(Transcript("m"), bank)
        assert r.overall_accuracy == 0.0 and r.invalid_count == 10

    def test_per_category(self):
        bank = [Question(f"a{i}", "?", QType.MC, "A", "mat") for i in range(4)]
        bank += [Question(f"b{i}", "?", QType.TF, "T", "bio") for i in range(2)]
        tr = Transcript("m", [("a0", "A"), ("a1", "A"), ("a2", "A"), ("a3", "C"), ("b0", "T"), ("b1", "F")])
        r = grade(tr, bank)
        assert r.per_category["mat"].accuracy == 0.75
        assert r.per_category["bio"].accuracy == 0.5
        assert r.overall.fraction == Fraction(4, 6)
        assert r.per_qtype["MC"].correct == 3

    def test_unknown_id(self):
        with pytest.raises(UnknownQuestionId):
            grade(Transcript("m", [("zz", "A")]), _bank4())

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            Transcript("m", [("q0", "A"), ("q0", "B")])

    def test_self_key_is_perfect(self):
        bank = silk_like_bank()
        r = grade(Transcript("m", [(q.id, q.answer_key) for q in bank]), bank)
        assert r.overall.correct == r.overall.total == 159 and r.overall_accuracy == 1.0

    def test_permutation_invariant(self):
        bank = silk_like_bank()
        rng = random.Random(0)
        entries = [(q.id, rng.choice(["A", "B", "T", "F", "junk"])) for q in bank]
        base = grade(Transcript("m", entries), bank)
        for _ in range(5):
            rng.shuffle(entries)
            assert grade(Transcript("m", list(entries)), bank) == base

    def test_accuracy_ratio_of_integers(self):
        bank = silk_like_bank()
        entries = [(q.id, q.answer_key if i % 3 else wrong_answer(q)) for i, q in enumerate(bank)]
        r = grade(Transcript("m", entries), bank)
        for tally in [r.overall, *r.per_category.values(), *r.per_qtype.values()]:
            assert Fraction(tally.correct, tally.total) == tally.fraction
            assert sum(t.correct for t in r.per_category.values()) == r.overall.correct

    def test_transcript_and_report_serialization(self, tmp_path):
        tr = Transcript("model-x", [("q0", "A"), ("q1", " b ")])
        tr.save(tmp_path / "t.jsonl")
        assert Transcript.load(tmp_path / "t.jsonl") == tr
        r = grade(tr, _bank4())
        assert ScoreReport.from_dict(json.loads(r.to_json())) == r
        lines = r.to_csv().splitlines()
        assert lines[0] == "model_id,category,correct,total,accuracy"
        assert lines[1] == "model-x,__overall__,1,4,0.25"


class TestAggregates:
    def test_relative_improvement(self):
        assert relative_improvement(0.77, 0.70) == pytest.approx(0.10)
        assert relative_improvement(0.70, 0.70) == 0.0
        assert relative_improvement(0.63, 0.70) == pytest.approx(-0.10)
        with pytest.raises(ZeroBaseline):
            relative_improvement(0.5, 0.0)

    def test_average(self):
        assert average_scores([0.8, 0.6]) == pytest.approx(0.7)
        assert average_scores([0.42]) == 0.42
        assert average_scores([0.82, 0.80, 0.81]) == pytest.approx(0.81)
        with pytest.raises(EmptyInput):
            average_scores([])


class TestEndpoint:
    def test_presets(self):
        assert BENCHMARK.temperature == 0
        assert (CONVERSATION.top_k, CONVERSATION.top_p, CONVERSATION.repetition_penalty, CONVERSATION.max_tokens) == (
            512, 0.9, 1.1, 1024
        )

    def test_echo(self):
        with MockChatServer(lambda body: reply("A")) as srv:
            assert query_endpoint(srv.url, "m", "prompt") == "A"
        path, body = srv.requests[0]
        assert path == "/v1/chat/completions"
        assert body["model"] == "m"
        assert body["messages"] == [{"role": "user", "content": "prompt"}]
        assert body["temperature"] == 0 and body["max_tokens"] == BENCHMARK.max_tokens

    def test_conversation_fields(self):
        with MockChatServer(lambda body: reply("ok")) as srv:
            query_endpoint(srv.url, "m", [{"role": "user", "content": "x"}], CONVERSATION)
        body = srv.requests[0][1]
        assert (body["top_k"], body["top_p"], body["repetition_penalty"], body["max_tokens"]) == (512, 0.9, 1.1, 1024)

    def test_retries_then_http_error(self):
        sleeps = []
        with MockChatServer(lambda body: (500, {"error": "boom"})) as srv:
            with pytest.raises(HttpError) as exc:
                query_endpoint(srv.url, "m", "p", sleep=sleeps.append)
        assert exc.value.status == 500
        assert len(srv.requests) == 3
        assert sleeps == [0.5, 1.0]

    def test_recovers_after_429(self):
        calls = iter([(429, {}), (503, {}), reply("B")])
        with MockChatServer(lambda body: next(calls)) as srv:
            assert query_endpoint(srv.url, "m", "p", sleep=lambda s: None) == "B"
        assert len(srv.requests) == 3

    def test_client_error_not_retried(self):
        with MockChatServer(lambda body: (404, {})) as srv:
            with pytest.raises(HttpError):
                query_endpoint(srv.url, "m", "p", sleep=lambda s: None)
        assert len(srv.requests) == 1

    @pytest.mark.parametrize("payload", [{"choices": []}, {"nope": 1}, b"not json", {"choices": [{"message": {}}]}])
    def test_malformed(self, payload):
        with MockChatServer(lambda body: (200, payload)) as srv:
            with pytest.raises(MalformedResponse):
                query_endpoint(srv.url, "m", "p")

    def test_network_error(self):
        with MockChatServer(lambda body: reply("A")) as srv:
            url = srv.url
        sleeps = []
        with pytest.raises(NetworkError):
            query_endpoint(url, "m", "p", sleep=sleeps.append, timeout=2)
        assert len(sleeps) == 2

    def test_collect_transcript_bounded_and_keyed(self):
        bank = silk_like_bank()[:24]
        answers = {}
        for q in bank:
            answers[build_prompt(q)] = q.answer_key

        def script(body):
            return reply(answers[body["messages"][-1]["content"]])

        with MockChatServer(script, delay=0.02) as srv:
            tr = collect_transcript(srv.url, "m", bank, concurrency=4)
        assert srv.max_in_flight <= 4
        assert srv.max_in_flight >= 2
        assert [qid for qid, _ in tr.entries] == [q.id for q in bank]
        assert grade(tr, bank).overall_accuracy == 1.0

    def test_templated_prompt_sent_as_user_message(self):
        q = Question("1", "Is silk a protein? T/F", QType.TF, "T")
        with MockChatServer(lambda body: reply("T")) as srv:
            collect_transcript(srv.url, "m", [q], template="smollm", system="sys")
        content = srv.requests[0][1]["messages"][0]["content"]
        assert content == render_chat("smollm", "sys", [build_prompt(q)])
