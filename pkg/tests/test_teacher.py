"""Teacher clients, rationale filtering, knowledge parsing and selection."""

import json
import math
import re
from collections import Counter

import httpx
import pytest

from internlab.corpus import Rationale, TrainingInstance, instance_to_dict
from internlab.errors import ConfigError, TeacherError
from internlab.evalharness import exact_match, extract_answer
from internlab.similarity import TfidfSimilarity
from internlab.teacher import (
    FLAG_NO_KEPT_RATIONALE,
    FLAG_TEACHER_FAILED,
    GenerationParams,
    MockTeacherClient,
    OpenAIChatClient,
    TeacherConfig,
    TranscriptTeacherClient,
    annotate_corpus,
    filter_rationales,
    generate_and_select_knowledge,
    generate_rationales,
    load_template,
    make_transcript,
    parse_knowledge,
    render_cot_prompt,
    render_knowledge_prompt,
    request_hash,
)


@pytest.fixture
def instances():
    return [
        TrainingInstance("a", "What is 3 plus 5 ?", "8"),
        TrainingInstance("b", "What is 9 minus 2 ?", "7"),
        TrainingInstance("c", "What is 2 times 3 ?", "6"),
    ]


@pytest.fixture
def cfg():
    return TeacherConfig()


# ---------------------------------------------------------------------------
# parameters, templates, rendering
# ---------------------------------------------------------------------------


def test_generation_defaults():
    params = GenerationParams()
    assert params.temperature == 0.8
    assert params.top_p == 1.0
    assert params.max_new_tokens == 2048
    assert params.n_sequences == 2


@pytest.mark.parametrize("kwargs", [
    {"temperature": -0.1},
    {"temperature": 2.1},
    {"top_p": 0.0},
    {"top_p": 1.5},
    {"max_new_tokens": 0},
    {"n_sequences": 0},
])
def test_generation_params_validation(kwargs):
    with pytest.raises(ConfigError):
        GenerationParams(**kwargs)


def test_packaged_templates_have_required_slots():
    cot = load_template("cot")
    assert "{QUESTION}" in cot
    assert "Therefore, the answer is" in cot
    know = load_template("knowledge")
    for slot in ("{QUESTION}", "{ANSWER}", "{RATIONALE}"):
        assert slot in know
    assert "Learning Summary:" in know
    assert "Supplementary Knowledge:" in know


def test_config_rejects_templates_missing_slots():
    with pytest.raises(ConfigError, match="QUESTION"):
        TeacherConfig(prompt_cot="no slots here")
    with pytest.raises(ConfigError, match="ANSWER"):
        TeacherConfig(prompt_know="only a {QUESTION} slot")


def test_config_validation():
    with pytest.raises(ConfigError):
        TeacherConfig(parallelism=0)
    with pytest.raises(ConfigError):
        TeacherConfig(max_retries=-1)


def test_render_cot_prompt_fills_all_slots(cfg):
    prompt = render_cot_prompt(cfg, "What is 3 plus 5 ?")
    assert "What is 3 plus 5 ?" in prompt
    assert cfg.task_name in prompt
    assert "{" not in prompt.replace("{}", "")


def test_render_knowledge_prompt_fills_all_slots(cfg):
    prompt = render_knowledge_prompt(cfg, "Q ?", "42", "Because of the rule.")
    assert "Question: Q ?" in prompt
    assert "Answer: 42" in prompt
    assert "Rationale: Because of the rule." in prompt


# ---------------------------------------------------------------------------
# rationale filtering
# ---------------------------------------------------------------------------


def test_filter_keeps_matching_and_rejects_wrong():
    rationales = [
        Rationale("Work it out. Therefore, the answer is 64."),
        Rationale("Hasty guess. Therefore, the answer is 45."),
    ]
    out = filter_rationales(rationales, "64")
    assert [r.kept for r in out] == [True, False]
    assert [r.extracted_answer for r in out] == ["64", "45"]


def test_filter_empty_input():
    assert filter_rationales([], "64") == []


def test_filter_rejects_missing_marker():
    out = filter_rationales([Rationale("The result is 64, obviously.")], "64")
    assert out[0].kept is False
    assert out[0].extracted_answer is None


def test_filter_does_not_mutate_input():
    source = [Rationale("Therefore, the answer is 5.")]
    filter_rationales(source, "5")
    assert source[0].kept is False


# ---------------------------------------------------------------------------
# mock teacher
# ---------------------------------------------------------------------------


def test_mock_is_deterministic(instances, cfg):
    prompt = render_cot_prompt(cfg, instances[0].question)
    params = GenerationParams(n_sequences=4)
    a = MockTeacherClient.for_corpus(instances, accuracy=0.5, seed=3)
    b = MockTeacherClient.for_corpus(instances, accuracy=0.5, seed=3)
    assert a.complete(prompt, params) == b.complete(prompt, params)


def test_mock_accuracy_extremes(instances, cfg):
    inst = instances[0]
    right = MockTeacherClient.for_corpus(instances, accuracy=1.0)
    wrong = MockTeacherClient.for_corpus(instances, accuracy=0.0)
    kept_right = generate_rationales(inst, cfg, right)
    kept_wrong = generate_rationales(inst, cfg, wrong)
    assert all(r.kept for r in kept_right)
    assert not any(r.kept for r in kept_wrong)


def test_mock_rejects_bad_accuracy():
    with pytest.raises(ConfigError):
        MockTeacherClient(accuracy=1.5)


def test_generated_rationales_respect_n_sequences(instances, cfg):
    client = MockTeacherClient.for_corpus(instances)
    out = generate_rationales(instances[0], cfg, client)
    assert len(out) == cfg.rationale_params.n_sequences == 2


def test_filter_soundness_on_mixed_accuracy(instances, cfg):
    client = MockTeacherClient.for_corpus(instances, accuracy=0.5, seed=9)
    for inst in instances:
        for r in generate_rationales(inst, cfg, client):
            extracted = extract_answer(r.text)
            should_keep = extracted is not None and exact_match(extracted, inst.answer) == 1
            assert r.kept == should_keep


# ---------------------------------------------------------------------------
# transcript client
# ---------------------------------------------------------------------------


def test_transcript_replays_and_rejects_unknown(tmp_path, cfg, instances):
    prompt = render_cot_prompt(cfg, instances[0].question)
    table = make_transcript(
        [(prompt, cfg.rationale_params, ["A. Therefore, the answer is 8.", "B. Therefore, the answer is 9."])]
    )
    path = tmp_path / "transcript.json"
    path.write_text(json.dumps(table))
    client = TranscriptTeacherClient(path)
    out = generate_rationales(instances[0], cfg, client)
    assert [r.kept for r in out] == [True, False]
    with pytest.raises(TeacherError, match="no completions"):
        client.complete("unseen prompt", cfg.rationale_params)


def test_transcript_requires_existing_file(tmp_path):
    with pytest.raises(TeacherError):
        TranscriptTeacherClient(tmp_path / "missing.json")


def test_request_hash_is_sensitive_to_params():
    a = request_hash("p", GenerationParams(temperature=0.8))
    b = request_hash("p", GenerationParams(temperature=0.7))
    c = request_hash("q", GenerationParams(temperature=0.8))
    assert a != b and a != c
    assert a == request_hash("p", GenerationParams(temperature=0.8))


def test_empty_completions_are_dropped(tmp_path, cfg, instances):
    prompt = render_cot_prompt(cfg, instances[0].question)
    table = make_transcript([(prompt, cfg.rationale_params, ["", "Sum. Therefore, the answer is 8."])])
    path = tmp_path / "t.json"
    path.write_text(json.dumps(table))
    out = generate_rationales(instances[0], cfg, TranscriptTeacherClient(path))
    assert len(out) == 1
    assert out[0].kept


# ---------------------------------------------------------------------------
# knowledge parsing and selection
# ---------------------------------------------------------------------------


def test_parse_knowledge_labeled():
    summary, supplement = parse_knowledge(
        "Learning Summary: count carefully. Supplementary Knowledge: sums add."
    )
    assert summary == "count carefully."
    assert supplement == "sums add."


def test_parse_knowledge_summary_only():
    assert parse_knowledge("Learning Summary: count carefully.") == ("count carefully.", "")


def test_parse_knowledge_unlabeled_is_stored_verbatim():
    assert parse_knowledge("plain remark about sums") == ("plain remark about sums", "")


def test_parse_knowledge_blank_is_none():
    assert parse_knowledge("   \n") is None


def kept_instance():
    rationale = Rationale(
        "Add apples and oranges. Therefore, the answer is 7", extracted_answer="7", kept=True
    )
    return TrainingInstance("k1", "How many apples plus oranges ?", "7", rationales=[rationale])


def knowledge_client(tmp_path, cfg, inst, completions):
    prompt = render_knowledge_prompt(cfg, inst.question, inst.answer, inst.rationales[0].text)
    path = tmp_path / "knowledge.json"
    path.write_text(json.dumps(make_transcript([(prompt, cfg.knowledge_params, completions)])))
    return TranscriptTeacherClient(path)


def hand_tfidf_scores(query, texts):
    """Independent cosine oracle over the documented TF-IDF scheme."""
    def token(s):
        return [w.lower() for w in re.findall(r"\w+", s)]

    docs = [token(query)] + [token(t) for t in texts]
    vocab = sorted({w for d in docs for w in d})
    df = {w: sum(w in set(d) for d in docs) for w in vocab}
    idf = {w: math.log((1 + len(docs)) / (1 + df[w])) + 1.0 for w in vocab}

    def vec(terms):
        counts = Counter(terms)
        v = {w: counts[w] * idf[w] for w in counts}
        norm = math.sqrt(sum(x * x for x in v.values()))
        return {w: x / norm for w, x in v.items()} if norm else v

    q = vec(docs[0])
    return [sum(q.get(w, 0.0) * x for w, x in vec(d).items()) for d in docs[1:]]


def test_selection_picks_most_similar_item(tmp_path):
    cfg = TeacherConfig(knowledge_params=GenerationParams(n_sequences=2))
    inst = kept_instance()
    completions = [
        "Learning Summary: weather patterns in coastal regions. "
        "Supplementary Knowledge: rain follows wind.",
        "Learning Summary: counting apples and oranges carefully. "
        "Supplementary Knowledge: apples plus oranges gives fruit totals.",
    ]
    client = knowledge_client(tmp_path, cfg, inst, completions)
    items = generate_and_select_knowledge(inst, cfg, client)
    assert len(items) == 2
    assert [item.selected for item in items] == [False, True]

    query = f"{inst.question}\n{inst.rationales[0].text}"
    oracle = hand_tfidf_scores(query, [i.full_text() for i in items])
    assert oracle[1] > oracle[0]
    assert [item.selected for item in items] == [s == max(oracle) for s in oracle]


def test_selection_singleton(tmp_path, cfg):
    inst = kept_instance()
    client = knowledge_client(
        tmp_path, cfg, inst, ["Learning Summary: apples and oranges add up."]
    )
    items = generate_and_select_knowledge(inst, cfg, client)
    assert len(items) == 1 and items[0].selected


def test_selection_tie_breaks_to_lowest_index(tmp_path):
    cfg = TeacherConfig(knowledge_params=GenerationParams(n_sequences=2))
    inst = kept_instance()
    same = "Learning Summary: apples and oranges add up."
    client = knowledge_client(tmp_path, cfg, inst, [same, same])
    items = generate_and_select_knowledge(inst, cfg, client)
    assert [item.selected for item in items] == [True, False]


def test_selection_invariant_under_positive_scaling(tmp_path):
    cfg = TeacherConfig(knowledge_params=GenerationParams(n_sequences=2))
    inst = kept_instance()
    completions = [
        "Learning Summary: weather patterns. Supplementary Knowledge: rain follows wind.",
        "Learning Summary: apples and oranges. Supplementary Knowledge: fruit totals.",
    ]

    class ScaledSimilarity:
        def __init__(self, base, factor):
            self.base, self.factor = base, factor

        def score(self, a, b):
            return self.factor * self.base.score(a, b)

    query = f"{inst.question}\n{inst.rationales[0].text}"
    chosen = []
    for factor in (1.0, 7.5):
        client = knowledge_client(tmp_path, cfg, inst, completions)
        base = TfidfSimilarity([query] + completions)
        items = generate_and_select_knowledge(
            inst, cfg, client, embedder=ScaledSimilarity(base, factor)
        )
        chosen.append([item.selected for item in items])
    assert chosen[0] == chosen[1]


def test_knowledge_requires_kept_rationale(cfg, instances):
    client = MockTeacherClient.for_corpus(instances)
    with pytest.raises(TeacherError, match="no kept rationale"):
        generate_and_select_knowledge(instances[0], cfg, client)


def test_all_blank_knowledge_fails(tmp_path, cfg):
    inst = kept_instance()
    client = knowledge_client(tmp_path, cfg, inst, ["   "])
    with pytest.raises(TeacherError, match="no usable knowledge"):
        generate_and_select_knowledge(inst, cfg, client)


# ---------------------------------------------------------------------------
# corpus annotation
# ---------------------------------------------------------------------------


def test_annotate_corpus_full_pass(instances, cfg):
    client = MockTeacherClient.for_corpus(instances)
    before = [instance_to_dict(i) for i in instances]
    out = annotate_corpus(instances, cfg, client)
    assert [instance_to_dict(i) for i in instances] == before  # inputs untouched
    assert [i.id for i in out] == ["a", "b", "c"]
    for inst in out:
        inst.validate()
        assert len(inst.kept_rationales()) == 2
        assert inst.selected_knowledge() is not None
        assert inst.flags == []


def test_annotate_corpus_deterministic(instances, cfg):
    client = MockTeacherClient.for_corpus(instances, seed=5)
    a = annotate_corpus(instances, cfg, client)
    b = annotate_corpus(instances, cfg, client)
    assert [instance_to_dict(i) for i in a] == [instance_to_dict(i) for i in b]


def test_annotate_flags_unanswerable_instances(instances, cfg):
    client = MockTeacherClient.for_corpus(instances, accuracy=0.0)
    out = annotate_corpus(instances, cfg, client)
    for inst in out:
        assert FLAG_NO_KEPT_RATIONALE in inst.flags
        assert inst.knowledge == []


def test_annotate_flags_transport_failures(tmp_path, instances, cfg):
    path = tmp_path / "empty.json"
    path.write_text("{}")
    out = annotate_corpus(instances, cfg, TranscriptTeacherClient(path))
    for inst in out:
        assert FLAG_TEACHER_FAILED in inst.flags
        assert inst.rationales == []


def test_annotate_skips_existing_unless_overwrite(instances, cfg):
    done = instances[0]
    done.rationales = [Rationale("old text", "8", kept=True)]
    client = MockTeacherClient.for_corpus(instances)
    out = annotate_corpus(instances, cfg, client)
    assert out[0].rationales[0].text == "old text"
    redone = annotate_corpus(instances, cfg, client, overwrite=True)
    assert redone[0].rationales[0].text != "old text"


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------


def ok_handler(request):
    payload = json.loads(request.content)
    choices = [
        {"index": i, "message": {"content": f"completion {i}"}}
        for i in range(payload["n"])
    ]
    return httpx.Response(200, json={"choices": choices})


def make_client(handler, **kwargs):
    return OpenAIChatClient(
        "https://llm.invalid/v1/chat/completions",
        "teach-70b",
        transport=httpx.MockTransport(handler),
        backoff=0.0,
        **kwargs,
    )


def test_http_client_returns_choices():
    captured = {}

    def handler(request):
        captured.update(json.loads(request.content))
        return ok_handler(request)

    client = make_client(handler)
    out = client.complete("hello", GenerationParams(temperature=0.3, n_sequences=2))
    assert out == ["completion 0", "completion 1"]
    assert captured["model"] == "teach-70b"
    assert captured["temperature"] == 0.3
    assert captured["max_tokens"] == 2048
    assert captured["messages"] == [{"role": "user", "content": "hello"}]


def test_http_client_retries_transient_failures():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(500, text="upstream hiccup")
        return ok_handler(request)

    client = make_client(handler, max_retries=2)
    assert client.complete("hello", GenerationParams(n_sequences=1)) == ["completion 0"]
    assert calls["n"] == 2


def test_http_client_gives_up_after_retries():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(503, text="down")

    client = make_client(handler, max_retries=1)
    with pytest.raises(TeacherError, match="after 2 attempts"):
        client.complete("hello", GenerationParams())
    assert calls["n"] == 2


def test_http_client_rejects_malformed_body():
    client = make_client(lambda request: httpx.Response(200, json={"nope": []}), max_retries=0)
    with pytest.raises(TeacherError):
        client.complete("hello", GenerationParams())


def test_http_client_sends_bearer_token(monkeypatch):
    monkeypatch.setenv("TEACHER_API_KEY", "sk-test-123")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("Authorization")
        return ok_handler(request)

    make_client(handler).complete("hello", GenerationParams(n_sequences=1))
    assert seen["auth"] == "Bearer sk-test-123"


def test_http_client_requires_endpoint():
    with pytest.raises(ConfigError):
        OpenAIChatClient("", "model")
