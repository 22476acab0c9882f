"""Teacher-model client, rationale filtering, and knowledge selection.

A teacher is anything with ``complete(prompt, params) -> list[str]``.
Three implementations ship here: an OpenAI-compatible chat client, a
deterministic mock for tests and demos, and a transcript player that
answers only requests recorded in a JSON file.

Per instance the pipeline asks the teacher for reasoning chains, keeps
exactly those whose extracted answer matches the gold answer, then asks
for distilled knowledge (a learning summary plus supplementary
background) seeded with the question, the gold answer, and the first
kept chain.  When several knowledge candidates come back, the one most
similar to the question-plus-rationale text wins ``selected``; cosine
over TF-IDF vectors is the default representation, and any object with
a compatible ``score`` method can replace it.

Teacher failures never abort a run: the instance is flagged and the
sweep continues, so long generation jobs can resume from the corpus
file they write.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx

from internlab.corpus import KnowledgeItem, Rationale, TrainingInstance
from internlab.errors import ConfigError, TeacherError
from internlab.evalharness import ANSWER_MARKER, exact_match, extract_answer
from internlab.similarity import TfidfSimilarity
from internlab.util import derive_seed, stable_hash

logger = logging.getLogger(__name__)

SUMMARY_LABEL = "Learning Summary:"
SUPPLEMENT_LABEL = "Supplementary Knowledge:"

FLAG_TEACHER_FAILED = "teacher_failed"
FLAG_NO_KEPT_RATIONALE = "no_kept_rationale"


def load_template(name: str) -> str:
    """Read a packaged prompt template (``cot`` or ``knowledge``)."""
    return resources.files("internlab").joinpath(f"templates/{name}.txt").read_text()


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.8
    top_p: float = 1.0
    max_new_tokens: int = 2048
    n_sequences: int = 2

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature must be in [0, 2], got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.n_sequences < 1:
            raise ConfigError(f"n_sequences must be >= 1, got {self.n_sequences}")


@dataclass(frozen=True)
class TeacherConfig:
    endpoint: str = ""
    model_name: str = "mock"
    rationale_params: GenerationParams = field(default_factory=GenerationParams)
    knowledge_params: GenerationParams = field(
        default_factory=lambda: GenerationParams(n_sequences=1)
    )
    prompt_cot: str = field(default_factory=lambda: load_template("cot"))
    prompt_know: str = field(default_factory=lambda: load_template("knowledge"))
    max_retries: int = 3
    parallelism: int = 4
    task_name: str = "multi-step reasoning problems"
    task_description: str = "Each task states a question that takes several steps to resolve"

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if "{QUESTION}" not in self.prompt_cot:
            raise ConfigError("prompt_cot template must contain a {QUESTION} slot")
        for slot in ("{QUESTION}", "{ANSWER}"):
            if slot not in self.prompt_know:
                raise ConfigError(f"prompt_know template must contain a {slot} slot")


def render_cot_prompt(cfg: TeacherConfig, question: str) -> str:
    return (
        cfg.prompt_cot.replace("{TASK_NAME}", cfg.task_name)
        .replace("{TASK_DESCRIPTION}", cfg.task_description)
        .replace("{QUESTION}", question)
    )


def render_knowledge_prompt(
    cfg: TeacherConfig, question: str, answer: str, rationale: str = ""
) -> str:
    return (
        cfg.prompt_know.replace("{TASK_NAME}", cfg.task_name)
        .replace("{TASK_DESCRIPTION}", cfg.task_description)
        .replace("{QUESTION}", question)
        .replace("{ANSWER}", answer)
        .replace("{RATIONALE}", rationale)
    )


# ---------------------------------------------------------------------------
# clients
# ---------------------------------------------------------------------------


class TeacherClient(Protocol):
    def complete(self, prompt: str, params: GenerationParams) -> list[str]: ...


class OpenAIChatClient:
    """Chat-completions client for any OpenAI-compatible endpoint.

    The bearer token is read from the environment (``api_key_env``) so
    keys never live in config files.  Transient failures retry with
    exponential backoff; after ``max_retries`` extra attempts the call
    raises ``TeacherError``.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key_env: str = "TEACHER_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        if not endpoint:
            raise ConfigError("endpoint must be a non-empty URL")
        self.endpoint = endpoint
        self.model_name = model_name
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {}
        key = os.environ.get(api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, prompt: str, params: GenerationParams) -> list[str]:
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
            "n": params.n_sequences,
        }
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(self.endpoint, json=payload)
                response.raise_for_status()
                choices = response.json()["choices"]
                return [c["message"]["content"] for c in choices]
            except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
                last = exc
                logger.warning("teacher request attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.max_retries and self.backoff > 0:
                    time.sleep(self.backoff * 2**attempt)
        raise TeacherError(
            f"teacher request failed after {self.max_retries + 1} attempts: {last}"
        ) from last


class MockTeacherClient:
    """Deterministic offline teacher.

    Reads the question (and, on knowledge prompts, the reference
    answer) back out of the rendered prompt, then answers from a
    question->answer table.  ``accuracy`` is the per-completion chance
    of producing the correct answer, drawn from a hash of (seed,
    prompt, sequence index), so identical requests always yield
    byte-identical output.
    """

    def __init__(self, answers: dict[str, str] | None = None, accuracy: float = 1.0, seed: int = 0):
        if not 0.0 <= accuracy <= 1.0:
            raise ConfigError(f"accuracy must be in [0, 1], got {accuracy}")
        self.answers = dict(answers or {})
        self.accuracy = accuracy
        self.seed = seed

    @classmethod
    def for_corpus(cls, instances: list[TrainingInstance], accuracy: float = 1.0, seed: int = 0):
        return cls({i.question: i.answer for i in instances}, accuracy, seed)

    def complete(self, prompt: str, params: GenerationParams) -> list[str]:
        question = _prompt_field(prompt, "Question:")
        completions = []
        for i in range(params.n_sequences):
            if SUPPLEMENT_LABEL in prompt:
                answer = _prompt_field(prompt, "Answer:")
                completions.append(
                    f"{SUMMARY_LABEL} Restate the governing fact for a question "
                    f"of this kind before answering it. "
                    f"{SUPPLEMENT_LABEL} {question} is settled by {answer}."
                )
                continue
            gold = self.answers.get(question)
            draw = derive_seed(self.seed, prompt, i) / float(2**63)
            if gold is not None and draw < self.accuracy:
                answer = gold
            else:
                answer = f"not {gold}" if gold is not None else "unknown"
            completions.append(
                f"The question {question} is resolved by its governing fact. "
                f"{ANSWER_MARKER} {answer}."
            )
        return completions


def _prompt_field(prompt: str, label: str) -> str:
    for line in reversed(prompt.splitlines()):
        if line.startswith(label):
            return line[len(label):].strip()
    return ""


def request_hash(prompt: str, params: GenerationParams) -> str:
    return stable_hash(
        {
            "prompt": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_new_tokens": params.max_new_tokens,
            "n_sequences": params.n_sequences,
        }
    )


class TranscriptTeacherClient:
    """Replays completions recorded in a JSON request-hash table."""

    def __init__(self, path: str | Path):
        path = Path(path)
        if not path.exists():
            raise TeacherError(f"transcript file {path} does not exist")
        self.table = json.loads(path.read_text())

    def complete(self, prompt: str, params: GenerationParams) -> list[str]:
        key = request_hash(prompt, params)
        if key not in self.table:
            raise TeacherError(f"transcript has no completions for request {key}")
        return list(self.table[key])


def make_transcript(entries: list[tuple[str, GenerationParams, list[str]]]) -> dict:
    """Build a table consumable by ``TranscriptTeacherClient``."""
    return {request_hash(prompt, params): completions for prompt, params, completions in entries}


# ---------------------------------------------------------------------------
# generation pipeline
# ---------------------------------------------------------------------------


def filter_rationales(rationales: list[Rationale], gold: str) -> list[Rationale]:
    """Set ``kept`` exactly where the extracted answer matches ``gold``."""
    out = []
    for r in rationales:
        extracted = extract_answer(r.text)
        kept = extracted is not None and exact_match(extracted, gold) == 1
        out.append(Rationale(text=r.text, extracted_answer=extracted, kept=kept))
    return out


def generate_rationales(
    instance: TrainingInstance, cfg: TeacherConfig, client: TeacherClient
) -> list[Rationale]:
    """Ask for n_sequences reasoning chains and filter them against gold."""
    prompt = render_cot_prompt(cfg, instance.question)
    completions = client.complete(prompt, cfg.rationale_params)
    rationales = []
    for i, text in enumerate(completions):
        if not text or not text.strip():
            logger.warning("instance %s: dropping empty completion %d", instance.id, i)
            continue
        rationales.append(Rationale(text=text.strip()))
    return filter_rationales(rationales, instance.answer)


def parse_knowledge(text: str) -> tuple[str, str] | None:
    """Split labeled teacher output into (summary, supplement).

    Output without the expected labels is preserved whole as the
    summary (with a warning); blank output parses to None.
    """
    if not text or not text.strip():
        return None
    body = text.strip()
    if SUMMARY_LABEL in body:
        after = body.split(SUMMARY_LABEL, 1)[1]
        if SUPPLEMENT_LABEL in after:
            summary, supplement = after.split(SUPPLEMENT_LABEL, 1)
            return summary.strip(), supplement.strip()
        return after.strip(), ""
    logger.warning("knowledge completion missing %r label; storing verbatim", SUMMARY_LABEL)
    return body, ""


def generate_and_select_knowledge(
    instance: TrainingInstance,
    cfg: TeacherConfig,
    client: TeacherClient,
    embedder=None,
) -> list[KnowledgeItem]:
    """Generate knowledge candidates and mark exactly one selected.

    Selection maximizes similarity between each candidate's full text
    and the question concatenated with the first kept rationale; ties
    go to the lowest index.
    """
    kept = instance.kept_rationales()
    if not kept:
        raise TeacherError(
            f"instance {instance.id!r} has no kept rationale to seed the knowledge prompt"
        )
    prompt = render_knowledge_prompt(cfg, instance.question, instance.answer, kept[0].text)
    completions = client.complete(prompt, cfg.knowledge_params)
    items = []
    for text in completions:
        parsed = parse_knowledge(text)
        if parsed is None:
            logger.warning("instance %s: dropping blank knowledge completion", instance.id)
            continue
        summary, supplement = parsed
        if summary:
            items.append(KnowledgeItem(summary=summary, supplement=supplement))
    if not items:
        raise TeacherError(f"instance {instance.id!r}: teacher produced no usable knowledge")

    query = f"{instance.question}\n{kept[0].text}"
    if embedder is None:
        embedder = TfidfSimilarity([query] + [item.full_text() for item in items])
    scores = [embedder.score(query, item.full_text()) for item in items]
    best = max(range(len(items)), key=scores.__getitem__)  # first index wins ties
    items[best].selected = True
    return items


def _add_flag(instance: TrainingInstance, flag: str) -> None:
    if flag not in instance.flags:
        instance.flags.append(flag)


def annotate_corpus(
    instances: list[TrainingInstance],
    cfg: TeacherConfig,
    client: TeacherClient,
    embedder=None,
    overwrite: bool = False,
) -> list[TrainingInstance]:
    """Generate rationales and knowledge for a whole corpus.

    Inputs are never mutated; results come back in input order.  An
    instance that already carries rationales is passed through
    untouched unless ``overwrite`` is set, so interrupted sweeps can
    rerun over their own output file.  Teacher failures flag the
    instance and the sweep continues.
    """

    def annotate_one(instance: TrainingInstance) -> TrainingInstance:
        out = deepcopy(instance)
        if out.rationales and not overwrite:
            return out
        try:
            out.rationales = generate_rationales(out, cfg, client)
        except TeacherError as exc:
            logger.warning("instance %s: rationale generation failed: %s", out.id, exc)
            _add_flag(out, FLAG_TEACHER_FAILED)
            return out
        if not out.kept_rationales():
            _add_flag(out, FLAG_NO_KEPT_RATIONALE)
            return out
        try:
            out.knowledge = generate_and_select_knowledge(out, cfg, client, embedder)
        except TeacherError as exc:
            logger.warning("instance %s: knowledge generation failed: %s", out.id, exc)
            _add_flag(out, FLAG_TEACHER_FAILED)
        return out

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        return list(pool.map(annotate_one, instances))
