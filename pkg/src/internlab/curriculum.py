"""Compiles a corpus plus a decay schedule into stage training files.

Each stage t renders one prompt per instance and one row per kept
rationale.  A prompt stacks up to three blank-line-separated blocks:

    Knowledge:
    {knowledge compressed to rate S_t}          (omitted when empty)

    Question: {peer question}                   (floor(K * S_t) peer
    Answer: {peer rationale} {peer answer}       demonstrations, each
                                                 its own block)
    Question: {question}
    Answer:

The target is the rationale text, whitespace-normalized, with the
"Therefore, the answer is {answer}" sentence appended when the
rationale does not already state it.  ``loss_span`` gives [start, end)
token offsets into tokenize(prompt) + tokenize(target), so the span
covers exactly the target and detokenizes back to it.

At the final stage S_T = 0 every block above the question vanishes and
the rows coincide with the ``std_cot`` baseline.  Stage files are JSON
lines of {"instance_id", "stage", "prompt", "target", "loss_span",
"rationale_index"} plus a sidecar manifest recording how they were
built and which instances were skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from internlab.compressor import CompressionRequest, FrequencyScorer, compress
from internlab.corpus import (
    KnowledgeItem,
    Rationale,
    TrainingInstance,
    WhitespaceTokenizer,
    normalize_space,
)
from internlab.errors import CurriculumError
from internlab.evalharness import ANSWER_MARKER, has_answer_marker
from internlab.exampler import ExamplePool, build_pools, select_examples
from internlab.schedule import SchedulePlan
from internlab.util import derive_seed, read_jsonl, write_json, write_jsonl

BASELINE_MODES = ("std_cot", "plain_ft")


@dataclass
class TrainingRow:
    instance_id: str
    stage: int
    prompt: str
    target: str
    loss_span: tuple[int, int]
    rationale_index: int

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "stage": self.stage,
            "prompt": self.prompt,
            "target": self.target,
            "loss_span": list(self.loss_span),
            "rationale_index": self.rationale_index,
        }


@dataclass
class StageDataset:
    stage: int
    schedule_value: float
    rows: list[TrainingRow]
    manifest: dict = field(default_factory=dict)


@dataclass
class CurriculumDeps:
    """Pluggable pieces a stage build needs besides corpus and schedule."""

    tokenizer: object
    compress_fn: Callable[[str, float], str]
    pools: Mapping[str, ExamplePool] | None


def default_deps(
    instances: list[TrainingInstance],
    K: int,
    tokenizer=None,
    preserve_numbers: bool = True,
    preserve_capitalized: bool = True,
    pools: Mapping[str, ExamplePool] | None = None,
) -> CurriculumDeps:
    """Frequency scorer fitted on the corpus text, pools on the questions.

    Pools are built over instances that can render as demonstrations,
    i.e. those with at least one kept rationale.
    """
    tokenizer = tokenizer or WhitespaceTokenizer()
    texts: list[str] = []
    for inst in instances:
        texts.append(inst.question)
        texts.extend(r.text for r in inst.rationales)
        texts.extend(k.full_text() for k in inst.knowledge)
    scorer = FrequencyScorer(texts, tokenizer)

    def compress_fn(text: str, rate: float) -> str:
        req = CompressionRequest(
            text,
            rate,
            tokenizer=tokenizer,
            preserve_numbers=preserve_numbers,
            preserve_capitalized=preserve_capitalized,
        )
        return compress(req, scorer)

    if pools is None:
        pools = build_pools([i for i in instances if i.kept_rationales()], K)
    return CurriculumDeps(tokenizer, compress_fn, pools)


def render_question_block(question: str) -> str:
    return f"Question: {question}\nAnswer:"


def render_example(inst: TrainingInstance) -> str:
    kept = inst.kept_rationales()
    if not kept:
        raise CurriculumError(f"instance {inst.id!r} used as example has no kept rationale")
    return f"Question: {inst.question}\nAnswer: {kept[0].text} {inst.answer}"


def render_prompt(knowledge_text: str, example_blocks: list[str], question: str) -> str:
    parts = []
    if knowledge_text:
        parts.append(f"Knowledge:\n{knowledge_text}")
    parts.extend(example_blocks)
    parts.append(render_question_block(question))
    return "\n\n".join(parts)


def render_target(rationale: Rationale, answer: str) -> str:
    """Rationale plus a final answer sentence, single-spaced.

    The sentence is only appended when the rationale does not already
    carry an ``answer is`` marker.  Normalizing whitespace keeps the
    loss-span round trip exact: detokenizing the target's tokens must
    reproduce the stored string byte-for-byte.
    """
    text = rationale.text
    if not has_answer_marker(text):
        text = f"{text} {ANSWER_MARKER} {answer}"
    return normalize_space(text)


def _usable(inst: TrainingInstance) -> tuple[bool, str]:
    if not inst.kept_rationales():
        return False, "no kept rationale"
    if inst.selected_knowledge() is None:
        return False, "no selected knowledge"
    return True, ""


def build_stage(
    instances: list[TrainingInstance],
    plan: SchedulePlan,
    t: int,
    deps: CurriculumDeps,
    seed: int,
    include_summary: bool = True,
    include_supplement: bool = True,
) -> StageDataset:
    if not 1 <= t <= plan.T:
        raise CurriculumError(f"stage must be in [1, {plan.T}], got {t}")
    s_t = plan.values[t - 1]
    by_id = {inst.id: inst for inst in instances}
    rows: list[TrainingRow] = []
    excluded: list[dict] = []
    for inst in instances:
        ok, reason = _usable(inst)
        if not ok:
            excluded.append({"id": inst.id, "reason": reason})
            continue
        knowledge = inst.selected_knowledge()
        k_text = deps.compress_fn(
            knowledge.full_text(include_summary, include_supplement), s_t
        )
        example_blocks: list[str] = []
        if deps.pools is not None:
            pool = deps.pools.get(inst.id)
            if pool is None:
                raise CurriculumError(f"no example pool for instance {inst.id!r}")
            for peer_id in select_examples(pool, s_t, derive_seed(seed, t, inst.id)):
                peer = by_id.get(peer_id)
                if peer is None:
                    raise CurriculumError(
                        f"pool for {inst.id!r} references unknown instance {peer_id!r}"
                    )
                example_blocks.append(render_example(peer))
        prompt = render_prompt(k_text, example_blocks, inst.question)
        prompt_len = len(deps.tokenizer.tokenize(prompt))
        for j, rationale in enumerate(inst.rationales):
            if not rationale.kept:
                continue
            target = render_target(rationale, inst.answer)
            target_len = len(deps.tokenizer.tokenize(target))
            rows.append(
                TrainingRow(inst.id, t, prompt, target, (prompt_len, prompt_len + target_len), j)
            )
    if not rows:
        raise CurriculumError(f"stage {t} dataset is empty: no usable instances")
    manifest = {
        "stage": t,
        "schedule_value": s_t,
        "epochs": plan.epochs[t - 1],
        "plan": plan.to_dict(),
        "seed": seed,
        "n_rows": len(rows),
        "n_instances": len(instances) - len(excluded),
        "excluded": excluded,
        "include_summary": include_summary,
        "include_supplement": include_supplement,
    }
    return StageDataset(t, s_t, rows, manifest)


def build_curriculum(
    instances: list[TrainingInstance],
    plan: SchedulePlan,
    deps: CurriculumDeps,
    seed: int,
    include_summary: bool = True,
    include_supplement: bool = True,
) -> list[StageDataset]:
    return [
        build_stage(instances, plan, t, deps, seed, include_summary, include_supplement)
        for t in range(1, plan.T + 1)
    ]


def build_baseline(
    instances: list[TrainingInstance], mode: str, stage: int = 0
) -> StageDataset:
    """Single-phase baselines: ``std_cot`` (question -> rationale+answer)
    or ``plain_ft`` (question -> answer verbatim)."""
    if mode not in BASELINE_MODES:
        raise CurriculumError(f"baseline mode must be one of {BASELINE_MODES}, got {mode!r}")
    tokenizer = WhitespaceTokenizer()
    rows: list[TrainingRow] = []
    excluded: list[dict] = []
    for inst in instances:
        if mode == "std_cot" and not inst.kept_rationales():
            excluded.append({"id": inst.id, "reason": "no kept rationale"})
            continue
        prompt = render_question_block(inst.question)
        prompt_len = len(tokenizer.tokenize(prompt))
        if mode == "plain_ft":
            target = inst.answer
            target_len = len(tokenizer.tokenize(target))
            rows.append(TrainingRow(inst.id, stage, prompt, target, (prompt_len, prompt_len + target_len), -1))
            continue
        for j, rationale in enumerate(inst.rationales):
            if not rationale.kept:
                continue
            target = render_target(rationale, inst.answer)
            target_len = len(tokenizer.tokenize(target))
            rows.append(
                TrainingRow(inst.id, stage, prompt, target, (prompt_len, prompt_len + target_len), j)
            )
    if not rows:
        raise CurriculumError(f"{mode} baseline dataset is empty")
    manifest = {"mode": mode, "n_rows": len(rows), "excluded": excluded}
    return StageDataset(stage, 0.0, rows, manifest)


# ---------------------------------------------------------------------------
# Stage file I/O
# ---------------------------------------------------------------------------


def write_stage(ds: StageDataset, path: str | Path, manifest_path: str | Path | None = None) -> None:
    write_jsonl(path, (row.to_dict() for row in ds.rows))
    if manifest_path is None:
        manifest_path = Path(path).with_suffix(".manifest.json")
    write_json(manifest_path, ds.manifest)


def load_stage(path: str | Path) -> StageDataset:
    rows: list[TrainingRow] = []
    stage = 0
    for lineno, obj in read_jsonl(path):
        where = f"{path}: line {lineno}"
        try:
            row = TrainingRow(
                instance_id=obj["instance_id"],
                stage=obj["stage"],
                prompt=obj["prompt"],
                target=obj["target"],
                loss_span=(obj["loss_span"][0], obj["loss_span"][1]),
                rationale_index=obj["rationale_index"],
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise CurriculumError(f"{where}: bad training row ({exc!r})") from exc
        if not 0 <= row.loss_span[0] <= row.loss_span[1]:
            raise CurriculumError(f"{where}: loss_span out of order")
        rows.append(row)
        stage = row.stage
    if not rows:
        raise CurriculumError(f"{path}: stage file is empty")
    manifest_path = Path(path).with_suffix(".manifest.json")
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    return StageDataset(stage, manifest.get("schedule_value", 0.0), rows, manifest)
