"""Shared fixtures and corpus builders for the test suite."""

from __future__ import annotations

import pytest

from internlab.corpus import KnowledgeItem, Rationale, TrainingInstance


def make_instance(
    id: str = "q1",
    question: str = "What is 2 + 2 ?",
    answer: str = "4",
    rationale: str | None = "2 + 2 equals 4 .",
    knowledge: str | None = "Addition of small integers .",
    supplement: str = "",
    split: str = "train",
) -> TrainingInstance:
    rationales = []
    if rationale is not None:
        rationales.append(Rationale(text=rationale, extracted_answer=answer, kept=True))
    items = []
    if knowledge is not None:
        items.append(KnowledgeItem(summary=knowledge, supplement=supplement, selected=True))
    return TrainingInstance(
        id=id,
        question=question,
        answer=answer,
        rationales=rationales,
        knowledge=items,
        split=split,
    )


@pytest.fixture
def small_corpus() -> list[TrainingInstance]:
    rows = [
        ("q1", "What is 3 plus 5 ?", "8", "3 plus 5 equals 8 .", "Sum facts for single digits ."),
        ("q2", "What is 3 plus 6 ?", "9", "3 plus 6 equals 9 .", "Sum facts for single digits ."),
        ("q3", "What is 7 minus 2 ?", "5", "7 minus 2 equals 5 .", "Difference facts for single digits ."),
        ("q4", "Name the capital of France .", "Paris", "The capital of France is Paris .", "European capitals ."),
        ("q5", "Name the capital of Spain .", "Madrid", "The capital of Spain is Madrid .", "European capitals ."),
    ]
    return [make_instance(i, q, a, r, k) for i, q, a, r, k in rows]
