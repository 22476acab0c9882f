"""Exact-match evaluation: answer extraction, normalization, file scoring.

Model outputs are free text.  The final answer is whatever follows the
last ``answer is`` marker (case-insensitive, so "Therefore, the answer
is 64." and "the ANSWER IS (a)" both work).  Extraction and comparison
rules are deliberately dumb and symmetric: both sides get the same
normalization, and numbers are compared as strings ("64.0" != "64").
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from pathlib import Path

from internlab.errors import EvalError
from internlab.util import read_jsonl

ANSWER_MARKER = "Therefore, the answer is"

_MARKER_RE = re.compile(r"answer\s+is", re.IGNORECASE)
_OPTION_RE = re.compile(r"\(([A-Za-z])\)")
_WS_RE = re.compile(r"\s+")

_STRIP_CHARS = string.punctuation + string.whitespace


def has_answer_marker(text: str) -> bool:
    return _MARKER_RE.search(text) is not None


def extract_answer(text: str | None) -> str | None:
    """Return the answer following the last ``answer is`` marker.

    Surrounding whitespace and terminal punctuation are stripped; a
    parenthesized option letter like ``(a)`` collapses to the letter.
    Returns None when no marker is present or nothing follows it.
    """
    if not text:
        return None
    last = None
    for m in _MARKER_RE.finditer(text):
        last = m
    if last is None:
        return None
    rest = text[last.end():].strip()
    rest = rest.lstrip(":,").strip()
    option = _OPTION_RE.search(rest)
    if option:
        return option.group(1)
    rest = rest.rstrip(_STRIP_CHARS)
    return rest if rest else None


def normalize_answer(text: str) -> str:
    """Lowercase, collapse whitespace, shed wrapping punctuation."""
    out = _WS_RE.sub(" ", text.lower()).strip()
    out = out.strip(_STRIP_CHARS)
    while out.startswith("(") and out.endswith(")") and len(out) > 1:
        out = out[1:-1].strip(_STRIP_CHARS)
    return out


def exact_match(predicted: str | None, gold: str) -> int:
    """1 iff the normalized forms coincide; absent predictions score 0."""
    if predicted is None:
        return 0
    return int(normalize_answer(predicted) == normalize_answer(gold))


@dataclass
class ItemResult:
    id: str
    extracted: str | None
    gold: str
    correct: int


@dataclass
class EvalResult:
    dataset_name: str
    n: int
    em: float
    per_item: list[ItemResult] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "n": self.n,
            "em": self.em,
            "missing": list(self.missing),
            "per_item": [
                {"id": r.id, "extracted": r.extracted, "gold": r.gold, "correct": r.correct}
                for r in self.per_item
            ],
        }


def score_items(items: list[tuple[str, str | None, str]], dataset_name: str = "") -> EvalResult:
    """Score (id, raw output text or None, gold answer) triples."""
    per_item = []
    missing = []
    for item_id, output_text, gold in items:
        if output_text is None:
            missing.append(item_id)
            per_item.append(ItemResult(item_id, None, gold, 0))
            continue
        extracted = extract_answer(output_text)
        per_item.append(ItemResult(item_id, extracted, gold, exact_match(extracted, gold)))
    n = len(per_item)
    em = sum(r.correct for r in per_item) / n if n else 0.0
    return EvalResult(dataset_name, n, em, per_item, missing)


def evaluate_file(predictions_path: str | Path, gold, dataset_name: str = "") -> EvalResult:
    """Score a predictions file against gold instances.

    The file holds one {"id", "output_text"} object per line.  Unknown
    or duplicate ids are errors; gold instances without a prediction
    score 0 and are listed in the result.  ``gold`` is any iterable of
    objects with ``id`` and ``answer`` attributes.
    """
    gold = list(gold)
    by_id = {g.id: g for g in gold}
    if len(by_id) != len(gold):
        raise EvalError("gold corpus contains duplicate ids")
    outputs: dict[str, str] = {}
    try:
        lines = list(read_jsonl(predictions_path))
    except ValueError as exc:
        raise EvalError(str(exc)) from exc
    for lineno, obj in lines:
        where = f"{predictions_path}: line {lineno}"
        if not isinstance(obj, dict) or "id" not in obj or "output_text" not in obj:
            raise EvalError(f"{where}: prediction records need 'id' and 'output_text'")
        pid = obj["id"]
        if pid not in by_id:
            raise EvalError(f"{where}: prediction for unknown id {pid!r}")
        if pid in outputs:
            raise EvalError(f"{where}: duplicate prediction for id {pid!r}")
        outputs[pid] = obj["output_text"]
    return score_items(
        [(g.id, outputs.get(g.id), g.answer) for g in gold],
        dataset_name=dataset_name or Path(predictions_path).stem,
    )


def render_report(results: list[EvalResult]) -> str:
    """Human-readable table, one row per dataset plus a mean row."""
    lines = [f"{'dataset':<24} {'n':>6} {'EM':>8} {'missing':>8}"]
    for r in results:
        lines.append(f"{r.dataset_name:<24} {r.n:>6} {r.em:>8.4f} {len(r.missing):>8}")
    if len(results) > 1:
        mean = sum(r.em for r in results) / len(results)
        lines.append(f"{'mean':<24} {'':>6} {mean:>8.4f} {'':>8}")
    return "\n".join(lines)
