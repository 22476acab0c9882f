"""Corpus data model, tokenizers, and line-delimited corpus I/O.

A corpus file holds one JSON object per line.  Two schemas are accepted:

* ``qa``       -- {"id", "question", "answer"} plus optional "split";
                  rationales and knowledge start empty.
* ``instance`` -- the full record written by this package: adds
                  "rationales" [{"text", "extracted_answer", "kept"}],
                  "knowledge" [{"summary", "supplement", "selected"}],
                  and "flags".

Loads are strict: malformed lines, duplicate ids, empty questions or
answers, and out-of-range fields all raise ``CorpusError`` naming the
line.  An empty file loads as an empty list with a warning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from internlab.errors import ConfigError, CorpusError
from internlab.util import write_jsonl, read_jsonl

logger = logging.getLogger(__name__)

SPLITS = ("train", "eval")


@dataclass
class Rationale:
    """One teacher-written reasoning chain for an instance."""

    text: str
    extracted_answer: str | None = None
    kept: bool = False


@dataclass
class KnowledgeItem:
    """A distilled hint: short summary plus optional supplementary text."""

    summary: str
    supplement: str = ""
    selected: bool = False

    def full_text(self, include_summary: bool = True, include_supplement: bool = True) -> str:
        parts = []
        if include_summary and self.summary:
            parts.append(self.summary)
        if include_supplement and self.supplement:
            parts.append(self.supplement)
        return "\n".join(parts)


@dataclass
class TrainingInstance:
    id: str
    question: str
    answer: str
    rationales: list[Rationale] = field(default_factory=list)
    knowledge: list[KnowledgeItem] = field(default_factory=list)
    split: str = "train"
    flags: list[str] = field(default_factory=list)

    def kept_rationales(self) -> list[Rationale]:
        return [r for r in self.rationales if r.kept]

    def selected_knowledge(self) -> KnowledgeItem | None:
        for item in self.knowledge:
            if item.selected:
                return item
        return None

    def validate(self, where: str = "") -> None:
        at = f"{where}: " if where else ""
        if not self.id or not isinstance(self.id, str):
            raise CorpusError(f"{at}instance id must be a non-empty string")
        if not isinstance(self.question, str) or not self.question.strip():
            raise CorpusError(f"{at}instance {self.id!r}: empty question")
        if not isinstance(self.answer, str) or not self.answer.strip():
            raise CorpusError(f"{at}instance {self.id!r}: empty answer")
        if self.split not in SPLITS:
            raise CorpusError(
                f"{at}instance {self.id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )
        for i, r in enumerate(self.rationales):
            if not r.text.strip():
                raise CorpusError(f"{at}instance {self.id!r}: rationale {i} has empty text")
            if r.kept and r.extracted_answer is None:
                raise CorpusError(
                    f"{at}instance {self.id!r}: rationale {i} is kept but has no extracted answer"
                )
        n_selected = sum(1 for k in self.knowledge if k.selected)
        if n_selected > 1:
            raise CorpusError(
                f"{at}instance {self.id!r}: {n_selected} knowledge items selected, at most 1 allowed"
            )
        for i, k in enumerate(self.knowledge):
            if not k.summary.strip():
                raise CorpusError(f"{at}instance {self.id!r}: knowledge {i} has empty summary")


def instance_to_dict(inst: TrainingInstance) -> dict:
    return asdict(inst)


def instance_from_dict(obj: dict, where: str = "") -> TrainingInstance:
    at = f"{where}: " if where else ""
    if not isinstance(obj, dict):
        raise CorpusError(f"{at}record must be a JSON object, got {type(obj).__name__}")
    known = {"id", "question", "answer", "rationales", "knowledge", "split", "flags"}
    missing = {"id", "question", "answer"} - obj.keys()
    if missing:
        raise CorpusError(f"{at}record missing required fields: {sorted(missing)}")
    unknown = obj.keys() - known
    if unknown:
        raise CorpusError(f"{at}record has unknown fields: {sorted(unknown)}")
    try:
        rationales = [Rationale(**r) for r in obj.get("rationales", [])]
        knowledge = [KnowledgeItem(**k) for k in obj.get("knowledge", [])]
    except TypeError as exc:
        raise CorpusError(f"{at}bad rationale or knowledge record: {exc}") from exc
    inst = TrainingInstance(
        id=obj["id"],
        question=obj["question"],
        answer=obj["answer"],
        rationales=rationales,
        knowledge=knowledge,
        split=obj.get("split", "train"),
        flags=list(obj.get("flags", [])),
    )
    inst.validate(where)
    return inst


def load_corpus(path: str | Path, schema: str = "instance") -> list[TrainingInstance]:
    """Load a corpus file; see the module docstring for accepted schemas."""
    if schema not in ("qa", "instance"):
        raise ConfigError(f"schema must be 'qa' or 'instance', got {schema!r}")
    instances: list[TrainingInstance] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl_corpus(path):
        where = f"{path}: line {lineno}"
        if schema == "qa":
            inst = _qa_from_dict(obj, where)
        else:
            inst = instance_from_dict(obj, where)
        if inst.id in seen:
            raise CorpusError(
                f"{where}: duplicate instance id {inst.id!r} (first seen on line {seen[inst.id]})"
            )
        seen[inst.id] = lineno
        instances.append(inst)
    if not instances:
        logger.warning("corpus %s is empty", path)
    return instances


def read_jsonl_corpus(path: str | Path):
    try:
        yield from read_jsonl(path)
    except ValueError as exc:
        raise CorpusError(str(exc)) from exc


def _qa_from_dict(obj: dict, where: str) -> TrainingInstance:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: record must be a JSON object")
    missing = {"id", "question", "answer"} - obj.keys()
    if missing:
        raise CorpusError(f"{where}: record missing required fields: {sorted(missing)}")
    inst = TrainingInstance(
        id=str(obj["id"]),
        question=obj["question"],
        answer=str(obj["answer"]),
        split=obj.get("split", "train"),
    )
    inst.validate(where)
    return inst


def save_corpus(instances: list[TrainingInstance], path: str | Path) -> None:
    write_jsonl(path, (instance_to_dict(i) for i in instances))


# ---------------------------------------------------------------------------
# Tokenizers
# ---------------------------------------------------------------------------
#
# Both tokenizers are deterministic and satisfy the fixed-point law
# detok(tok(detok(tok(x)))) == detok(tok(x)).

CONTINUATION = "##"


class WhitespaceTokenizer:
    """Splits on runs of whitespace; detokenization joins with single spaces."""

    kind = "whitespace"

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def detokenize(self, tokens: list[str]) -> str:
        return " ".join(tokens)

    def fingerprint(self) -> dict:
        return {"kind": self.kind}


class SubwordTokenizer:
    """Greedy longest-match segmentation against a fixed vocabulary file.

    The vocab file lists one unit per line; units starting with ``##``
    only match inside a word.  Characters not covered by any unit fall
    back to single-character pieces, so segmentation never fails.
    """

    kind = "byte-pair"

    def __init__(self, vocab_path: str | Path):
        self.vocab_path = str(vocab_path)
        units = [line.rstrip("\n") for line in open(vocab_path, "r", encoding="utf-8")]
        units = [u for u in units if u]
        if not units:
            raise ConfigError(f"tokenizer vocab {vocab_path} is empty")
        self.initial = {u for u in units if not u.startswith(CONTINUATION)}
        self.inner = {u[len(CONTINUATION):] for u in units if u.startswith(CONTINUATION)}
        self.max_len = max(len(u) for u in self.initial | self.inner) if units else 1

    def _segment(self, word: str) -> list[str]:
        pieces = []
        pos = 0
        while pos < len(word):
            table = self.initial if pos == 0 else self.inner
            end = min(len(word), pos + self.max_len)
            while end > pos + 1 and word[pos:end] not in table:
                end -= 1
            piece = word[pos:end]
            pieces.append(piece if pos == 0 else CONTINUATION + piece)
            pos = end
        return pieces

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        for word in text.split():
            out.extend(self._segment(word))
        return out

    def detokenize(self, tokens: list[str]) -> str:
        words: list[str] = []
        for tok in tokens:
            if tok.startswith(CONTINUATION) and words:
                words[-1] += tok[len(CONTINUATION):]
            else:
                words.append(tok.removeprefix(CONTINUATION))
        return " ".join(words)

    def fingerprint(self) -> dict:
        return {"kind": self.kind, "vocab_path": self.vocab_path}


def make_tokenizer(kind: str, vocab_path: str | Path | None = None):
    if kind == "whitespace":
        return WhitespaceTokenizer()
    if kind in ("byte-pair", "bpe"):
        if vocab_path is None:
            raise ConfigError("byte-pair tokenizer requires a vocab file path")
        return SubwordTokenizer(vocab_path)
    raise ConfigError(f"unknown tokenizer kind {kind!r}")


def token_count(tokenizer, text: str) -> int:
    return len(tokenizer.tokenize(text))


_WS_RE = re.compile(r"\s+")


def normalize_space(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()
