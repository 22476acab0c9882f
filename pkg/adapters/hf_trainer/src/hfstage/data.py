"""Stage-file reading, tokenization, and span-masked loss.

A stage file is JSON lines of {"instance_id", "stage", "prompt",
"target", "loss_span", "rationale_index"}.  ``loss_span`` is a [start,
end) range over the whitespace tokens of prompt + target; training
supervises exactly the span and nothing else.

Whitespace tokens are the schema's unit, so rows are re-encoded here by
whitespace-aligned pieces: the text before, inside, and after the span
is each tokenized separately with the model's tokenizer, preserving the
span boundary exactly even when subword pieces disagree with
whitespace.  Token runs are joined with single spaces (the schema's
detokenization convention).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .errors import StageSchemaError

REQUIRED_FIELDS = ("instance_id", "stage", "prompt", "target", "loss_span", "rationale_index")


@dataclass
class StageRow:
    instance_id: str
    prompt: str
    target: str
    span: tuple[int, int]


def read_stage_rows(path: str | Path) -> list[StageRow]:
    """Parse and validate a stage file; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise StageSchemaError(f"stage file {path} does not exist")
    rows: list[StageRow] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        where = f"{path}: line {lineno}"
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise StageSchemaError(f"{where}: invalid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise StageSchemaError(f"{where}: expected an object")
        missing = [f for f in REQUIRED_FIELDS if f not in obj]
        if missing:
            raise StageSchemaError(f"{where}: missing fields {missing}")
        if not isinstance(obj["prompt"], str) or not isinstance(obj["target"], str):
            raise StageSchemaError(f"{where}: prompt and target must be strings")
        span = obj["loss_span"]
        if (
            not isinstance(span, (list, tuple))
            or len(span) != 2
            or not all(isinstance(v, int) for v in span)
        ):
            raise StageSchemaError(f"{where}: loss_span must be a pair of integers")
        start, end = span
        n_tokens = len(obj["prompt"].split()) + len(obj["target"].split())
        if not 0 <= start < end <= n_tokens:
            raise StageSchemaError(
                f"{where}: loss_span [{start}, {end}) out of range for {n_tokens} tokens"
            )
        rows.append(StageRow(str(obj["instance_id"]), obj["prompt"], obj["target"], (start, end)))
    if not rows:
        raise StageSchemaError(f"{path}: stage file holds no rows")
    return rows


def _encode_piece(tokenizer, words: list[str]) -> list[int]:
    if not words:
        return []
    return tokenizer(" ".join(words), add_special_tokens=False)["input_ids"]


def encode_row(row: StageRow, tokenizer, max_length: int) -> dict:
    """Token ids plus a 0/1 mask marking the supervised span."""
    words = row.prompt.split() + row.target.split()
    start, end = row.span
    pre = _encode_piece(tokenizer, words[:start])
    span = _encode_piece(tokenizer, words[start:end])
    post = _encode_piece(tokenizer, words[end:])
    ids = pre + span + post
    mask = [0] * len(pre) + [1] * len(span) + [0] * len(post)
    if len(ids) > max_length:  # keep the supervised tail
        ids, mask = ids[-max_length:], mask[-max_length:]
    return {"input_ids": ids, "span_mask": mask}


def encode_chat_row(row: StageRow, tokenizer, max_length: int, chat_template: str) -> dict:
    """Render through the tokenizer's chat template; supervise the reply.

    The prompt becomes the user turn and the target the assistant turn;
    everything the template adds around the reply stays unsupervised.
    """
    if chat_template != "default":
        tokenizer.chat_template = chat_template
    messages = [{"role": "user", "content": row.prompt}]
    prefix_text = tokenizer.apply_chat_template(
        messages, tokenize=False, add_generation_prompt=True
    )
    full_text = tokenizer.apply_chat_template(
        messages + [{"role": "assistant", "content": row.target}], tokenize=False
    )
    if not full_text.startswith(prefix_text):
        raise StageSchemaError(
            "chat template does not render the user turn as a prefix of the dialogue"
        )
    prefix = tokenizer(prefix_text, add_special_tokens=False)["input_ids"]
    reply = tokenizer(full_text[len(prefix_text):], add_special_tokens=False)["input_ids"]
    ids = prefix + reply
    mask = [0] * len(prefix) + [1] * len(reply)
    if len(ids) > max_length:
        ids, mask = ids[-max_length:], mask[-max_length:]
    return {"input_ids": ids, "span_mask": mask}


def collate(examples: list[dict], pad_id: int) -> dict:
    """Right-pad to a rectangular batch; labels start as the input ids."""
    width = max(len(ex["input_ids"]) for ex in examples)
    batch = {
        "input_ids": torch.full((len(examples), width), pad_id, dtype=torch.long),
        "attention_mask": torch.zeros((len(examples), width), dtype=torch.long),
        "span_mask": torch.zeros((len(examples), width), dtype=torch.long),
    }
    for i, ex in enumerate(examples):
        n = len(ex["input_ids"])
        batch["input_ids"][i, :n] = torch.tensor(ex["input_ids"], dtype=torch.long)
        batch["attention_mask"][i, :n] = 1
        batch["span_mask"][i, :n] = torch.tensor(ex["span_mask"], dtype=torch.long)
    batch["labels"] = batch["input_ids"].clone()
    return batch


def masked_lm_loss(logits: torch.Tensor, labels: torch.Tensor, span_mask: torch.Tensor) -> torch.Tensor:
    """Next-token CE over span positions only: per-row mean, then batch mean.

    The span mask — not the label values — decides what counts, so label
    content outside the span never reaches the loss.
    """
    shifted = labels[:, 1:].masked_fill(span_mask[:, 1:] == 0, -100)
    per_token = F.cross_entropy(
        logits[:, :-1].transpose(1, 2), shifted, ignore_index=-100, reduction="none"
    )
    counts = (shifted != -100).sum(dim=1)
    if (counts == 0).any():
        raise StageSchemaError("a row's loss span vanished after truncation")
    per_row = per_token.sum(dim=1) / counts
    return per_row.mean()
