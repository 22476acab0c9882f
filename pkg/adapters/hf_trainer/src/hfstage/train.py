"""Stage training entry point implementing the trainer CLI contract.

    hfstage-train --stage-file F --epochs N --checkpoint PATH --metrics-out M \
                  --model DIR [--rank 32] [--lr ...] [--batch-size ...]

The checkpoint argument is a path: missing means initialize a new
adapter, existing means resume from it, so a driver invoking stages in
order threads one adapter through the whole curriculum.  The literal
token "fresh" also starts a new adapter (saved next to the metrics
file).  After training, the adapter weights and a stage counter are
saved atomically and metrics {stage, mean_loss, steps} are written;
on failure the checkpoint is left exactly as it was.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import dataclass
from pathlib import Path

import torch

from .data import collate, encode_chat_row, encode_row, masked_lm_loss, read_stage_rows
from .errors import AdapterError
from .lora import adapter_state, inject_adapters, load_adapter_state, trainable_parameters

PRECISIONS = ("float32", "float16", "bfloat16")


@dataclass
class AdapterConfig:
    model: str
    rank: int = 32
    alpha: float | None = None
    lr: float = 5e-4
    batch_size: int = 8
    precision: str = "float32"
    chat_template: str = ""
    seed: int = 0
    max_length: int = 512

    def __post_init__(self):
        if not self.model:
            raise AdapterError("model path or identifier is required")
        if self.rank <= 0:
            raise AdapterError(f"rank must be positive, got {self.rank}")
        if self.alpha is None:
            self.alpha = float(self.rank)
        if self.alpha <= 0:
            raise AdapterError(f"alpha must be positive, got {self.alpha}")
        if self.lr <= 0:
            raise AdapterError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise AdapterError(f"batch size must be >= 1, got {self.batch_size}")
        if self.precision not in PRECISIONS:
            raise AdapterError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.max_length < 2:
            raise AdapterError(f"max_length must be >= 2, got {self.max_length}")


def load_model_and_tokenizer(cfg: AdapterConfig):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        model = AutoModelForCausalLM.from_pretrained(cfg.model, dtype=getattr(torch, cfg.precision))
    except Exception as exc:
        raise AdapterError(f"could not load base model {cfg.model!r}: {exc}") from exc
    if tokenizer.pad_token_id is None:
        tokenizer.pad_token = tokenizer.eos_token
    return tokenizer, model


def _resolve_checkpoint(checkpoint: str, metrics_out: str | Path) -> tuple[Path, bool]:
    """Path to use and whether to ignore any existing state there."""
    if checkpoint == "fresh":
        return Path(metrics_out).parent / "adapter_checkpoint.pt", True
    return Path(checkpoint), False


def _load_resume_state(path: Path, cfg: AdapterConfig) -> tuple[dict | None, int]:
    if not path.exists():
        return None, 0
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise AdapterError(f"could not read checkpoint {path}: {exc}") from exc
    for field, expected in (("rank", cfg.rank), ("alpha", cfg.alpha), ("base_model", cfg.model)):
        saved = payload.get(field)
        if saved != expected:
            raise AdapterError(
                f"checkpoint {path} was trained with {field}={saved!r}, "
                f"current config has {expected!r}"
            )
    return payload["adapter_state"], int(payload["stages_done"])


def _save_checkpoint(path: Path, cfg: AdapterConfig, state: dict, stages_done: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(
        {
            "adapter_state": state,
            "stages_done": stages_done,
            "rank": cfg.rank,
            "alpha": cfg.alpha,
            "base_model": cfg.model,
        },
        tmp,
    )
    tmp.replace(path)


def run_stage_training(
    cfg: AdapterConfig,
    stage_file: str | Path,
    epochs: int,
    checkpoint: str,
    metrics_out: str | Path,
) -> dict:
    """Train the adapter for one stage; returns the metrics it wrote."""
    if epochs < 1:
        raise AdapterError(f"epochs must be >= 1, got {epochs}")
    rows = read_stage_rows(stage_file)
    torch.manual_seed(cfg.seed)
    tokenizer, model = load_model_and_tokenizer(cfg)
    inject_adapters(model, cfg.rank, cfg.alpha)
    ckpt_path, ignore_existing = _resolve_checkpoint(checkpoint, metrics_out)
    stages_done = 0
    if not ignore_existing:
        state, stages_done = _load_resume_state(ckpt_path, cfg)
        if state is not None:
            load_adapter_state(model, state)

    if cfg.chat_template:
        examples = [
            encode_chat_row(r, tokenizer, cfg.max_length, cfg.chat_template) for r in rows
        ]
    else:
        examples = [encode_row(r, tokenizer, cfg.max_length) for r in rows]
    optimizer = torch.optim.AdamW(trainable_parameters(model), lr=cfg.lr)
    model.train()

    step_losses: list[float] = []
    epoch_losses: list[float] = []
    try:
        for epoch in range(epochs):
            order = torch.randperm(
                len(examples),
                generator=torch.Generator().manual_seed(cfg.seed + 31 * stages_done + epoch),
            ).tolist()
            losses_this_epoch = []
            for lo in range(0, len(order), cfg.batch_size):
                batch = collate([examples[i] for i in order[lo : lo + cfg.batch_size]],
                                tokenizer.pad_token_id)
                logits = model(
                    input_ids=batch["input_ids"], attention_mask=batch["attention_mask"]
                ).logits
                loss = masked_lm_loss(logits, batch["labels"], batch["span_mask"])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses_this_epoch.append(float(loss.detach()))
            epoch_losses.append(statistics.fmean(losses_this_epoch))
            step_losses.extend(losses_this_epoch)
    except torch.cuda.OutOfMemoryError as exc:
        raise AdapterError(f"out of memory during training; checkpoint untouched: {exc}") from exc
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise AdapterError(
                f"out of memory during training; checkpoint untouched: {exc}"
            ) from exc
        raise

    _save_checkpoint(ckpt_path, cfg, adapter_state(model), stages_done + 1)
    metrics = {
        "stage": stages_done + 1,
        "mean_loss": statistics.fmean(step_losses),
        "steps": len(step_losses),
        "epoch_losses": epoch_losses,
        "n_rows": len(rows),
    }
    metrics_path = Path(metrics_out)
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfstage-train",
        description="Fine-tune low-rank adapters on one curriculum stage file.",
    )
    parser.add_argument("--stage-file", required=True)
    parser.add_argument("--epochs", type=int, required=True)
    parser.add_argument("--checkpoint", required=True,
                        help="adapter checkpoint path, or the token 'fresh'")
    parser.add_argument("--metrics-out", required=True)
    parser.add_argument("--model", required=True, help="base model directory or identifier")
    parser.add_argument("--rank", type=int, default=32)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--lr", type=float, default=5e-4)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--precision", choices=PRECISIONS, default="float32")
    parser.add_argument("--chat-template", default="",
                        help="'default' for the tokenizer's own, or a jinja string; empty trains on raw text")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-length", type=int, default=512)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = AdapterConfig(
            model=args.model,
            rank=args.rank,
            alpha=args.alpha,
            lr=args.lr,
            batch_size=args.batch_size,
            precision=args.precision,
            chat_template=args.chat_template,
            seed=args.seed,
            max_length=args.max_length,
        )
        metrics = run_stage_training(
            cfg, args.stage_file, args.epochs, args.checkpoint, args.metrics_out
        )
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"stage {metrics['stage']}: mean loss {metrics['mean_loss']:.4f} "
        f"over {metrics['steps']} steps"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
