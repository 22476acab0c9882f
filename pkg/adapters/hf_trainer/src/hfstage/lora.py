"""Low-rank adapters injected into a causal LM's projection layers.

Each wrapped projection computes ``base(x) + B(A(x)) * alpha/rank``
with A initialized small and B at zero, so a freshly injected adapter
leaves the base model's behavior unchanged.  Only A and B train; every
base parameter is frozen.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import AdapterError

# projection names across GPT-2-style (Conv1D) and Llama-style models
TARGET_SUFFIXES = (
    "c_attn", "c_proj", "c_fc",
    "q_proj", "k_proj", "v_proj", "o_proj",
    "gate_proj", "up_proj", "down_proj",
)


def _features(module: nn.Module) -> tuple[int, int]:
    """(in_features, out_features) for Linear or GPT-2 Conv1D layers."""
    if isinstance(module, nn.Linear):
        return module.in_features, module.out_features
    weight = getattr(module, "weight", None)
    if type(module).__name__ == "Conv1D" and weight is not None:
        return int(weight.shape[0]), int(weight.shape[1])
    raise AdapterError(f"cannot adapt module of type {type(module).__name__}")


class LoRAProjection(nn.Module):
    def __init__(self, base: nn.Module, rank: int, alpha: float):
        super().__init__()
        in_features, out_features = _features(base)
        self.base = base
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, in_features))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        down = torch.nn.functional.linear(x, self.lora_a)
        up = torch.nn.functional.linear(down, self.lora_b)
        return self.base(x) + up * self.scaling


def inject_adapters(
    model: nn.Module,
    rank: int,
    alpha: float,
    target_suffixes: tuple[str, ...] = TARGET_SUFFIXES,
) -> int:
    """Freeze the model and wrap every matching projection; returns count."""
    for param in model.parameters():
        param.requires_grad_(False)
    replaced = 0
    for name, module in list(model.named_modules()):
        leaf = name.rsplit(".", 1)[-1]
        if leaf not in target_suffixes:
            continue
        parent = model.get_submodule(name.rsplit(".", 1)[0]) if "." in name else model
        setattr(parent, leaf, LoRAProjection(module, rank, alpha))
        replaced += 1
    if replaced == 0:
        raise AdapterError(
            f"no projection layers matched {target_suffixes}; nothing to train"
        )
    return replaced


def adapter_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor.detach().clone()
        for name, tensor in model.state_dict().items()
        if ".lora_a" in name or ".lora_b" in name
    }


def load_adapter_state(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    current = adapter_state(model)
    if set(state) != set(current):
        raise AdapterError(
            "checkpoint adapter tensors do not match the injected adapters "
            f"({len(state)} saved vs {len(current)} live)"
        )
    missing, unexpected = model.load_state_dict(state, strict=False)
    del missing  # base weights are deliberately absent from the checkpoint
    if unexpected:
        raise AdapterError(f"checkpoint holds unknown tensors: {sorted(unexpected)[:3]}")


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]
