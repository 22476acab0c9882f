"""Inference-cost accounting from per-method token-length profiles.

Convention: a decoder forward pass at context position i costs
F(i) = 2·P + 4·L·d·i FLOPs — the weight-read term dominates and the
second term is attention's quadratic tail, which can be toggled off.
A pass over a prompt of p tokens that generates g tokens visits
positions 0..p+g-1 exactly once; multi-pass methods sum their passes.

Absolute numbers are only as trustworthy as the token profiles, so the
useful outputs are ratios between methods under one documented profile
set.  A default set ships with the package; override it from measured
corpora where available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from internlab.errors import CostModelError

METHODS = (
    "zero_shot",
    "fine_tuning",
    "std_cot",
    "mt_cot",
    "step_by_step",
    "kard",
    "cascod",
    "internalized",
)

# Everything else answers in a single prompt+generate pass.
MULTI_PASS_METHODS = frozenset({"cascod"})


@dataclass(frozen=True)
class ModelDims:
    """Decoder size: non-embedding parameter count, layer count, width."""

    n_params: float
    n_layers: int
    hidden: int

    def __post_init__(self):
        for name in ("n_params", "n_layers", "hidden"):
            if getattr(self, name) <= 0:
                raise CostModelError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class TokenProfile:
    """Per-method token counts: one (prompt, generated) pair per pass."""

    method: str
    passes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.method not in METHODS:
            raise CostModelError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.passes:
            raise CostModelError(f"{self.method}: profile needs at least one pass")
        for p, g in self.passes:
            if p < 0 or g < 0:
                raise CostModelError(f"{self.method}: token counts must be >= 0, got ({p}, {g})")
        if self.method not in MULTI_PASS_METHODS and len(self.passes) != 1:
            raise CostModelError(
                f"{self.method} is a single-pass method, got {len(self.passes)} passes"
            )

    @property
    def prompt_tokens(self) -> int:
        return sum(p for p, _ in self.passes)

    @property
    def generated_tokens(self) -> int:
        return sum(g for _, g in self.passes)


def _pass_flops(dims: ModelDims, prompt: int, generated: int, attention: bool) -> float:
    n = prompt + generated
    total = n * 2.0 * dims.n_params
    if attention:
        total += 4.0 * dims.n_layers * dims.hidden * (n * (n - 1) / 2.0)
    return total


def sequence_flops(dims: ModelDims, profile: TokenProfile, *, attention: bool = True) -> float:
    """Total FLOPs to answer once: sum of F(i) over every visited position."""
    return sum(_pass_flops(dims, p, g, attention) for p, g in profile.passes)


def relative_flops(
    target: tuple[ModelDims, TokenProfile],
    reference: tuple[ModelDims, TokenProfile],
    *,
    attention: bool = True,
) -> float:
    """Cost of ``target`` expressed in multiples of ``reference``."""
    ref = sequence_flops(reference[0], reference[1], attention=attention)
    if ref <= 0:
        raise CostModelError("reference profile has zero cost; ratio undefined")
    return sequence_flops(target[0], target[1], attention=attention) / ref


# ---------------------------------------------------------------------------
# shipped configuration and reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostConfig:
    models: dict[str, ModelDims]
    profiles: dict[str, TokenProfile]
    notes: str


def load_cost_config(path: str | Path | None = None) -> CostConfig:
    """Read a profile config; ``None`` loads the packaged defaults."""
    if path is None:
        text = resources.files("internlab").joinpath("data/cost_profiles.json").read_text()
        source = "<packaged defaults>"
    else:
        text = Path(path).read_text()
        source = str(path)
    try:
        raw = json.loads(text)
        models = {name: ModelDims(**dims) for name, dims in raw["models"].items()}
        profiles = {
            name: TokenProfile(name, tuple((int(p), int(g)) for p, g in passes))
            for name, passes in raw["profiles"].items()
        }
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CostModelError):
            raise
        raise CostModelError(f"{source}: malformed cost config: {exc}") from exc
    notes = raw.get("notes", [])
    return CostConfig(models, profiles, " ".join(notes) if isinstance(notes, list) else str(notes))


def cost_report(
    config: CostConfig,
    reference: tuple[str, str] = ("tinyllama", "zero_shot"),
    *,
    attention: bool = True,
) -> list[dict]:
    """Relative cost of every (model, method) pair against one reference."""
    ref_model, ref_method = reference
    if ref_model not in config.models:
        raise CostModelError(f"unknown reference model {ref_model!r}")
    if ref_method not in config.profiles:
        raise CostModelError(f"unknown reference method {ref_method!r}")
    ref = (config.models[ref_model], config.profiles[ref_method])
    rows = []
    for model_name, dims in config.models.items():
        for method, profile in config.profiles.items():
            rows.append(
                {
                    "model": model_name,
                    "method": method,
                    "flops": sequence_flops(dims, profile, attention=attention),
                    "relative": relative_flops((dims, profile), ref, attention=attention),
                }
            )
    return rows


def render_cost_table(rows: list[dict]) -> str:
    """Fixed-width text table over cost_report rows."""
    header = f"{'model':<12} {'method':<14} {'FLOPs':>12} {'rel.':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['model']:<12} {row['method']:<14} "
            f"{row['flops']:>12.3e} {row['relative']:>7.2f}x"
        )
    return "\n".join(lines)
