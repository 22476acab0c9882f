"""Desk-scale training lab: synthetic tasks, a tiny model, stage training.

The lab exists to measure one thing end to end: does staging the
curriculum (knowledge and examples decaying to nothing) leave more of
the knowledge inside the weights than training without it?

Synthetic task.  A world of entity/relation facts "e3 r1 is v5 .".
Questions ask "e3 r1 ?", rationales restate the fact and close with the
answer sentence, and each instance's knowledge embeds fact statements
in common-word filler.  Eval-split facts never appear as training
questions, but each one is planted inside the knowledge text of a few
train instances, so the only road to answering them after training is
through what the knowledge stages internalized.

Toy model.  float64 numpy throughout.  A prompt is mean-pooled into a
context vector c; each step consumes [c, E[prev]] through one tanh
layer; logits come from an output projection (optionally tied to the
embedding table).  Cross-entropy is averaged per row over the loss
span only and then over rows, so prompt tokens never contribute loss.
Small enough that finite-difference gradient checks cover every
coordinate.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from internlab.corpus import (
    KnowledgeItem,
    Rationale,
    TrainingInstance,
    WhitespaceTokenizer,
    normalize_space,
)
from internlab.curriculum import (
    StageDataset,
    TrainingRow,
    build_baseline,
    build_curriculum,
    build_stage,
    default_deps,
    render_question_block,
)
from internlab.errors import ConfigError, TrainerError
from internlab.evalharness import ANSWER_MARKER, EvalResult, score_items
from internlab.schedule import SchedulePlan, make_schedule
from internlab.util import write_json

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

FILLER_WORDS = (
    "note records mention that it was seen near old small good new last "
    "early late busy quiet page entry file also often still again once more"
).split()

MIN_INSTANCES = 20
EVAL_FRACTION = 5  # one in five instances lands in the eval split
HOSTS_PER_EVAL_FACT = 4
DECOYS_PER_INSTANCE = 2

# Configuration demonstrated to clear the internalization gates on the
# default task (median over 5 seeds; see tests/test_acceptance.py).
LAB_DEFAULTS = {
    "pattern": "linear",
    "T": 4,
    "E": 200,
    "eta": 0.02,
    "batch_size": 8,
    "optimizer": "adaptive-moment",
    "embed_dim": 24,
    "K": 3,
    "tied": False,
}


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_entities: int = 8
    n_relations: int = 5
    filler_ratio: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < 1 or self.n_relations < 1:
            raise ConfigError("n_entities and n_relations must be positive")
        if self.n_entities * self.n_relations < MIN_INSTANCES:
            raise ConfigError(
                f"task would have {self.n_entities * self.n_relations} instances, "
                f"need at least {MIN_INSTANCES}"
            )
        if not 0.0 <= self.filler_ratio < 1.0:
            raise ConfigError(f"filler_ratio must be in [0, 1), got {self.filler_ratio}")


def fact_statement(e: str, r: str, v: str) -> str:
    return f"{e} {r} is {v} ."


def gen_synthetic_task(spec: SyntheticTaskSpec) -> list[TrainingInstance]:
    """Deterministic fact corpus; eval facts are hosted inside train knowledge."""
    rng = random.Random(spec.seed)
    entities = [f"e{i}" for i in range(spec.n_entities)]
    relations = [f"r{i}" for i in range(spec.n_relations)]
    n_facts = spec.n_entities * spec.n_relations
    n_values = max(4, n_facts // 5)
    values = [f"v{i}" for i in range(n_values)]

    facts = [(e, r, rng.choice(values)) for e in entities for r in relations]

    order = list(range(n_facts))
    rng.shuffle(order)
    n_eval = n_facts // EVAL_FRACTION
    eval_idx = set(order[:n_eval])

    # Plant each eval fact inside the knowledge of a few train instances.
    # Hosts share the eval fact's value wherever possible: the planted
    # statement then reinforces, not contradicts, its host's own answer,
    # which is what lets a small model absorb the association at all.
    train_positions = [i for i in range(n_facts) if i not in eval_idx]
    hosted: dict[int, list[tuple[str, str, str]]] = {i: [] for i in train_positions}
    for i in sorted(eval_idx):
        value = facts[i][2]
        same_value = [p for p in train_positions if facts[p][2] == value]
        candidates = same_value or train_positions
        hosts = rng.sample(candidates, min(HOSTS_PER_EVAL_FACT, len(candidates)))
        for h in hosts:
            hosted[h].append(facts[i])

    instances = []
    for i, (e, r, v) in enumerate(facts):
        statements = [fact_statement(e, r, v)]
        statements += [fact_statement(*f) for f in hosted.get(i, [])]
        if i not in eval_idx:
            # Decoy facts with other values keep "copy the value you see"
            # from being a perfect strategy while knowledge is present.
            decoy_pool = [p for p in train_positions if p != i and facts[p][2] != v]
            for p in rng.sample(decoy_pool, min(DECOYS_PER_INSTANCE, len(decoy_pool))):
                statements.append(fact_statement(*facts[p]))
        tokens = " ".join(statements).split()
        n_filler = round(len(tokens) * spec.filler_ratio / (1.0 - spec.filler_ratio))
        for _ in range(n_filler):
            tokens.insert(rng.randrange(len(tokens) + 1), rng.choice(FILLER_WORDS))
        rationale = f"{fact_statement(e, r, v)[:-2]} . {ANSWER_MARKER} {v}"
        instances.append(
            TrainingInstance(
                id=f"q{i:03d}",
                question=f"{e} {r} ?",
                answer=v,
                rationales=[Rationale(text=rationale, extracted_answer=v, kept=True)],
                knowledge=[KnowledgeItem(summary=" ".join(tokens), selected=True)],
                split="eval" if i in eval_idx else "train",
            )
        )
    return instances


# ---------------------------------------------------------------------------
# toy model
# ---------------------------------------------------------------------------


@dataclass
class ToyModelParams:
    """All trainable state.  With ``tied`` the embedding table doubles as
    the output projection (hidden size must equal embedding size) and
    ``w_out`` is unused."""

    vocab: tuple[str, ...]
    embed: np.ndarray
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    tied: bool = True

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.b_hidden.shape[0]

    def active_tensors(self) -> dict[str, np.ndarray]:
        names = ["embed", "w_hidden", "b_hidden", "b_out"]
        if not self.tied:
            names.insert(3, "w_out")
        return {n: getattr(self, n) for n in names}

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            self.vocab,
            self.embed.copy(),
            self.w_hidden.copy(),
            self.b_hidden.copy(),
            self.w_out.copy(),
            self.b_out.copy(),
            self.tied,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\x00".join(self.vocab).encode("utf-8"))
        h.update(b"tied" if self.tied else b"untied")
        for name, tensor in self.active_tensors().items():
            h.update(name.encode("ascii"))
            h.update(np.ascontiguousarray(tensor).tobytes())
        return h.hexdigest()


def build_vocab(instances: list[TrainingInstance]) -> tuple[str, ...]:
    """Every token the curriculum or the eval prompts can produce."""
    tokenizer = WhitespaceTokenizer()
    seen: set[str] = set()
    for inst in instances:
        seen.update(tokenizer.tokenize(inst.question))
        seen.update(tokenizer.tokenize(inst.answer))
        for r in inst.rationales:
            seen.update(tokenizer.tokenize(r.text))
        for k in inst.knowledge:
            seen.update(tokenizer.tokenize(k.full_text()))
    seen.update(tokenizer.tokenize("Knowledge: Question: Answer:"))
    seen.update(tokenizer.tokenize(ANSWER_MARKER))
    return tuple(sorted(seen))


def init_params(
    vocab: tuple[str, ...],
    embed_dim: int = 24,
    hidden_dim: int | None = None,
    seed: int = 0,
    tied: bool = False,
    scale: float = 0.5,
) -> ToyModelParams:
    if hidden_dim is None:
        hidden_dim = embed_dim
    if tied and hidden_dim != embed_dim:
        raise ConfigError("tied output needs hidden_dim == embed_dim")
    rng = np.random.default_rng(seed)
    V = len(vocab)
    return ToyModelParams(
        vocab=vocab,
        embed=rng.normal(0.0, scale / np.sqrt(embed_dim), (V, embed_dim)),
        w_hidden=rng.normal(0.0, 1.0 / np.sqrt(2 * embed_dim), (hidden_dim, 2 * embed_dim)),
        b_hidden=np.zeros(hidden_dim),
        w_out=rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (V, hidden_dim)),
        b_out=np.zeros(V),
        tied=tied,
    )


@dataclass
class TrainSpec:
    eta: float = 0.5
    batch_size: int = 8
    plan: SchedulePlan | None = None
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adaptive-moment"):
            raise ConfigError(f"optimizer must be sgd or adaptive-moment, got {self.optimizer!r}")


@dataclass
class EncodedRow:
    ids: np.ndarray      # token ids for prompt + target
    span: tuple[int, int]


def encode_rows(rows: list[TrainingRow], vocab: tuple[str, ...]) -> list[EncodedRow]:
    tokenizer = WhitespaceTokenizer()
    index = {tok: i for i, tok in enumerate(vocab)}
    encoded = []
    for row in rows:
        tokens = tokenizer.tokenize(row.prompt) + tokenizer.tokenize(row.target)
        try:
            ids = np.array([index[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise TrainerError(f"token {exc.args[0]!r} not in model vocab") from exc
        start, end = row.loss_span
        if not 0 < start < end <= len(tokens):
            raise TrainerError(f"row for {row.instance_id!r} has invalid loss span {row.loss_span}")
        encoded.append(EncodedRow(ids, (start, end)))
    return encoded


def _output_matrix(params: ToyModelParams) -> np.ndarray:
    return params.embed if params.tied else params.w_out


def batch_loss_and_grads(
    params: ToyModelParams,
    batch: list[EncodedRow],
    labels: list[np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked cross-entropy over loss spans, averaged per row then batch.

    ``labels`` defaults to each row's own token ids; tests scramble the
    tokens outside the span to pin down that only the span matters.
    """
    if labels is None:
        labels = [row.ids for row in batch]
    d = params.embed_dim
    W_out = _output_matrix(params)

    contexts = np.stack([params.embed[row.ids[: row.span[0]]].mean(axis=0) for row in batch])
    row_of, prev_ids, label_ids, weights = [], [], [], []
    for r, (row, lab) in enumerate(zip(batch, labels)):
        start, end = row.span
        for p in range(start, end):
            row_of.append(r)
            prev_ids.append(row.ids[p - 1])
            label_ids.append(lab[p])
            weights.append(1.0 / ((end - start) * len(batch)))
    row_of = np.array(row_of)
    prev_ids = np.array(prev_ids)
    label_ids = np.array(label_ids)
    weights = np.array(weights)

    X = np.concatenate([contexts[row_of], params.embed[prev_ids]], axis=1)
    H = np.tanh(X @ params.w_hidden.T + params.b_hidden)
    logits = H @ W_out.T + params.b_out
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    nll = log_z - logits[np.arange(len(label_ids)), label_ids]
    loss = float(np.dot(weights, nll))

    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[np.arange(len(label_ids)), label_ids] -= 1.0
    d_logits *= weights[:, None]

    grads = {name: np.zeros_like(t) for name, t in params.active_tensors().items()}
    grads_w_out = d_logits.T @ H
    grads["b_out"] = d_logits.sum(axis=0)
    d_H = d_logits @ W_out
    d_pre = d_H * (1.0 - H * H)
    grads["w_hidden"] = d_pre.T @ X
    grads["b_hidden"] = d_pre.sum(axis=0)
    d_X = d_pre @ params.w_hidden
    d_ctx_pos, d_prev = d_X[:, :d], d_X[:, d:]

    np.add.at(grads["embed"], prev_ids, d_prev)
    d_ctx_rows = np.zeros_like(contexts)
    np.add.at(d_ctx_rows, row_of, d_ctx_pos)
    for r, row in enumerate(batch):
        prompt_ids = row.ids[: row.span[0]]
        np.add.at(grads["embed"], prompt_ids, d_ctx_rows[r] / len(prompt_ids))
    if params.tied:
        grads["embed"] += grads_w_out
    else:
        grads["w_out"] = grads_w_out
    return loss, grads


class _Optimizer:
    def __init__(self, spec: TrainSpec):
        self.spec = spec
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ToyModelParams, grads: dict[str, np.ndarray]) -> None:
        eta = self.spec.eta
        if self.spec.optimizer == "sgd":
            for name, g in grads.items():
                getattr(params, name)[...] -= eta * g
            return
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = beta1 * self.m[name] + (1 - beta1) * g
            self.v[name] = beta2 * self.v[name] + (1 - beta2) * g * g
            m_hat = self.m[name] / (1 - beta1**self.t)
            v_hat = self.v[name] / (1 - beta2**self.t)
            getattr(params, name)[...] -= eta * m_hat / (np.sqrt(v_hat) + eps)


def train_stage(
    params: ToyModelParams,
    rows: list[TrainingRow],
    spec: TrainSpec,
    epochs: int,
) -> tuple[ToyModelParams, list[dict]]:
    """Minibatch gradient descent for ``epochs`` passes; input untouched.

    Zero epochs returns an identical copy and an empty trace.
    """
    out = params.copy()
    if epochs == 0:
        return out, []
    encoded = encode_rows(rows, params.vocab)
    rng = random.Random(spec.seed)
    optimizer = _Optimizer(spec)
    trace = []
    for epoch in range(epochs):
        order = list(range(len(encoded)))
        rng.shuffle(order)
        losses = []
        for i in range(0, len(order), spec.batch_size):
            batch = [encoded[j] for j in order[i : i + spec.batch_size]]
            loss, grads = batch_loss_and_grads(out, batch)
            if not np.isfinite(loss):
                scales = {n: float(np.abs(t).max()) for n, t in out.active_tensors().items()}
                raise TrainerError(
                    f"non-finite loss {loss!r} at epoch {epoch}, "
                    f"step {len(losses)}; parameter scales: {scales}"
                )
            optimizer.step(out, grads)
            losses.append(loss)
        trace.append({"epoch": epoch, "mean_loss": float(np.mean(losses)), "steps": len(losses)})
    return out, trace


def gradient_check(
    params: ToyModelParams,
    batch: list[EncodedRow],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference grads."""
    _, grads = batch_loss_and_grads(params, batch)
    worst = 0.0
    for name, tensor in params.active_tensors().items():
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = batch_loss_and_grads(params, batch)
            flat[i] = orig - h
            down, _ = batch_loss_and_grads(params, batch)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[i]
            err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# decoding and knowledge-free evaluation
# ---------------------------------------------------------------------------


def greedy_decode(params: ToyModelParams, prompt_ids: np.ndarray, max_new_tokens: int) -> list[int]:
    context = params.embed[prompt_ids].mean(axis=0)
    W_out = _output_matrix(params)
    prev = int(prompt_ids[-1])
    out = []
    for _ in range(max_new_tokens):
        x = np.concatenate([context, params.embed[prev]])
        hidden = np.tanh(params.w_hidden @ x + params.b_hidden)
        logits = W_out @ hidden + params.b_out
        prev = int(np.argmax(logits))
        out.append(prev)
    return out


def evaluate_knowledge_free(
    params: ToyModelParams,
    instances: list[TrainingInstance],
    max_new_tokens: int,
    dataset_name: str = "synthetic-eval",
) -> EvalResult:
    """Greedy-decode bare question prompts and exact-match the answers."""
    tokenizer = WhitespaceTokenizer()
    index = {tok: i for i, tok in enumerate(params.vocab)}
    items = []
    for inst in instances:
        prompt = render_question_block(inst.question)
        try:
            ids = np.array([index[t] for t in tokenizer.tokenize(prompt)], dtype=np.int64)
        except KeyError as exc:
            raise TrainerError(f"eval token {exc.args[0]!r} not in model vocab") from exc
        decoded = greedy_decode(params, ids, max_new_tokens)
        items.append((inst.id, tokenizer.detokenize([params.vocab[i] for i in decoded]), inst.answer))
    return score_items(items, dataset_name)


# ---------------------------------------------------------------------------
# progressive run
# ---------------------------------------------------------------------------

BASELINES = ("std_cot", "always_knowledge", "plain_ft")


def run_progressive(
    corpus: list[TrainingInstance],
    plan: SchedulePlan,
    spec: TrainSpec,
    *,
    K: int = 3,
    embed_dim: int = 24,
    baselines: tuple[str, ...] = ("std_cot", "always_knowledge"),
    tied: bool = False,
) -> dict:
    """Train through the staged curriculum, then score knowledge-free EM.

    Baselines reuse the same init, vocab, tokenizer, and total epoch
    budget; only their training rows differ. ``std_cot`` never sees
    knowledge, ``always_knowledge`` sees it undecayed the whole way.
    """
    unknown = set(baselines) - set(BASELINES)
    if unknown:
        raise ConfigError(f"unknown baselines: {sorted(unknown)}")
    train = [i for i in corpus if i.split == "train"]
    eval_set = [i for i in corpus if i.split == "eval"]
    if not train or not eval_set:
        raise ConfigError("corpus needs both train and eval instances")

    deps = default_deps(train, K=K)
    stages = build_curriculum(train, plan, deps, seed=spec.seed)
    vocab = build_vocab(corpus)
    params0 = init_params(vocab, embed_dim=embed_dim, seed=spec.seed, tied=tied)
    # Decode exactly as many tokens as the longest target: the toy model
    # has no end-of-sequence token, and overshooting past the final
    # answer token would bury it under template repetition.
    max_new = max(
        len(WhitespaceTokenizer().tokenize(r.target)) for ds in stages for r in ds.rows
    )

    report: dict = {
        "plan": plan.to_dict(),
        "seed": spec.seed,
        "n_train": len(train),
        "n_eval": len(eval_set),
        "vocab_size": len(vocab),
        "stages": [],
        "em": {},
    }

    params = params0
    checkpoints = [params.fingerprint()]
    for ds in stages:
        params, trace = train_stage(params, ds.rows, spec, plan.epochs[ds.stage - 1])
        checkpoints.append(params.fingerprint())
        report["stages"].append(
            {
                "stage": ds.stage,
                "schedule_value": ds.schedule_value,
                "epochs": plan.epochs[ds.stage - 1],
                "n_rows": len(ds.rows),
                "final_loss": trace[-1]["mean_loss"] if trace else None,
            }
        )
    report["param_checkpoints"] = checkpoints
    report["em"]["progressive"] = evaluate_knowledge_free(params, eval_set, max_new).em

    for mode in baselines:
        rows = _baseline_rows(train, deps, mode, spec.seed)
        trained, _ = train_stage(params0, rows, spec, plan.E)
        report["em"][mode] = evaluate_knowledge_free(trained, eval_set, max_new).em

    report["uplift_points"] = 100.0 * (
        report["em"]["progressive"] - report["em"].get("std_cot", 0.0)
    )
    return report


def _baseline_rows(train, deps, mode: str, seed: int) -> list[TrainingRow]:
    if mode in ("std_cot", "plain_ft"):
        return build_baseline(train, mode).rows
    # always_knowledge: stage-1 shape (full knowledge and examples), never decayed
    const_plan = make_schedule("linear", T=2, E=2)
    return build_stage(train, const_plan, 1, deps, seed).rows


def median_report(
    task: SyntheticTaskSpec,
    plan: SchedulePlan,
    spec: TrainSpec,
    seeds: list[int],
    **kwargs,
) -> dict:
    """Run several seeds and report per-method median EM."""
    runs = []
    for seed in seeds:
        corpus = gen_synthetic_task(
            SyntheticTaskSpec(task.n_entities, task.n_relations, task.filler_ratio, seed)
        )
        run_spec = TrainSpec(spec.eta, spec.batch_size, plan, seed, spec.optimizer)
        runs.append(run_progressive(corpus, plan, run_spec, **kwargs))
    methods = sorted(runs[0]["em"])
    medians = {m: float(np.median([r["em"][m] for r in runs])) for m in methods}
    return {
        "task": {
            "n_entities": task.n_entities,
            "n_relations": task.n_relations,
            "filler_ratio": task.filler_ratio,
        },
        "seeds": seeds,
        "per_seed_em": [r["em"] for r in runs],
        "median_em": medians,
        "median_uplift_points": float(
            np.median([r["uplift_points"] for r in runs])
        ),
    }


# ---------------------------------------------------------------------------
# external trainer driver
# ---------------------------------------------------------------------------


@dataclass
class ExternalTrainerContract:
    """How to invoke a stage-file-consuming trainer.

    Each stage runs:  command --stage-file F --epochs N
                              --checkpoint TOKEN --metrics-out M
    The token is passed through verbatim; trainers treat the literal
    string "fresh" as "start a new model" and anything else as a
    checkpoint path to resume from (or create).
    """

    command: list[str]
    checkpoint: str = "fresh"
    timeout: float = 600.0


def drive_external(
    stage_paths: list[str | Path],
    contract: ExternalTrainerContract,
    out_dir: str | Path,
    epochs_per_stage: list[int] | None = None,
) -> dict:
    """Run the trainer over stage files in order; abort on the first failure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if epochs_per_stage is None:
        epochs_per_stage = [_stage_epochs(p) for p in stage_paths]
    if len(epochs_per_stage) != len(stage_paths):
        raise ConfigError("epochs_per_stage must match stage_paths in length")

    report = {"completed": False, "failed_stage": None, "stages": [], "metrics": []}
    # The driver always hands the trainer one concrete path: a missing
    # file means "initialize fresh", an existing one means "resume", so
    # stage t+1 continues from stage t's weights.
    checkpoint = contract.checkpoint
    if checkpoint == "fresh":
        checkpoint = str(out_dir / "checkpoint")
        Path(checkpoint).unlink(missing_ok=True)
    elif not Path(checkpoint).is_absolute():
        checkpoint = str(out_dir / checkpoint)
    for i, path in enumerate(stage_paths, start=1):
        metrics_path = out_dir / f"metrics_stage{i:02d}.json"
        cmd = list(contract.command) + [
            "--stage-file", str(path),
            "--epochs", str(epochs_per_stage[i - 1]),
            "--checkpoint", checkpoint,
            "--metrics-out", str(metrics_path),
        ]
        logger.info("stage %d: %s", i, " ".join(cmd))
        try:
            proc = subprocess.run(
                cmd, capture_output=True, text=True, timeout=contract.timeout
            )
        except subprocess.TimeoutExpired as exc:
            report["failed_stage"] = i
            report["error"] = f"trainer timed out after {contract.timeout}s"
            raise TrainerError(report["error"]) from exc
        report["stages"].append({"stage": i, "returncode": proc.returncode})
        if proc.returncode != 0:
            report["failed_stage"] = i
            report["error"] = proc.stderr.strip()[-500:]
            return report
        report["metrics"].append(_read_metrics(metrics_path, i))
    report["completed"] = True
    return report


def _stage_epochs(stage_path: str | Path) -> int:
    manifest_path = Path(stage_path).with_suffix(".manifest.json")
    if not manifest_path.exists():
        raise ConfigError(
            f"no epochs given and no manifest next to {stage_path}; "
            "pass epochs_per_stage explicitly"
        )
    manifest = json.loads(manifest_path.read_text())
    if "epochs" not in manifest:
        raise ConfigError(f"{manifest_path} has no 'epochs' entry")
    return int(manifest["epochs"])


def _read_metrics(path: Path, stage: int) -> dict:
    if not path.exists():
        raise TrainerError(f"trainer wrote no metrics file at {path}")
    record = json.loads(path.read_text())
    missing = {"stage", "mean_loss", "steps"} - record.keys()
    if missing:
        raise TrainerError(f"{path} metrics record missing fields: {sorted(missing)}")
    return record


def save_report(report: dict, path: str | Path) -> None:
    write_json(path, report)
