"""Command-line front end for the whole pipeline.

Subcommands cover the workflow end to end: ``generate`` annotates a
corpus with teacher rationales and knowledge, ``curriculum`` emits the
staged training files, ``train-lab`` runs the bundled toy-model
experiment, ``train-external`` drives a stage-file trainer process,
``cost`` prints relative-FLOPs tables, ``eval`` scores a predictions
file, and ``report`` digests a run directory.

Configuration resolves in layers and later layers win: built-in
defaults, then a JSON config file (``--config``), then a previously
written manifest (``--from-manifest``), then explicit flags.  Every
artifact-producing run writes ``manifest.json`` (the fully resolved
config, its hash, the seeds, component versions) into its output
directory; re-running a subcommand from that manifest reproduces the
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import platform
import shlex
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compressor import CompressionRequest, ExternalBackend, compress_external
from .corpus import load_corpus, save_corpus
from .costmodel import cost_report, load_cost_config, render_cost_table
from .curriculum import build_curriculum, default_deps, write_stage
from .errors import ConfigError, InternLabError
from .evalharness import evaluate_file, render_report
from .exampler import cached_build_pools
from .schedule import make_schedule
from .teacher import (
    GenerationParams,
    MockTeacherClient,
    OpenAIChatClient,
    TeacherConfig,
    TranscriptTeacherClient,
    annotate_corpus,
)
from .trainlab import (
    LAB_DEFAULTS,
    ExternalTrainerContract,
    SyntheticTaskSpec,
    TrainSpec,
    drive_external,
    median_report,
    save_report,
)
from .util import stable_hash, write_json

# ---------------------------------------------------------------------------
# per-subcommand defaults
# ---------------------------------------------------------------------------

GENERATE_DEFAULTS = {
    "corpus": None,
    "schema": "qa",
    "out": "runs/generate",
    "teacher": "mock",
    "endpoint": "",
    "model_name": "mock",
    "transcript": "",
    "accuracy": 1.0,
    "seed": 0,
    "temperature": 0.8,
    "top_p": 1.0,
    "max_new_tokens": 2048,
    "n_rationales": 2,
    "parallelism": 4,
    "max_retries": 3,
    "overwrite": False,
}

CURRICULUM_DEFAULTS = {
    "corpus": None,
    "out": "runs/curriculum",
    "pattern": "linear",
    "T": 4,
    "E": 12,
    "lam": 3.0,
    "K": 3,
    "seed": 0,
    "split": "train",
    "include_summary": True,
    "include_supplement": True,
    "preserve_numbers": True,
    "preserve_capitalized": True,
    "compressor": "builtin",
    "compress_command": "",
    "compress_url": "",
    "compress_timeout": 30.0,
    "cache_dir": "",
}

TRAIN_LAB_DEFAULTS = {
    "out": "runs/trainlab",
    "n_entities": 8,
    "n_relations": 5,
    "filler_ratio": 0.6,
    "seeds": [0, 1, 2, 3, 4],
    "pattern": LAB_DEFAULTS["pattern"],
    "T": LAB_DEFAULTS["T"],
    "E": LAB_DEFAULTS["E"],
    "lam": 3.0,
    "eta": LAB_DEFAULTS["eta"],
    "batch_size": LAB_DEFAULTS["batch_size"],
    "optimizer": LAB_DEFAULTS["optimizer"],
    "embed_dim": LAB_DEFAULTS["embed_dim"],
    "K": LAB_DEFAULTS["K"],
    "tied": LAB_DEFAULTS["tied"],
}

TRAIN_EXTERNAL_DEFAULTS = {
    "stages": [],
    "stage_dir": "",
    "trainer": None,
    "checkpoint": "fresh",
    "timeout": 600.0,
    "epochs": [],
    "out": "runs/external",
}

COST_DEFAULTS = {
    "profile": "default",
    "reference": "tinyllama:zero_shot",
    "attention": True,
    "out": "",
}

EVAL_DEFAULTS = {
    "predictions": None,
    "corpus": None,
    "schema": "instance",
    "dataset_name": "",
    "out": "",
}

REPORT_DEFAULTS = {
    "run": None,
    "out": "",
}

TEACHER_KINDS = ("mock", "transcript", "http")
COMPRESSOR_KINDS = ("builtin", "external")


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"5"`` means seeds 0..4; ``"1,3,9"`` means exactly those."""
    try:
        if "," in text:
            return [int(part) for part in text.split(",") if part.strip()]
        return list(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be a count or a comma-separated list, got {text!r}"
        )


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        )


def _normalize_seeds(value) -> list[int]:
    if isinstance(value, int):
        return list(range(value))
    if isinstance(value, str):
        return parse_seeds(value)
    seeds = [int(s) for s in value]
    if not seeds:
        raise ConfigError("seeds must not be empty")
    return seeds


def resolve_config(args: argparse.Namespace, command: str, defaults: dict) -> dict:
    """Layer defaults, config file, manifest, then explicit flags."""
    config = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            file_config = json.loads(Path(config_path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"could not read config file {config_path}: {exc}") from exc
        if not isinstance(file_config, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        unknown = sorted(set(file_config) - set(defaults))
        if unknown:
            raise ConfigError(f"{command}: unknown config keys {unknown}")
        config.update(file_config)
    manifest_path = getattr(args, "from_manifest", None)
    if manifest_path:
        try:
            manifest = json.loads(Path(manifest_path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"could not read manifest {manifest_path}: {exc}") from exc
        recorded = manifest.get("command")
        if recorded != command:
            raise ConfigError(
                f"manifest {manifest_path} records command {recorded!r}, not {command!r}"
            )
        config.update(manifest.get("config", {}))
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _require(config: dict, key: str, command: str) -> None:
    if not config.get(key):
        raise ConfigError(f"{command}: {key} is required (flag --{key.replace('_', '-')})")


def component_versions() -> dict:
    return {
        "internlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def write_manifest(out_dir: str | Path, command: str, config: dict, seeds: list[int]) -> Path:
    """Record everything needed to reproduce the run, nothing volatile."""
    path = Path(out_dir) / "manifest.json"
    write_json(
        path,
        {
            "command": command,
            "config": config,
            "config_hash": stable_hash(config),
            "seeds": seeds,
            "versions": component_versions(),
        },
    )
    return path


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _make_teacher_client(config: dict, instances):
    kind = config["teacher"]
    if kind == "mock":
        return MockTeacherClient.for_corpus(
            instances, accuracy=config["accuracy"], seed=config["seed"]
        )
    if kind == "transcript":
        _require(config, "transcript", "generate")
        return TranscriptTeacherClient(config["transcript"])
    if kind == "http":
        _require(config, "endpoint", "generate")
        return OpenAIChatClient(
            config["endpoint"], config["model_name"], max_retries=config["max_retries"]
        )
    raise ConfigError(f"generate: teacher must be one of {TEACHER_KINDS}, got {kind!r}")


def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args, "generate", GENERATE_DEFAULTS)
    _require(config, "corpus", "generate")
    instances = load_corpus(config["corpus"], schema=config["schema"])
    teacher_cfg = TeacherConfig(
        endpoint=config["endpoint"],
        model_name=config["model_name"],
        rationale_params=GenerationParams(
            temperature=config["temperature"],
            top_p=config["top_p"],
            max_new_tokens=config["max_new_tokens"],
            n_sequences=config["n_rationales"],
        ),
        parallelism=config["parallelism"],
        max_retries=config["max_retries"],
    )
    client = _make_teacher_client(config, instances)
    annotated = annotate_corpus(
        instances, teacher_cfg, client, overwrite=config["overwrite"]
    )
    out = Path(config["out"])
    corpus_path = out / "corpus.annotated.jsonl"
    save_corpus(annotated, corpus_path)
    write_manifest(out, "generate", config, [config["seed"]])
    kept = sum(len(inst.kept_rationales()) for inst in annotated)
    flagged = sum(1 for inst in annotated if inst.flags)
    print(
        f"annotated {len(annotated)} instances "
        f"({kept} kept rationales, {flagged} flagged) -> {corpus_path}"
    )
    return 0


def _curriculum_deps(config: dict, instances):
    pools = None
    if config["cache_dir"]:
        pools = cached_build_pools(
            [i for i in instances if i.kept_rationales()],
            config["K"],
            config["cache_dir"],
        )
    deps = default_deps(
        instances,
        config["K"],
        preserve_numbers=config["preserve_numbers"],
        preserve_capitalized=config["preserve_capitalized"],
        pools=pools,
    )
    if config["compressor"] == "builtin":
        return deps
    if config["compressor"] != "external":
        raise ConfigError(
            f"curriculum: compressor must be one of {COMPRESSOR_KINDS}, "
            f"got {config['compressor']!r}"
        )
    if bool(config["compress_command"]) == bool(config["compress_url"]):
        raise ConfigError(
            "curriculum: external compressor needs exactly one of "
            "compress_command or compress_url"
        )
    backend = ExternalBackend(
        command=shlex.split(config["compress_command"]) or None,
        url=config["compress_url"] or None,
        timeout=config["compress_timeout"],
    )

    def compress_fn(text: str, rate: float) -> str:
        request = CompressionRequest(
            text,
            rate,
            tokenizer=deps.tokenizer,
            preserve_numbers=config["preserve_numbers"],
            preserve_capitalized=config["preserve_capitalized"],
        )
        return compress_external(request, backend).text

    return replace(deps, compress_fn=compress_fn)


def cmd_curriculum(args: argparse.Namespace) -> int:
    config = resolve_config(args, "curriculum", CURRICULUM_DEFAULTS)
    _require(config, "corpus", "curriculum")
    instances = load_corpus(config["corpus"], schema="instance")
    if config["split"]:
        instances = [inst for inst in instances if inst.split == config["split"]]
    if not instances:
        raise ConfigError(
            f"curriculum: no instances with split {config['split']!r} in {config['corpus']}"
        )
    plan = make_schedule(config["pattern"], T=config["T"], E=config["E"], lam=config["lam"])
    deps = _curriculum_deps(config, instances)
    stages = build_curriculum(
        instances,
        plan,
        deps,
        config["seed"],
        include_summary=config["include_summary"],
        include_supplement=config["include_supplement"],
    )
    out = Path(config["out"])
    for t, stage in enumerate(stages, start=1):
        write_stage(stage, out / f"stage_{t:02d}.jsonl")
    write_manifest(out, "curriculum", config, [config["seed"]])
    rows = sum(len(stage.rows) for stage in stages)
    print(f"wrote {len(stages)} stage files ({rows} rows) to {out}")
    return 0


def cmd_train_lab(args: argparse.Namespace) -> int:
    config = resolve_config(args, "train-lab", TRAIN_LAB_DEFAULTS)
    seeds = _normalize_seeds(config["seeds"])
    config["seeds"] = seeds
    task = SyntheticTaskSpec(
        config["n_entities"], config["n_relations"], config["filler_ratio"], seed=seeds[0]
    )
    plan = make_schedule(config["pattern"], T=config["T"], E=config["E"], lam=config["lam"])
    spec = TrainSpec(
        eta=config["eta"],
        batch_size=config["batch_size"],
        plan=plan,
        seed=seeds[0],
        optimizer=config["optimizer"],
    )
    report = median_report(
        task,
        plan,
        spec,
        seeds,
        K=config["K"],
        embed_dim=config["embed_dim"],
        tied=config["tied"],
    )
    out = Path(config["out"])
    save_report(report, out / "trainlab_report.json")
    write_manifest(out, "train-lab", config, seeds)
    med = report["median_em"]
    print(
        f"median EM over {len(seeds)} seeds: "
        + ", ".join(f"{name} {med[name]:.3f}" for name in sorted(med))
    )
    print(f"median uplift vs std_cot: {report['median_uplift_points']:+.1f} points")
    return 0


def cmd_train_external(args: argparse.Namespace) -> int:
    config = resolve_config(args, "train-external", TRAIN_EXTERNAL_DEFAULTS)
    _require(config, "trainer", "train-external")
    stage_paths = [Path(p) for p in config["stages"]]
    if config["stage_dir"]:
        stage_paths.extend(sorted(Path(config["stage_dir"]).glob("stage_*.jsonl")))
    if not stage_paths:
        raise ConfigError("train-external: no stage files (use --stages or --stage-dir)")
    missing = [str(p) for p in stage_paths if not p.exists()]
    if missing:
        raise ConfigError(f"train-external: stage files do not exist: {missing}")
    contract = ExternalTrainerContract(
        command=shlex.split(config["trainer"]),
        checkpoint=config["checkpoint"],
        timeout=config["timeout"],
    )
    epochs = [int(e) for e in config["epochs"]] or None
    out = Path(config["out"])
    report = drive_external(stage_paths, contract, out, epochs_per_stage=epochs)
    save_report(report, out / "driver_report.json")
    write_manifest(out, "train-external", config, [])
    if not report["completed"]:
        print(
            f"trainer failed at stage {report['failed_stage']}: {report.get('error', '')}",
            file=sys.stderr,
        )
        return 1
    losses = ", ".join(f"{m['mean_loss']:.4f}" for m in report["metrics"])
    print(f"trained {len(stage_paths)} stages; mean loss per stage: {losses}")
    return 0


def _parse_reference(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"cost: reference must look like 'model:method', got {text!r}")
    return parts[0], parts[1]


def cmd_cost(args: argparse.Namespace) -> int:
    config = resolve_config(args, "cost", COST_DEFAULTS)
    profile = config["profile"]
    cost_cfg = load_cost_config(None if profile == "default" else profile)
    reference = _parse_reference(config["reference"])
    rows = cost_report(cost_cfg, reference, attention=config["attention"])
    print(render_cost_table(rows))
    if config["out"]:
        out = Path(config["out"])
        write_json(
            out / "cost_report.json",
            {
                "reference": list(reference),
                "attention": config["attention"],
                "rows": rows,
            },
        )
        write_manifest(out, "cost", config, [])
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args, "eval", EVAL_DEFAULTS)
    _require(config, "predictions", "eval")
    _require(config, "corpus", "eval")
    gold = load_corpus(config["corpus"], schema=config["schema"])
    result = evaluate_file(config["predictions"], gold, dataset_name=config["dataset_name"])
    print(render_report([result]))
    if config["out"]:
        out = Path(config["out"])
        write_json(out / "eval_report.json", result.to_dict())
        write_manifest(out, "eval", config, [])
    return 0


def _digest_run(run: Path) -> list[str]:
    lines = [f"run directory: {run}"]
    manifest_path = run / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        lines.append(
            f"command: {manifest.get('command', '?')}  "
            f"config hash: {manifest.get('config_hash', '?')[:12]}  "
            f"seeds: {manifest.get('seeds', [])}"
        )
    stage_files = sorted(run.glob("stage_*.jsonl"))
    if stage_files:
        rows = sum(sum(1 for _ in path.open()) for path in stage_files)
        lines.append(f"stages: {len(stage_files)} files, {rows} rows")
    annotated = run / "corpus.annotated.jsonl"
    if annotated.exists():
        lines.append(f"annotated corpus: {sum(1 for _ in annotated.open())} instances")
    trainlab_path = run / "trainlab_report.json"
    if trainlab_path.exists():
        report = json.loads(trainlab_path.read_text())
        med = report["median_em"]
        lines.append(
            "lab median EM: "
            + ", ".join(f"{name} {med[name]:.3f}" for name in sorted(med))
        )
        lines.append(f"lab median uplift: {report['median_uplift_points']:+.1f} points")
    driver_path = run / "driver_report.json"
    if driver_path.exists():
        report = json.loads(driver_path.read_text())
        status = "completed" if report.get("completed") else (
            f"failed at stage {report.get('failed_stage')}"
        )
        lines.append(f"external training: {len(report.get('stages', []))} stages, {status}")
    cost_path = run / "cost_report.json"
    if cost_path.exists():
        report = json.loads(cost_path.read_text())
        lines.append(
            f"cost table: {len(report['rows'])} rows vs "
            f"{report['reference'][0]}:{report['reference'][1]}"
        )
    eval_path = run / "eval_report.json"
    if eval_path.exists():
        report = json.loads(eval_path.read_text())
        lines.append(
            f"eval: {report['dataset_name']} EM {report['em']:.4f} over {report['n']} items"
        )
    if len(lines) == 1:
        lines.append("no recognized artifacts")
    return lines


def cmd_report(args: argparse.Namespace) -> int:
    config = resolve_config(args, "report", REPORT_DEFAULTS)
    _require(config, "run", "report")
    run = Path(config["run"])
    if not run.is_dir():
        raise ConfigError(f"report: run directory {run} does not exist")
    text = "\n".join(_digest_run(run))
    print(text)
    if config["out"]:
        out = Path(config["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument(
        "--from-manifest", help="manifest.json from a previous run to reproduce"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="internlab",
        description="Staged knowledge-internalization training pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"internlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    boolean = argparse.BooleanOptionalAction

    p = sub.add_parser("generate", help="annotate a corpus with teacher outputs")
    _add_common(p)
    p.add_argument("--corpus", help="input corpus (jsonl)")
    p.add_argument("--schema", choices=("qa", "instance"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--teacher", choices=TEACHER_KINDS)
    p.add_argument("--endpoint", help="OpenAI-compatible chat completions URL")
    p.add_argument("--model-name")
    p.add_argument("--transcript", help="recorded-completions file for teacher=transcript")
    p.add_argument("--accuracy", type=float, help="mock teacher answer accuracy")
    p.add_argument("--seed", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", type=float)
    p.add_argument("--max-new-tokens", type=int)
    p.add_argument("--n-rationales", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--overwrite", action=boolean, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("curriculum", help="build staged training files")
    _add_common(p)
    p.add_argument("--corpus", help="annotated corpus (jsonl)")
    p.add_argument("--out")
    p.add_argument("--pattern", help="decay pattern: linear, exp, or inv_exp")
    p.add_argument("--T", type=int, help="number of stages")
    p.add_argument("--E", type=int, help="total training epochs across stages")
    p.add_argument("--lam", type=float, help="steepness for exponential patterns")
    p.add_argument("--K", type=int, help="demonstration budget at full strength")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="corpus split to build from ('' keeps all)")
    p.add_argument("--include-summary", action=boolean, default=None)
    p.add_argument("--include-supplement", action=boolean, default=None)
    p.add_argument("--preserve-numbers", action=boolean, default=None)
    p.add_argument("--preserve-capitalized", action=boolean, default=None)
    p.add_argument("--compressor", choices=COMPRESSOR_KINDS)
    p.add_argument("--compress-command", help="external compressor command line")
    p.add_argument("--compress-url", help="external compressor HTTP endpoint")
    p.add_argument("--compress-timeout", type=float)
    p.add_argument("--cache-dir", help="cache directory for example pools")
    p.set_defaults(func=cmd_curriculum)

    p = sub.add_parser("train-lab", help="run the toy-model internalization experiment")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--n-entities", type=int)
    p.add_argument("--n-relations", type=int)
    p.add_argument("--filler-ratio", type=float)
    p.add_argument("--seeds", type=parse_seeds, help="count (5 -> 0..4) or list (1,3,9)")
    p.add_argument("--pattern")
    p.add_argument("--T", type=int)
    p.add_argument("--E", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", help="sgd or adaptive-moment")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--tied", action=boolean, default=None, help="tie output to embeddings")
    p.set_defaults(func=cmd_train_lab)

    p = sub.add_parser("train-external", help="drive an external trainer over stage files")
    _add_common(p)
    p.add_argument("--stages", nargs="+", help="stage files in training order")
    p.add_argument("--stage-dir", help="directory holding stage_*.jsonl files")
    p.add_argument("--trainer", help="trainer command line")
    p.add_argument("--checkpoint", help="'fresh' or a checkpoint path")
    p.add_argument("--timeout", type=float, help="per-stage timeout in seconds")
    p.add_argument("--epochs", type=parse_int_list, help="per-stage epochs (1,2,3)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_external)

    p = sub.add_parser("cost", help="print relative inference-cost table")
    _add_common(p)
    p.add_argument("--profile", help="'default' or a profile JSON path")
    p.add_argument("--reference", help="baseline as model:method")
    p.add_argument("--attention", action=boolean, default=None)
    p.add_argument("--out", help="also write cost_report.json here")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("eval", help="score a predictions file")
    _add_common(p)
    p.add_argument("--predictions", help="jsonl of {id, output_text}")
    p.add_argument("--corpus", help="gold corpus (jsonl)")
    p.add_argument("--schema", choices=("qa", "instance"))
    p.add_argument("--dataset-name")
    p.add_argument("--out", help="also write eval_report.json here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarize a run directory")
    _add_common(p)
    p.add_argument("--run", help="run directory to digest")
    p.add_argument("--out", help="also write report.txt here")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InternLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
