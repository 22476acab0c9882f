"""Per-instance demonstration pools and stage-dependent example draws.

Each training instance gets a fixed pool of its K most similar peers
(cosine over TF-IDF question vectors, self excluded, ties broken toward
the lexicographically smaller id).  At stage value s the curriculum
draws floor(K * s) pool members uniformly without replacement under a
caller-supplied seed; the returned order is the draw order.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from internlab.corpus import TrainingInstance, instance_to_dict
from internlab.errors import ExamplePoolError
from internlab.similarity import TfidfSimilarity
from internlab.util import stable_hash

DEFAULT_K = 3


@dataclass(frozen=True)
class ExamplePool:
    owner_id: str
    K: int
    candidates: tuple[tuple[str, float], ...]  # (peer id, similarity), best first


def build_pools(
    corpus: list[TrainingInstance],
    K: int = DEFAULT_K,
    provider: TfidfSimilarity | None = None,
) -> dict[str, ExamplePool]:
    if K < 1:
        raise ExamplePoolError(f"K must be >= 1, got {K}")
    if len(corpus) <= K:
        raise ExamplePoolError(
            f"need more than K={K} instances to fill pools, got {len(corpus)}"
        )
    questions = [inst.question for inst in corpus]
    if provider is None:
        provider = TfidfSimilarity(questions)
    sims = provider.pairwise(questions)
    pools: dict[str, ExamplePool] = {}
    for i, inst in enumerate(corpus):
        scored = [
            (corpus[j].id, float(sims[i, j])) for j in range(len(corpus)) if j != i
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        pools[inst.id] = ExamplePool(inst.id, K, tuple(scored[:K]))
    return pools


def select_examples(pool: ExamplePool, s_t: float, seed: int) -> list[str]:
    """Draw floor(K * s_t) peer ids uniformly without replacement."""
    if not 0.0 <= s_t <= 1.0:
        raise ExamplePoolError(f"stage value must be in [0, 1], got {s_t}")
    k_t = pruned_count(pool.K, s_t)
    ids = [peer_id for peer_id, _ in pool.candidates]
    return random.Random(seed).sample(ids, k_t)


def pruned_count(K: int, s_t: float) -> int:
    """floor(K * s_t) with a tiny quantization guard against float dust."""
    return min(K, math.floor(round(K * s_t, 9)))


# ---------------------------------------------------------------------------
# Sidecar cache: pools are a pure function of (corpus content, K), so they
# are stored keyed by that pair and reloaded on exact match.
# ---------------------------------------------------------------------------


def corpus_fingerprint(corpus: list[TrainingInstance]) -> str:
    return stable_hash([instance_to_dict(i) for i in corpus])


def save_pools(pools: dict[str, ExamplePool], path: str | Path, corpus_hash: str, K: int) -> None:
    payload = {
        "corpus_sha256": corpus_hash,
        "K": K,
        "pools": {
            pid: [[cid, score] for cid, score in pool.candidates]
            for pid, pool in pools.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2))


def load_pools(path: str | Path) -> tuple[dict[str, ExamplePool], str, int]:
    payload = json.loads(Path(path).read_text())
    K = payload["K"]
    pools = {
        pid: ExamplePool(pid, K, tuple((cid, float(s)) for cid, s in cands))
        for pid, cands in payload["pools"].items()
    }
    return pools, payload["corpus_sha256"], K


def cached_build_pools(
    corpus: list[TrainingInstance],
    K: int,
    cache_dir: str | Path,
    provider: TfidfSimilarity | None = None,
) -> dict[str, ExamplePool]:
    corpus_hash = corpus_fingerprint(corpus)
    cache_path = Path(cache_dir) / f"pools_{corpus_hash[:16]}_K{K}.json"
    if cache_path.exists():
        pools, cached_hash, cached_K = load_pools(cache_path)
        if cached_hash == corpus_hash and cached_K == K:
            return pools
    pools = build_pools(corpus, K, provider)
    save_pools(pools, cache_path, corpus_hash, K)
    return pools
