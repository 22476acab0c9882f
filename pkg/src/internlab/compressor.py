"""Token-budget text compression by informativeness ranking.

``compress`` keeps exactly ceil(rate * n) of the n input tokens (all of
them verbatim at rate 1.0, nothing at 0.0) and re-emits the survivors
in their original order.  Tokens are ranked by a corpus-frequency
scorer: rare tokens score high, stop-listed function words score
lowest, and numerals and capitalized tokens get a bonus when the
request asks to preserve them.  Ranking ties break toward the earlier
position, which also makes budgets nest: everything kept at a low rate
is still kept at any higher rate.

``compress_external`` delegates to another process or an HTTP endpoint
speaking one JSON object {"text", "rate"} -> {"compressed_text"} per
call, checks the returned token count against the budget (warns beyond
20% deviation), and can fall back to the built-in path on failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import subprocess
from collections import Counter
from dataclasses import dataclass, field

import httpx

from internlab.corpus import WhitespaceTokenizer, token_count
from internlab.errors import CompressionBackendError, CompressionError, ConfigError

logger = logging.getLogger(__name__)

STOPWORDS = frozenset(
    """a an the and or but if then than so of to in on at by for from with as is are was
    were be been being it its this that these those there here not no nor do does did
    has have had he she they them his her their we you i me my your our us""".split()
)

STOP_SCORE = -100.0
NUMERAL_BONUS = 2.0
CAPITAL_BONUS = 2.0


@dataclass
class CompressionRequest:
    text: str
    rate: float
    tokenizer: object = field(default_factory=WhitespaceTokenizer)
    preserve_numbers: bool = True
    preserve_capitalized: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise CompressionError(f"rate must be in [0, 1], got {self.rate}")


class FrequencyScorer:
    """Scores tokens by smoothed inverse corpus frequency."""

    def __init__(self, texts=(), tokenizer=None):
        tokenizer = tokenizer or WhitespaceTokenizer()
        self.counts: Counter[str] = Counter()
        for text in texts:
            self.counts.update(tok.lower() for tok in tokenizer.tokenize(text))
        self.total = sum(self.counts.values())

    def fingerprint(self) -> dict:
        digest = hashlib.sha256(
            json.dumps(sorted(self.counts.items())).encode("utf-8")
        ).hexdigest()
        return {"kind": "frequency", "total": self.total, "counts_sha256": digest}

    def score(self, token: str, preserve_numbers: bool = True, preserve_capitalized: bool = True) -> float:
        lower = token.lower()
        if lower in STOPWORDS:
            return STOP_SCORE
        s = math.log((self.total + 1) / (self.counts[lower] + 1)) + 1.0
        if preserve_numbers and any(ch.isdigit() for ch in token):
            s += NUMERAL_BONUS
        if preserve_capitalized and token[:1].isupper():
            s += CAPITAL_BONUS
        return s


def token_budget(rate: float, n_tokens: int) -> int:
    """ceil(rate * n) with a tiny quantization guard against float dust."""
    return min(n_tokens, math.ceil(round(rate * n_tokens, 9)))


def compress(req: CompressionRequest, scorer: FrequencyScorer | None = None) -> str:
    if req.rate == 1.0:
        return req.text
    tokens = req.tokenizer.tokenize(req.text)
    n = len(tokens)
    m = token_budget(req.rate, n)
    if m == 0:
        return ""
    if scorer is None:
        scorer = FrequencyScorer([req.text], req.tokenizer)
    scores = [
        scorer.score(tok, req.preserve_numbers, req.preserve_capitalized) for tok in tokens
    ]
    ranked = sorted(range(n), key=lambda i: (-scores[i], i))
    kept = sorted(ranked[:m])
    return req.tokenizer.detokenize([tokens[i] for i in kept])


@dataclass
class ExternalBackend:
    """Either a command to spawn per call or an HTTP endpoint to POST to."""

    command: list[str] | None = None
    url: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if bool(self.command) == bool(self.url):
            raise ConfigError("external backend needs exactly one of command or url")


@dataclass
class CompressionOutcome:
    text: str
    backend: str  # "external" or "builtin_fallback"
    expected_tokens: int
    actual_tokens: int
    warned: bool = False


def compress_external(
    req: CompressionRequest,
    backend: ExternalBackend,
    *,
    fallback: bool = True,
    scorer: FrequencyScorer | None = None,
) -> CompressionOutcome:
    expected = token_budget(req.rate, token_count(req.tokenizer, req.text))
    try:
        out = _call_backend(req, backend)
    except Exception as exc:
        if not fallback:
            raise CompressionBackendError(f"external compressor failed: {exc}") from exc
        logger.warning("external compressor failed (%s); using built-in fallback", exc)
        text = compress(req, scorer)
        return CompressionOutcome(
            text, "builtin_fallback", expected, token_count(req.tokenizer, text)
        )
    actual = token_count(req.tokenizer, out)
    warned = actual > 0 if expected == 0 else abs(actual - expected) / expected > 0.2
    if warned:
        logger.warning(
            "external compressor returned %d tokens for a budget of %d (rate %.3f)",
            actual,
            expected,
            req.rate,
        )
    return CompressionOutcome(out, "external", expected, actual, warned)


def _call_backend(req: CompressionRequest, backend: ExternalBackend) -> str:
    payload = {"text": req.text, "rate": req.rate}
    if backend.command:
        proc = subprocess.run(
            backend.command,
            input=json.dumps(payload) + "\n",
            capture_output=True,
            text=True,
            timeout=backend.timeout,
        )
        if proc.returncode != 0:
            raise RuntimeError(
                f"command exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        body = json.loads(proc.stdout.strip().splitlines()[0])
    else:
        resp = httpx.post(backend.url, json=payload, timeout=backend.timeout)
        resp.raise_for_status()
        body = resp.json()
    if "compressed_text" not in body:
        raise RuntimeError("backend reply missing 'compressed_text'")
    return body["compressed_text"]
