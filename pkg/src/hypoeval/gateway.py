"""LLM access: one live provider, one scripted provider, one cache.

Every completion is identified by a fingerprint hashed over
(provider_id, model, system_prompt, user_prompt, temperature, seed_hint).
The cache is a directory of JSON files keyed by fingerprint, so identical
requests are answered byte-identically without a provider call.

The scripted provider answers from an ordered rule list (first match wins)
and exists so whole pipeline runs can execute offline and deterministically.
Its built-in "synthetic-judge" generator reads a marker grammar:
``[[sid=..]]`` and ``[[q=..]]`` inside the evaluated text give the sample id
and its hidden quality; ``[[rid=..]]`` and ``[[noise=..]]`` inside the rubric
text give the rubric id and noise magnitude. The reply score is
q plus a deterministic per-(rubric, sample) uniform draw in [-noise, +noise],
clamped to the scale.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

log = logging.getLogger(__name__)

ENV_API_BASE = "HYPOEVAL_API_BASE"
ENV_API_KEY = "HYPOEVAL_API_KEY"
ENV_CACHE_DIR = "HYPOEVAL_CACHE_DIR"

RETRY_ATTEMPTS = 5
RETRY_BASE_DELAY = 1.0


class GatewayError(RuntimeError):
    """Base class for completion failures."""


class AuthError(GatewayError):
    """Credentials rejected; never retried."""


class RateLimitedError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ScriptMissError(GatewayError):
    """No scripted rule matched the request."""


class ProviderConfigError(ValueError):
    """Provider settings missing or malformed (a usage error, not transport)."""


@dataclass(frozen=True, slots=True)
class CompletionRequest:
    model: str
    system_prompt: str
    user_prompt: str
    temperature: float
    max_tokens: int = 1024
    seed_hint: int | None = None


@dataclass(frozen=True, slots=True)
class CompletionResult:
    text: str
    provider_id: str
    cached: bool
    latency_ms: int
    request_fingerprint: str


def request_fingerprint(provider_id: str, req: CompletionRequest) -> str:
    payload = json.dumps(
        {
            "provider_id": provider_id,
            "model": req.model,
            "system_prompt": req.system_prompt,
            "user_prompt": req.user_prompt,
            "temperature": req.temperature,
            "seed_hint": req.seed_hint,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Provider(Protocol):
    provider_id: str

    def complete_raw(self, req: CompletionRequest) -> str: ...


def _default_post(
    url: str, headers: Mapping[str, str], payload: Mapping[str, Any], timeout_s: float
) -> tuple[int, Any]:
    import requests

    try:
        resp = requests.post(url, headers=dict(headers), json=payload, timeout=timeout_s)
    except requests.Timeout as exc:
        raise TransportError(f"request timed out: {exc}") from None
    except requests.RequestException as exc:
        raise TransportError(f"connection failed: {exc}") from None
    try:
        body = resp.json()
    except ValueError:
        body = resp.text
    return resp.status_code, body


class OpenAICompatProvider:
    """POSTs to {api_base}/chat/completions and reads the first choice.

    429 and 5xx responses and transport failures are retried with doubling
    backoff plus jitter; auth failures are surfaced immediately.
    """

    def __init__(
        self,
        api_base: str,
        api_key: str,
        timeout_s: float = 60.0,
        attempts: int = RETRY_ATTEMPTS,
        post: Callable[..., tuple[int, Any]] = _default_post,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not api_base:
            raise ProviderConfigError("api_base must be non-empty")
        self.api_base = api_base.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.attempts = attempts
        self._post = post
        self._sleep = sleep
        self.provider_id = f"openai-compat:{self.api_base}"

    def _attempt(self, req: CompletionRequest) -> str:
        payload: dict[str, Any] = {
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed_hint is not None:
            payload["seed"] = req.seed_hint
        headers = {"Authorization": f"Bearer {self.api_key}"}
        status, body = self._post(
            f"{self.api_base}/chat/completions", headers, payload, self.timeout_s
        )
        if status in (401, 403):
            raise AuthError(f"provider rejected credentials (HTTP {status})")
        if status == 429:
            raise RateLimitedError("provider rate limit (HTTP 429)")
        if status >= 500:
            raise TransportError(f"provider error (HTTP {status})")
        if status != 200:
            raise GatewayError(f"unexpected HTTP {status}: {body}")
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed completion body: {body!r}") from None
        if not isinstance(text, str):
            raise TransportError(f"completion content is not text: {text!r}")
        return text

    def complete_raw(self, req: CompletionRequest) -> str:
        delay = RETRY_BASE_DELAY
        for attempt in range(1, self.attempts + 1):
            try:
                return self._attempt(req)
            except AuthError:
                raise
            except (RateLimitedError, TransportError) as exc:
                if attempt == self.attempts:
                    raise
                pause = delay + random.random() * 0.25 * delay
                log.warning(
                    "attempt %d/%d failed (%s); retrying in %.1fs",
                    attempt, self.attempts, exc, pause,
                )
                self._sleep(pause)
                delay *= 2.0
        raise TransportError("retry loop exhausted")  # unreachable


def live_provider_from_env(
    api_base: str | None = None, api_key: str | None = None
) -> OpenAICompatProvider:
    base = api_base or os.environ.get(ENV_API_BASE)
    key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
    if not base:
        raise ProviderConfigError(
            f"no api base: set {ENV_API_BASE} or pass --api-base"
        )
    return OpenAICompatProvider(api_base=base, api_key=key)


_SID_RE = re.compile(r"\[\[sid=([^\]]+)\]\]")
_Q_RE = re.compile(r"\[\[q=(-?\d+(?:\.\d+)?)\]\]")
_RID_RE = re.compile(r"\[\[rid=([^\]]+)\]\]")
_NOISE_RE = re.compile(r"\[\[noise=(-?\d+(?:\.\d+)?)\]\]")


def synthetic_judge_score(
    seed: int, rid: str, sid: str, q: float, noise: float,
    score_min: float = 1.0, score_max: float = 5.0,
) -> float:
    """The deterministic score the synthetic judge gives; exposed for oracles."""
    digest = hashlib.sha256(f"{seed}|{rid}|{sid}".encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0**64
    raw = q + (2.0 * u - 1.0) * noise
    return round(min(score_max, max(score_min, raw)), 2)


def _make_synthetic_judge(params: Mapping[str, Any]) -> Callable[[CompletionRequest], str]:
    seed = int(params.get("seed", 0))
    score_min = float(params.get("score_min", 1.0))
    score_max = float(params.get("score_max", 5.0))

    def reply(req: CompletionRequest) -> str:
        text = req.system_prompt + "\n" + req.user_prompt
        sid = _SID_RE.search(text)
        q = _Q_RE.search(text)
        rid = _RID_RE.search(text)
        noise = _NOISE_RE.search(text)
        if not (sid and q and rid and noise):
            raise ScriptMissError(
                "synthetic-judge needs [[sid=..]], [[q=..]], [[rid=..]], "
                "[[noise=..]] markers in the request"
            )
        score = synthetic_judge_score(
            seed, rid.group(1), sid.group(1), float(q.group(1)),
            float(noise.group(1)), score_min, score_max,
        )
        return (
            f"Step 1: the pattern describes rubric {rid.group(1)}.\n"
            f"Step 2: judged per that rubric.\n"
            f"Step 3 (final answer): see below.\n"
            f"{{Final score: {score:.2f}}}"
        )

    return reply


REPLY_GENERATORS: dict[str, Callable[[Mapping[str, Any]], Callable[[CompletionRequest], str]]] = {
    "synthetic-judge": _make_synthetic_judge,
}


@dataclass(frozen=True, slots=True)
class ScriptRule:
    """One scripted answer; matches on request text or fingerprint."""

    reply: str | None = None
    reply_fn: Callable[[CompletionRequest], str] | None = None
    substring: str | None = None
    regex: re.Pattern[str] | None = None
    fingerprint: str | None = None

    def __post_init__(self) -> None:
        if (self.reply is None) == (self.reply_fn is None):
            raise ProviderConfigError("rule needs exactly one of reply/reply_fn")

    def matches(self, req: CompletionRequest, fingerprint: str) -> bool:
        if self.fingerprint is not None:
            return self.fingerprint == fingerprint
        haystack = req.system_prompt + "\n" + req.user_prompt
        if self.substring is not None:
            return self.substring in haystack
        if self.regex is not None:
            return self.regex.search(haystack) is not None
        return True  # no matcher: catch-all


class ScriptedProvider:
    """Deterministic provider answering from an ordered rule list."""

    provider_id = "scripted"

    def __init__(self, rules: Sequence[ScriptRule]):
        self.rules = list(rules)

    def complete_raw(self, req: CompletionRequest) -> str:
        fp = request_fingerprint(self.provider_id, req)
        for rule in self.rules:
            if rule.matches(req, fp):
                if rule.reply is not None:
                    return rule.reply
                assert rule.reply_fn is not None
                return rule.reply_fn(req)
        raise ScriptMissError(
            f"no scripted rule matched request (model={req.model}, "
            f"user prompt starts {req.user_prompt[:80]!r})"
        )


def scripted_provider_from_file(path: str | Path) -> ScriptedProvider:
    """Load rules from JSON: a list of {match: {...}, reply|reply_fn: ...}.

    match is one of {"substring": s}, {"regex": r}, {"fingerprint": f}, or {}
    for catch-all. reply_fn names a built-in generator; generator parameters
    (e.g. "seed") sit next to it.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ProviderConfigError("script file must hold a JSON list of rules")
    rules: list[ScriptRule] = []
    for i, entry in enumerate(raw):
        match = entry.get("match", {})
        unknown = set(match) - {"substring", "regex", "fingerprint"}
        if unknown:
            raise ProviderConfigError(f"rule {i}: unknown matchers {sorted(unknown)}")
        reply = entry.get("reply")
        reply_fn = None
        if "reply_fn" in entry:
            name = entry["reply_fn"]
            factory = REPLY_GENERATORS.get(name)
            if factory is None:
                raise ProviderConfigError(
                    f"rule {i}: unknown reply generator {name!r}; "
                    f"known: {sorted(REPLY_GENERATORS)}"
                )
            params = {k: v for k, v in entry.items() if k not in ("match", "reply_fn")}
            reply_fn = factory(params)
        try:
            rules.append(
                ScriptRule(
                    reply=reply,
                    reply_fn=reply_fn,
                    substring=match.get("substring"),
                    regex=re.compile(match["regex"]) if "regex" in match else None,
                    fingerprint=match.get("fingerprint"),
                )
            )
        except re.error as exc:
            raise ProviderConfigError(f"rule {i}: bad regex: {exc}") from None
    return ScriptedProvider(rules)


class ResponseCache:
    """Content-addressed completion store; one JSON file per fingerprint."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, fingerprint: str) -> Path:
        return self.root / f"{fingerprint}.json"

    def get(self, fingerprint: str) -> str | None:
        path = self._path(fingerprint)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (ValueError, OSError) as exc:
            log.warning("unreadable cache entry %s: %s", path.name, exc)
            return None
        return record.get("text")

    def put(self, fingerprint: str, text: str, provider_id: str, model: str) -> None:
        path = self._path(fingerprint)
        if path.exists():  # first writer wins
            return
        record = {
            "fingerprint": fingerprint,
            "text": text,
            "provider_id": provider_id,
            "model": model,
        }
        tmp = path.with_suffix(f".tmp-{os.getpid()}-{threading.get_ident()}")
        tmp.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)


def cache_from_env(cache_dir: str | Path | None = None) -> ResponseCache | None:
    root = cache_dir or os.environ.get(ENV_CACHE_DIR)
    return ResponseCache(root) if root else None


@dataclass
class GatewayStats:
    requests: int = 0
    cache_hits: int = 0
    provider_calls: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "requests": self.requests,
            "cache_hits": self.cache_hits,
            "provider_calls": self.provider_calls,
        }


@dataclass
class Gateway:
    """Provider plus cache plus a request log for audit and call counting."""

    provider: Provider
    cache: ResponseCache | None = None
    stats: GatewayStats = field(default_factory=GatewayStats)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self.request_log: list[str] = []

    def complete(self, req: CompletionRequest) -> CompletionResult:
        fp = request_fingerprint(self.provider.provider_id, req)
        started = time.monotonic()
        with self._lock:
            self.stats.requests += 1
            self.request_log.append(fp)
        if self.cache is not None:
            hit = self.cache.get(fp)
            if hit is not None:
                with self._lock:
                    self.stats.cache_hits += 1
                return CompletionResult(
                    text=hit,
                    provider_id=self.provider.provider_id,
                    cached=True,
                    latency_ms=int((time.monotonic() - started) * 1000),
                    request_fingerprint=fp,
                )
        text = self.provider.complete_raw(req)
        with self._lock:
            self.stats.provider_calls += 1
        if self.cache is not None:
            self.cache.put(fp, text, self.provider.provider_id, req.model)
        return CompletionResult(
            text=text,
            provider_id=self.provider.provider_id,
            cached=False,
            latency_ms=int((time.monotonic() - started) * 1000),
            request_fingerprint=fp,
        )
