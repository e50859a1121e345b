"""Prompt construction, completion transport, and sample post-processing.

``generate`` talks to any prompt-completion HTTP provider (endpoint and key
via environment variables) or replays canned responses keyed by a stable
hash of (prompt, decoding parameters). Post-processing turns raw samples
into candidates (stop-sequence truncation) and test cases (assertion
extraction).
"""

from __future__ import annotations

import ast
import hashlib
import io
import json
import logging
import os
import time
import tokenize
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .corpus import Candidate, Problem, TestCase, TestKind, TestOrigin
from .sandbox import parse_ok

log = logging.getLogger(__name__)

ENDPOINT_ENV = "EXECRANK_ENDPOINT"
API_KEY_ENV = "EXECRANK_API_KEY"

# Solution truncation stop sequences, earliest occurrence wins.
DEFAULT_STOP_SEQUENCES = ("\nclass", "\ndef", "\n#", "\nif", "\nprint")

# The test prompt ends with a bare assert keyword opening the first test
# line; completions continue that line.
ASSERT_STUB = "assert"

MAX_RETRIES = 5
BACKOFF_BASE_S = 0.5


class GenerationError(RuntimeError):
    """Transport failure after retries, or an unusable provider response."""


class ReplayMissError(GenerationError):
    """Replay directory has no recording for the request key."""


class SampleKind(str, Enum):
    SOLUTION = "solution"
    TEST = "test"


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.8
    top_p: float = 0.95
    max_tokens: int = 300
    n_solution_samples: int = 100
    n_test_samples: int = 100
    stop_sequences: tuple[str, ...] = DEFAULT_STOP_SEQUENCES
    assert_limit: int = 5

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        for name in ("max_tokens", "n_solution_samples", "n_test_samples", "assert_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def greedy(cls, **overrides) -> "GenerationConfig":
        """Greedy single-sample preset used for the pass@1 baseline."""
        params = {"temperature": 0.0, "n_solution_samples": 1}
        params.update(overrides)
        return cls(**params)

    def n_samples(self, kind: SampleKind) -> int:
        return (
            self.n_solution_samples
            if kind is SampleKind.SOLUTION
            else self.n_test_samples
        )


@dataclass(frozen=True)
class RawSample:
    text: str
    kind: SampleKind
    finish_reason: Optional[str] = None
    mean_logprob: Optional[float] = None


# --------------------------------------------------------------------------
# Prompt construction
# --------------------------------------------------------------------------

def build_test_instruction(problem: Problem) -> str:
    """Append the test-generation instruction to the problem context.

    The instruction has three parts: a pass-statement placeholder closing
    the unfinished function body, a comment stating the intent, and a bare
    assert keyword opening the first test line.
    """
    context = problem.context.rstrip("\n")
    return (
        f"{context}\n"
        f"    pass\n"
        f"\n"
        f"# check the correctness of {problem.entry_point}\n"
        f"{ASSERT_STUB}"
    )


def solution_prompt(problem: Problem) -> str:
    return problem.context


# --------------------------------------------------------------------------
# Transport
# --------------------------------------------------------------------------

def request_payload(prompt: str, cfg: GenerationConfig, kind: SampleKind) -> dict:
    payload = {
        "prompt": prompt,
        "n": cfg.n_samples(kind),
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "max_tokens": cfg.max_tokens,
        "logprobs": 0,
    }
    if kind is SampleKind.SOLUTION and cfg.stop_sequences:
        # Providers cap stop lists at four entries; the fifth sequence is
        # applied locally by truncate_solution either way.
        payload["stop"] = list(cfg.stop_sequences[:4])
    return payload


def replay_key(prompt: str, cfg: GenerationConfig, kind: SampleKind) -> str:
    """Stable content hash identifying one generation request."""
    canonical = json.dumps(
        request_payload(prompt, cfg, kind), sort_keys=True, ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:24]


@dataclass
class Provider:
    """Where samples come from: an HTTP endpoint, a replay dir, or both.

    With ``replay_dir`` set and ``endpoint`` unset, requests must hit a
    recording. With both set, responses are recorded after each live call.
    """

    endpoint: Optional[str] = None
    api_key: Optional[str] = None
    replay_dir: Optional[Path] = None
    record: bool = False
    timeout_s: float = 60.0
    session: Optional[requests.Session] = None
    sleeper: Callable[[float], None] = time.sleep

    @classmethod
    def from_env(
        cls, replay_dir: Optional[str | Path] = None, record: bool = False
    ) -> "Provider":
        return cls(
            endpoint=os.environ.get(ENDPOINT_ENV),
            api_key=os.environ.get(API_KEY_ENV),
            replay_dir=Path(replay_dir) if replay_dir else None,
            record=record,
        )

    def _http(self, payload: dict) -> dict:
        if not self.endpoint:
            raise GenerationError(
                f"no provider endpoint configured (set {ENDPOINT_ENV}) "
                "and no replay recording available"
            )
        session = self.session or requests.Session()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "unknown"
        for attempt in range(MAX_RETRIES):
            try:
                resp = session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if resp.status_code == 200:
                    if attempt:
                        log.info("request succeeded after %d retries", attempt)
                    return resp.json()
                if resp.status_code not in (429, 500, 502, 503, 504):
                    raise GenerationError(
                        f"provider returned HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                last_error = f"HTTP {resp.status_code}"
            if attempt < MAX_RETRIES - 1:
                self.sleeper(BACKOFF_BASE_S * (2**attempt))
        raise GenerationError(f"provider unreachable after {MAX_RETRIES} attempts: {last_error}")

    def response_for(self, prompt: str, cfg: GenerationConfig, kind: SampleKind) -> dict:
        key = replay_key(prompt, cfg, kind)
        if self.replay_dir is not None:
            path = Path(self.replay_dir) / f"{key}.json"
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8"))
            if not self.endpoint:
                raise ReplayMissError(f"no recording for request key {key}")
        response = self._http(request_payload(prompt, cfg, kind))
        if self.record and self.replay_dir is not None:
            self.replay_dir.mkdir(parents=True, exist_ok=True)
            path = Path(self.replay_dir) / f"{key}.json"
            path.write_text(
                json.dumps(response, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )
        return response


def generate(prompt: str, cfg: GenerationConfig, provider: Provider,
             kind: SampleKind = SampleKind.SOLUTION) -> list[RawSample]:
    """Produce exactly the configured number of raw samples for one prompt."""
    response = provider.response_for(prompt, cfg, kind)
    choices = response.get("choices", [])
    wanted = cfg.n_samples(kind)
    if len(choices) != wanted:
        raise GenerationError(
            f"provider returned {len(choices)} samples, expected {wanted} "
            f"(key {replay_key(prompt, cfg, kind)})"
        )
    samples = []
    for choice in choices:
        logprobs = choice.get("logprobs") or {}
        tokens = logprobs.get("token_logprobs") or []
        mean_lp = sum(tokens) / len(tokens) if tokens else None
        samples.append(
            RawSample(
                text=choice.get("text", ""),
                kind=kind,
                finish_reason=choice.get("finish_reason"),
                mean_logprob=mean_lp,
            )
        )
    return samples


# --------------------------------------------------------------------------
# Post-processing
# --------------------------------------------------------------------------

def truncate_solution(
    raw: str, stop_sequences: Sequence[str] = DEFAULT_STOP_SEQUENCES
) -> str:
    """Cut the sample at the earliest occurrence of any stop sequence."""
    cut = len(raw)
    for stop in stop_sequences:
        idx = raw.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    return raw[:cut]


def _starts_assert(line: str) -> bool:
    head = line.lstrip()
    return head == "assert" or head.startswith(("assert ", "assert(", "assert\t"))


def _group_statement(lines: list[str], start: int) -> tuple[str, int]:
    """Join continuation lines while brackets/quotes stay unbalanced.

    A line opening a fresh assert statement ends the group (the unbalanced
    group then fails the syntax check) unless the imbalance is an open
    string literal, so one broken statement cannot swallow its successors.
    """
    parts = [lines[start].lstrip()]
    i = start + 1
    while i < len(lines):
        depth, quote, continued = _scan("\n".join(parts))
        if depth <= 0 and quote is None and not continued:
            break
        if quote is None and _starts_assert(lines[i]):
            break
        parts.append(lines[i])
        i += 1
    return "\n".join(parts), i


def _scan(text: str) -> tuple[int, Optional[str], bool]:
    """Bracket depth, open quote (if any), and backslash continuation."""
    depth = 0
    quote: Optional[str] = None
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if text.startswith(quote, i):
                i += len(quote)
                quote = None
                continue
            i += 1
            continue
        if ch == "#":
            # Comment runs to end of line.
            nl = text.find("\n", i)
            if nl == -1:
                break
            i = nl + 1
            continue
        if ch in "\"'":
            quote = text[i : i + 3] if text.startswith(ch * 3, i) else ch
            i += len(quote)
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        i += 1
    continued = quote is None and text.rstrip("\n").endswith("\\")
    return depth, quote, continued


def _is_single_assert(stmt: str) -> bool:
    try:
        tree = ast.parse(stmt)
    except (SyntaxError, ValueError):
        return False
    return len(tree.body) == 1 and isinstance(tree.body[0], ast.Assert)


def _mentions_token(stmt: str, name: str) -> bool:
    try:
        tokens = tokenize.generate_tokens(io.StringIO(stmt).readline)
        return any(t.type == tokenize.NAME and t.string == name for t in tokens)
    except (tokenize.TokenError, IndentationError, SyntaxError):
        return False


def extract_assertions(
    raw: str,
    entry_point: str,
    limit: int = 5,
    syntax_check: Callable[[str], bool] = parse_ok,
) -> list[TestCase]:
    """Extract the first ``limit`` valid assert statements from a sample.

    A statement qualifies when it begins with the assert keyword, parses as
    a single statement, and mentions the entry point as a token. Invalid
    statements are skipped, never fatal.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    lines = raw.split("\n")
    found: list[TestCase] = []
    i = 0
    while i < len(lines) and len(found) < limit:
        if _starts_assert(lines[i]):
            stmt, i = _group_statement(lines, i)
            stmt = stmt.rstrip()
            if (
                syntax_check(stmt)
                and _is_single_assert(stmt)
                and _mentions_token(stmt, entry_point)
            ):
                found.append(
                    TestCase(
                        kind=TestKind.ASSERTION,
                        assertion=stmt,
                        origin=TestOrigin.GENERATED,
                    )
                )
        else:
            i += 1
    return found


def assertion_to_stdio(tc: TestCase, entry_point: str) -> Optional[TestCase]:
    """Convert ``assert solution("in") == "out"`` into a stdin/stdout pair.

    Generated tests arrive as assert statements even for stdio problems;
    only the mechanically convertible shape (single entry-point call on one
    string literal, compared to a string literal) survives.
    """
    if tc.kind is not TestKind.ASSERTION or not tc.assertion:
        return None
    try:
        tree = ast.parse(tc.assertion)
    except SyntaxError:
        return None
    if len(tree.body) != 1 or not isinstance(tree.body[0], ast.Assert):
        return None
    test = tree.body[0].test
    if not (isinstance(test, ast.Compare) and len(test.ops) == 1):
        return None
    if not isinstance(test.ops[0], ast.Eq):
        return None
    call, expected = test.left, test.comparators[0]
    if not (
        isinstance(call, ast.Call)
        and isinstance(call.func, ast.Name)
        and call.func.id == entry_point
        and len(call.args) == 1
        and not call.keywords
    ):
        return None
    arg = call.args[0]
    if not (isinstance(arg, ast.Constant) and isinstance(arg.value, str)):
        return None
    if not (isinstance(expected, ast.Constant) and isinstance(expected.value, str)):
        return None
    return TestCase(
        kind=TestKind.STDIO,
        stdin=arg.value,
        expected_stdout=expected.value,
        origin=tc.origin,
        id=tc.id,
    )


def postprocess_solutions(samples: Sequence[RawSample],
                          cfg: GenerationConfig) -> list[Candidate]:
    """Truncate raw samples and wrap the non-empty ones as candidates."""
    out: list[Candidate] = []
    for idx, sample in enumerate(samples):
        body = truncate_solution(sample.text, cfg.stop_sequences)
        if not body.strip():
            continue
        out.append(
            Candidate(
                id=f"s{idx}",
                body=body,
                sample_index=idx,
                logprob=sample.mean_logprob,
            )
        )
    return out


def postprocess_tests(
    samples: Sequence[RawSample],
    problem: Problem,
    cfg: GenerationConfig,
    syntax_check: Callable[[str], bool] = parse_ok,
) -> list[TestCase]:
    """Extract assertions from test samples, reattaching the prompt stub.

    Test completions continue the prompt's trailing assert keyword, so the
    stub is prefixed before scanning. For stdio problems, assertions are
    converted to stdin/stdout pairs where possible.
    """
    from .corpus import IoMode, assign_test_ids

    collected: list[TestCase] = []
    for sample in samples:
        text = sample.text
        joined = ASSERT_STUB + text if not text.startswith(ASSERT_STUB) else text
        collected.extend(
            extract_assertions(
                joined, problem.entry_point, cfg.assert_limit, syntax_check
            )
        )
    if problem.io_mode is IoMode.STDIO:
        converted = [assertion_to_stdio(tc, problem.entry_point) for tc in collected]
        collected = [tc for tc in converted if tc is not None]
    return assign_test_ids(collected, "g")
