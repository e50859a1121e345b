#!/usr/bin/env python3
"""Line-protocol worker: evaluate one solution against one test per request.

Reads newline-delimited JSON requests on stdin and writes exactly one JSON
response line per request, even for malformed input. Spawned and
supervised by the ranking engine; several workers may run side by side,
each strictly single-threaded.

Protocol (bit-exact):

  request  {"cmd": "exec"|"parse"|"reset", "solution": str, "test": str,
            "timeout_ms": int, "io_mode": "assertion"|"stdio", "stdin": str?}
  response {"outcome": "pass"|"assertion_failed"|"runtime_error"|"timeout"|
            "syntax_error"|"wrong_stdout", "wall_ms": number, "detail": str?}

``exec`` in assertion mode runs the solution source and then the test
statement in a fresh, scrubbed namespace; a clean finish is ``pass``, an
AssertionError is ``assertion_failed`` (detail carries the message), any
other exception is ``runtime_error``, and exceeding ``timeout_ms`` is
``timeout``. In stdio mode the entry function ``solution`` is called on
the request's ``stdin`` text and the produced stdout (captured prints plus
a returned string, if any) is compared to ``test`` after stripping
trailing whitespace per line and trailing newlines; ``detail`` carries the
produced text on mismatch and any partial output on timeout. ``parse``
only compiles the ``solution`` field. ``reset`` clears cached state.

Safety model: candidate code is untrusted but the worker is not a strong
sandbox. Interpreter-level isolation only: fresh namespaces per request,
stream redirection so candidate I/O can never corrupt the protocol pipe,
and an interval-timer interrupt for pure-compute loops. The supervising
parent enforces the hard kill and any OS resource limits.
"""

import io
import json
import os
import signal
import sys
import time

DETAIL_LIMIT = 4096

OUTCOME_PASS = "pass"
OUTCOME_ASSERTION = "assertion_failed"
OUTCOME_RUNTIME = "runtime_error"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_SYNTAX = "syntax_error"
OUTCOME_WRONG_STDOUT = "wrong_stdout"


class _Interrupt(BaseException):
    """Raised by the alarm handler; BaseException so candidate ``except
    Exception`` blocks cannot swallow the timeout."""


def _on_alarm(signum, frame):
    raise _Interrupt()


def _truncate(text):
    if text is None:
        return None
    return text if len(text) <= DETAIL_LIMIT else text[:DETAIL_LIMIT]


def _normalize_stdout(text):
    lines = [line.rstrip() for line in text.split("\n")]
    return "\n".join(lines).rstrip("\n")


def _fresh_namespace():
    return {"__name__": "__main__", "__builtins__": __builtins__}


class _Streams:
    """Swap candidate-visible streams in and out around an execution."""

    def __init__(self, stdin_text=""):
        self._stdin_text = stdin_text
        self.captured = io.StringIO()

    def __enter__(self):
        self._old = (sys.stdin, sys.stdout, sys.stderr)
        sys.stdin = io.StringIO(self._stdin_text)
        sys.stdout = self.captured
        sys.stderr = io.StringIO()
        return self

    def __exit__(self, *exc):
        sys.stdin, sys.stdout, sys.stderr = self._old
        return False


def _run_with_timeout(timeout_ms, fn):
    """Run fn under an interval-timer interrupt; returns (kind, payload).

    kind is "ok", "timeout", or "error"; payload is fn's result, the
    partial stdout, or the exception.
    """
    seconds = max(timeout_ms, 1) / 1000.0
    old_handler = signal.signal(signal.SIGALRM, _on_alarm)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        return "ok", fn()
    except _Interrupt:
        return "timeout", None
    except BaseException as exc:  # SystemExit included: never leave the loop
        return "error", exc
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old_handler)


def _error_detail(exc):
    name = type(exc).__name__
    message = str(exc)
    return _truncate(f"{name}: {message}" if message else name)


def _exec_assertion(solution, test, timeout_ms):
    try:
        solution_code = compile(solution, "<solution>", "exec")
        test_code = compile(test, "<test>", "exec")
    except (SyntaxError, ValueError) as exc:
        return OUTCOME_SYNTAX, _error_detail(exc)

    namespace = _fresh_namespace()
    with _Streams() as streams:
        def run():
            exec(solution_code, namespace)
            exec(test_code, namespace)

        kind, payload = _run_with_timeout(timeout_ms, run)
    if kind == "timeout":
        return OUTCOME_TIMEOUT, _truncate(streams.captured.getvalue()) or None
    if kind == "error":
        if isinstance(payload, AssertionError):
            return OUTCOME_ASSERTION, _truncate(str(payload)) or None
        return OUTCOME_RUNTIME, _error_detail(payload)
    return OUTCOME_PASS, None


def _exec_stdio(solution, expected_stdout, stdin_text, timeout_ms):
    try:
        solution_code = compile(solution, "<solution>", "exec")
    except (SyntaxError, ValueError) as exc:
        return OUTCOME_SYNTAX, _error_detail(exc)

    namespace = _fresh_namespace()
    with _Streams(stdin_text) as streams:
        def run():
            exec(solution_code, namespace)
            entry = namespace.get("solution")
            if not callable(entry):
                raise NameError("no callable named 'solution' was defined")
            return entry(stdin_text)

        kind, payload = _run_with_timeout(timeout_ms, run)
    produced = streams.captured.getvalue()
    if kind == "timeout":
        return OUTCOME_TIMEOUT, _truncate(produced) or None
    if kind == "error":
        return OUTCOME_RUNTIME, _error_detail(payload)
    if isinstance(payload, str):
        produced += payload
    if _normalize_stdout(produced) == _normalize_stdout(expected_stdout):
        return OUTCOME_PASS, None
    return OUTCOME_WRONG_STDOUT, _truncate(produced)


def _parse_only(snippet, timeout_ms):
    def run():
        compile(snippet, "<snippet>", "exec")

    kind, payload = _run_with_timeout(timeout_ms or 5000, run)
    if kind == "timeout":
        return OUTCOME_TIMEOUT, None
    if kind == "error":
        if isinstance(payload, (SyntaxError, ValueError)):
            return OUTCOME_SYNTAX, _error_detail(payload)
        return OUTCOME_RUNTIME, _error_detail(payload)
    return OUTCOME_PASS, None


def handle(request):
    cmd = request.get("cmd")
    if cmd == "reset":
        return OUTCOME_PASS, None
    if cmd == "parse":
        return _parse_only(request.get("solution", ""), request.get("timeout_ms", 5000))
    if cmd == "exec":
        solution = request.get("solution", "")
        test = request.get("test", "")
        timeout_ms = int(request.get("timeout_ms", 100))
        if request.get("io_mode") == "stdio":
            return _exec_stdio(solution, test, request.get("stdin", ""), timeout_ms)
        return _exec_assertion(solution, test, timeout_ms)
    raise ValueError(f"unknown cmd {cmd!r}")


def serve_loop(reader, writer):
    for line in reader:
        if not line.strip():
            continue
        started = time.perf_counter()
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be an object")
            outcome, detail = handle(request)
        except BaseException:
            outcome, detail = OUTCOME_RUNTIME, "protocol"
        wall_ms = round((time.perf_counter() - started) * 1000.0, 3)
        response = {"outcome": outcome, "wall_ms": wall_ms}
        if detail is not None:
            response["detail"] = detail
        writer.write(json.dumps(response, ensure_ascii=False) + "\n")
        writer.flush()


def main():
    # Keep a private handle on the real stdout for protocol responses and
    # point fd 1 at /dev/null so candidate os-level writes go nowhere.
    protocol_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, 1)
    os.close(devnull)
    sys.stdout = open(os.devnull, "w", encoding="utf-8")
    serve_loop(sys.stdin, protocol_out)


if __name__ == "__main__":
    main()
