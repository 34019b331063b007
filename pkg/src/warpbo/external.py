"""Process-boundary client for external black-box evaluators.

A child process speaks a line-delimited JSON protocol on stdio: one
request per line, one response per line, ids answered in request order.

    request:  {"id": <int>, "x": [..], "z": [tau, eps], "seed": <int>}
    response: {"id": <int>, "y": <real>, "cost": <real, optional>}

Any stdout line that is not a JSON object with an "id" field is treated as
a log line and ignored.  Timeouts, malformed responses, and child exits
surface as EvaluationError with captured diagnostics.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
import time
from collections import deque
from typing import Sequence

import numpy as np

from .globalopt import Box
from .objectives import CostModel, ObjectiveSpec

__all__ = ["EvaluationError", "ProtocolError", "EvaluationTimeout", "ExternalEvaluator", "external_objective"]

_EOF = object()


class EvaluationError(RuntimeError):
    """An objective evaluation could not produce a value."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)


class ProtocolError(EvaluationError):
    """The child produced a response that violates the wire protocol."""


class EvaluationTimeout(EvaluationError):
    """The child failed to answer within the configured timeout."""


class ExternalEvaluator:
    """Serializes evaluations over one persistent child process."""

    def __init__(
        self,
        command: Sequence[str],
        timeout_seconds: float,
        cost_model: CostModel | None = None,
    ) -> None:
        if timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        self._command = list(command)
        self._timeout = timeout_seconds
        self._cost_model = cost_model if cost_model is not None else CostModel()
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._stderr_tail: deque[str] = deque(maxlen=50)
        self._next_id = 0
        self._lock = threading.Lock()

    # -- child lifecycle ----------------------------------------------------

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is not None and self._proc.poll() is None:
            return self._proc
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        threading.Thread(
            target=self._drain, args=(self._proc.stdout, self._lines), daemon=True
        ).start()
        threading.Thread(
            target=self._drain_stderr, args=(self._proc.stderr,), daemon=True
        ).start()
        return self._proc

    @staticmethod
    def _drain(stream, sink: queue.Queue) -> None:
        for line in stream:
            sink.put(line)
        sink.put(_EOF)

    def _drain_stderr(self, stream) -> None:
        for line in stream:
            self._stderr_tail.append(line.rstrip("\n"))

    def close(self) -> None:
        proc = self._proc
        self._proc = None
        if proc is not None and proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "ExternalEvaluator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- evaluation ----------------------------------------------------------

    def _fail(self, kind: type, message: str) -> EvaluationError:
        self.close()
        return kind(message, diagnostics=tuple(self._stderr_tail))

    def evaluate(self, x: np.ndarray, z: np.ndarray, seed: int) -> tuple[float, float]:
        with self._lock:
            proc = self._ensure_started()
            request_id = self._next_id
            self._next_id += 1
            request = {
                "id": request_id,
                "x": np.asarray(x, dtype=float).tolist(),
                "z": np.asarray(z, dtype=float).tolist(),
                "seed": int(seed),
            }
            try:
                assert proc.stdin is not None
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise self._fail(EvaluationError, f"child rejected request: {exc}")
            return self._read_response(request_id, np.asarray(z, dtype=float))

    def _read_response(self, request_id: int, z: np.ndarray) -> tuple[float, float]:
        deadline = time.monotonic() + self._timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise self._fail(
                    EvaluationTimeout,
                    f"no response to request {request_id} within {self._timeout}s; "
                    "child terminated",
                )
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                continue
            if line is _EOF:
                code = self._proc.wait() if self._proc is not None else None
                raise self._fail(
                    EvaluationError,
                    f"child exited (code {code}) before answering request {request_id}",
                )
            stripped = line.strip()
            if not stripped:
                continue
            try:
                msg = json.loads(stripped)
            except json.JSONDecodeError:
                continue  # non-JSON output is a log line
            if not isinstance(msg, dict) or "id" not in msg:
                continue  # JSON but not a response; also a log line
            if msg["id"] != request_id:
                raise self._fail(
                    ProtocolError,
                    f"out-of-order response (expected id {request_id}): {stripped!r}",
                )
            y = msg.get("y")
            if not isinstance(y, (int, float)) or isinstance(y, bool) or not np.isfinite(y):
                raise self._fail(
                    ProtocolError, f"malformed response (bad or missing 'y'): {stripped!r}"
                )
            cost = msg.get("cost")
            if cost is None:
                return float(y), self._cost_model.cost(z)
            if not isinstance(cost, (int, float)) or isinstance(cost, bool) or cost <= 0:
                raise self._fail(
                    ProtocolError, f"malformed response (bad 'cost'): {stripped!r}"
                )
            return float(y), float(cost)


def external_objective(
    command: Sequence[str],
    timeout_seconds: float,
    design_dim: int,
    name: str = "external",
    cost_model: CostModel | None = None,
    known_optimum: tuple[np.ndarray, float] | None = None,
) -> ObjectiveSpec:
    """Objective backed by a child process speaking the line protocol."""
    cm = cost_model if cost_model is not None else CostModel()
    client = ExternalEvaluator(command, timeout_seconds, cost_model=cm)
    return ObjectiveSpec(
        name=name,
        design_box=Box.unit(design_dim),
        evaluate=client.evaluate,
        cost_model=cm,
        known_optimum=known_optimum,
        close=client.close,
    )
