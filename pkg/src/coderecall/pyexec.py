"""Clients for the sandboxed interpreter oracle.

The oracle itself is an external process (any implementation of the
line-delimited JSON protocol below); this module holds the client side plus
an in-process stand-in that evaluates only the generated assignment-trace
grammar, which keeps the harness fully runnable when no interpreter oracle
is installed.

Protocol (one JSON object per line over the child's stdin/stdout):

  handshake (child -> client, once):
      {"type": "hello", "protocol": 1, "name": ..., "version": ...}
  request  (client -> child):
      {"id": str, "source": str, "args_literal": str, "timeout_ms": int}
  response (child -> client):
      {"id": str, "status": "ok" | "error" | "timeout",
       "value_literal": str?, "error_kind": str?, "message": str?}

Responses correlate to requests by id and arrive in order. A child that
stops answering is killed and respawned on the next request.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import uuid
from dataclasses import dataclass

from . import semtrace
from .scoring import ParseError, parse_literal

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
STATUS_OK = "ok"
STATUS_ERROR = "error"
STATUS_TIMEOUT = "timeout"

_GRACE_S = 5.0


class ExecutorError(RuntimeError):
    """The executor process could not be started or spoke garbage."""


@dataclass(frozen=True)
class ExecRequest:
    id: str
    source: str
    args_literal: str
    timeout_ms: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "source": self.source,
                "args_literal": self.args_literal,
                "timeout_ms": self.timeout_ms,
            }
        )


@dataclass(frozen=True)
class ExecResponse:
    id: str
    status: str
    value_literal: str | None = None
    error_kind: str | None = None
    message: str | None = None


class ProtocolExecutor:
    """Line-JSON client that owns one child process implementing the oracle."""

    def __init__(self, command: list[str], *, handshake_timeout_s: float = 15.0):
        self.command = list(command)
        self.handshake_timeout_s = handshake_timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._lock = threading.Lock()

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        lines: queue.Queue = queue.Queue()
        self._lines = lines

        def pump(stream, sink):
            for line in stream:
                sink.put(line)
            sink.put(None)  # EOF marker

        threading.Thread(target=pump, args=(self._proc.stdout, lines), daemon=True).start()
        hello = self._next_line(self.handshake_timeout_s)
        if hello is None:
            self._kill()
            raise ExecutorError(f"no handshake from {self.command!r}")
        try:
            record = json.loads(hello)
        except json.JSONDecodeError as exc:
            self._kill()
            raise ExecutorError(f"bad handshake line: {hello!r}") from exc
        if record.get("type") != "hello" or record.get("protocol") != PROTOCOL_VERSION:
            self._kill()
            raise ExecutorError(f"unsupported executor handshake: {record}")
        log.info("executor up: %s", record.get("name", "?"))

    def _next_line(self, timeout_s: float) -> str | None:
        assert self._lines is not None
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            return None
        return line

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._lines = None

    def _alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def execute(self, source: str, args_literal: str, *, timeout_ms: int = 5000) -> ExecResponse:
        """Run f(args) in the child; kills and replaces it when it hangs."""
        request = ExecRequest(
            id=uuid.uuid4().hex,
            source=source,
            args_literal=args_literal,
            timeout_ms=timeout_ms,
        )
        with self._lock:
            if not self._alive():
                self._kill()
                self._spawn()
            assert self._proc is not None and self._proc.stdin is not None
            try:
                self._proc.stdin.write(request.to_json() + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._kill()
                return ExecResponse(id=request.id, status=STATUS_ERROR, error_kind="ExecutorDied",
                                    message="executor pipe closed")
            deadline_s = timeout_ms / 1000.0 + _GRACE_S
            while True:
                line = self._next_line(deadline_s)
                if line is None:
                    # hung or dead child: replace it, report a timeout
                    self._kill()
                    return ExecResponse(id=request.id, status=STATUS_TIMEOUT,
                                        message="no response within client deadline")
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("executor emitted a non-JSON line; ignoring")
                    continue
                if record.get("id") != request.id:
                    log.warning("discarding stale executor response %s", record.get("id"))
                    continue
                return ExecResponse(
                    id=record["id"],
                    status=record.get("status", STATUS_ERROR),
                    value_literal=record.get("value_literal"),
                    error_kind=record.get("error_kind"),
                    message=record.get("message"),
                )

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SemTraceGrammarExecutor:
    """In-process oracle for the generated assignment-trace grammar only.

    Replays rendered (possibly line-removed) task sources without an
    interpreter; anything outside that grammar comes back as an error so
    the caller knows a real interpreter oracle is required.
    """

    def execute(self, source: str, args_literal: str, *, timeout_ms: int = 5000) -> ExecResponse:
        request_id = uuid.uuid4().hex
        try:
            semtrace.parse_source(source, strict=False)
        except semtrace.SemTraceError as exc:
            return ExecResponse(id=request_id, status=STATUS_ERROR, error_kind="OutsideGrammar", message=str(exc))
        try:
            value = parse_literal(args_literal).value
        except ParseError as exc:
            return ExecResponse(id=request_id, status=STATUS_ERROR, error_kind="BadArgs", message=str(exc))
        if not isinstance(value, int) or isinstance(value, bool):
            return ExecResponse(id=request_id, status=STATUS_ERROR, error_kind="BadArgs",
                                message="grammar executor takes a single integer argument")
        outcome = semtrace.evaluate_source(source, value)
        if outcome.status != "ok":
            return ExecResponse(id=request_id, status=STATUS_ERROR, error_kind=outcome.error_kind)
        return ExecResponse(id=request_id, status=STATUS_OK, value_literal=outcome.value_literal)

    def close(self) -> None:
        pass
