"""Client side of the stateful Python kernel.

The kernel is a separate process speaking newline-delimited JSON over
stdio: one request object in, exactly one response object out.  Field
names on the wire are fixed: requests carry {op, code, name, payload},
responses carry {status, stdout, stderr, traceback, images}.

The host enforces the per-exec wall-clock timeout.  A kernel that times
out or dies is killed and respawned on the next call, with previously
preloaded images re-sent; callers see a transport error for the failed
call and a fresh (empty) namespace afterwards.
"""

from __future__ import annotations

import json
import logging
import os
import select
import subprocess
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from tacit.errors import TacitError

logger = logging.getLogger(__name__)

DEFAULT_EXEC_TIMEOUT_S = 60.0
CONTROL_TIMEOUT_S = 15.0  # ping / preload / reset should be near-instant

KERNEL_STATUSES = ("ok", "syntax_error", "runtime_error")


class KernelTransportError(TacitError, RuntimeError):
    """The kernel process died, timed out, or spoke garbage."""


@dataclass(frozen=True)
class KernelReply:
    status: str  # "ok" | "syntax_error" | "runtime_error"
    stdout: str = ""
    stderr: str = ""
    traceback: Optional[str] = None
    images: Tuple[str, ...] = ()  # base64-encoded payloads, in creation order


class KernelClient(Protocol):
    def execute(self, code: str) -> KernelReply: ...

    def preload_image(self, name: str, payload_b64: str) -> KernelReply: ...

    def reset(self) -> KernelReply: ...

    def ping(self) -> KernelReply: ...

    def close(self) -> None: ...


# ---------------------------------------------------------------------------
# Stub client: canned replies, no subprocess. Used by the primary test suite.
# ---------------------------------------------------------------------------

class StubKernelClient:
    def __init__(
        self,
        replies: Union[Mapping[str, KernelReply], Callable[[str], KernelReply], None] = None,
    ):
        self._replies = replies
        self.executed: List[str] = []
        self.preloaded: List[str] = []
        self.resets = 0

    def execute(self, code: str) -> KernelReply:
        self.executed.append(code)
        if self._replies is None:
            return KernelReply(status="ok", stdout="")
        if callable(self._replies):
            return self._replies(code)
        if code in self._replies:
            return self._replies[code]
        return KernelReply(status="ok", stdout="")

    def preload_image(self, name: str, payload_b64: str) -> KernelReply:
        self.preloaded.append(name)
        return KernelReply(status="ok")

    def reset(self) -> KernelReply:
        self.resets += 1
        return KernelReply(status="ok")

    def ping(self) -> KernelReply:
        return KernelReply(status="ok", stdout='{"ready": true}')

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Subprocess client: the real wire protocol
# ---------------------------------------------------------------------------

class _LineReader:
    """Reads newline-terminated byte lines from an fd under a deadline."""

    def __init__(self, fd: int):
        self._fd = fd
        self._buffer = bytearray()

    def readline(self, timeout_s: float) -> bytes:
        deadline = time.monotonic() + timeout_s
        while True:
            newline_at = self._buffer.find(b"\n")
            if newline_at >= 0:
                line = bytes(self._buffer[:newline_at])
                del self._buffer[: newline_at + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise KernelTransportError(f"kernel response timed out after {timeout_s:.0f}s")
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(self._fd, 65536)
            if not chunk:
                raise KernelTransportError("kernel closed its output stream")
            self._buffer.extend(chunk)


class SubprocessKernelClient:
    """Spawns the kernel executable and talks the stdio JSON protocol."""

    def __init__(
        self,
        argv: Sequence[str],
        exec_timeout_s: float = DEFAULT_EXEC_TIMEOUT_S,
    ):
        self.argv = list(argv)
        self.exec_timeout_s = exec_timeout_s
        self._proc: Optional[subprocess.Popen] = None
        self._reader: Optional[_LineReader] = None
        self._preloads: Dict[str, str] = {}  # name -> payload, replayed on respawn

    # -- process lifecycle --------------------------------------------------

    def _alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            bufsize=0,
        )
        assert self._proc.stdout is not None
        self._reader = _LineReader(self._proc.stdout.fileno())
        reply = self._request({"op": "ping"}, CONTROL_TIMEOUT_S)
        if reply.status != "ok":
            raise KernelTransportError(f"kernel failed its startup ping: {reply!r}")
        for name, payload in self._preloads.items():
            self._request({"op": "preload_image", "name": name, "payload": payload},
                          CONTROL_TIMEOUT_S)

    def _ensure(self) -> None:
        if not self._alive():
            self._kill()
            self._spawn()

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:  # already gone
                pass
        self._proc = None
        self._reader = None

    def close(self) -> None:
        if self._alive() and self._proc is not None and self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=2)
            except Exception:
                pass
        self._kill()

    # -- protocol -------------------------------------------------------------

    def _request(self, obj: dict, timeout_s: float) -> KernelReply:
        if self._proc is None or self._proc.stdin is None or self._reader is None:
            raise KernelTransportError("kernel process is not running")
        line = json.dumps(obj, ensure_ascii=False) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            self._kill()
            raise KernelTransportError(f"cannot write to kernel: {exc}") from exc
        try:
            raw = self._reader.readline(timeout_s)
        except KernelTransportError:
            self._kill()
            raise
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._kill()
            raise KernelTransportError(f"kernel sent a non-JSON line: {exc}") from exc
        status = payload.get("status")
        if status not in KERNEL_STATUSES:
            self._kill()
            raise KernelTransportError(f"kernel sent unknown status: {status!r}")
        images = payload.get("images") or []
        return KernelReply(
            status=status,
            stdout=str(payload.get("stdout", "")),
            stderr=str(payload.get("stderr", "")),
            traceback=payload.get("traceback"),
            images=tuple(str(i) for i in images),
        )

    # -- public ops ---------------------------------------------------------------

    def execute(self, code: str) -> KernelReply:
        self._ensure()
        return self._request({"op": "exec", "code": code}, self.exec_timeout_s)

    def preload_image(self, name: str, payload_b64: str) -> KernelReply:
        self._preloads[name] = payload_b64
        self._ensure()
        return self._request(
            {"op": "preload_image", "name": name, "payload": payload_b64}, CONTROL_TIMEOUT_S
        )

    def reset(self) -> KernelReply:
        self._ensure()
        return self._request({"op": "reset"}, CONTROL_TIMEOUT_S)

    def ping(self) -> KernelReply:
        self._ensure()
        return self._request({"op": "ping"}, CONTROL_TIMEOUT_S)
