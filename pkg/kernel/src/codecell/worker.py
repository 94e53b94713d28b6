"""The execution session and the line protocol around it.

One process serves one session. Requests arrive as JSON objects, one per
stdin line; every line gets exactly one JSON response line on stdout, no
matter how broken the request was. User code runs in a single persistent
namespace with its working directory pointed at a scratch directory that
is watched for image files.

Protocol (field names are the wire contract):

    {"op": "exec", "code": "..."}
    {"op": "preload_image", "name": "original_image", "payload": "<base64>"}
    {"op": "reset"}
    {"op": "ping"}

    -> {"status": "ok" | "syntax_error" | "runtime_error",
        "stdout": "...", "stderr": "...", "traceback": null | "...",
        "images": ["<base64>", ...]}
"""

import base64
import contextlib
import io
import json
import os
import re
import sys
import tempfile
import traceback
from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO

from PIL import Image

# Matplotlib must never try to open a display if user code imports it.
os.environ.setdefault("MPLBACKEND", "Agg")

PROTOCOL_VERSION = 1

# Advertised on ping. The host enforces both; the worker itself does not
# time out or truncate, so a cooperative host gets the full output.
EXEC_TIMEOUT_S = 60
STDOUT_CAP_BYTES = 1 << 20

# Names the host is allowed to bind via preload_image.
PRELOAD_NAME = re.compile(r"^(original_image(_\d+)?|tool_image_\d+)$")

# Files with these suffixes count as produced images when they appear in
# (or are rewritten into) the scratch directory during an exec.
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".gif", ".bmp", ".webp", ".tif", ".tiff")


@dataclass
class Response:
    status: str  # "ok" | "syntax_error" | "runtime_error"
    stdout: str = ""
    stderr: str = ""
    traceback: Optional[str] = None
    images: List[str] = field(default_factory=list)  # base64, production order

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "stdout": self.stdout,
                "stderr": self.stderr,
                "traceback": self.traceback,
                "images": self.images,
            },
            ensure_ascii=False,
        )


def protocol_error(note: str) -> Response:
    """A malformed request still gets a well-formed reply."""
    return Response(status="runtime_error", traceback=f"ProtocolError: {note}")


# ---------------------------------------------------------------------------
# The session: one persistent namespace plus a watched scratch directory
# ---------------------------------------------------------------------------

class Session:
    def __init__(self, scratch_root: Optional[str] = None):
        self._scratch = tempfile.mkdtemp(prefix="codecell-", dir=scratch_root)
        self._namespace: Dict[str, object] = {}
        self._preloads: Dict[str, bytes] = {}  # name -> raw bytes, survive reset
        self._seen: Dict[str, int] = {}  # path -> st_mtime_ns at last collection
        self._clear_namespace()

    @property
    def scratch_dir(self) -> str:
        return self._scratch

    def _clear_namespace(self) -> None:
        self._namespace.clear()
        self._namespace["__name__"] = "__main__"

    # -- exec -----------------------------------------------------------------

    def execute(self, code: str) -> Response:
        # Compile before touching anything: a syntax error must leave the
        # session exactly as it was, and compile() runs no user code.
        try:
            compiled = compile(code, "<cell>", "exec")
        except SyntaxError:
            return Response(status="syntax_error", traceback=traceback.format_exc(limit=0))

        before = self._scan_scratch()
        out, err = io.StringIO(), io.StringIO()
        status: str = "ok"
        trace: Optional[str] = None

        prev_cwd = os.getcwd()
        os.chdir(self._scratch)  # relative saves land in the watched directory
        try:
            with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
                try:
                    exec(compiled, self._namespace)
                except BaseException:  # user exceptions never kill the worker
                    status = "runtime_error"
                    trace = traceback.format_exc()
        finally:
            os.chdir(prev_cwd)

        images = self._collect_file_images(before)
        images.extend(self._collect_open_figures())
        return Response(
            status=status,
            stdout=out.getvalue(),
            stderr=err.getvalue(),
            traceback=trace,
            images=[base64.b64encode(data).decode("ascii") for data in images],
        )

    # -- image capture ----------------------------------------------------------

    def _scan_scratch(self) -> Dict[str, int]:
        snapshot: Dict[str, int] = {}
        for name in os.listdir(self._scratch):
            path = os.path.join(self._scratch, name)
            if os.path.isfile(path):
                snapshot[path] = os.stat(path).st_mtime_ns
        return snapshot

    def _collect_file_images(self, before: Dict[str, int]) -> List[bytes]:
        """Image files created or rewritten during the call, oldest first."""
        after = self._scan_scratch()
        produced = [
            (mtime, os.path.basename(path), path)
            for path, mtime in after.items()
            if path.lower().endswith(IMAGE_SUFFIXES) and before.get(path) != mtime
        ]
        produced.sort()  # (mtime_ns, filename) keeps the order reproducible
        self._seen = after
        payloads = []
        for _, _, path in produced:
            try:
                with open(path, "rb") as handle:
                    payloads.append(handle.read())
            except OSError:  # deleted between scan and read
                continue
        return payloads

    def _collect_open_figures(self) -> List[bytes]:
        """Render figures the cell left open, then close them all.

        Lazy on purpose: the worker never imports matplotlib itself, it
        only harvests figures if user code already pulled it in.
        """
        plt = sys.modules.get("matplotlib.pyplot")
        if plt is None:
            return []
        payloads = []
        try:
            for number in plt.get_fignums():
                buffer = io.BytesIO()
                plt.figure(number).savefig(buffer, format="png")
                payloads.append(buffer.getvalue())
        finally:
            plt.close("all")
        return payloads

    # -- preload / reset / ping -------------------------------------------------

    def preload(self, name: str, payload_b64: str) -> Response:
        if not PRELOAD_NAME.match(name):
            return Response(
                status="runtime_error",
                traceback=f"BadName: {name!r} is not a valid preload variable name",
            )
        try:
            raw = base64.b64decode(payload_b64, validate=True)
            image = Image.open(io.BytesIO(raw))
            image.load()  # force a full decode now, not at first use
        except Exception as exc:
            return Response(status="runtime_error", traceback=f"DecodeError: {exc}")
        self._preloads[name] = raw  # rebinding the same name is allowed
        self._namespace[name] = image
        return Response(status="ok")

    def reset(self) -> Response:
        self._clear_namespace()
        for path in list(self._seen) + [
            os.path.join(self._scratch, n) for n in os.listdir(self._scratch)
        ]:
            with contextlib.suppress(OSError):
                os.remove(path)
        self._seen = {}
        plt = sys.modules.get("matplotlib.pyplot")
        if plt is not None:
            plt.close("all")
        for name, raw in self._preloads.items():
            image = Image.open(io.BytesIO(raw))
            image.load()
            self._namespace[name] = image
        return Response(status="ok")

    def ping(self) -> Response:
        manifest = {
            "ready": True,
            "protocol": PROTOCOL_VERSION,
            "limits": {
                "exec_timeout_s": EXEC_TIMEOUT_S,
                "stdout_cap_bytes": STDOUT_CAP_BYTES,
            },
        }
        return Response(status="ok", stdout=json.dumps(manifest))


# ---------------------------------------------------------------------------
# Line protocol
# ---------------------------------------------------------------------------

def handle_line(session: Session, line: str) -> Response:
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return protocol_error(f"malformed JSON: {exc}")
    if not isinstance(request, dict):
        return protocol_error("request must be a JSON object")

    op = request.get("op")
    if op == "exec":
        code = request.get("code")
        if not isinstance(code, str):
            return protocol_error("exec requires a string 'code' field")
        return session.execute(code)
    if op == "preload_image":
        name = request.get("name")
        payload = request.get("payload")
        if not isinstance(name, str) or not isinstance(payload, str):
            return protocol_error("preload_image requires string 'name' and 'payload' fields")
        return session.preload(name, payload)
    if op == "reset":
        return session.reset()
    if op == "ping":
        return session.ping()
    return protocol_error(f"unknown op: {op!r}")


def serve(stdin: TextIO = None, stdout: TextIO = None) -> None:
    """Answer every request line with exactly one response line, until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = Session()
    for line in stdin:
        if line.strip():
            response = handle_line(session, line)
        else:
            response = protocol_error("empty request line")
        stdout.write(response.to_json() + "\n")
        stdout.flush()


def main() -> None:
    serve()


if __name__ == "__main__":
    main()
