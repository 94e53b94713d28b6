"""Over-the-wire tests: a real worker process on real pipes.

The last tests drive the worker through the `tacit` package's subprocess
client and image registry — the host this worker is built to serve — to
prove both sides of the protocol agree.
"""

import base64
import io
import json
import subprocess
import sys
import time

import pytest
from PIL import Image

from tacit.tools.interpreter import SubprocessKernelClient
from tacit.tools.registry import ImageRegistry


class KernelProc:
    """Minimal lockstep driver: one request line out, one response line in."""

    def __init__(self):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "codecell"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )

    def send_line(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        raw = self.proc.stdout.readline()
        assert raw.endswith("\n"), f"kernel went silent on: {line!r}"
        return json.loads(raw)

    def request(self, obj: dict) -> dict:
        return self.send_line(json.dumps(obj))

    def close(self):
        try:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


@pytest.fixture
def kernel():
    proc = KernelProc()
    yield proc
    proc.close()


def png_b64(size=(4, 3), color=(255, 0, 0)) -> str:
    image = Image.new("RGB", size, color)
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


# ---------------------------------------------------------------------------
# Release-gate checks
# ---------------------------------------------------------------------------

def test_criterion_09_statefulness_and_reset(kernel):
    started = time.monotonic()
    assert kernel.request({"op": "ping"})["status"] == "ok"
    assert kernel.request({"op": "exec", "code": "x = 1"})["status"] == "ok"

    second = kernel.request({"op": "exec", "code": "print(x)"})
    assert second["status"] == "ok"
    assert second["stdout"] == "1\n"

    assert kernel.request({"op": "reset"})["status"] == "ok"
    after = kernel.request({"op": "exec", "code": "print(x)"})
    assert after["status"] == "runtime_error"
    assert "NameError" in after["traceback"]

    elapsed = time.monotonic() - started
    assert elapsed < 2.0, f"statefulness round trips took {elapsed:.2f}s"
    print(f"PASS: criterion 9 - persistent namespace, cleared by reset ({elapsed:.2f}s)")


def test_criterion_10_saved_image_comes_back_and_registers(kernel):
    code = "from PIL import Image\nImage.new('RGB', (5, 4), (0, 128, 255)).save('chart.png')\n"
    response = kernel.request({"op": "exec", "code": code})
    assert response["status"] == "ok"
    assert len(response["images"]) == 1

    data = base64.b64decode(response["images"][0])
    assert Image.open(io.BytesIO(data)).size == (5, 4)

    registry = ImageRegistry()
    assert registry.register_tool_image(data) == "tool_image_1"
    print("PASS: criterion 10 - one saved image, one payload, registered as tool_image_1")


MALFORMED_TEMPLATES = [
    "{truncated json %d",
    "just words %d",
    '"a bare string %d"',
    "[%d, 2, 3]",
    "%d",
    '{"no_op": %d}',
    '{"op": "warp", "n": %d}',
    '{"op": "exec", "codeless": %d}',
    '{"op": "preload_image", "name": "original_image", "n": %d}',
    "   ",
]


def test_criterion_11_protocol_totality_fuzz(kernel):
    for i in range(1000):
        line = MALFORMED_TEMPLATES[i % len(MALFORMED_TEMPLATES)]
        if "%d" in line:
            line = line % i
        response = kernel.send_line(line)
        assert response["status"] == "runtime_error", f"line {i}: {line!r}"
        assert response["traceback"].startswith("ProtocolError:"), f"line {i}: {line!r}"

    assert kernel.proc.poll() is None, "kernel died during the fuzz run"
    assert kernel.request({"op": "ping"})["status"] == "ok"
    print("PASS: criterion 11 - 1000 malformed lines, 1000 error replies, process alive")


# ---------------------------------------------------------------------------
# Other wire-level properties
# ---------------------------------------------------------------------------

def test_two_processes_share_nothing():
    one, two = KernelProc(), KernelProc()
    try:
        assert one.request({"op": "exec", "code": "x = 1"})["status"] == "ok"
        other = two.request({"op": "exec", "code": "print(x)"})
        assert other["status"] == "runtime_error"
        assert "NameError" in other["traceback"]
    finally:
        one.close()
        two.close()


def test_ping_manifest_over_the_wire(kernel):
    response = kernel.request({"op": "ping"})
    manifest = json.loads(response["stdout"])
    assert manifest["ready"] is True
    assert manifest["limits"]["exec_timeout_s"] == 60
    assert manifest["limits"]["stdout_cap_bytes"] == 1048576


def test_preload_survives_reset_over_the_wire(kernel):
    assert (
        kernel.request(
            {"op": "preload_image", "name": "original_image", "payload": png_b64()}
        )["status"]
        == "ok"
    )
    assert kernel.request({"op": "reset"})["status"] == "ok"
    response = kernel.request({"op": "exec", "code": "print(original_image.size)"})
    assert response["stdout"] == "(4, 3)\n"


def test_responses_are_single_lines_even_with_newlines_in_output(kernel):
    response = kernel.request({"op": "exec", "code": "print('a')\nprint('b')"})
    assert response["stdout"] == "a\nb\n"  # JSON escaping kept the frame intact


# ---------------------------------------------------------------------------
# Parity with the host's own client
# ---------------------------------------------------------------------------

def test_host_subprocess_client_round_trip():
    client = SubprocessKernelClient([sys.executable, "-m", "codecell"])
    try:
        assert client.ping().status == "ok"
        assert client.execute("x = 41").status == "ok"

        reply = client.execute("print(x + 1)")
        assert reply.status == "ok"
        assert reply.stdout == "42\n"

        assert client.preload_image("original_image", png_b64()).status == "ok"
        assert client.execute("print(original_image.size)").stdout == "(4, 3)\n"

        assert client.execute("def broken(:").status == "syntax_error"

        saved = client.execute(
            "from PIL import Image\nImage.new('RGB', (2, 2)).save('p.png')"
        )
        assert saved.status == "ok"
        assert len(saved.images) == 1

        assert client.reset().status == "ok"
        assert client.execute("print(x)").status == "runtime_error"
    finally:
        client.close()
