import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from wfrecon.execution import SimWorld
from wfrecon.primitives import Primitive, PrimitiveSpace


@pytest.fixture
def abc_space():
    return PrimitiveSpace([Primitive("A", "alpha"), Primitive("B", "beta"), Primitive("C", "gamma")])


@pytest.fixture
def ba_world(abc_space):
    """Omega = {A, B, C}, hidden chain B -> A, two tasks."""
    return SimWorld.build(abc_space, ["B", "A"], ["t1", "t2"])


class StubServer:
    """Chat-completions stub. ``script`` maps 1-based request number -> (status, body)."""

    def __init__(self):
        self.script = {}
        self.default = (200, {"choices": [{"message": {"content": "OK"}}]})
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                outer.requests.append({"payload": payload, "headers": dict(self.headers)})
                status, body = outer.script.get(len(outer.requests), outer.default)
                raw = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self._server.server_port}/v1/chat/completions"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


def reply(content, total_tokens=None):
    body = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if total_tokens is not None:
        body["usage"] = {"total_tokens": total_tokens}
    return 200, body


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
