from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

import avua
from avua.gateway import Gateway, ScriptEntry, ScriptedBackend
from avua.toolbox import SyntheticAdapter, SyntheticVideoSpec, standard_toolbox

FIXTURES = Path(avua.__file__).parent / "fixtures"
SUITE = FIXTURES / "suite.json"


def seq(tag: str, *responses: str) -> list[ScriptEntry]:
    return [ScriptEntry("", r, max_uses=1, tag=tag) for r in responses]


def scripted_gateway(*groups: list[ScriptEntry], strict: bool = True) -> Gateway:
    return Gateway(ScriptedBackend([e for g in groups for e in g], strict=strict))


@pytest.fixture
def ego_spec() -> SyntheticVideoSpec:
    return SyntheticVideoSpec.load(FIXTURES / "videos" / "egoschema_demo.json")


@pytest.fixture
def ego_toolbox(ego_spec):
    return standard_toolbox(SyntheticAdapter(ego_spec))


@pytest.fixture
def json_server():
    """Local HTTP server answering POSTs with a handler-supplied JSON body.

    Yields ``(url, calls, set_reply)``; ``set_reply(fn)`` installs
    ``fn(path, body) -> (status, payload)``.
    """
    calls: list[tuple[str, dict]] = []
    state = {"reply": lambda path, body: (200, {})}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            n = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(n) or b"{}")
            calls.append((self.path, body))
            status, payload = state["reply"](self.path, body)
            raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}"
    yield url, calls, lambda fn: state.__setitem__("reply", fn)
    server.shutdown()
    server.server_close()
