"""Remote prior provider tested against an in-process HTTP server."""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from bags.errors import DataError
from bags.priors import RemoteProvider, encode_png_b64
from tests.test_renderer import identity_camera


class _Handler(BaseHTTPRequestHandler):
    # class-level knobs set per test
    requests_seen = []
    fail_first = 0
    grad_value = None
    weight = 1.0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests_seen.append(body)
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        grad = type(self).grad_value.astype("<f4").tobytes()
        payload = json.dumps(
            {"grad": base64.b64encode(grad).decode("ascii"), "weight": type(self).weight}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    httpd = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    _Handler.requests_seen = []
    _Handler.fail_first = 0
    _Handler.weight = 1.0
    yield f"http://127.0.0.1:{httpd.server_port}"
    httpd.shutdown()
    thread.join(timeout=5)


def test_remote_provider_round_trip(server, rng):
    render = rng.uniform(0.0, 1.0, (8, 8, 3))
    reference = rng.uniform(0.0, 1.0, (8, 8, 3))
    grad = rng.normal(0.0, 1.0, (8, 8, 3))
    _Handler.grad_value = grad
    _Handler.weight = 0.5

    provider = RemoteProvider(server, timeout=5.0)
    result = provider(render, reference, identity_camera(8, 8), 0.7, 123)

    assert result.weight == 0.5
    np.testing.assert_allclose(result.grad, grad.astype(np.float32), atol=1e-7)

    sent = _Handler.requests_seen[0]
    assert set(sent) == {"render", "reference", "camera", "tau", "seed"}
    assert sent["tau"] == 0.7
    assert sent["seed"] == 123
    assert set(sent["camera"]) == {"position", "look_at", "up", "fov_deg"}

    # the render travelled as a real PNG
    import io

    from PIL import Image

    decoded = np.asarray(Image.open(io.BytesIO(base64.b64decode(sent["render"]))))
    np.testing.assert_array_equal(decoded, (render * 255.0).round().astype(np.uint8))


def test_remote_provider_retries_transient_failures(server, rng):
    grad = np.zeros((4, 4, 3))
    _Handler.grad_value = grad
    _Handler.fail_first = 1

    provider = RemoteProvider(server, timeout=5.0, retries=2)
    result = provider(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), identity_camera(4, 4), 0.5, 0)
    np.testing.assert_array_equal(result.grad, 0.0)
    assert len(_Handler.requests_seen) == 2


def test_remote_provider_gives_up_after_retries(server):
    import requests

    _Handler.grad_value = np.zeros((4, 4, 3))
    _Handler.fail_first = 10
    provider = RemoteProvider(server, timeout=5.0, retries=1)
    with pytest.raises(requests.RequestException):
        provider(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), identity_camera(4, 4), 0.5, 0)


def test_remote_provider_rejects_short_payload(server):
    _Handler.grad_value = np.zeros((2, 2, 3))  # wrong size for an 4x4 render
    provider = RemoteProvider(server, timeout=5.0)
    with pytest.raises(DataError):
        provider(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), identity_camera(4, 4), 0.5, 0)


def test_png_encoding_is_exact_8bit(rng):
    import io

    from PIL import Image

    img = rng.uniform(0.0, 1.0, (5, 7, 3))
    decoded = np.asarray(Image.open(io.BytesIO(base64.b64decode(encode_png_b64(img)))))
    np.testing.assert_array_equal(decoded, (img * 255.0).round().astype(np.uint8))
