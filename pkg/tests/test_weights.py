import hashlib

import httpx
import pytest
from tenacity import wait_none

from providers import weights
from providers.weights import WeightsDownloadError, ensure_architecture_weights, ensure_weights_file, weights_dir

PAYLOAD = b"\x80\x02fake checkpoint bytes"
PREFIX = hashlib.sha256(PAYLOAD).hexdigest()[:8]


@pytest.fixture(autouse=True)
def _no_retry_wait(monkeypatch):
    monkeypatch.setattr(weights._download.retry, "wait", wait_none())


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def _serve(payload=PAYLOAD, content_type="application/octet-stream", status=200):
    calls = []

    def handler(request):
        calls.append(str(request.url))
        return httpx.Response(status, content=payload, headers={"content-type": content_type})

    return calls, _client(handler)


def test_download_then_cache(tmp_path):
    calls, client = _serve()
    url = f"https://weights.test/models/tiny-{PREFIX}.pth"
    path = ensure_weights_file(url, tmp_path / "tiny.pth", client=client)
    assert path.read_bytes() == PAYLOAD
    assert ensure_weights_file(url, tmp_path / "tiny.pth", client=client) == path
    assert len(calls) == 1
    assert not (tmp_path / "tiny.pth.part").exists()


def test_default_destination_is_the_weights_dir():
    _, client = _serve()
    path = ensure_weights_file(f"https://weights.test/tiny-{PREFIX}.pth", client=client)
    assert path == weights_dir() / f"tiny-{PREFIX}.pth"
    assert path.exists()


def test_checksum_mismatch(tmp_path):
    _, client = _serve()
    with pytest.raises(WeightsDownloadError, match="checksum"):
        ensure_weights_file("https://weights.test/tiny-deadbeef.pth", tmp_path / "w.pth", client=client)
    assert not (tmp_path / "w.pth").exists()
    assert not (tmp_path / "w.pth.part").exists()


def test_html_page_is_refused(tmp_path):
    calls, client = _serve(b"<html>login</html>", content_type="text/html; charset=utf-8")
    with pytest.raises(WeightsDownloadError, match="HTML"):
        ensure_weights_file("https://weights.test/plain.pth", tmp_path / "w.pth", client=client)
    assert len(calls) == 3


def test_http_errors_are_wrapped(tmp_path):
    calls, client = _serve(b"gone", status=404)
    with pytest.raises(WeightsDownloadError):
        ensure_weights_file("https://weights.test/plain.pth", tmp_path / "w.pth", client=client)
    assert len(calls) == 3


def test_unknown_architecture():
    with pytest.raises(WeightsDownloadError):
        ensure_architecture_weights("vgg16")
