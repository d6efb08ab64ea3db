"""Download and cache pretrained backbone / teacher weights."""

import hashlib
import logging
import os
from pathlib import Path
from typing import Optional

import httpx
from tenacity import retry, stop_after_attempt, wait_exponential

logger = logging.getLogger(__name__)

# torchvision's ImageNet checkpoints for the supported stems
TORCHVISION_WEIGHTS = {
    "resnet18": "https://download.pytorch.org/models/resnet18-f37072fd.pth",
    "resnet34": "https://download.pytorch.org/models/resnet34-b627a593.pth",
    "resnet50": "https://download.pytorch.org/models/resnet50-0676ba61.pth",
    "resnet101": "https://download.pytorch.org/models/resnet101-63fe2227.pth",
}


class WeightsDownloadError(RuntimeError):
    """Raised when a weights file cannot be fetched or fails its checksum."""
    pass


def weights_dir() -> Path:
    return Path(os.getenv("DATA_DIR", "data")) / "weights"


@retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=1, max=8), reraise=True)
def _download(url: str, client: Optional[httpx.Client] = None) -> bytes:
    if client is not None:
        r = client.get(url)
    else:
        r = httpx.get(url, timeout=120, follow_redirects=True)
    r.raise_for_status()
    content_type = r.headers.get("content-type", "")
    # login pages and error pages come back as 200 text/html
    if "text/html" in content_type:
        raise WeightsDownloadError(f"got an HTML page instead of weights from {url}")
    return r.content


def _sha256_prefix_matches(path: Path, url: str) -> bool:
    """torchvision file names carry the first hex digits of the sha256 after the last '-'."""
    stem = Path(url).stem
    if "-" not in stem:
        return True
    prefix = stem.rsplit("-", 1)[1]
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return digest.startswith(prefix)


def ensure_weights_file(url: str, dest: Optional[Path] = None, client: Optional[httpx.Client] = None) -> Path:
    """
    Ensure the weights file at `dest` exists and is non-empty.
    If missing or empty, download it (with retries) and write it.
    """
    dest = Path(dest) if dest is not None else weights_dir() / Path(url).name
    if dest.exists() and dest.stat().st_size > 0:
        logger.info(f"Using cached weights {dest} ({dest.stat().st_size // 1024} KB)")
        return dest

    dest.parent.mkdir(parents=True, exist_ok=True)
    logger.info(f"Downloading weights from {url}")
    try:
        data = _download(url, client)
    except httpx.HTTPError as e:
        raise WeightsDownloadError(f"failed to download {url}: {e}") from e

    tmp = dest.with_suffix(dest.suffix + ".part")
    tmp.write_bytes(data)
    if not _sha256_prefix_matches(tmp, url):
        tmp.unlink()
        raise WeightsDownloadError(f"checksum mismatch for {url}")
    tmp.replace(dest)
    logger.info(f"Cached weights at {dest} ({len(data) // 1024} KB)")
    return dest


def ensure_architecture_weights(architecture_id: str, client: Optional[httpx.Client] = None) -> Path:
    try:
        url = TORCHVISION_WEIGHTS[architecture_id]
    except KeyError:
        raise WeightsDownloadError(f"no known weights for {architecture_id}")
    return ensure_weights_file(url, client=client)
