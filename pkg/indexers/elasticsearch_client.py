import os
from typing import Dict, Iterable, Optional, Tuple
from urllib.parse import urlparse

from elasticsearch import Elasticsearch, helpers
from tenacity import retry, stop_after_attempt, wait_exponential


def get_es_url() -> str:
    return os.getenv("ELASTICSEARCH_URL", "http://localhost:9200")


def gallery_index_name() -> str:
    return os.getenv("GALLERY_INDEX", "vehicle_gallery")


def _credentials(url: str) -> Tuple[str, Optional[Tuple[str, str]]]:
    """Split ELASTICSEARCH_URL into a bare host URL and optional basic-auth pair.

    Userinfo embedded in the URL wins over ELASTICSEARCH_USER / ELASTICSEARCH_PASSWORD.
    """
    parsed = urlparse(url)
    if parsed.username and parsed.password:
        port = parsed.port or (443 if parsed.scheme == "https" else 80)
        return f"{parsed.scheme}://{parsed.hostname}:{port}", (parsed.username, parsed.password)

    user = os.getenv("ELASTICSEARCH_USER")
    password = os.getenv("ELASTICSEARCH_PASSWORD")
    if user and password:
        return url, (user, password)
    return url, None


def get_client() -> Elasticsearch:
    """Build a client for the gallery cluster.

    Gallery bulk loads carry one dense vector per detection, so the request
    timeout is configurable (ELASTICSEARCH_TIMEOUT, seconds).
    """
    host, auth = _credentials(get_es_url())
    options: Dict = {"request_timeout": float(os.getenv("ELASTICSEARCH_TIMEOUT", "30"))}
    if auth is not None:
        options["basic_auth"] = auth
        options["verify_certs"] = os.getenv("ELASTICSEARCH_VERIFY_CERTS", "false").lower() == "true"
    return Elasticsearch(host, **options)


def ping(es: Optional[Elasticsearch] = None) -> bool:
    """Return True if the Elasticsearch cluster is reachable, False otherwise."""
    try:
        return (es or get_client()).ping()
    except Exception:
        return False


@retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=1, max=8), reraise=True)
def ensure_index(name: str, mapping: Dict, es: Optional[Elasticsearch] = None) -> None:
    es = es or get_client()
    if not es.indices.exists(index=name):
        es.indices.create(index=name, **mapping)


def bulk_index(index: str, docs: Iterable[Dict], es: Optional[Elasticsearch] = None) -> int:
    """Index documents, skipping any whose _id already exists. Returns the number created."""
    es = es or get_client()
    actions = []
    for doc in docs:
        doc = dict(doc)
        doc_id = doc.pop("_id", None)
        actions.append({
            "_op_type": "create",
            "_index": index,
            "_id": doc_id,
            "_source": doc,
        })
    success, errors = helpers.bulk(es, actions, raise_on_error=False)
    real_errors = [e for e in errors if e.get("create", {}).get("status") != 409]
    if real_errors:
        raise RuntimeError(f"Bulk index errors: {real_errors[:5]}")
    return success
