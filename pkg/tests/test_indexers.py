import numpy as np
import pytest

from datamodel.errors import ContractError
from evaluation.matching import GalleryDetections, GalleryFrame
from indexers import elasticsearch_client
from indexers.elasticsearch_client import bulk_index, ensure_index, gallery_index_name, ping
from indexers.gallery import gallery_documents, gallery_stats, index_gallery, search_gallery
from indexers.mappings import gallery_mapping
from tests.conftest import FakeElasticsearch, make_frame, make_manifest


@pytest.fixture
def gallery_and_manifest():
    manifest = make_manifest([
        make_frame("f1", [((0, 0, 10, 10), 1)], weather="night"),
        make_frame("f2", [((0, 0, 10, 10), 1)], camera_id="c001"),
    ])
    gallery = GalleryDetections()
    gallery.add(GalleryFrame("f1", [[0, 0, 10, 10], [5, 5, 20, 20]], [0.9, 0.3], [[1.0, 0.0], [0.0, 1.0]]))
    gallery.add(GalleryFrame("f2", [], [], np.zeros((0, 2))))
    return gallery, manifest


def test_index_name_from_environment(monkeypatch):
    assert gallery_index_name() == "vehicle_gallery"
    monkeypatch.setenv("GALLERY_INDEX", "vehicle_gallery_v2")
    assert gallery_index_name() == "vehicle_gallery_v2"


def test_credentials_from_url_userinfo(monkeypatch):
    monkeypatch.setenv("ELASTICSEARCH_USER", "other")
    monkeypatch.setenv("ELASTICSEARCH_PASSWORD", "other")
    host, auth = elasticsearch_client._credentials("https://elastic:pw@es.local/")
    assert host == "https://es.local:443"
    assert auth == ("elastic", "pw")


def test_credentials_from_environment(monkeypatch):
    monkeypatch.setenv("ELASTICSEARCH_USER", "elastic")
    monkeypatch.setenv("ELASTICSEARCH_PASSWORD", "pw")
    assert elasticsearch_client._credentials("http://localhost:9200") == ("http://localhost:9200", ("elastic", "pw"))


def test_credentials_absent(monkeypatch):
    monkeypatch.delenv("ELASTICSEARCH_USER", raising=False)
    monkeypatch.delenv("ELASTICSEARCH_PASSWORD", raising=False)
    assert elasticsearch_client._credentials("http://localhost:9200") == ("http://localhost:9200", None)


def test_mapping_declares_vector_width():
    mapping = gallery_mapping(256)
    props = mapping["mappings"]["properties"]
    assert props["embedding"]["type"] == "dense_vector"
    assert props["embedding"]["dims"] == 256
    assert props["frame_id"]["type"] == "keyword"


def test_documents_one_per_detection(gallery_and_manifest):
    gallery, manifest = gallery_and_manifest
    docs = list(gallery_documents(gallery, manifest, model_tag="toy-40"))
    assert [d["_id"] for d in docs] == ["toy-40:f1:0", "toy-40:f1:1"]
    assert docs[0]["weather"] == "night"
    assert docs[0]["camera_id"] == "c000"
    assert docs[1]["box"] == [5.0, 5.0, 20.0, 20.0]
    assert docs[1]["score"] == pytest.approx(0.3)
    assert [d["_id"] for d in gallery_documents(gallery, manifest)] == ["f1:0", "f1:1"]


def test_index_gallery_creates_index_then_bulk_loads(gallery_and_manifest, monkeypatch):
    gallery, manifest = gallery_and_manifest
    es = FakeElasticsearch()
    sent = []

    def fake_bulk(client, actions, raise_on_error=False):
        sent.extend(actions)
        return len(sent), []

    monkeypatch.setattr(elasticsearch_client.helpers, "bulk", fake_bulk)
    assert index_gallery(gallery, manifest, index="g", es=es) == 2
    assert es.indices.created["g"]["mappings"]["properties"]["embedding"]["dims"] == 2
    assert {a["_op_type"] for a in sent} == {"create"}
    assert "_id" not in sent[0]["_source"]


def test_empty_gallery_indexes_nothing(monkeypatch):
    assert index_gallery(GalleryDetections(), make_manifest([]), es=FakeElasticsearch()) == 0


def test_bulk_ignores_existing_documents(monkeypatch):
    monkeypatch.setattr(
        elasticsearch_client.helpers, "bulk", lambda es, actions, raise_on_error: (1, [{"create": {"status": 409}}])
    )
    assert bulk_index("g", [{"_id": "a", "x": 1}, {"_id": "b", "x": 2}], es=object()) == 1

    monkeypatch.setattr(
        elasticsearch_client.helpers, "bulk", lambda es, actions, raise_on_error: (0, [{"create": {"status": 400}}])
    )
    with pytest.raises(RuntimeError):
        bulk_index("g", [{"_id": "a"}], es=object())


def test_existing_index_is_left_alone():
    es = FakeElasticsearch()
    es.indices.created["g"] = {"mappings": "old"}
    ensure_index("g", gallery_mapping(4), es=es)
    assert es.indices.created["g"] == {"mappings": "old"}


def test_search_normalizes_query_and_shifts_scores():
    es = FakeElasticsearch(hits=[{"_id": "f1:0", "_score": 1.8, "_source": {"frame_id": "f1", "score": 0.9}}])
    hits = search_gallery([3.0, 4.0], k=5, index="g", min_score=0.5, es=es)
    assert hits == [{"id": "f1:0", "similarity": pytest.approx(0.8), "frame_id": "f1", "score": 0.9}]

    body = es.searches[0]
    assert body["index"] == "g"
    assert body["size"] == 5
    script = body["query"]["script_score"]
    assert script["script"]["params"]["q"] == pytest.approx([0.6, 0.8])
    assert script["query"] == {"range": {"score": {"gte": 0.5}}}
    assert body["_source"] == {"excludes": ["embedding"]}


def test_zero_query_is_rejected():
    es = FakeElasticsearch()
    with pytest.raises(ContractError):
        search_gallery([0.0, 0.0], es=es)
    assert es.searches == []


def test_stats_from_aggregations():
    es = FakeElasticsearch(
        total=12,
        aggregations={"frames": {"value": 5}, "weather": {"buckets": [{"key": "day", "doc_count": 9}]}},
    )
    assert gallery_stats(index="g", es=es) == {"detections": 12, "frames": 5, "weather": {"day": 9}}


def test_ping_swallows_errors():
    class Down:
        def ping(self):
            raise ConnectionError("refused")

    assert ping(Down()) is False
    assert ping(FakeElasticsearch()) is True
