import orjson
import pytest

from datamodel.errors import IntegrityError, ManifestParseError
from datamodel.manifest import load_manifest, load_queries, validate_split_pair, write_manifest, write_queries
from datamodel.records import BoxAnnotation, QueryRecord, Split
from tests.conftest import make_frame, make_manifest


@pytest.fixture
def two_frames():
    return [
        make_frame("f1", [((0, 0, 10, 10), 1), ((20, 20, 40, 40), 0)]),
        make_frame("f2", [((5, 5, 15, 25), 2)], camera_id="c001"),
    ]


def test_write_then_load_manifest(tmp_path, two_frames):
    manifest = make_manifest(two_frames, split=Split.TRAIN)
    path = write_manifest(manifest, tmp_path / "train.jsonl")
    loaded = load_manifest(path)
    assert loaded == manifest
    assert len(loaded.frames) == 2
    assert loaded.num_boxes == 3


def test_written_manifest_is_canonical(tmp_path, two_frames):
    manifest = make_manifest(two_frames)
    first = write_manifest(manifest, tmp_path / "a.jsonl").read_bytes()
    second = write_manifest(load_manifest(tmp_path / "a.jsonl"), tmp_path / "b.jsonl").read_bytes()
    assert first == second
    assert first.endswith(b"\n")


def test_inverted_box_reports_its_line(tmp_path, two_frames):
    path = write_manifest(make_manifest(two_frames), tmp_path / "m.jsonl")
    lines = path.read_bytes().splitlines()
    record = orjson.loads(lines[2])
    record["annotations"][0]["box"] = [15, 5, 5, 25]
    lines[2] = orjson.dumps(record)
    path.write_bytes(b"\n".join(lines) + b"\n")
    with pytest.raises(ManifestParseError) as exc:
        load_manifest(path)
    assert exc.value.line_no == 3


def test_wrong_header_kind(tmp_path, two_frames):
    path = write_manifest(make_manifest(two_frames), tmp_path / "m.jsonl")
    lines = path.read_bytes().splitlines()
    lines[0] = orjson.dumps({"kind": "queries", "schema_version": 1})
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(ManifestParseError) as exc:
        load_manifest(path)
    assert exc.value.line_no == 1


def test_box_outside_frame_is_rejected():
    with pytest.raises(ValueError):
        make_frame("f", [((90, 90, 110, 100), 1)])


def test_identities_must_be_contiguous():
    frames = [make_frame("f1", [((0, 0, 10, 10), 1)]), make_frame("f2", [((0, 0, 10, 10), 3)])]
    with pytest.raises(ValueError):
        make_manifest(frames)


def test_split_pair_sharing_identity(two_frames):
    train = make_manifest(two_frames, split=Split.TRAIN, remap={"7": 1, "8": 2})
    test = make_manifest(two_frames, split=Split.TEST, remap={"7": 1, "9": 2})
    with pytest.raises(IntegrityError) as exc:
        validate_split_pair(train, test)
    assert exc.value.shared_identities == ["7"]


def test_load_manifest_checks_counterpart(tmp_path, two_frames):
    train = make_manifest(two_frames, split=Split.TRAIN, remap={"7": 1, "8": 2})
    test = make_manifest(two_frames, split=Split.TEST, remap={"7": 1, "9": 2})
    path = write_manifest(test, tmp_path / "test.jsonl")
    with pytest.raises(IntegrityError):
        load_manifest(path, counterpart=train)


def test_queries_reference_known_frames(tmp_path, two_frames):
    manifest = make_manifest(two_frames)
    query = QueryRecord(
        query_id="q1",
        source_frame_id="f2",
        box=BoxAnnotation(box=(5, 5, 15, 25), identity=2, camera_id="c001"),
        crop_path="queries/q1.png",
    )
    path = write_queries([query], tmp_path / "queries.jsonl", manifest.name)
    assert load_queries(path, manifest) == [query]

    orphan = query.model_copy(update={"source_frame_id": "nope"})
    write_queries([orphan], path, manifest.name)
    with pytest.raises(ManifestParseError):
        load_queries(path, manifest)


def test_query_box_must_be_labeled():
    with pytest.raises(ValueError):
        QueryRecord(
            query_id="q", source_frame_id="f",
            box=BoxAnnotation(box=(0, 0, 5, 5), identity=0, camera_id="c"), crop_path="q.png",
        )
