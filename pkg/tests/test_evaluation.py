import math

import numpy as np
import pytest

from datamodel.errors import ContractError, ManifestParseError
from datamodel.records import BoxAnnotation, QueryRecord
from evaluation import (
    EncodedQuery,
    EvalConfig,
    GalleryDetections,
    GalleryFrame,
    OracleRefusal,
    RankedResult,
    ReportError,
    average_precision,
    evaluate,
    match_and_rank,
    rank_scores,
    oracle_evaluate,
    read_detections,
    read_query_embeddings,
    write_detections,
    write_query_embeddings,
    write_report,
)
from tests.conftest import make_frame, make_manifest


def _query(query_id, frame_id, box, identity, embedding, camera_id="c000"):
    record = QueryRecord(
        query_id=query_id,
        source_frame_id=frame_id,
        box=BoxAnnotation(box=box, identity=identity, camera_id=camera_id),
        crop_path=f"queries/{query_id}.png",
    )
    return EncodedQuery(record, np.asarray(embedding, dtype=np.float64))


def _unit(x, y):
    return [x, math.sqrt(1.0 - x * x) if y is None else y]


@pytest.fixture
def three_frames():
    """Identity 1 is in f1 and f3, identity 2 in f2; the query is identity 1 seen in f0."""
    gt = make_manifest([
        make_frame("f0", [((0, 0, 20, 20), 1)], camera_id="c001"),
        make_frame("f1", [((10, 10, 30, 30), 1)]),
        make_frame("f2", [((40, 40, 60, 60), 2)]),
        make_frame("f3", [((50, 10, 70, 30), 1)]),
    ])
    gallery = GalleryDetections()
    gallery.add(GalleryFrame("f0", [], [], np.zeros((0, 2))))
    gallery.add(GalleryFrame("f1", [[10, 10, 30, 30]], [0.9], [_unit(1.0, 0.0)]))
    gallery.add(GalleryFrame("f2", [[40, 40, 60, 60]], [0.8], [_unit(0.9, None)]))
    gallery.add(GalleryFrame("f3", [[51, 10, 71, 30]], [0.4], [_unit(0.8, 0.6)]))
    return gt, gallery


def test_average_precision_values():
    assert average_precision(RankedResult("q", [], [True, False, True], 2)) == pytest.approx(5 / 6)
    assert average_precision(RankedResult("q", [], [True, True], 2)) == pytest.approx(1.0)
    assert average_precision(RankedResult("q", [], [False, False], 2)) == 0.0
    assert average_precision(RankedResult("q", [], [True], 3)) == pytest.approx(1 / 3)
    with pytest.raises(ContractError):
        average_precision(RankedResult("q", [], [], 0))


def test_rank_and_match(three_frames):
    gt, gallery = three_frames
    ranked = match_and_rank("q", [2.0, 0.0], 1, gallery, gt)
    assert [e.frame_id for e in ranked.entries] == ["f1", "f2", "f3"]
    assert ranked.tp_flags == [True, False, True]
    assert ranked.num_gt == 3
    assert ranked.entries[0].score == pytest.approx(1.0)


def test_query_frame_can_be_excluded(three_frames):
    gt, gallery = three_frames
    ranked = match_and_rank("q", [1.0, 0.0], 1, gallery, gt, exclude_frame="f0")
    assert ranked.num_gt == 2
    assert average_precision(ranked) == pytest.approx(5 / 6)


def test_confidence_floor_drops_detections(three_frames):
    gt, gallery = three_frames
    ranked = match_and_rank("q", [1.0, 0.0], 1, gallery, gt, confidence_floor=0.5)
    assert [e.frame_id for e in ranked.entries] == ["f1", "f2"]


def test_one_ground_truth_box_is_claimed_once():
    gt = make_manifest([make_frame("f1", [((10, 10, 30, 30), 1)])])
    gallery = GalleryDetections()
    gallery.add(GalleryFrame("f1", [[10, 10, 30, 30], [11, 10, 31, 30]], [0.9, 0.9], [_unit(1.0, 0.0), _unit(0.6, 0.8)]))
    ranked = match_and_rank("q", [1.0, 0.0], 1, gallery, gt)
    assert ranked.tp_flags == [True, False]


def test_detection_without_overlap_is_never_a_hit():
    gt = make_manifest([make_frame("f1", [((10, 10, 30, 30), 1)])])
    gallery = GalleryDetections()
    gallery.add(GalleryFrame("f1", [[60, 60, 90, 90]], [0.9], [_unit(1.0, 0.0)]))
    ranked = match_and_rank("q", [1.0, 0.0], 1, gallery, gt)
    assert ranked.tp_flags == [False]
    assert average_precision(ranked) == 0.0


def test_iou_must_exceed_threshold():
    # IoU exactly 0.5 is not a hit
    gt = make_manifest([make_frame("f1", [((0, 0, 10, 10), 1)])])
    gallery = GalleryDetections()
    gallery.add(GalleryFrame("f1", [[0, 0, 20, 10]], [0.9], [_unit(1.0, 0.0)]))
    assert match_and_rank("q", [1.0, 0.0], 1, gallery, gt).tp_flags == [False]


def test_evaluate_report(three_frames):
    gt, gallery = three_frames
    queries = [
        _query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0]),
        _query("q2", "f2", (40, 40, 60, 60), 2, _unit(0.9, None)),
    ]
    report = evaluate(queries, gallery, gt, EvalConfig(exclude_query_frame=True))
    by_id = {q.query_id: q for q in report.per_query_ap}
    # q2 only occurs in its own frame
    assert report.excluded == ["q2"]
    assert by_id["q1"].ap == pytest.approx(5 / 6)
    assert report.mAP == pytest.approx(5 / 6)
    assert report.top1 == 1.0
    assert report.per_weather == {"day": {"mAP": pytest.approx(5 / 6), "top1": 1.0, "queries": 1}}

    summary = report.summary()
    assert summary["num_queries"] == 1
    assert summary["excluded_queries"] == 1


def test_duplicate_queries_count_twice(three_frames):
    gt, gallery = three_frames
    q = _query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0])
    report = evaluate([q, q], gallery, gt)
    assert len(report.per_query_ap) == 2
    assert report.mAP == pytest.approx(report.per_query_ap[0].ap)


def test_evaluate_refuses_empty_input(three_frames):
    gt, gallery = three_frames
    with pytest.raises(ReportError):
        evaluate([], gallery, gt)
    lonely = _query("q2", "f2", (40, 40, 60, 60), 2, [1.0, 0.0])
    with pytest.raises(ReportError):
        evaluate([lonely], gallery, gt, EvalConfig(exclude_query_frame=True))


def test_gallery_contracts(three_frames):
    gt, gallery = three_frames
    with pytest.raises(ContractError):
        GalleryFrame("f9", [[0, 0, 1, 1]], [0.5], [[3.0, 0.0]])
    with pytest.raises(ContractError):
        GalleryFrame("f9", [[0, 0, 1, 1]], [0.5, 0.2], [[1.0, 0.0]])
    with pytest.raises(ContractError):
        match_and_rank("q", [1.0, 0.0, 0.0], 1, gallery, gt)
    with pytest.raises(ContractError):
        match_and_rank("q", [0.0, 0.0], 1, gallery, gt)
    stray = GalleryDetections()
    stray.add(GalleryFrame("elsewhere", [], [], np.zeros((0, 2))))
    with pytest.raises(ContractError):
        stray.check_against(gt)


def test_gallery_must_cover_every_test_frame(three_frames):
    gt, gallery = three_frames
    gallery.check_against(gt)
    del gallery.frames["f2"]
    with pytest.raises(ContractError, match="missing 1 frames"):
        gallery.check_against(gt)
    q = _query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0])
    with pytest.raises(ContractError):
        evaluate([q], gallery, gt)


def test_frame_without_detections(three_frames):
    gt, gallery = three_frames
    gallery.add(GalleryFrame("f0", [], [], np.zeros((0, 2))))
    assert len(gallery.frames["f0"]) == 0
    ranked = match_and_rank("q", [1.0, 0.0], 1, gallery, gt)
    assert len(ranked.entries) == 3


def _random_instance(rng: np.random.Generator, dim: int = 4):
    num_frames = int(rng.integers(2, 6))
    frames = []
    gallery = GalleryDetections()
    for f in range(num_frames):
        # the first two frames hold every identity, so each one has a positive outside its query frame
        identities = [1, 2, 3] if f < 2 else rng.integers(0, 4, size=int(rng.integers(1, 4))).tolist()
        boxes = []
        for identity in identities:
            x, y = rng.uniform(0, 70, size=2)
            w, h = rng.uniform(8, 25, size=2)
            boxes.append(((float(x), float(y), float(x + w), float(y + h)), int(identity)))
        frames.append(make_frame(f"f{f}", boxes, camera_id=f"c{f % 2:03d}", weather="day" if f % 2 else "night"))

        det_boxes = [np.array(box) + rng.normal(0, 1, size=4) * np.array([1, 1, 0, 0]) for box, _ in boxes]
        for _ in range(int(rng.integers(0, 3))):
            x, y = rng.uniform(0, 80, size=2)
            det_boxes.append(np.array([x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)]))
        if rng.random() < 0.1:
            gallery.add(GalleryFrame(f"f{f}", [], [], np.zeros((0, dim))))
            continue
        emb = rng.normal(size=(len(det_boxes), dim))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        gallery.add(GalleryFrame(f"f{f}", np.array(det_boxes), rng.uniform(0, 1, size=len(det_boxes)), emb))
    gt = make_manifest(frames)

    queries = []
    for identity in (1, 2, 3):
        ann = next(a for a in frames[0].annotations if a.identity == identity)
        queries.append(_query(f"q{identity}", "f0", ann.box, identity, rng.normal(size=dim)))
    return gt, gallery, queries


@pytest.mark.parametrize(
    "config",
    [EvalConfig(), EvalConfig(exclude_query_frame=True), EvalConfig(confidence_floor=0.3, iou_threshold=0.3)],
    ids=["default", "exclude-frame", "floor"],
)
def test_fast_evaluator_matches_brute_force(config):
    rng = np.random.default_rng(0)
    for _ in range(100):
        gt, gallery, queries = _random_instance(rng)
        fast = evaluate(queries, gallery, gt, config)
        slow = oracle_evaluate(queries, gallery, gt, config)
        assert fast.mAP == pytest.approx(slow.mAP, abs=1e-9)
        assert fast.top1 == slow.top1
        assert [q.ap for q in fast.per_query_ap] == pytest.approx([q.ap for q in slow.per_query_ap], abs=1e-9)
        assert fast.excluded == slow.excluded


def test_oracle_scores_queries_on_its_own(three_frames, monkeypatch):
    import evaluation.report

    gt, gallery = three_frames
    queries = [_query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0])]
    config = EvalConfig(exclude_query_frame=True)
    monkeypatch.setattr(evaluation.report, "average_precision", lambda ranked: 0.0)
    assert evaluate(queries, gallery, gt, config).mAP == 0.0
    report = oracle_evaluate(queries, gallery, gt, config)
    assert report.mAP == pytest.approx(5 / 6)
    assert report.top1 == 1.0
    assert report.per_weather == {"day": {"mAP": pytest.approx(5 / 6), "top1": 1.0, "queries": 1}}


def test_oracle_rejects_ragged_frames(three_frames):
    gt, gallery = three_frames
    gallery.frames["f1"].scores = np.array([0.9, 0.1])
    with pytest.raises(ContractError):
        oracle_evaluate([_query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0])], gallery, gt)


def _scored_detections(query, gallery, gt):
    q = query.embedding / np.linalg.norm(query.embedding)
    frame_ids, det_index, sims = [], [], []
    for frame in gt.frames:
        det = gallery.frames[frame.frame_id]
        for i in range(len(det)):
            frame_ids.append(frame.frame_id)
            det_index.append(i)
            sims.append(float(det.embeddings[i] @ q))
    num_gt = sum(1 for f in gt.frames for a in f.annotations if a.identity == query.record.box.identity)
    return frame_ids, det_index, np.array(sims), num_gt


def test_monotone_rescoring_keeps_the_ranking():
    rng = np.random.default_rng(1)
    for _ in range(30):
        gt, gallery, queries = _random_instance(rng)
        for query in queries:
            identity = query.record.box.identity
            frame_ids, det_index, sims, num_gt = _scored_detections(query, gallery, gt)
            base = rank_scores("q", identity, frame_ids, det_index, sims, gallery, gt.frames, num_gt)
            moved = rank_scores("q", identity, frame_ids, det_index, np.cbrt(sims) * 7 + 3, gallery, gt.frames, num_gt)
            assert base.tp_flags == match_and_rank("q", query.embedding, identity, gallery, gt).tp_flags
            assert moved.tp_flags == base.tp_flags
            assert [(e.frame_id, e.box) for e in moved.entries] == [(e.frame_id, e.box) for e in base.entries]
            assert average_precision(moved) == average_precision(base)


def test_low_scored_false_detection_never_raises_ap():
    rng = np.random.default_rng(2)
    for _ in range(30):
        gt, gallery, queries = _random_instance(rng)
        for query in queries:
            identity = query.record.box.identity
            frame_ids, det_index, sims, num_gt = _scored_detections(query, gallery, gt)
            base = rank_scores("q", identity, frame_ids, det_index, sims, gallery, gt.frames, num_gt)
            hit_scores = [e.score for e, tp in zip(base.entries, base.tp_flags) if tp]
            below = min(hit_scores, default=float(sims.min(initial=0.0))) - 1e-3

            frame_id = gt.frames[-1].frame_id
            original = gallery.frames[frame_id]
            extra = np.zeros(original.embeddings.shape[1])
            extra[0] = 1.0
            gallery.add(
                GalleryFrame(
                    frame_id,
                    np.vstack([original.boxes, [[500.0, 500.0, 520.0, 520.0]]]),
                    np.append(original.scores, 0.5),
                    np.vstack([original.embeddings, extra]),
                )
            )
            grown = rank_scores(
                "q", identity, frame_ids + [frame_id], det_index + [len(original)],
                np.append(sims, below), gallery, gt.frames, num_gt,
            )
            gallery.add(original)
            assert grown.tp_flags.count(True) == base.tp_flags.count(True)
            assert average_precision(grown) <= average_precision(base) + 1e-12


def test_oracle_refuses_large_instances():
    frames = [make_frame(f"f{i}", [((0, 0, 10, 10), 1)]) for i in range(51)]
    with pytest.raises(OracleRefusal):
        oracle_evaluate([], GalleryDetections(), make_manifest(frames))


def test_detections_file(tmp_path, three_frames):
    _, gallery = three_frames
    path = write_detections(gallery, tmp_path / "detections.jsonl")
    loaded = read_detections(path)
    assert loaded.dim == 2
    assert sorted(loaded.frames) == ["f0", "f1", "f2", "f3"]
    assert len(loaded.frames["f0"]) == 0
    loaded.check_against(three_frames[0])
    np.testing.assert_allclose(loaded.frames["f3"].boxes, gallery.frames["f3"].boxes)
    np.testing.assert_allclose(loaded.frames["f2"].embeddings, gallery.frames["f2"].embeddings)


def test_query_embeddings_file(tmp_path):
    path = write_query_embeddings({"q2": np.array([0.0, 1.0]), "q1": np.array([1.0, 0.0])}, tmp_path / "q.jsonl")
    loaded = read_query_embeddings(path)
    assert list(loaded) == ["q1", "q2"]
    with pytest.raises(ManifestParseError):
        read_detections(path)


def test_report_files(tmp_path, three_frames):
    gt, gallery = three_frames
    report = evaluate([_query("q1", "f0", (0, 0, 20, 20), 1, [1.0, 0.0])], gallery, gt)
    paths = write_report(report, tmp_path, stem="eval_report")
    assert "mAP" in paths["text"].read_text()
    assert paths["json"].name == "eval_report.json"
