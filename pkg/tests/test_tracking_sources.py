from pathlib import Path

import pytest
import torch
from torchvision.io import write_png

from datamodel.records import Weather
from providers.generic_tracking import load_source as load_generic, write_source
from providers.mot import fit_box, read_gt
from providers.synthehicle import scene_weather
from providers.tracking import ObjectClass, SourceFormatError, load_tracking_source


def _image(path: Path, width=64, height=48):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_png(torch.zeros(3, height, width, dtype=torch.uint8), str(path))


def _camera(scene_dir: Path, camera: str, rows, frames=(1, 2)):
    gt = scene_dir / camera / "gt" / "gt.txt"
    gt.parent.mkdir(parents=True, exist_ok=True)
    gt.write_text("\n".join(rows) + "\n")
    for index in frames:
        _image(scene_dir / camera / "img1" / f"{index:06d}.png")


def test_mot_rows_become_corner_boxes(tmp_path):
    gt = tmp_path / "gt.txt"
    gt.write_text("1,7,10,20,30,40,1,-1,-1,-1\n\n1,8,0,0,5,5,1,3,1\n")
    rows = read_gt(gt)
    assert [r.track_id for r in rows[1]] == [7, 8]
    assert rows[1][0].box == (10.0, 20.0, 40.0, 60.0)
    assert rows[1][1].extra == ["1", "3", "1"]


@pytest.mark.parametrize("line", ["1,2,3,4,5", "1,x,3,4,5,6"])
def test_mot_bad_lines(tmp_path, line):
    gt = tmp_path / "gt.txt"
    gt.write_text(line + "\n")
    with pytest.raises(SourceFormatError, match=":1:"):
        read_gt(gt)


def test_fit_box_clips_or_drops():
    assert fit_box((50, 40, 80, 60), 64, 48) == (50, 40, 64, 48)
    assert fit_box((70, 70, 80, 80), 64, 48) is None


def test_cityflow_layout(tmp_path):
    scene = tmp_path / "train" / "S01"
    _camera(scene, "c001", ["1,5,10,10,20,10,1,-1,-1,-1", "2,5,50,40,30,20,1,-1,-1,-1", "2,6,70,70,10,10,1,-1,-1,-1"])
    _camera(scene, "c002", ["1,5,0,0,8,8,1,-1,-1,-1"], frames=(1, 2, 3))
    source = load_tracking_source("cityflow", tmp_path)

    assert [s.scene_id for s in source.scenes] == ["S01"]
    c001, c002 = source.scenes[0].cameras
    assert c001.camera_id == "c001"
    assert [f.frame_index for f in c001.frames] == [1, 2]
    assert c001.frames[0].image_path == "train/S01/c001/img1/000001.png"
    assert (c001.frames[0].width, c001.frames[0].height) == (64, 48)
    assert c001.frames[0].tracks[0].box == (10.0, 10.0, 30.0, 20.0)
    # the second box is clipped, the third lies outside the frame
    assert [t.box for t in c001.frames[1].tracks] == [(50.0, 40.0, 64.0, 48.0)]
    # frames without annotations are still sources of background
    assert [len(f.tracks) for f in c002.frames] == [1, 0, 0]


def test_cityflow_needs_a_frame_size(tmp_path):
    gt = tmp_path / "S01" / "c001" / "gt" / "gt.txt"
    gt.parent.mkdir(parents=True)
    gt.write_text("1,5,10,10,20,10,1,-1,-1,-1\n")
    with pytest.raises(SourceFormatError):
        load_tracking_source("cityflow", tmp_path)


def test_synthehicle_layout(tmp_path):
    _camera(tmp_path / "Town01-O-night", "c000", ["1,3,5,5,10,10,1,10", "1,4,20,20,5,10,1,4", "2,3,6,5,10,10,1,10.0"])
    _camera(tmp_path / "Town02-O-fog", "c000", ["1,9,5,5,10,10,1,10"])
    source = load_tracking_source("synthehicle", tmp_path)

    night, fog = source.scenes
    assert night.weather == Weather.NIGHT
    assert fog.weather == Weather.UNKNOWN
    tracks = night.cameras[0].frames[0].tracks
    assert [(t.track_id, t.object_class) for t in tracks] == [(3, ObjectClass.VEHICLE), (4, ObjectClass.PEDESTRIAN)]
    assert all(t.weather == Weather.NIGHT for t in tracks)


def test_scene_weather_suffix():
    assert scene_weather("Town06-O-dawn") == Weather.DAWN
    assert scene_weather("Town10HD-O-rain") == Weather.RAIN
    assert scene_weather("S01") == Weather.UNKNOWN


def test_generic_round_trip(toy_source, tmp_path):
    path = write_source(toy_source, tmp_path / "source.jsonl")
    loaded = load_generic(tmp_path)
    assert loaded.name == toy_source.name
    assert loaded.root == str(tmp_path)
    assert loaded.scenes == toy_source.scenes
    assert load_generic(path).scenes == toy_source.scenes


def test_generic_errors_name_the_line(tmp_path):
    path = tmp_path / "source.jsonl"
    path.write_bytes(b'{"kind": "tracking_source", "schema_version": 1}\n{"scene_id": "s", "frame_index": 0}\n')
    with pytest.raises(SourceFormatError, match=":2:"):
        load_generic(tmp_path)
    path.write_bytes(b'{"kind": "detections", "schema_version": 1}\n')
    with pytest.raises(SourceFormatError, match=":1:"):
        load_generic(tmp_path)
    with pytest.raises(SourceFormatError):
        load_generic(tmp_path / "elsewhere")


def test_toy_source_shape(toy_source):
    assert [s.scene_id for s in toy_source.scenes] == ["scene00", "scene01"]
    assert [s.weather for s in toy_source.scenes] == [Weather.DAY, Weather.NIGHT]
    camera = toy_source.scenes[0].cameras[0]
    assert len(camera.frames) == 25
    assert camera.frames[0].image_path == "scene00/c000/img1/000000.png"
    assert (Path(toy_source.root) / camera.frames[0].image_path).exists()


def test_unknown_source_kind(tmp_path):
    with pytest.raises(SourceFormatError):
        load_tracking_source("kitti", tmp_path)
