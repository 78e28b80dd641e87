import sys

import numpy as np
import pytest

from facegait.dataset import Normalization
from facegait.errors import FaceNotVisible, NoFaceInClip, NoPersonFound
from facegait.face_roi import (
    LEFT_EYE,
    NOSE,
    RIGHT_EYE,
    PoseKeypoints,
    SidecarKeypointProvider,
    SubprocessKeypointProvider,
    build_face_clip,
    crop_face,
    face_box,
    provide_keypoints,
    write_sidecar,
)
from facegait.synthetic import InMemoryKeypointProvider

IDENTITY = Normalization(0.0, 1.0)


def _kp(nose=(64, 32), d=10.0, vis=0.9, frame=0):
    pts = np.zeros((33, 3))
    pts[:, 2] = vis
    pts[NOSE, :2] = nose
    pts[LEFT_EYE, :2] = (nose[0] - d / 2, nose[1] - 2)
    pts[RIGHT_EYE, :2] = (nose[0] + d / 2, nose[1] - 2)
    return PoseKeypoints(pts, frame)


def test_box_centre_plus_minus_fifteen():
    assert face_box(_kp(), 3.0, 200, 200) == (49, 17, 79, 47)


def test_box_is_square_before_clamping():
    for nose, d in [((10.3, 7.7), 5.5), ((64.5, 32.5), 9.0), ((3.49, 3.51), 7.3)]:
        x0, y0, x1, y1 = face_box(_kp(nose, d), 3.0, 500, 500, clamp=False)
        assert x1 - x0 == y1 - y0 == int(np.floor(3 * d + 0.5))


def test_box_clamped_at_edge_stays_nondegenerate():
    x0, y0, x1, y1 = face_box(_kp((2, 2)), 3.0, 128, 128)
    assert (x0, y0) == (0, 0)
    assert x1 > x0 and y1 > y0
    assert (x1, y1) == (17, 17)
    crop = crop_face(np.zeros((128, 128, 3), np.uint8), _kp((2, 2)), 3.0, 16, 16)
    assert crop.image.shape == (16, 16)


def test_box_fully_outside_frame_still_one_pixel():
    x0, y0, x1, y1 = face_box(_kp((300, 300)), 3.0, 64, 48)
    assert 0 <= x0 < x1 <= 64 and 0 <= y0 < y1 <= 48


def test_low_visibility_rejected():
    kp = _kp()
    kp.points[LEFT_EYE, 2] = 0.1
    with pytest.raises(FaceNotVisible):
        face_box(kp, 3.0, 128, 128, 0.5)


def test_crop_content_comes_from_box():
    frame = np.zeros((100, 100), float)
    frame[17:47, 49:79] = 1.0
    crop = crop_face(frame, _kp(), 3.0, 30, 30, norm=IDENTITY)
    assert crop.box == (49, 17, 79, 47)
    np.testing.assert_allclose(crop.image, 1.0)


def test_sidecar_lookup_and_missing(tmp_path):
    path = tmp_path / "kp.jsonl"
    write_sidecar(path, [_kp(frame=0), _kp((30, 30), frame=1)])
    prov = SidecarKeypointProvider(path)
    frame = np.zeros((128, 128, 3), np.uint8)
    kp = provide_keypoints(prov, frame, 0)
    np.testing.assert_allclose(kp.points[NOSE, :2], (64, 32))
    assert kp.points.shape == (33, 3)
    with pytest.raises(NoPersonFound):
        provide_keypoints(prov, frame, 7)


def test_keypoints_clamped_to_frame():
    prov = InMemoryKeypointProvider([_kp((150, -4))])
    kp = provide_keypoints(prov, np.zeros((50, 100)), 0)
    assert kp.points[NOSE, 0] == 100 and kp.points[NOSE, 1] == 0


def test_first_frame_detects_then_tracks():
    kps = [_kp(frame=i) for i in range(10)]
    prov = InMemoryKeypointProvider(kps)
    frames = [np.zeros((128, 128), np.uint8)] * 10
    clip = build_face_clip(frames, [2, 4, 5, 7], prov, out_h=8, out_w=8)
    assert clip.shape == (4, 8, 8)
    assert prov.calls == [("detect", 2)] + [("track", i) for i in range(3, 8)]


class _Flaky:
    def __init__(self, bad):
        self.bad = set(bad)
        self.calls = []

    def detect(self, frame, i):
        self.calls.append(("detect", i))
        return self._get(i)

    def track(self, frame, i, prior):
        self.calls.append(("track", i))
        return self._get(i)

    def _get(self, i):
        if i in self.bad:
            raise NoPersonFound(str(i))
        return _kp(frame=i)


def _frames(n):
    # frame i is a constant image of value i, so crops identify their source
    return [np.full((128, 128), i / 10, float) for i in range(n)]


def test_leading_failures_take_first_good_crop():
    prov = _Flaky({0, 1, 2})
    clip = build_face_clip(_frames(6), range(6), prov, out_h=4, out_w=4, norm=IDENTITY)
    vals = clip[:, 0, 0]
    np.testing.assert_allclose(vals, [0.3, 0.3, 0.3, 0.3, 0.4, 0.5])
    # tracking is reset after each miss
    assert prov.calls[:4] == [("detect", 0), ("detect", 1), ("detect", 2), ("detect", 3)]
    assert prov.calls[4] == ("track", 4)


def test_gap_holds_last_good_crop():
    clip = build_face_clip(_frames(6), range(6), _Flaky({3, 4}), out_h=4, out_w=4, norm=IDENTITY)
    np.testing.assert_allclose(clip[:, 0, 0], [0.0, 0.1, 0.2, 0.2, 0.2, 0.5])


def test_invisible_face_also_filled():
    kps = [_kp(frame=i) for i in range(4)]
    kps[1].points[NOSE, 2] = 0.0
    clip = build_face_clip(_frames(4), range(4), InMemoryKeypointProvider(kps), out_h=4, out_w=4, norm=IDENTITY)
    np.testing.assert_allclose(clip[:, 0, 0], [0.0, 0.0, 0.2, 0.3])


def test_all_fail():
    with pytest.raises(NoFaceInClip):
        build_face_clip(_frames(4), range(4), _Flaky(range(4)), out_h=4, out_w=4)


def test_subprocess_provider(tmp_path):
    script = tmp_path / "pose.py"
    script.write_text(
        "import json, sys\n"
        "args = sys.argv[1:]\n"
        "if 'nobody' in args[0]:\n"
        "    print(json.dumps({'landmarks': None})); sys.exit()\n"
        "x = 20.0 if '--roi' in args else 10.0\n"
        "print(json.dumps({'landmarks': [[x, 5.0, 0.9]] * 33}))\n")
    prov = SubprocessKeypointProvider([sys.executable, str(script)])
    frame = np.zeros((32, 32, 3), np.uint8)
    first = provide_keypoints(prov, frame, 0)
    assert first.points[0, 0] == 10.0
    second = provide_keypoints(prov, frame, 1, prior=first)
    assert second.points[0, 0] == 20.0
    with pytest.raises(NoPersonFound):
        SubprocessKeypointProvider([sys.executable, str(script), "nobody"]).detect(frame, 0)
