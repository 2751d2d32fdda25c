import json

import numpy as np
import pytest

from driveforge.cameras import Camera
from driveforge.compositor import write_png

_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance_results.append(
            (report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_results:
        terminalreporter.section("acceptance criteria")
        for name, outcome in _acceptance_results:
            status = "PASS" if outcome == "passed" else "FAIL"
            terminalreporter.write_line(f"{status}  {name}")


def solid_view(color, width=320, height=180):
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = color
    return arr


def view_with_rect(rect, width=320, height=180, fg=(255, 255, 255), bg=(0, 0, 0)):
    """Dark view with one bright rectangle; rect is (x1, y1, x2, y2) exclusive."""
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = bg
    x1, y1, x2, y2 = rect
    arr[y1:y2, x1:x2] = fg
    return arr


def write_frame_images(image_dir, scene_id, frame_id, arrays_by_camera):
    """Write one PNG per camera; returns the relative paths keyed by name."""
    rel_paths = {}
    for cam in Camera:
        rel = f"{scene_id}/{frame_id}/{cam.value}.png"
        path = image_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_png(path, arrays_by_camera[cam])
        rel_paths[cam.value] = rel
    return rel_paths


def default_frame_arrays(object_rect=None, object_camera=Camera.BACK,
                         width=320, height=180):
    """Six dim views; optionally one bright object rectangle on one camera."""
    arrays = {}
    for i, cam in enumerate(Camera):
        arr = np.zeros((height, width, 3), dtype=np.uint8)
        arr[:, :] = (20 + 10 * i, 30, 40)  # dim; below the luma threshold
        arrays[cam] = arr
    if object_rect is not None:
        x1, y1, x2, y2 = object_rect
        arrays[object_camera] = arrays[object_camera].copy()
        arrays[object_camera][y1:y2, x1:x2] = (255, 255, 255)
    return arrays


class MiniDataset:
    def __init__(self, root):
        self.root = root
        self.qa_json = root / "qa.json"
        self.image_root = root / "images"
        self.scenes = []

    def add_scene(self, scene_id):
        scene = {"scene_id": scene_id, "key_frames": []}
        self.scenes.append(scene)
        return scene

    def add_frame(self, scene, frame_id, arrays_by_camera, qa_groups,
                  prev_frame_id=None):
        rels = write_frame_images(self.image_root, scene["scene_id"],
                                  frame_id, arrays_by_camera)
        frame = {"frame_id": frame_id, "image_paths": rels, "QA": qa_groups}
        if prev_frame_id is not None:
            frame["prev_frame_id"] = prev_frame_id
        scene["key_frames"].append(frame)
        return frame

    def write(self):
        self.image_root.mkdir(parents=True, exist_ok=True)
        with open(self.qa_json, "w", encoding="utf-8") as f:
            json.dump(self.scenes, f, indent=1)
        return self


@pytest.fixture
def mini_dataset_factory(tmp_path):
    def make(name="data"):
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        (root / "images").mkdir(exist_ok=True)
        return MiniDataset(root)
    return make


def build_two_frame_dataset(factory):
    """Two keyframes with an MC question, a tagged question, and open QAs.

    The bright object rectangle on CAM_BACK is centered at (160.0, 90.0)
    in a 320x180 view, so tag centers are exactly representable.
    """
    ds = factory()
    scene = ds.add_scene("scene0001")
    rect = (140, 80, 180, 100)
    qa_f1 = {
        "perception": [
            {"question": "What is the moving status of object "
                         "<c1,CAM_BACK,160.0,90.0>? Please select the correct "
                         "answer from the following options: A. Going ahead. "
                         "B. Stopped.",
             "answer": "A. Going ahead."},
            {"question": "What are the important objects in the current scene?",
             "answer": "There is a white truck parked near the loading dock "
                       "behind the ego vehicle."},
        ],
        "planning": [
            {"question": "What object should the ego vehicle notice first?",
             "answer": "The ego vehicle should notice <c1,CAM_BACK,160.0,90.0> "
                       "before changing lanes."},
        ],
    }
    ds.add_frame(scene, "frame0001",
                 default_frame_arrays(object_rect=rect), qa_f1)
    qa_f2 = {
        "perception": [
            {"question": "What is the moving status of object "
                         "<c2,CAM_FRONT,80.0,45.0>? Please select the correct "
                         "answer from the following options: A. Going ahead. "
                         "B. Stopped.",
             "answer": "B. Stopped."},
            {"question": "Describe the traffic ahead of the ego vehicle.",
             "answer": "A silver sedan waits at the red light two car lengths "
                       "ahead in the same lane."},
        ],
        "planning": [
            {"question": "Which object deserves attention first?",
             "answer": "Attention goes to <c2,CAM_FRONT,80.0,45.0> on the "
                       "front camera."},
        ],
    }
    ds.add_frame(scene, "frame0002",
                 default_frame_arrays(object_rect=(60, 35, 100, 55),
                                      object_camera=Camera.FRONT),
                 qa_f2, prev_frame_id="frame0001")
    return ds.write()
