import json
import threading

import numpy as np
import pytest

import vtcd
from vtcd.model_server import Manifest, ModelServer, load_toy, write_volume

TOY_CONFIG = {"layers": 2, "heads": 2, "dim": 8, "grid": [2, 3, 3], "in_channels": 3, "classes": 3,
              "mlp_ratio": 2, "seed": 4, "init_std": 0.3}
VIDEOS = ["vid0", "vid1", "vid2"]


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Materialized toy weights plus a manifest of random input videos."""
    root = tmp_path_factory.mktemp("toy")
    weights = vtcd.materialize_toy({"config": TOY_CONFIG, "model_id": "toy"})
    (root / "weights.json").write_text(json.dumps(weights))
    rng = np.random.default_rng(7)
    (root / "inputs").mkdir()
    inputs = {}
    for vid in VIDEOS:
        write_volume(rng.normal(size=(TOY_CONFIG["in_channels"], *TOY_CONFIG["grid"])).astype(np.float32),
                     root / "inputs" / f"{vid}.vtcd")
        inputs[vid] = f"inputs/{vid}.vtcd"
    Manifest(VIDEOS, [], inputs).write(root / "manifest.json")
    return root


@pytest.fixture(scope="session")
def weights_json(toy_dir):
    return json.loads((toy_dir / "weights.json").read_text())


@pytest.fixture(scope="session")
def served(toy_dir):
    return load_toy(toy_dir / "weights.json", toy_dir / "manifest.json")


@pytest.fixture(scope="session")
def native(toy_dir, weights_json):
    return vtcd.NativeToy(weights_json, toy_dir / "manifest.json")


@pytest.fixture()
def server(served):
    srv = ModelServer(served, ("127.0.0.1", 0), jobs=4)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def random_forward(rng, request_id, sites, grid, video_ids, classes):
    """A forward message masking a random subset of sites with random grids."""
    from vtcd.model_server import encode_rle

    vid = video_ids[rng.integers(len(video_ids))]
    masks = []
    for site in sites:
        if rng.random() < 0.3:
            cells = rng.random(int(np.prod(grid))) < 0.5
            masks.append({"site": site, "rle": {"video_id": vid, "dims": list(grid), "runs": encode_rle(cells)}})
    kind = rng.integers(3)
    if kind == 0:
        target = {"kind": "class_score", "payload": int(rng.integers(classes))}
    elif kind == 1:
        target = {"kind": "scalar_regression", "payload": float(rng.normal())}
    else:
        gt = rng.random(int(np.prod(grid))) < 0.4
        target = {"kind": "dense_mask_iou",
                  "payload": {"video_id": vid, "dims": list(grid), "runs": encode_rle(gt)}}
    return {"type": "forward", "request_id": request_id, "video_id": vid, "masks": masks, "target": target}
