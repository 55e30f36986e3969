"""Tensor store file formats: .vtcd volumes, run-length masks and manifests."""

import json
import os
import struct

import numpy as np

from .errors import ServerError, invalid
from .sites import Site

MAGIC = b"VTCD"
VOLUME_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBB6x")
_SHAPE = struct.Struct("<4Q")


def serialize_volume(array):
    a = np.asarray(array, dtype="<f4")
    if a.ndim != 4 or min(a.shape) < 1:
        raise invalid(f"volume must be a non-empty C x T x H x W array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ServerError("non-finite-data", "volume holds NaN or Inf")
    return _HEADER.pack(MAGIC, VOLUME_FORMAT_VERSION, 0, 4) + _SHAPE.pack(*a.shape) + np.ascontiguousarray(a).tobytes()


def deserialize_volume(data):
    if len(data) < _HEADER.size:
        raise ServerError("truncated", "file shorter than header")
    magic, version, dtype, rank = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ServerError("bad-magic", "expected magic VTCD")
    if version != VOLUME_FORMAT_VERSION:
        raise ServerError("version-mismatch", f"unsupported format version {version}")
    if dtype != 0 or rank != 4:
        raise invalid(f"unsupported dtype {dtype} or rank {rank}")
    if len(data) < _HEADER.size + _SHAPE.size:
        raise ServerError("truncated", "file ends inside shape block")
    shape = _SHAPE.unpack_from(data, _HEADER.size)
    if 0 in shape:
        raise invalid("zero-sized dimension")
    count = int(np.prod(shape, dtype=object))
    payload = len(data) - _HEADER.size - _SHAPE.size
    if payload < 4 * count:
        raise ServerError("truncated", f"payload holds {payload // 4} floats, header declares {count}")
    if payload > 4 * count:
        raise invalid("trailing bytes after payload")
    a = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size + _SHAPE.size).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ServerError("non-finite-data", "volume holds NaN or Inf")
    return a.astype(np.float32)


def write_volume(array, path):
    with open(path, "wb") as f:
        f.write(serialize_volume(array))


def read_volume(path):
    with open(path, "rb") as f:
        return deserialize_volume(f.read())


def encode_rle(grid):
    """Runs over the flattened grid, zeros first, alternating."""
    flat = np.asarray(grid, dtype=bool).ravel()
    if flat.size == 0:
        return [0]
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    return ([0] + runs) if flat[0] else runs


def decode_rle(runs, dims):
    cells = int(np.prod(dims))
    if not runs:
        raise ServerError("run-length-mismatch", "mask has no runs")
    if any(r < 0 for r in runs) or any(r == 0 for r in runs[1:]):
        raise ServerError("run-length-mismatch", "runs must strictly alternate (empty interior run)")
    if sum(runs) != cells:
        raise ServerError("run-length-mismatch", f"run lengths sum to {sum(runs)}, grid has {cells}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs)


def mask_to_json(video_id, dims, grid):
    return {"video_id": video_id, "dims": list(dims), "runs": encode_rle(grid)}


def dims_from_json(j):
    if not isinstance(j, list) or len(j) != 3:
        raise invalid("dims must be [T, H, W]")
    dims = tuple(int(v) for v in j)
    if min(dims) < 1:
        raise invalid("dims must be >= 1")
    return dims


def mask_from_json(j):
    """Returns (video_id, dims, flat boolean grid)."""
    if not isinstance(j, dict) or "dims" not in j or "runs" not in j:
        raise invalid("mask needs dims and runs")
    dims = dims_from_json(j["dims"])
    runs = [int(r) for r in j["runs"]]
    return str(j.get("video_id", "")), dims, decode_rle(runs, dims)


class Manifest:
    """Video set manifest: per-site volume files and optional model inputs."""

    def __init__(self, video_ids=(), sites=None, inputs=None, root="."):
        self.video_ids = list(video_ids)
        self.sites = list(sites or [])  # dicts: site, channels, dims, files
        self.inputs = dict(inputs or {})
        self.root = root

    @staticmethod
    def read(path):
        with open(path) as f:
            j = json.load(f)
        sites = [{"site": Site.from_json(e["site"]), "channels": int(e["channels"]),
                  "dims": dims_from_json(e["dims"]), "files": dict(e["files"])} for e in j.get("sites", [])]
        return Manifest(j["video_ids"], sites, j.get("inputs", {}), os.path.dirname(os.path.abspath(path)))

    def load_input(self, video_id):
        if video_id not in self.inputs:
            raise ServerError("manifest", f"no input volume for video {video_id}")
        return read_volume(os.path.join(self.root, self.inputs[video_id]))

    def load_inputs(self):
        return {vid: self.load_input(vid) for vid in self.video_ids if vid in self.inputs}

    def to_json(self):
        j = {"video_ids": self.video_ids,
             "sites": [{"site": e["site"].to_json(), "channels": e["channels"], "dims": list(e["dims"]),
                        "files": e["files"]} for e in self.sites]}
        if self.inputs:
            j["inputs"] = self.inputs
        return j

    def write(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
