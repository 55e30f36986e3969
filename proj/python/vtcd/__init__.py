"""Video transformer concept discovery: native engine bindings."""

import json

from ._vtcd import (PROTOCOL_VERSION, VOLUME_FORMAT_VERSION, VtcdError, cnmf, decode_rle, encode_rle, r_score,
                    read_volume, run_cli, select_cluster_count, slic_segment, write_volume)
from . import _vtcd


def materialize_toy(toy_json):
    """Toy transformer JSON with every weight written out (config-only input is
    expanded from its seed exactly as the engine does)."""
    return json.loads(_vtcd.materialize_toy(json.dumps(toy_json)))


class NativeToy:
    """The engine's own toy transformer, for comparison with served models."""

    def __init__(self, toy_json, manifest_path):
        self._impl = _vtcd.ToyModel(json.dumps(toy_json), str(manifest_path))

    @property
    def model_id(self):
        return self._impl.model_id

    @property
    def grid(self):
        return tuple(self._impl.grid)

    def sites(self):
        return json.loads(self._impl.sites_json())

    def evaluate(self, forward_message):
        return self._impl.evaluate_json(json.dumps(forward_message))

    def forward(self, forward_message):
        return self._impl.forward_json(json.dumps(forward_message))

    def site_features(self, video_id, site):
        return self._impl.site_features_json(video_id, json.dumps(site))

    def handle(self, message):
        return json.loads(self._impl.handle_json(json.dumps(message)))


__all__ = [
    "NativeToy", "PROTOCOL_VERSION", "VOLUME_FORMAT_VERSION", "VtcdError", "cnmf", "decode_rle", "encode_rle",
    "materialize_toy", "r_score", "read_volume", "run_cli", "select_cluster_count", "slic_segment", "write_volume",
]
