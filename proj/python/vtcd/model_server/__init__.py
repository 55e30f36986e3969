"""Reference model server for the masked-inference wire protocol."""

from .errors import ServerError
from .export import export_features, select_sites
from .formats import Manifest, decode_rle, encode_rle, read_volume, write_volume
from .model import Hooks, LayeredModel, MaskRequest, Prediction, ServedModel, Target
from .protocol import PROTOCOL_VERSION, encode_frame, read_frame
from .server import ModelServer, handle_message, serve_stdio
from .sites import Site
from .toy import ToyTransformer

__all__ = [
    "Hooks", "LayeredModel", "Manifest", "MaskRequest", "ModelServer", "PROTOCOL_VERSION", "Prediction",
    "ServedModel", "ServerError", "Site", "Target", "ToyTransformer", "decode_rle", "encode_frame", "encode_rle",
    "export_features", "handle_message", "load_toy", "read_frame", "read_volume", "select_sites", "serve_stdio",
    "write_volume",
]


def load_toy(weights_path, manifest_path=None):
    """ServedModel for a toy weights JSON and the inputs listed in a manifest."""
    import json

    with open(weights_path) as f:
        toy_json = json.load(f)
    if "weights" not in toy_json:
        from .. import materialize_toy

        toy_json = materialize_toy(toy_json)
    videos = Manifest.read(manifest_path).load_inputs() if manifest_path else {}
    return ServedModel(ToyTransformer.from_json(toy_json), videos)
