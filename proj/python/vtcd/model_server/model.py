"""Wrapping a layered model so that its sites can be zero-masked and read."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ServerError, invalid
from .sites import Site


@dataclass
class Prediction:
    logits: np.ndarray
    dense: np.ndarray


class Hooks:
    """Hook points handed to a model's forward pass.

    `masks` maps a site to a boolean vector over tokens; masked rows of the
    block are zeroed in place. `capture`, when set, receives a copy of every
    block before masking.
    """

    def __init__(self, masks=None, capture=None):
        self.masks = masks or {}
        self.capture = capture
        self.visited = []

    def __call__(self, site, block):
        self.visited.append(site)
        if self.capture is not None:
            self.capture[site] = np.array(block, copy=True)
        mask = self.masks.get(site)
        if mask is not None:
            block[mask] = 0.0
        return block


class LayeredModel:
    """Interface for user-supplied models served over the wire protocol.

    `forward` receives a C x T x H x W input and must pass every maskable
    token-major block (tokens x channels, tokens in (t, h, w) scan order)
    through `hooks(site, block)`, using the returned block afterwards.
    """

    model_id: str
    grid: Tuple[int, int, int]
    in_channels: int

    def sites(self) -> List[Site]:
        raise NotImplementedError

    def forward(self, volume: np.ndarray, hooks: Hooks) -> Prediction:
        raise NotImplementedError


def softmax_probability(logits, index):
    if index < 0 or index >= len(logits):
        raise invalid("class index out of range")
    z = np.exp(logits - np.max(logits))
    return float(z[index] / z.sum())


@dataclass
class Target:
    kind: str
    class_index: int = 0
    scalar: float = 0.0
    mask: Optional[np.ndarray] = None

    @staticmethod
    def from_json(j):
        from .formats import mask_from_json

        if not isinstance(j, dict) or "kind" not in j or "payload" not in j:
            raise invalid("target needs kind and payload")
        kind, payload = j["kind"], j["payload"]
        if kind == "class_score":
            if not isinstance(payload, int) or payload < 0:
                raise invalid("class index must be >= 0")
            return Target(kind, class_index=payload)
        if kind == "scalar_regression":
            value = float(payload)
            if not np.isfinite(value):
                raise invalid("regression target must be finite")
            return Target(kind, scalar=value)
        if kind == "dense_mask_iou":
            return Target(kind, mask=mask_from_json(payload)[2])
        raise invalid(f"unknown target kind '{kind}'")

    def metric(self, prediction: Prediction) -> float:
        if self.kind == "class_score":
            return softmax_probability(prediction.logits, self.class_index)
        if self.kind == "scalar_regression":
            if len(prediction.logits) == 0:
                raise invalid("prediction has no outputs")
            diff = prediction.logits[0] - self.scalar
            return float(-diff * diff)
        if self.mask.size != prediction.dense.size:
            raise invalid("groundtruth mask does not match the dense prediction grid")
        pred = prediction.dense > 0.0
        union = np.count_nonzero(pred | self.mask)
        if union == 0:
            return 1.0
        return np.count_nonzero(pred & self.mask) / union


@dataclass
class MaskRequest:
    video_id: str
    masks: Dict[Site, np.ndarray]
    target: Target

    @staticmethod
    def from_json(message, grid):
        from .formats import mask_from_json

        if not isinstance(message.get("video_id"), str) or not isinstance(message.get("masks"), list):
            raise invalid("forward needs video_id and masks")
        masks = {}
        for m in message["masks"]:
            if not isinstance(m, dict) or "site" not in m or "rle" not in m:
                raise invalid("each mask needs site and rle")
            site = Site.from_json(m["site"])
            _, dims, grid_cells = mask_from_json(m["rle"])
            if site in masks:
                raise invalid(f"more than one mask for site {site.tag}")
            if tuple(dims) != tuple(grid):
                raise invalid(f"mask dims differ from the site grid at {site.tag}")
            masks[site] = grid_cells
        return MaskRequest(message["video_id"], masks, Target.from_json(message.get("target")))


class ServedModel:
    """A layered model plus its input videos, answering masked forwards."""

    def __init__(self, model: LayeredModel, videos: Dict[str, np.ndarray]):
        self.model = model
        self.videos = dict(videos)
        self._sites = list(model.sites())
        self._site_set = set(self._sites)
        probe = Hooks()
        model.forward(np.zeros((model.in_channels, *model.grid)), probe)
        if sorted(probe.visited) != sorted(self._sites):
            raise ValueError("advertised sites do not match the model's hook points")
        for vid, volume in self.videos.items():
            if volume.shape != (model.in_channels, *model.grid):
                raise ValueError(f"input {vid} has shape {volume.shape}, model expects "
                                 f"{(model.in_channels, *model.grid)}")

    @property
    def model_id(self):
        return self.model.model_id

    @property
    def grid(self):
        return tuple(self.model.grid)

    @property
    def channels(self):
        return self.model.in_channels

    def sites(self) -> List[Site]:
        return list(self._sites)

    def _input(self, video_id):
        if video_id not in self.videos:
            raise ServerError("backend", f"unknown video '{video_id}'")
        return self.videos[video_id]

    def forward(self, video_id, masks: Dict[Site, np.ndarray]) -> Prediction:
        for site in masks:
            if site not in self._site_set:
                raise invalid(f"mask targets unknown site {site.tag}")
        return self.model.forward(self._input(video_id), Hooks(masks))

    def evaluate(self, request: MaskRequest) -> float:
        for site in request.masks:
            if site not in self._site_set:
                raise invalid(f"mask targets unknown site {site.tag}")
        return request.target.metric(self.forward(request.video_id, request.masks))

    def site_features(self, video_id, sites: Sequence[Site]) -> Dict[Site, np.ndarray]:
        """Unmasked activations as C x T x H x W arrays."""
        for site in sites:
            if site not in self._site_set:
                raise invalid(f"unknown site {site.tag}")
        capture = {}
        self.model.forward(self._input(video_id), Hooks(capture=capture))
        out = {}
        for site in sites:
            block = capture[site]
            if block.shape[0] != int(np.prod(self.grid)):
                raise ServerError("invalid-argument", f"site {site.tag} has {block.shape[0]} tokens, "
                                  f"grid {self.grid} has {int(np.prod(self.grid))}")
            out[site] = block.T.reshape((block.shape[1], *self.grid))
        return out
