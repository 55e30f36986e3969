"""NumPy toy video transformer reading the engine's toy weights JSON."""

import math

import numpy as np

from .model import LayeredModel, Prediction
from .sites import Site

_erf = np.vectorize(math.erf, otypes=[float])


def layer_norm_rows(x):
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + 1e-5)


def gelu(x):
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def sinusoidal_positions(tokens, dim):
    n = np.arange(tokens, dtype=float)[:, None]
    i = np.arange(dim)
    freq = np.power(10000.0, -(2 * (i // 2)).astype(float) / dim)
    angles = n * freq
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


class ToyTransformer(LayeredModel):
    def __init__(self, config, weights, model_id="toy"):
        self.config = dict(config)
        self.model_id = model_id
        self.grid = tuple(int(v) for v in config["grid"])
        self.in_channels = int(config["in_channels"])
        self.layers = int(config["layers"])
        self.heads = int(config["heads"])
        self.dim = int(config["dim"])
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        d, hidden = self.dim, self.dim * int(config.get("mlp_ratio", 4))

        def mat(v, rows, cols):
            m = np.asarray(v, dtype=float)
            if m.shape != (rows, cols):
                raise ValueError(f"weight matrix has shape {m.shape}, expected {(rows, cols)}")
            return m

        def vec(v, n):
            a = np.asarray(v, dtype=float)
            if a.shape != (n,):
                raise ValueError(f"bias has shape {a.shape}, expected {(n,)}")
            return a

        self.embed = mat(weights["embed"], d, self.in_channels)
        self.embed_bias = vec(weights["embed_bias"], d)
        if len(weights["layers"]) != self.layers:
            raise ValueError("weights list a different number of layers")
        self.layer_weights = []
        for lw in weights["layers"]:
            self.layer_weights.append({
                "wq": mat(lw["wq"], d, d), "wk": mat(lw["wk"], d, d), "wv": mat(lw["wv"], d, d),
                "wo": mat(lw["wo"], d, d), "bo": vec(lw["bo"], d),
                "w1": mat(lw["w1"], hidden, d), "b1": vec(lw["b1"], hidden),
                "w2": mat(lw["w2"], d, hidden), "b2": vec(lw["b2"], d)})
        self.cls = mat(weights["cls"], int(config["classes"]), d)
        self.cls_bias = vec(weights["cls_bias"], int(config["classes"]))
        self.dense = vec(weights["dense"], d)
        self.dense_bias = float(weights["dense_bias"])
        self.positions = sinusoidal_positions(int(np.prod(self.grid)), d)

    @staticmethod
    def from_json(j):
        if "weights" not in j:
            raise ValueError("toy JSON holds only a config; materialize its weights first")
        return ToyTransformer(j["config"], j["weights"], j.get("model_id", "toy"))

    def sites(self):
        out = []
        for layer in range(1, self.layers + 1):
            for head in range(self.heads):
                for facet in ("key", "query", "value"):
                    out.append(Site.attention(self.model_id, layer, head, facet))
            out.append(Site.residual(self.model_id, layer))
        return out

    def forward(self, volume, hooks):
        n = int(np.prod(self.grid))
        dh = self.dim // self.heads
        tokens = np.asarray(volume, dtype=float).reshape(self.in_channels, n).T
        x = tokens @ self.embed.T + self.embed_bias + self.positions
        for layer, lw in enumerate(self.layer_weights, start=1):
            h = layer_norm_rows(x)
            q_all, k_all, v_all = h @ lw["wq"].T, h @ lw["wk"].T, h @ lw["wv"].T
            attn = np.empty((n, self.dim))
            for head in range(self.heads):
                cols = slice(head * dh, (head + 1) * dh)
                q = hooks(Site.attention(self.model_id, layer, head, "query"), q_all[:, cols].copy())
                k = hooks(Site.attention(self.model_id, layer, head, "key"), k_all[:, cols].copy())
                v = hooks(Site.attention(self.model_id, layer, head, "value"), v_all[:, cols].copy())
                scores = q @ k.T / math.sqrt(dh)
                scores = np.exp(scores - scores.max(axis=1, keepdims=True))
                scores /= scores.sum(axis=1, keepdims=True)
                attn[:, cols] = scores @ v
            x = x + attn @ lw["wo"].T + lw["bo"]
            hidden = gelu(layer_norm_rows(x) @ lw["w1"].T + lw["b1"])
            x = x + hidden @ lw["w2"].T + lw["b2"]
            x = hooks(Site.residual(self.model_id, layer), x)
        x = layer_norm_rows(x)
        logits = self.cls @ x.mean(axis=0) + self.cls_bias
        return Prediction(logits, x @ self.dense + self.dense_bias)
