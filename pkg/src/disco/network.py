"""The deeply supervised trunk: 3x3 conv + batch norm + ReLU layers with GAP heads
attached at chosen depths, plus the ablation presets."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensornet as tn
from .errors import ConfigError, ShapeError
from .tensornet import init

CONCEPTS = ("pose", "visibility", "kp3d", "kp2d")
DEFAULT_WEIGHTS = {"pose": 0.1, "visibility": 1.0, "kp3d": 1.0, "kp2d": 1.0}


@dataclass(frozen=True)
class HeadSpec:
    concept: str
    depth: int
    weight: float | None = None

    def __post_init__(self):
        if self.concept not in CONCEPTS:
            raise ConfigError(f"unknown concept {self.concept!r}")
        if self.weight is None:
            object.__setattr__(self, "weight", DEFAULT_WEIGHTS[self.concept])

    @property
    def name(self):
        return f"{self.concept}@{self.depth}"


@dataclass(frozen=True)
class NetworkConfig:
    heads: tuple = ()
    conv_layers: int = 25
    downsample_at: tuple = (4, 8, 12)
    channel_plan: tuple = (8, 8, 16, 16)
    image_size: int = 64
    in_channels: int = 1
    bins: int = 24
    keypoints: int = 12
    hidden: int = 512
    dropout: float = 0.2
    dropout_after: tuple = (3, 7, 11)
    paper_faithful: bool = True

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        self.validate()

    def validate(self):
        if len(self.channel_plan) != len(self.downsample_at) + 1:
            raise ConfigError("channel plan needs one width per stride block")
        if not self.heads:
            raise ConfigError("network needs at least one supervision head")
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate head (concept, depth)")
        for h in self.heads:
            if not 1 <= h.depth <= self.conv_layers:
                raise ConfigError(f"head {h.name} outside [1, {self.conv_layers}]")
        if self.paper_faithful:
            depths = sorted({h.depth for h in self.heads})
            if depths[0] <= 10:
                raise ConfigError("first supervision must come after more than 10 layers")
            if any(b - a < 3 for a, b in zip(depths, depths[1:])):
                raise ConfigError("consecutive supervision depths must be more than 2 layers apart")

    def output_dim(self, concept):
        return {"pose": self.bins, "visibility": self.keypoints, "kp3d": 3 * self.keypoints, "kp2d": 2 * self.keypoints}[concept]

    def layer_width(self, layer):
        block = sum(1 for d in self.downsample_at if d <= layer)
        return self.channel_plan[block]

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "heads"}
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        d["heads"] = [{"concept": h.concept, "depth": h.depth, "weight": h.weight} for h in self.heads]
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        heads = tuple(HeadSpec(**h) for h in doc.pop("heads"))
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(heads=heads, **doc)


SUPERVISION_DEPTHS = (13, 17, 21, 25)


def _heads(*pairs):
    return tuple(HeadSpec(c, d) for c, d in pairs)


def _ordered(concepts, depths=SUPERVISION_DEPTHS):
    return _heads(*zip(concepts, depths[len(depths) - len(concepts):]))


# head layouts of the ablation variants
PRESETS = {
    "disco": _ordered(("pose", "visibility", "kp3d", "kp2d")),
    "reverse": _ordered(("kp2d", "kp3d", "visibility", "pose")),
    "disco-3d-vis": _ordered(("pose", "kp3d", "visibility", "kp2d")),
    "disco-vis-3d-2d": _ordered(("visibility", "kp3d", "kp2d")),
    "disco-3d-2d": _ordered(("kp3d", "kp2d")),
    "plain-all": _heads(*((c, 25) for c in CONCEPTS)),
    "plain-2d": _heads(("kp2d", 25)),
    "plain-3d": _heads(("kp3d", 25)),
    "dsn-2d": _heads(*(("kp2d", d) for d in SUPERVISION_DEPTHS)),
    "dsn-3d": _heads(*(("kp3d", d) for d in SUPERVISION_DEPTHS)),
}


def preset(variant, **overrides) -> NetworkConfig:
    if variant not in PRESETS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(PRESETS)}")
    return NetworkConfig(heads=PRESETS[variant], **overrides)


class Network:
    """Parameters, batch-norm statistics and the forward pass of one configuration."""

    def __init__(self, config: NetworkConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params = {}
        self.bn = {}
        self.depth = max(h.depth for h in config.heads)
        cin = config.in_channels
        for layer in range(1, self.depth + 1):
            cout = config.layer_width(layer)
            self.params[f"conv{layer}.kernel"] = tn.parameter(init.conv_kernel(rng, cin, cout, self.dtype), f"conv{layer}.kernel")
            self.params[f"conv{layer}.scale"] = tn.parameter(np.ones(cout, self.dtype), f"conv{layer}.scale")
            self.params[f"conv{layer}.shift"] = tn.parameter(np.zeros(cout, self.dtype), f"conv{layer}.shift")
            self.bn[layer] = tn.BatchNormState(cout, self.dtype)
            cin = cout
        for h in config.heads:
            c = config.layer_width(h.depth)
            out = config.output_dim(h.concept)
            self.params[f"{h.name}.fc1.weight"] = tn.parameter(init.dense(rng, c, config.hidden, self.dtype), f"{h.name}.fc1.weight")
            self.params[f"{h.name}.fc1.bias"] = tn.parameter(np.zeros(config.hidden, self.dtype), f"{h.name}.fc1.bias")
            self.params[f"{h.name}.fc2.weight"] = tn.parameter(init.dense(rng, config.hidden, out, self.dtype), f"{h.name}.fc2.weight")
            self.params[f"{h.name}.fc2.bias"] = tn.parameter(np.zeros(out, self.dtype), f"{h.name}.fc2.bias")

    def parameters(self):
        return list(self.params.values())

    def heads_at(self, layer):
        return [h for h in self.config.heads if h.depth == layer]

    def forward(self, images, training=False, rng=None):
        """images: (N, H, W, C) in [0, 1]. Returns {head name: (N, dim) Tensor}.

        Visibility outputs are raw regression values; thresholding happens in evaluation.
        """
        cfg = self.config
        x = np.asarray(images)
        if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.in_channels):
            raise ShapeError(f"expected (N, {cfg.image_size}, {cfg.image_size}, {cfg.in_channels}) images, got {x.shape}")
        h = tn.Tensor(x.astype(self.dtype, copy=False))
        outputs = {}
        p = self.params
        for layer in range(1, self.depth + 1):
            stride = 2 if layer in cfg.downsample_at else 1
            h = tn.conv3x3(h, p[f"conv{layer}.kernel"], stride)
            h = tn.batchnorm(h, p[f"conv{layer}.scale"], p[f"conv{layer}.shift"], self.bn[layer], training)
            h = tn.relu(h)
            if layer in cfg.dropout_after and layer < self.depth:
                h = tn.dropout(h, cfg.dropout, training, rng)
            for head in self.heads_at(layer):
                g = tn.global_average_pool(h)
                g = tn.relu(tn.fully_connected(g, p[f"{head.name}.fc1.weight"], p[f"{head.name}.fc1.bias"]))
                outputs[head.name] = tn.fully_connected(g, p[f"{head.name}.fc2.weight"], p[f"{head.name}.fc2.bias"])
        return outputs

    def predict(self, images, batch_size=100):
        """Eval-mode outputs as numpy arrays, keyed by concept (deepest head wins)."""
        collected = {}
        for start in range(0, len(images), batch_size):
            chunk = np.asarray(images[start:start + batch_size])
            if chunk.dtype == np.uint8:
                chunk = chunk.astype(np.float32) / np.float32(255.0)
            out = self.forward(chunk, training=False)
            for name, t in out.items():
                collected.setdefault(name, []).append(t.data)
        merged = {name: np.concatenate(v) for name, v in collected.items()}
        by_concept = {}
        for head in sorted(self.config.heads, key=lambda h: h.depth):
            by_concept[head.concept] = merged[head.name]
        return by_concept

    def state_dict(self):
        state = {name: t.data for name, t in self.params.items()}
        for layer, bn in self.bn.items():
            state[f"conv{layer}.running_mean"] = bn.running_mean
            state[f"conv{layer}.running_var"] = bn.running_var
        return state

    def load_state_dict(self, state):
        for name, t in self.params.items():
            if state[name].shape != t.shape:
                raise ShapeError(f"{name}: checkpoint {state[name].shape} vs network {t.shape}")
            t.data = np.array(state[name], dtype=self.dtype)
        for layer, bn in self.bn.items():
            bn.running_mean = np.array(state[f"conv{layer}.running_mean"], dtype=self.dtype)
            bn.running_var = np.array(state[f"conv{layer}.running_var"], dtype=self.dtype)

    def clone(self, dtype=None):
        other = Network.__new__(Network)
        other.config = self.config
        other.dtype = np.dtype(dtype or self.dtype)
        other.depth = self.depth
        other.params = {n: tn.parameter(t.data.astype(other.dtype), n) for n, t in self.params.items()}
        other.bn = {}
        for layer, bn in self.bn.items():
            st = tn.BatchNormState(len(bn.running_mean), other.dtype, bn.momentum)
            st.running_mean = bn.running_mean.astype(other.dtype)
            st.running_var = bn.running_var.astype(other.dtype)
            other.bn[layer] = st
        return other

    def num_conv_layers(self):
        return sum(1 for n in self.params if n.endswith(".kernel"))


def build(config: NetworkConfig, seed=0, dtype=np.float32) -> Network:
    config.validate()
    return Network(config, seed, dtype)


def with_heads(config: NetworkConfig, heads) -> NetworkConfig:
    return replace(config, heads=tuple(heads))
