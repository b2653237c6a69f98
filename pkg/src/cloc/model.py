"""MLP encoder + two-layer classifier, prediction rule, and checkpoints."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .margins import MarginSet

CHECKPOINT_MAGIC = "CLOC-CHECKPOINT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file is missing, unreadable, or of the wrong format."""


class Linear:
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Linear":
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, size=(n_in, n_out)),
                   rng.uniform(-bound, bound, size=n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @property
    def shape(self):
        return self.weight.shape


def _mlp(layers: Sequence[Linear], x: Tensor) -> Tensor:
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = ad.relu(x)
    return x


class Model:
    """Encoder ``x -> z`` (ReLU between layers, linear output) and classifier ``z -> v``."""

    def __init__(self, encoder: list[Linear], classifier: list[Linear]):
        if not encoder or not classifier:
            raise ValueError("encoder and classifier each need at least one layer")
        self.encoder = encoder
        self.classifier = classifier
        self._check_chain()

    @classmethod
    def init(cls, n_features: int, n_classes: int, hidden=(64, 64), embedding_dim=16,
             classifier_hidden=32, seed=None) -> "Model":
        rng = np.random.default_rng(seed)
        enc_sizes = [n_features, *hidden, embedding_dim]
        enc = [Linear.init(a, b, rng) for a, b in zip(enc_sizes[:-1], enc_sizes[1:])]
        cls_sizes = [embedding_dim, classifier_hidden, n_classes] if classifier_hidden else [embedding_dim, n_classes]
        clf = [Linear.init(a, b, rng) for a, b in zip(cls_sizes[:-1], cls_sizes[1:])]
        return cls(enc, clf)

    def _check_chain(self):
        for layers in (self.encoder, self.classifier):
            for a, b in zip(layers[:-1], layers[1:]):
                if a.shape[1] != b.shape[0]:
                    raise ValueError(f"layer sizes do not chain: {a.shape} -> {b.shape}")
        if self.encoder[-1].shape[1] != self.classifier[0].shape[0]:
            raise ValueError("classifier input does not match the embedding dimension")

    @property
    def n_features(self) -> int:
        return self.encoder[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.encoder[-1].shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifier[-1].shape[1]

    @property
    def encoder_sizes(self) -> list[int]:
        return [self.encoder[0].shape[0]] + [l.shape[1] for l in self.encoder]

    @property
    def classifier_sizes(self) -> list[int]:
        return [self.classifier[0].shape[0]] + [l.shape[1] for l in self.classifier]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.encoder + self.classifier for t in (layer.weight, layer.bias)]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _as_input(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_features:
            raise ValueError(f"expected input with {self.n_features} features, got shape {x.shape}")
        return x

    def encode(self, x) -> Tensor:
        return _mlp(self.encoder, self._as_input(x))

    def classify(self, z) -> Tensor:
        z = ad.as_tensor(z)
        if z.shape[-1] != self.embedding_dim:
            raise ValueError(f"expected embeddings of dim {self.embedding_dim}, got shape {z.shape}")
        return _mlp(self.classifier, z)

    def logits(self, x) -> np.ndarray:
        return self.classify(self.encode(x)).data

    def embed(self, x) -> np.ndarray:
        return self.encode(x).data

    def predict(self, x) -> np.ndarray | int:
        """1-based rank of the largest logit (first index on ties)."""
        v = self.logits(x)
        return predict_from_logits(v)

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, state: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(state) != len(params):
            raise ValueError("state does not match the model's parameter list")
        for p, s in zip(params, state):
            if p.shape != np.shape(s):
                raise ValueError(f"shape mismatch {p.shape} vs {np.shape(s)}")
            p.data[...] = s

    def copy(self) -> "Model":
        clone = Model([Linear(l.weight.data.copy(), l.bias.data.copy()) for l in self.encoder],
                      [Linear(l.weight.data.copy(), l.bias.data.copy()) for l in self.classifier])
        return clone


def predict_from_logits(v) -> np.ndarray | int:
    v = np.asarray(v, dtype=np.float64)
    # np.argmax returns the first maximum, i.e. the lower rank on ties
    if v.ndim == 1:
        return int(np.argmax(v)) + 1
    return np.argmax(v, axis=1) + 1


def encode(model: Model, x) -> Tensor:
    return model.encode(x)


def predict(model: Model, x):
    return model.predict(x)


# -- checkpoints -----------------------------------------------------------------

def _layers_to_json(layers: Sequence[Linear]) -> list[dict]:
    return [{"weight": l.weight.data.ravel(order="C").tolist(), "bias": l.bias.data.tolist()}
            for l in layers]


def _layers_from_json(sizes: Sequence[int], entries: Sequence[dict]) -> list[Linear]:
    if len(entries) != len(sizes) - 1:
        raise CheckpointError("layer count does not match the recorded sizes")
    out = []
    for (a, b), e in zip(zip(sizes[:-1], sizes[1:]), entries):
        w = np.asarray(e["weight"], dtype=np.float64)
        bias = np.asarray(e["bias"], dtype=np.float64)
        if w.size != a * b or bias.size != b:
            raise CheckpointError(f"layer {a}x{b} has {w.size} weights and {bias.size} biases")
        out.append(Linear(w.reshape(a, b), bias))
    return out


def save_checkpoint(path, model: Model, margins: MarginSet | None = None, meta: dict | None = None) -> None:
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "encoder_sizes": model.encoder_sizes,
        "classifier_sizes": model.classifier_sizes,
        "encoder": _layers_to_json(model.encoder),
        "classifier": _layers_to_json(model.classifier),
        "margins": None if margins is None else margins.state_dict(),
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[Model, MarginSet | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    try:
        model = Model(_layers_from_json(payload["encoder_sizes"], payload["encoder"]),
                      _layers_from_json(payload["classifier_sizes"], payload["classifier"]))
        margins = None if payload.get("margins") is None else MarginSet.from_state_dict(payload["margins"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return model, margins, payload.get("meta", {})
