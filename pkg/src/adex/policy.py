"""Design policies: the trained network, and random/fixed baselines.

The network policy encodes each (design, outcome) pair with a shared encoder,
pools the per-pair representations by summation, and maps the pooled vector
through an emitter network to an unconstrained design, which a per-model
transform maps onto the valid design set.

Pooling sums the pair encodings in a canonical content-determined order
(lexicographic on the encoder inputs), so reordering a history produces a
bitwise-identical design, not merely one equal up to float reassociation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .models.base import ExperimentModel, History
from .nn import tensor as T
from .nn.layers import Layer, init_layer, mlp_forward
from .nn.rng import RngStream

__all__ = [
    "HorizonError",
    "PolicyParams",
    "NetworkPolicy",
    "RandomPolicy",
    "FixedPolicy",
    "TrainableFixedPolicy",
    "apply_transform",
    "make_policy_params",
    "ARCHITECTURES",
]

RAW_CLAMP = 10.0  # |raw| bound before exp/sigmoid, keeps the inverse finite


class HorizonError(RuntimeError):
    """History already reached the policy's training horizon."""


# -- design transforms --------------------------------------------------------

def apply_transform(transform: str, raw, *, scale: float = 100.0, clamp: float | None = None):
    """Map unconstrained emitter output onto the model's design set.

    identity:    raw designs pass through (location).
    exp_sigmoid: raw = (xi_d, xi_r) -> design (R, D) = (scale*sigmoid(xi_r), exp(xi_d)),
                 with raw clamped to +-clamp first (hyperbolic).
    softplus:    design = softplus(raw) > 0 (death).
    """
    if transform == "identity":
        return raw
    if transform == "softplus":
        return T.softplus(raw)
    if transform == "exp_sigmoid":
        if clamp is not None:
            raw = T.clip(raw, -clamp, clamp)
        d = T.exp(raw[..., 0:1])
        r = T.mul(scale, T.sigmoid(raw[..., 1:2]))
        return T.concat([r, d], axis=-1)
    raise ValueError(f"unknown design transform {transform!r}")


# -- parameters ----------------------------------------------------------------

@dataclass
class PolicyParams:
    """Trained design-network weights plus the metadata needed to run them."""

    model_name: str
    transform: str
    pool_width: int
    horizon: int
    encoder: list[Layer]
    emitter: list[Layer]
    heads: tuple[Layer, Layer] | None = None
    raw_clamp: float | None = None
    transform_scale: float = 100.0
    seed: int = 0

    def named_parameters(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for i, layer in enumerate(self.encoder):
            out[f"encoder.{i}.W"] = layer.W
            out[f"encoder.{i}.b"] = layer.b
        if self.heads is not None:
            for tag, layer in zip(("h", "hp"), self.heads):
                out[f"heads.{tag}.W"] = layer.W
                out[f"heads.{tag}.b"] = layer.b
        for i, layer in enumerate(self.emitter):
            out[f"emitter.{i}.W"] = layer.W
            out[f"emitter.{i}.b"] = layer.b
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.model_name}|{self.transform}|{self.pool_width}|{self.horizon}".encode())
        for name, p in sorted(self.named_parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def astype(self, dtype) -> "PolicyParams":
        def conv(layer: Layer) -> Layer:
            return Layer(T.Tensor(layer.W.data.astype(dtype), requires_grad=True, name=layer.W.name),
                         T.Tensor(layer.b.data.astype(dtype), requires_grad=True, name=layer.b.name),
                         layer.activation)

        return PolicyParams(
            model_name=self.model_name, transform=self.transform,
            pool_width=self.pool_width, horizon=self.horizon,
            encoder=[conv(l) for l in self.encoder],
            emitter=[conv(l) for l in self.emitter],
            heads=None if self.heads is None else tuple(conv(l) for l in self.heads),
            raw_clamp=self.raw_clamp, transform_scale=self.transform_scale,
            seed=self.seed)


# Architecture tables: (encoder trunk widths+acts, head width or None, emitter widths+acts)
ARCHITECTURES = {
    "location": {
        "encoder": [(256, "relu"), (16, "identity")],
        "heads": None,
        "emitter": [(None, "identity")],  # single linear layer pool -> design_dim
    },
    "hyperbolic": {
        "encoder": [(256, "softplus"), (256, "softplus")],
        "heads": 16,
        "emitter": [(256, "softplus"), (256, "softplus"), (None, "identity")],
    },
    "death": {
        "encoder": [(128, "softplus"), (128, "softplus"), (16, "identity")],
        "heads": None,
        "emitter": [(128, "softplus"), (128, "softplus"), (None, "softplus")],
    },
}


def _encoder_input_width(model: ExperimentModel) -> int:
    # hyperbolic feeds (xi_d, xi_r) only; the outcome gates the two heads
    if model.name == "hyperbolic":
        return 2
    return model.design_dim + 1


def make_policy_params(model: ExperimentModel, horizon: int, rng: RngStream,
                       dtype=np.float32, pool_width: int = 16,
                       encoder_spec=None, emitter_spec=None, head_width=None,
                       raw_dim: int | None = None) -> PolicyParams:
    """Initialize policy weights for a model (architecture table defaults).

    ``encoder_spec``/``emitter_spec`` override the hidden layers as lists of
    (width, activation); the reduced nets used by gradient cross-checks pass
    these explicitly.
    """
    arch = ARCHITECTURES[model.name]
    encoder_spec = list(arch["encoder"]) if encoder_spec is None else list(encoder_spec)
    emitter_spec = list(arch["emitter"]) if emitter_spec is None else list(emitter_spec)
    if head_width is None:
        head_width = arch["heads"]
    if raw_dim is None:
        raw_dim = model.design_dim

    enc_layers: list[Layer] = []
    width = _encoder_input_width(model)
    heads = None
    if head_width is None:
        spec = encoder_spec[:-1] + [(pool_width, encoder_spec[-1][1])]
    else:
        spec = encoder_spec
    for i, (w, act) in enumerate(spec):
        enc_layers.append(init_layer(rng.child("encoder", i).gen, width, w, act,
                                     dtype=dtype, name=f"encoder.{i}"))
        width = w
    if head_width is not None:
        heads = (
            init_layer(rng.child("head", 0).gen, width, head_width, "identity",
                       dtype=dtype, name="heads.h"),
            init_layer(rng.child("head", 1).gen, width, head_width, "identity",
                       dtype=dtype, name="heads.hp"),
        )
        pool_width = head_width

    emit_layers: list[Layer] = []
    width = pool_width
    for i, (w, act) in enumerate(emitter_spec):
        out_w = raw_dim if w is None else w
        emit_layers.append(init_layer(rng.child("emitter", i).gen, width, out_w, act,
                                      dtype=dtype, name=f"emitter.{i}"))
        width = out_w

    return PolicyParams(
        model_name=model.name, transform=model.transform, pool_width=pool_width,
        horizon=horizon, encoder=enc_layers, emitter=emit_layers, heads=heads,
        raw_clamp=RAW_CLAMP if model.transform == "exp_sigmoid" else None,
        transform_scale=getattr(model, "delayed_reward", 100.0), seed=rng.seed)


# -- run state -----------------------------------------------------------------

@dataclass
class _Run:
    """Incremental forward state for a batch of histories."""

    batch: int
    dtype: object
    encodings: list = field(default_factory=list)   # each (B, pool_width)
    keys: list = field(default_factory=list)        # each (B, key_cols) plain arrays
    length: int = 0
    rng: RngStream | None = None


class NetworkPolicy:
    """Deterministic design network: encoder -> sum pooling -> emitter."""

    kind = "network"

    def __init__(self, params: PolicyParams, model: ExperimentModel,
                 allow_any_horizon: bool = False):
        if params.model_name != model.name:
            raise ValueError(
                f"checkpoint is for model {params.model_name!r}, got {model.name!r}")
        self.params = params
        self.model = model
        self.allow_any_horizon = allow_any_horizon

    @property
    def horizon(self) -> int | None:
        return None if self.allow_any_horizon else self.params.horizon

    def checksum(self) -> str:
        return self.params.checksum()

    # -- single-pair encoding -------------------------------------------------

    def encode_pair(self, xi, y):
        """Representation of one (design, outcome) pair, shape (B, pool_width)."""
        enc_in = self.model.encoder_design_input(xi)
        if self.model.name != "hyperbolic":
            y_in = self.model.encode_outcome(y)
            enc_in = T.concat([enc_in, y_in], axis=-1)
        hidden = mlp_forward(self.params.encoder, enc_in)
        if self.params.heads is None:
            return hidden
        h = mlp_forward([self.params.heads[0]], hidden)
        hp = mlp_forward([self.params.heads[1]], hidden)
        yd = np.asarray(T._data(y))
        return T.add(T.mul(yd, h), T.mul(1.0 - yd, hp))

    def _pair_key(self, xi, y) -> np.ndarray:
        enc_in = np.asarray(T._data(self.model.encoder_design_input(xi)))
        yd = np.asarray(T._data(y), dtype=enc_in.dtype)
        return np.concatenate([enc_in, yd], axis=-1)

    # -- pooled representation ---------------------------------------------------

    def pool(self, run: _Run):
        """R(h_t): canonical-order sum of pair encodings; empty history -> 0."""
        if run.length == 0:
            return np.zeros((run.batch, self.params.pool_width), dtype=run.dtype)
        if run.length == 1:
            return run.encodings[0]
        stacked = T.stack(run.encodings, axis=1)          # (B, t, P)
        keys = np.stack(run.keys, axis=1)                  # (B, t, C)
        order = np.lexsort(tuple(keys[:, :, c] for c in reversed(range(keys.shape[2]))),
                           axis=-1)
        return T.tsum(T.permute_along_axis(stacked, order, axis=1), axis=1)

    def emit(self, pooled):
        """Unconstrained design from the pooled representation."""
        return mlp_forward(self.params.emitter, pooled)

    # -- rollout protocol ---------------------------------------------------------

    def start(self, batch: int, *, dtype=None, rng: RngStream | None = None) -> _Run:
        return _Run(batch=batch, dtype=dtype or self.params.encoder[0].W.dtype)

    def step(self, run: _Run):
        if self.horizon is not None and run.length >= self.horizon:
            raise HorizonError(
                f"history length {run.length} reached the trained horizon "
                f"{self.params.horizon}; enable allow_any_horizon to generalize")
        raw = self.emit(self.pool(run))
        return apply_transform(self.params.transform, raw,
                               scale=self.params.transform_scale,
                               clamp=self.params.raw_clamp)

    def observe(self, run: _Run, xi, y) -> None:
        run.encodings.append(self.encode_pair(xi, y))
        run.keys.append(self._pair_key(xi, y))
        run.length += 1

    # -- deployment surface ---------------------------------------------------------

    def apply(self, history: History) -> np.ndarray:
        """Next design for a single history (one forward pass, no tracing)."""
        with T.no_grad():
            run = self.start(1)
            for t in range(len(history)):
                self.observe(run,
                             history.designs[t:t + 1].astype(run.dtype),
                             history.outcomes[t:t + 1].astype(run.dtype))
            design = self.step(run)
        return np.asarray(T._data(design))[0]


class RandomPolicy:
    """Uniform draws over the model's design box, ignoring the history."""

    kind = "random"

    def __init__(self, model: ExperimentModel, rng: RngStream):
        self.model = model
        self.rng = rng
        self.horizon = None

    def checksum(self) -> str:
        return hashlib.sha256(f"random|{self.model.name}|{self.rng.seed}".encode()).hexdigest()

    def start(self, batch: int, *, dtype=np.float64, rng: RngStream | None = None) -> _Run:
        run = _Run(batch=batch, dtype=dtype)
        run.rng = rng if rng is not None else self.rng
        return run

    def step(self, run: _Run) -> np.ndarray:
        gen = run.rng.child("design", run.length).gen
        lo = self.model.design_box[:, 0]
        hi = self.model.design_box[:, 1]
        return gen.uniform(lo, hi, size=(run.batch, self.model.design_dim))

    def observe(self, run: _Run, xi, y) -> None:
        run.length += 1

    def apply(self, history: History) -> np.ndarray:
        run = self.start(1, rng=self.rng.child("apply"))
        run.length = len(history)
        return self.step(run)[0]


class FixedPolicy:
    """A static schedule: designs chosen before any outcome is seen."""

    kind = "fixed"

    def __init__(self, designs: np.ndarray, model: ExperimentModel):
        self.designs = np.atleast_2d(np.asarray(designs, dtype=np.float64))
        self.model = model
        self.horizon = self.designs.shape[0]

    def checksum(self) -> str:
        return hashlib.sha256(b"fixed|" + self.designs.tobytes()).hexdigest()

    def start(self, batch: int, *, dtype=np.float64, rng: RngStream | None = None) -> _Run:
        return _Run(batch=batch, dtype=dtype)

    def step(self, run: _Run) -> np.ndarray:
        if run.length >= self.horizon:
            raise HorizonError(
                f"fixed schedule exhausted after {self.horizon} designs")
        return np.broadcast_to(self.designs[run.length],
                               (run.batch, self.designs.shape[1])).copy()

    def observe(self, run: _Run, xi, y) -> None:
        run.length += 1

    def apply(self, history: History) -> np.ndarray:
        run = self.start(1)
        run.length = len(history)
        return self.step(run)[0]


class TrainableFixedPolicy:
    """The fixed baseline in trainable form: T raw design vectors.

    Its parameters are exactly horizon * raw_dim values passed through the
    model's design transform; it trains with the same loop as the network.
    """

    kind = "fixed"

    def __init__(self, model: ExperimentModel, horizon: int, rng: RngStream,
                 dtype=np.float32, init_scale: float = 0.5):
        self.model = model
        self.horizon = horizon
        raw = rng.child("fixed-init").gen.normal(
            0.0, init_scale, size=(horizon, model.design_dim)).astype(dtype)
        self.raw = T.Tensor(raw, requires_grad=True, name="fixed.raw")
        self.raw_clamp = RAW_CLAMP if model.transform == "exp_sigmoid" else None
        self.transform_scale = getattr(model, "delayed_reward", 100.0)

    def named_parameters(self) -> dict[str, T.Tensor]:
        return {"fixed.raw": self.raw}

    def checksum(self) -> str:
        return hashlib.sha256(b"fixed|" + self.raw.data.tobytes()).hexdigest()

    def materialize(self) -> FixedPolicy:
        with T.no_grad():
            designs = np.asarray(T._data(self.designs()))
        return FixedPolicy(designs, self.model)

    def designs(self):
        return apply_transform(self.model.transform, self.raw,
                               scale=self.transform_scale, clamp=self.raw_clamp)

    def start(self, batch: int, *, dtype=None, rng: RngStream | None = None) -> _Run:
        return _Run(batch=batch, dtype=dtype or self.raw.dtype)

    def step(self, run: _Run):
        if run.length >= self.horizon:
            raise HorizonError(f"fixed schedule exhausted after {self.horizon} designs")
        row = self.raw[run.length:run.length + 1]
        design = apply_transform(self.model.transform, row,
                                 scale=self.transform_scale, clamp=self.raw_clamp)
        return T.repeat_rows(design, run.batch)

    def observe(self, run: _Run, xi, y) -> None:
        run.length += 1

    def apply(self, history: History) -> np.ndarray:
        with T.no_grad():
            run = self.start(1)
            run.length = len(history)
            return np.asarray(T._data(self.step(run)))[0]
