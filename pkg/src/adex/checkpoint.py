"""Self-describing binary checkpoints with a human-readable sidecar.

Layout: an 8-byte magic, a u32 format version, a length-prefixed JSON header
(model id, transform id, layer dimensions and activations, training-config
digest, rng seed, tensor index), the raw little-endian tensor payloads in
index order, and a trailing sha256 over everything before it. Loading the
same bytes and saving again reproduces them exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import get_model
from .nn.adam import AdamState
from .nn.layers import Layer
from .nn.tensor import Tensor
from .policy import FixedPolicy, NetworkPolicy, PolicyParams, apply_transform

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointChecksumError",
    "ModelMismatchError",
    "save_checkpoint",
    "load_checkpoint",
    "policy_from_checkpoint",
]

MAGIC = b"ADEXCKP\x01"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    """Base class for checkpoint load failures."""

    code = "checkpoint"


class CheckpointFormatError(CheckpointError):
    code = "format"


class CheckpointVersionError(CheckpointError):
    code = "version"


class CheckpointTruncatedError(CheckpointError):
    code = "truncated"


class CheckpointChecksumError(CheckpointError):
    code = "checksum"


class ModelMismatchError(CheckpointError):
    code = "model-mismatch"


@dataclass
class Checkpoint:
    """Everything needed to resume training or deploy the policy."""

    kind: str                      # "network" | "fixed"
    model_name: str
    model_params: dict
    header: dict                   # architecture + metadata
    tensors: dict[str, np.ndarray]
    adam: AdamState
    step: int
    config: dict
    config_digest: str
    seed: int
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))

    def checksum(self) -> str:
        return hashlib.sha256(_payload(self)).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _tensor_index(tensors: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str}
            for name, arr in tensors.items()]


def _payload(ckpt: Checkpoint) -> bytes:
    all_tensors = dict(ckpt.tensors)
    for name, arr in ckpt.adam.m.items():
        all_tensors[f"adam.m.{name}"] = arr
    for name, arr in ckpt.adam.v.items():
        all_tensors[f"adam.v.{name}"] = arr
    all_tensors["trace"] = np.asarray(ckpt.trace, dtype=np.float32)
    header = dict(ckpt.header)
    header.update({
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "model": ckpt.model_name,
        "model_params": ckpt.model_params,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "config_digest": ckpt.config_digest,
        "adam": {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "step": ckpt.adam.step},
        "tensors": _tensor_index(all_tensors),
    })
    hbytes = _canonical_json(header).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(hbytes)), hbytes]
    for name, arr in all_tensors.items():
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        parts.append(np.ascontiguousarray(le).tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write checkpoint + JSON sidecar; returns the sha256 checksum."""
    path = Path(path)
    payload = _payload(ckpt)
    digest = hashlib.sha256(payload).digest()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)
    sidecar = {
        "file": path.name,
        "sha256": digest.hex(),
        "kind": ckpt.kind,
        "model": ckpt.model_name,
        "model_params": ckpt.model_params,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "config_digest": ckpt.config_digest,
        "config": ckpt.config,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest.hex()


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    if len(blob) < len(MAGIC) + 8 + 32:
        raise CheckpointTruncatedError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic; not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointChecksumError(f"{path}: sha256 mismatch (corrupted file)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", payload, off)
    off += 8
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(payload[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: undecodable header: {exc}")
    off += hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(payload):
            raise CheckpointTruncatedError(
                f"{path}: tensor {entry['name']!r} extends past end of file")
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=off).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
        off += nbytes
    if off != len(payload):
        raise CheckpointFormatError(f"{path}: {len(payload) - off} trailing bytes")
    adam_h = header["adam"]
    adam = AdamState(beta1=adam_h["beta1"], beta2=adam_h["beta2"],
                     eps=adam_h["eps"], step=adam_h["step"])
    param_tensors = {}
    for name in list(tensors):
        if name.startswith("adam.m."):
            adam.m[name[len("adam.m."):]] = tensors.pop(name)
        elif name.startswith("adam.v."):
            adam.v[name[len("adam.v."):]] = tensors.pop(name)
    trace = tensors.pop("trace", np.zeros(0, np.float32))
    param_tensors = tensors
    return Checkpoint(
        kind=header["kind"], model_name=header["model"],
        model_params=header.get("model_params", {}), header=header,
        tensors=param_tensors, adam=adam, step=header["step"],
        config=header.get("config", {}), config_digest=header.get("config_digest", ""),
        seed=header["seed"], trace=trace)


# -- policy reconstruction ------------------------------------------------------

def header_from_policy(params: PolicyParams) -> dict:
    def spec(layers):
        return [[l.fan_in, l.fan_out, l.activation] for l in layers]

    return {
        "transform": params.transform,
        "pool_width": params.pool_width,
        "horizon": params.horizon,
        "encoder_spec": spec(params.encoder),
        "emitter_spec": spec(params.emitter),
        "heads_spec": None if params.heads is None else spec(params.heads),
        "raw_clamp": params.raw_clamp,
        "transform_scale": params.transform_scale,
    }


def tensors_from_policy(params: PolicyParams) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in params.named_parameters().items()}


def policy_params_from_checkpoint(ckpt: Checkpoint) -> PolicyParams:
    if ckpt.kind != "network":
        raise CheckpointFormatError("checkpoint does not hold a network policy")
    h = ckpt.header

    def build(prefix, spec):
        layers = []
        for i, (fi, fo, act) in enumerate(spec):
            W = Tensor(ckpt.tensors[f"{prefix}.{i}.W"].copy(), requires_grad=True,
                       name=f"{prefix}.{i}.W")
            b = Tensor(ckpt.tensors[f"{prefix}.{i}.b"].copy(), requires_grad=True,
                       name=f"{prefix}.{i}.b")
            if W.shape != (fi, fo):
                raise CheckpointFormatError(
                    f"tensor {prefix}.{i}.W has shape {W.shape}, header says {(fi, fo)}")
            layers.append(Layer(W, b, act))
        return layers

    heads = None
    if h["heads_spec"] is not None:
        hs = h["heads_spec"]
        heads = (
            Layer(Tensor(ckpt.tensors["heads.h.W"].copy(), requires_grad=True, name="heads.h.W"),
                  Tensor(ckpt.tensors["heads.h.b"].copy(), requires_grad=True, name="heads.h.b"),
                  hs[0][2]),
            Layer(Tensor(ckpt.tensors["heads.hp.W"].copy(), requires_grad=True, name="heads.hp.W"),
                  Tensor(ckpt.tensors["heads.hp.b"].copy(), requires_grad=True, name="heads.hp.b"),
                  hs[1][2]),
        )
    return PolicyParams(
        model_name=ckpt.model_name, transform=h["transform"],
        pool_width=h["pool_width"], horizon=h["horizon"],
        encoder=build("encoder", h["encoder_spec"]),
        emitter=build("emitter", h["emitter_spec"]), heads=heads,
        raw_clamp=h["raw_clamp"], transform_scale=h["transform_scale"],
        seed=ckpt.seed)


def policy_from_checkpoint(ckpt: Checkpoint, model=None, allow_any_horizon=False):
    """Rebuild a deployable policy; verifies model compatibility."""
    if model is None:
        model = get_model(ckpt.model_name, **ckpt.model_params)
    if model.name != ckpt.model_name:
        raise ModelMismatchError(
            f"checkpoint was trained for model {ckpt.model_name!r}, "
            f"requested {model.name!r}")
    if ckpt.kind == "network":
        params = policy_params_from_checkpoint(ckpt)
        return NetworkPolicy(params, model, allow_any_horizon=allow_any_horizon)
    if ckpt.kind == "fixed":
        raw = ckpt.tensors["fixed.raw"]
        h = ckpt.header
        designs = np.asarray(apply_transform(
            h["transform"], raw.astype(np.float64),
            scale=h.get("transform_scale", 100.0), clamp=h.get("raw_clamp")))
        return FixedPolicy(designs, model)
    raise CheckpointFormatError(f"unknown checkpoint kind {ckpt.kind!r}")
