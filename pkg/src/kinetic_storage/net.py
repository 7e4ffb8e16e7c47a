"""Decoupling-field network ``u(t, S, H, V, X)`` and its checkpoint format.

The network is a plain sine MLP.  ``value_and_zeta`` returns the value together
with ``zeta_c = du/dc * sigma_c`` for c in (S, H, V); derivatives come from
forward-mode tangents, so under a tape both outputs are differentiable with
respect to the weights.

Checkpoint layout: one line of UTF-8 JSON (sorted keys) terminated by ``\\n``,
followed by the weights (and optional extra segments) as little-endian IEEE-754
float64.  The header lists every segment with its length.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ensemble import DOMAIN_WEIGHTS, RngStream
from .errors import ValidationError

CHECKPOINT_FORMAT = "kinetic-storage-checkpoint"
CHECKPOINT_VERSION = 1
FULL_HIDDEN = (256, 256, 256, 256)
DESK_HIDDEN = (64, 64, 64, 64)
N_INPUTS = 5  # t, S, H, V, X
ZETA_INPUTS = (1, 2, 3)  # S, H, V columns of the network input


@dataclass
class MlpParams:
    sizes: tuple
    weights: list
    biases: list
    activation: str = "sin"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.activation != "sin":
            raise ValidationError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValidationError("layer count does not match sizes")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, sizes, flat, activation="sin"):
        flat = np.asarray(flat, dtype=float)
        weights, biases, pos = [], [], 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos:pos + a * b].reshape(a, b))
            pos += a * b
            biases.append(flat[pos:pos + b].copy())
            pos += b
        if pos != flat.size:
            raise ValidationError(f"flat vector has {flat.size} entries, architecture needs {pos}")
        return cls(tuple(sizes), weights, biases, activation)

    @classmethod
    def from_arrays(cls, sizes, arrays, activation="sin"):
        return cls(tuple(sizes), list(arrays[0::2]), list(arrays[1::2]), activation)

    def copy(self):
        return MlpParams.from_flat(self.sizes, self.flatten().copy(), self.activation)


def init_params(hidden=DESK_HIDDEN, seed: int = 0, n_inputs: int = N_INPUTS) -> MlpParams:
    """Xavier (Glorot) normal weights, variance 2 / (fan_in + fan_out); zero biases."""
    sizes = (n_inputs, *hidden, 1)
    stream = RngStream(seed)
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        gen = stream.generator(DOMAIN_WEIGHTS, layer)
        weights.append(std * gen.standard_normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases)


@dataclass
class InputScaler:
    """Affine standardisation of (t, S, H, V, X) plus an output affine map."""

    shift: np.ndarray = field(default_factory=lambda: np.zeros(N_INPUTS))
    scale: np.ndarray = field(default_factory=lambda: np.ones(N_INPUTS))
    out_shift: float = 0.0
    out_scale: float = 1.0

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale == 0) or self.out_scale == 0:
            raise ValidationError("scaler scales must be nonzero")

    @classmethod
    def fit(cls, t, states, out_shift=0.0, out_scale=1.0, min_scale=1e-8, floor=None):
        """Standardise from pilot samples.

        Near-constant coordinates keep unit scale; ``floor`` (length 5) puts a
        lower bound on each scale, for coordinates whose pilot spread is
        smaller than their range under control.
        """
        inputs = _stack_inputs(np.asarray(t, dtype=float).ravel(), np.asarray(states, dtype=float).reshape(-1, 4))
        shift = inputs.mean(axis=0)
        scale = inputs.std(axis=0)
        scale = np.where(scale > min_scale, scale, 1.0)
        if floor is not None:
            scale = np.maximum(scale, np.asarray(floor, dtype=float))
        return cls(shift, scale, float(out_shift), float(out_scale))

    def transform(self, t, states):
        return (_stack_inputs(t, states) - self.shift) / self.scale

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist(),
                "out_shift": self.out_shift, "out_scale": self.out_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(d["shift"], d["scale"], d["out_shift"], d["out_scale"])


def _stack_inputs(t, states):
    states = np.asarray(states, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), states.shape[:-1])
    return np.concatenate([t[..., None], states], axis=-1)


def _mlp(weights, biases, h):
    n = len(weights)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < n - 1:
            h = ad.sin(h)
    return h


def forward(params: MlpParams, scaler: InputScaler, t, states):
    """Network value for each row of ``states`` ``(..., 4)`` at times ``t``."""
    x = scaler.transform(t, states)
    raw = _mlp(params.weights, params.biases, x)[..., 0]
    return raw * scaler.out_scale + scaler.out_shift


def value_and_zeta(params: MlpParams, scaler: InputScaler, t, states, sigma_diag,
                   literal_sigma: bool = False):
    """Value ``y`` and ``zeta`` ``(..., 3)`` for (S, H, V).

    ``sigma_diag`` holds the diffusion of S, H and V.  By default the S entry
    is the level diffusion ``sigma^S * S``; pass the bare log-volatility with
    ``literal_sigma=True`` to use ``diag(sigma^S, sigma^H, sigma^V)`` as is.
    """
    x = scaler.transform(t, states)
    # seed d(input)/d(raw coordinate) so tangents are derivatives in physical units
    seeds = [1.0 / scaler.scale[c] for c in ZETA_INPUTS]
    dual = ad.DualValue.seed(x, ZETA_INPUTS, seeds)
    out = _mlp(params.weights, params.biases, dual)
    y = out.primal[..., 0] * scaler.out_scale + scaler.out_shift
    grads = out.tangent[..., 0] * scaler.out_scale  # (3, ...)
    sig = np.asarray(sigma_diag, dtype=float)
    if literal_sigma:
        sig = sig.copy()
        sig[..., 0] = sig[..., 0] / np.asarray(states)[..., 0]
    zeta = ad.stack([grads[j] * sig[..., j] for j in range(3)], axis=-1)
    return y, zeta


def input_gradient(params: MlpParams, scaler: InputScaler, t, states):
    """du/d(S, H, V, X) as a plain array ``(..., 4)``."""
    x = scaler.transform(t, states)
    seeds = [1.0 / scaler.scale[c] for c in (1, 2, 3, 4)]
    out = _mlp(params.weights, params.biases, ad.DualValue.seed(x, (1, 2, 3, 4), seeds))
    return np.moveaxis(out.tangent[..., 0] * scaler.out_scale, 0, -1)


# checkpoint I/O ------------------------------------------------------------

def save_checkpoint(path, params: MlpParams, scaler: InputScaler, seed: int = 0, epoch: int = 0,
                    extra_segments: dict | None = None, metadata: dict | None = None) -> None:
    segments = [("params", params.flatten())]
    for name, arr in (extra_segments or {}).items():
        segments.append((name, np.asarray(arr, dtype=float).ravel()))
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {"sizes": list(params.sizes), "activation": params.activation},
        "scaler": scaler.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "payload": {"dtype": "<f8", "segments": [{"name": n, "length": int(a.size)} for n, a in segments]},
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        for _, arr in segments:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, scaler, header, segments)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("not a kinetic-storage checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {header.get('version')}")
    payload = np.frombuffer(raw[nl + 1:], dtype="<f8")
    segments, pos = {}, 0
    for seg in header["payload"]["segments"]:
        segments[seg["name"]] = payload[pos:pos + seg["length"]].astype(float)
        pos += seg["length"]
    if pos != payload.size:
        raise ValidationError("checkpoint payload length mismatch")
    arch = header["architecture"]
    params = MlpParams.from_flat(arch["sizes"], segments["params"], arch["activation"])
    return params, InputScaler.from_dict(header["scaler"]), header, segments
