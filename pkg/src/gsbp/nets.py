"""Small fully connected tanh networks over flat parameter vectors.

The flat layout is [W1.ravel(), b1, W2.ravel(), b2, ...] with row-major W of
shape (fan_in, fan_out). `forward` accepts either plain arrays (fast numeric
path) or tape nodes for the parameters and/or inputs, so the same code serves
training, nested-derivative residuals, and deployment.

Checkpoints are JSON with the parameter vector embedded as base64 raw little
endian float64 bytes; a save/load round trip is bit exact.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from . import autodiff as ad

__all__ = ["Mlp", "MlpSpec", "load_checkpoint", "save_checkpoint"]


class MlpSpec:
    def __init__(self, in_dim, hidden, out_dim):
        self.in_dim = int(in_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.out_dim = int(out_dim)

    @property
    def sizes(self):
        return (self.in_dim,) + self.hidden + (self.out_dim,)

    @property
    def n_params(self):
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def to_dict(self):
        return {"in_dim": self.in_dim, "hidden": list(self.hidden), "out_dim": self.out_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["in_dim"], d["hidden"], d["out_dim"])

    def __eq__(self, other):
        return isinstance(other, MlpSpec) and self.sizes == other.sizes

    def __repr__(self):
        return f"MlpSpec({self.in_dim}, {list(self.hidden)}, {self.out_dim})"


class Mlp:
    """tanh MLP; linear output layer."""

    def __init__(self, spec, theta=None, seed=0):
        self.spec = spec
        if theta is None:
            theta = glorot_init(spec, seed)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (spec.n_params,):
            raise ValueError(f"theta shape {theta.shape} != ({spec.n_params},)")
        self.theta = theta

    def unpack(self, theta):
        """Split a flat vector (array or node) into [(W, b), ...]."""
        sizes = self.spec.sizes
        out = []
        off = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            W = ad.reshape(theta[off : off + a * b], (a, b))
            off += a * b
            bias = theta[off : off + b]
            off += b
            out.append((W, bias))
        return out

    def forward(self, X, theta=None):
        """Batched forward pass; X has shape (B, in_dim), output (B, out_dim)."""
        params = self.unpack(self.theta if theta is None else theta)
        h = X
        for W, b in params[:-1]:
            h = ad.tanh(ad.add(ad.matmul(h, W), b))
        W, b = params[-1]
        return ad.add(ad.matmul(h, W), b)

    def __call__(self, X, theta=None):
        return self.forward(X, theta)


def glorot_init(spec, seed):
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(spec.sizes[:-1], spec.sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def _encode_vec(v):
    return base64.b64encode(np.asarray(v, dtype="<f8").tobytes()).decode("ascii")


def _decode_vec(s):
    return np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").copy()


def save_checkpoint(path, net, extra=None):
    """Write net spec + parameters (+ an optional JSON-safe extra dict)."""
    payload = {
        "kind": "mlp",
        "spec": net.spec.to_dict(),
        "dtype": "<f8",
        "theta_b64": _encode_vec(net.theta),
    }
    if extra is not None:
        payload["extra"] = extra
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (net, extra) with parameters identical to what was saved."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "mlp":
        raise ValueError(f"not an mlp checkpoint: {path}")
    spec = MlpSpec.from_dict(payload["spec"])
    net = Mlp(spec, theta=_decode_vec(payload["theta_b64"]))
    return net, payload.get("extra")
