"""Adam optimizer over flat parameter vectors.

Moment estimates are bias-corrected; the base learning rate shrinks by a
constant factor after every step (decay=1.0 keeps it fixed). State is plain
arrays so it can be checkpointed exactly.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "OptimError"]


class OptimError(RuntimeError):
    pass


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, decay=1.0):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.decay = float(decay)
        self.t = 0
        self.m = None
        self.v = None

    @property
    def effective_lr(self):
        """Learning rate that the next step will use."""
        return self.lr * self.decay**self.t

    def step(self, theta, grad):
        theta = np.asarray(theta, dtype=float)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != theta.shape:
            raise OptimError(f"grad shape {grad.shape} != param shape {theta.shape}")
        if not np.all(np.isfinite(grad)):
            bad = np.flatnonzero(~np.isfinite(grad))
            raise OptimError(
                f"non-finite gradient at indices {bad[:10].tolist()}"
                f"{' ...' if bad.size > 10 else ''}"
            )
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        lr_t = self.effective_lr
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return theta - lr_t * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "decay": self.decay,
        }

    @classmethod
    def from_state_dict(cls, d):
        opt = cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["decay"])
        opt.t = int(d["t"])
        opt.m = None if d["m"] is None else np.asarray(d["m"], dtype=float)
        opt.v = None if d["v"] is None else np.asarray(d["v"], dtype=float)
        return opt
