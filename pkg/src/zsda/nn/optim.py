"""SGD and Adam over explicit parameter lists.

An optimizer only ever steps the params it was built with; gradients may be
accumulated on other params by backward passes and are simply ignored here.
Tied params must be deduplicated before construction (see unique_params),
otherwise a shared tensor would be stepped twice.
"""

import numpy as np

from ..errors import ConfigError


class SgdOptimizer:
    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p.value) for p in self.params] if momentum else None

    def step(self):
        for i, p in enumerate(self.params):
            if self.momentum:
                self.vel[i] *= self.momentum
                self.vel[i] += p.grad
                p.value -= self.lr * self.vel[i]
            else:
                p.value -= self.lr * p.grad

    def state_arrays(self):
        out = {"t": np.array([0], dtype=np.int64)}
        if self.vel is not None:
            for i, v in enumerate(self.vel):
                out[f"vel.{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        if self.vel is not None:
            for i in range(len(self.vel)):
                np.copyto(self.vel[i], arrays[f"vel.{i}"])


class AdamOptimizer:
    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            self.m[i] *= self.beta1
            self.m[i] += (1.0 - self.beta1) * p.grad
            self.v[i] *= self.beta2
            self.v[i] += (1.0 - self.beta2) * p.grad * p.grad
            mhat = self.m[i] / b1c
            vhat = self.v[i] / b2c
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.int64)}
        for i in range(len(self.params)):
            out[f"m.{i}"] = self.m[i]
            out[f"v.{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for i in range(len(self.params)):
            np.copyto(self.m[i], arrays[f"m.{i}"])
            np.copyto(self.v[i], arrays[f"v.{i}"])


def make_optimizer(kind, params, lr):
    if kind == "sgd":
        return SgdOptimizer(params, lr)
    if kind == "adam":
        return AdamOptimizer(params, lr)
    raise ConfigError(f"unknown optimizer kind: {kind!r} (expected 'sgd' or 'adam')")
