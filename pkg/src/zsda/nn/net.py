"""A layer stack with multi-pass-safe forward/backward and grad injection."""

import hashlib

import numpy as np


class Stack:
    """An ordered list of layers acting as one network branch."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, update_stats=True):
        """Returns (output, pass_record). The record holds per-layer caches
        and activations so several passes can coexist before backward."""
        caches, acts = [], []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, update_stats=update_stats)
            caches.append(cache)
            acts.append(x)
        return x, PassRecord(caches, acts)

    def backward(self, record, dy, from_layer=None, inject=None):
        """Backpropagate dy from the output of layer `from_layer` (default:
        last) down to the input. `inject` maps layer index -> extra gradient
        added at that layer's output on the way down. Returns dx."""
        start = len(self.layers) - 1 if from_layer is None else from_layer
        inject = inject or {}
        grad = dy
        for i in range(start, -1, -1):
            extra = inject.get(i)
            if extra is not None:
                grad = grad + extra
            grad = self.layers[i].backward(record.caches[i], grad)
        return grad

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


class PassRecord:
    __slots__ = ("caches", "acts")

    def __init__(self, caches, acts):
        self.caches = caches
        self.acts = acts


def unique_params(*param_lists):
    """Deduplicate aliased (tied) Params, preserving first-seen order."""
    seen, out = set(), []
    for plist in param_lists:
        for p in plist:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


def named_value_checksum(named_arrays):
    """sha256 over names plus raw little-endian bytes; order-independent."""
    digest = hashlib.sha256()
    for name in sorted(named_arrays):
        arr = np.ascontiguousarray(named_arrays[name])
        digest.update(name.encode())
        digest.update(str(arr.dtype).encode())
        digest.update(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return digest.hexdigest()
