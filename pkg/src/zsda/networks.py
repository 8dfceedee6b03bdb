"""Network definitions: tied twin GAN pairs, task classifier, co-training
classifiers, and the small image classifiers used for evaluation.

Both generators have seven layer blocks (bottom 5 shared by default, last 2
private); both discriminators have seven (first 2 private, top 5 shared,
counting the flatten+sigmoid scoring head as the seventh). Sharing is by
aliasing: a shared block is literally the same object in both branches, so
its parameters have a single store and branch gradients accumulate into it.

Representation taps:
  R_l  output of the last private discriminator block (low-level, 14x14)
  R_h  output of the last shared block before the scoring head (7x7)

All image tensors are channels-last (N, H, W, C) in [-1, 1].
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Flatten,
    LeakyReLU,
    ReLU,
    Reshape,
    Stack,
    Tanh,
    load_tensors,
    save_tensors,
    sigmoid,
    unique_params,
)
from .rngutil import make_rng

GEN_LAYERS = 7
DISC_LAYERS = 7
SCORE_EPS = 1e-7


@dataclass
class ArchConfig:
    d_z: int = 100
    image_size: int = 28
    src_channels: int = 1
    tgt_channels: int = 1
    gen_widths: tuple = (128, 64, 32, 32, 16, 16)
    disc_widths: tuple = (16, 32, 32, 64, 64, 64)
    gen_shared_layers: int = 5
    disc_private_layers: int = 2
    norm: str = "gen-only"
    leak: float = 0.2

    def __post_init__(self):
        self.gen_widths = tuple(self.gen_widths)
        self.disc_widths = tuple(self.disc_widths)
        if self.image_size != 28:
            raise ConfigError("this architecture family is fixed to 28x28 images")
        if len(self.gen_widths) != 6 or len(self.disc_widths) != 6:
            raise ConfigError("gen_widths and disc_widths must list 6 channel counts")
        if not 1 <= self.gen_shared_layers <= GEN_LAYERS:
            raise ConfigError(f"gen_shared_layers must be in [1, {GEN_LAYERS}]")
        if not 1 <= self.disc_private_layers <= DISC_LAYERS - 1:
            raise ConfigError(f"disc_private_layers must be in [1, {DISC_LAYERS - 1}]")
        if self.src_channels != self.tgt_channels:
            if self.gen_shared_layers > GEN_LAYERS - 1:
                raise ConfigError("output layers cannot be shared across domains with different channels")
        if self.norm not in ("batch", "gen-only", "none"):
            raise ConfigError("norm must be 'batch', 'gen-only', or 'none'")

    def to_dict(self):
        return dataclasses.asdict(self)


class LayerBlock:
    """One architectural layer: a short run of primitives (conv/norm/act)."""

    def __init__(self, name, layers):
        self.name = name
        self.layers = layers

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                out.append((f"{i}.{p.name}", p))
        return out

    def named_state(self):
        out = []
        for i, layer in enumerate(self.layers):
            for key, arr in layer.state().items():
                out.append((f"{i}.{key}", arr))
        return out

    def copy_values_from(self, other):
        mine = dict(self.named_params())
        theirs = dict(other.named_params())
        if mine.keys() != theirs.keys():
            raise ConfigError(f"block {self.name}: parameter sets differ, cannot copy")
        for key, p in mine.items():
            if p.value.shape != theirs[key].value.shape:
                raise ConfigError(f"block {self.name}: shape mismatch on {key}")
            np.copyto(p.value, theirs[key].value)
        for (key, arr), (_, src_arr) in zip(self.named_state(), other.named_state()):
            np.copyto(arr, src_arr)


def _deep_copy_block(block):
    import copy
    return copy.deepcopy(block)


def _gen_block(i, arch, out_channels, rng, dtype):
    """Generator block i (0-based): dense stem, then up/conv stages to 28x28."""
    w = arch.gen_widths
    use_bn = arch.norm in ("batch", "gen-only")
    layers = []
    if i == 0:
        layers += [Dense(arch.d_z, w[0] * 7 * 7, rng, dtype=dtype), Reshape((7, 7, w[0]))]
        c_out = w[0]
    elif i in (1, 3):  # stride-1 refinement
        c_in, c_out = w[i - 1], w[i]
        layers += [ConvTranspose2d(c_in, c_out, 3, 1, 1, rng, dtype=dtype)]
    elif i in (2, 4):  # stride-2 upsampling: 7->14->28
        c_in, c_out = w[i - 1], w[i]
        layers += [ConvTranspose2d(c_in, c_out, 4, 2, 1, rng, dtype=dtype)]
    elif i == 5:
        layers += [Conv2d(w[4], w[5], 3, 1, 1, rng, dtype=dtype)]
        c_out = w[5]
    else:  # output layer: tanh, no norm
        layers += [Conv2d(w[5], out_channels, 3, 1, 1, rng, dtype=dtype), Tanh()]
        return LayerBlock(f"g{i}", layers)
    if use_bn:
        layers.append(BatchNorm2d(c_out, rng, dtype=dtype))
    layers.append(ReLU(inplace=True))
    return LayerBlock(f"g{i}", layers)


def _disc_block(i, arch, in_channels, rng, dtype):
    d = arch.disc_widths
    use_bn = arch.norm == "batch"
    layers = []
    if i == 0:  # no norm on the raw-image layer
        return LayerBlock("d0", [Conv2d(in_channels, d[0], 3, 1, 1, rng, dtype=dtype),
                                 LeakyReLU(arch.leak, inplace=True)])
    if i == 6:  # scoring head: flatten + dense to one logit
        return LayerBlock("d6", [Flatten(), Dense(d[5] * 7 * 7, 1, rng, dtype=dtype)])
    stride_2 = i in (1, 3)  # 28->14->7
    k, s = (4, 2) if stride_2 else (3, 1)
    layers.append(Conv2d(d[i - 1], d[i], k, s, 1, rng, dtype=dtype))
    if use_bn:
        layers.append(BatchNorm2d(d[i], rng, dtype=dtype))
    layers.append(LeakyReLU(arch.leak, inplace=True))
    return LayerBlock(f"d{i}", layers)


class Branch:
    """Flattened primitive stack for one branch, with block boundaries."""

    def __init__(self, blocks):
        self.blocks = blocks
        layers, self.block_end = [], []
        for b in blocks:
            layers.extend(b.layers)
            self.block_end.append(len(layers) - 1)
        self.stack = Stack(layers)

    def forward(self, x, train=False, update_stats=True):
        return self.stack.forward(x, train=train, update_stats=update_stats)

    def backward(self, record, dy, from_block=None, inject_blocks=None):
        from_layer = None if from_block is None else self.block_end[from_block]
        inject = None
        if inject_blocks:
            inject = {self.block_end[b]: g for b, g in inject_blocks.items()}
        return self.stack.backward(record, dy, from_layer=from_layer, inject=inject)

    def block_act(self, record, block_idx):
        return record.acts[self.block_end[block_idx]]

    def params(self):
        return self.stack.params()


@dataclass
class RepTaps:
    r_l: np.ndarray
    r_h: np.ndarray


@dataclass
class TieReport:
    passed: bool
    violations: list = field(default_factory=list)

    def __str__(self):
        return "tie ok" if self.passed else "tie violated: " + ", ".join(self.violations)


class TiedTwinNet:
    """Two-branch GAN pair with aliased shared blocks."""

    def __init__(self, arch: ArchConfig, seed: int, dtype=np.float32):
        self.arch = arch
        self.seed = seed
        self.dtype = dtype
        ns = arch.gen_shared_layers
        npriv = arch.disc_private_layers

        shared_rng = make_rng("cogan", seed, "shared")
        src_rng = make_rng("cogan", seed, "src")
        tgt_rng = make_rng("cogan", seed, "tgt")

        gen_shared = [_gen_block(i, arch, None, shared_rng, dtype) for i in range(ns)]
        gen1 = gen_shared + [_gen_block(i, arch, arch.src_channels, src_rng, dtype)
                             for i in range(ns, GEN_LAYERS)]
        gen2 = gen_shared + [_gen_block(i, arch, arch.tgt_channels, tgt_rng, dtype)
                             for i in range(ns, GEN_LAYERS)]

        disc1_priv = [_disc_block(i, arch, arch.src_channels, src_rng, dtype) for i in range(npriv)]
        disc2_priv = [_disc_block(i, arch, arch.tgt_channels, tgt_rng, dtype) for i in range(npriv)]
        disc_shared = [_disc_block(i, arch, None, shared_rng, dtype) for i in range(npriv, DISC_LAYERS)]
        self.gen_blocks = [gen1, gen2]
        self.disc_blocks = [disc1_priv + disc_shared, disc2_priv + disc_shared]
        self._rebuild_branches()

        self.rl_block = npriv - 1
        self.rh_block = DISC_LAYERS - 2

    def _rebuild_branches(self):
        self.gen = [Branch(self.gen_blocks[0]), Branch(self.gen_blocks[1])]
        self.disc = [Branch(self.disc_blocks[0]), Branch(self.disc_blocks[1])]

    # ---- structure helpers ---------------------------------------------------

    def disc_has_norm(self):
        return self.arch.norm == "batch"

    def gen_shared_idx(self):
        return range(self.arch.gen_shared_layers)

    def gen_private_idx(self):
        return range(self.arch.gen_shared_layers, GEN_LAYERS)

    def disc_private_idx(self):
        return range(self.arch.disc_private_layers)

    def disc_shared_idx(self):
        return range(self.arch.disc_private_layers, DISC_LAYERS)

    def gen_params(self, branch=None):
        if branch is None:
            return unique_params(self.gen[0].params(), self.gen[1].params())
        return unique_params(self.gen[branch].params())

    def disc_params(self, branch=None):
        if branch is None:
            return unique_params(self.disc[0].params(), self.disc[1].params())
        return unique_params(self.disc[branch].params())

    def all_params(self):
        return unique_params(self.gen_params(), self.disc_params())

    def alignment_params(self):
        """Shared generator/discriminator blocks plus target-branch privates."""
        groups = []
        for i in self.gen_shared_idx():
            groups.extend(p for _, p in self.gen_blocks[0][i].named_params())
        for i in self.gen_private_idx():
            groups.extend(p for _, p in self.gen_blocks[1][i].named_params())
        for i in self.disc_shared_idx():
            groups.extend(p for _, p in self.disc_blocks[0][i].named_params())
        for i in self.disc_private_idx():
            groups.extend(p for _, p in self.disc_blocks[1][i].named_params())
        return unique_params(groups)

    def source_branch_params(self):
        return unique_params(self.gen[0].params(), self.disc[0].params())

    # ---- forward passes ----------------------------------------------------

    def generate(self, z, branch, train=False, update_stats=True):
        if z.ndim != 2 or z.shape[1] != self.arch.d_z:
            raise ConfigError(f"noise must be (n, {self.arch.d_z}), got {z.shape}")
        return self.gen[branch].forward(z.astype(self.dtype, copy=False),
                                        train=train, update_stats=update_stats)

    def discriminate_full(self, x, branch, train=False, update_stats=True):
        expected = self.arch.src_channels if branch == 0 else self.arch.tgt_channels
        if x.ndim != 4 or x.shape[3] != expected:
            raise ConfigError(f"branch {branch} expects (n, 28, 28, {expected}) input, got {x.shape}")
        logit, record = self.disc[branch].forward(x.astype(self.dtype, copy=False),
                                                  train=train, update_stats=update_stats)
        return logit[:, 0], record

    def generate_pair_training(self, z, train=True, update_stats=True):
        """Forward both generator branches for one shared noise batch,
        computing the shared prefix once. Returns (x1, x2, pair_record)."""
        if z.ndim != 2 or z.shape[1] != self.arch.d_z:
            raise ConfigError(f"noise must be (n, {self.arch.d_z}), got {z.shape}")
        boundary = self.gen[0].block_end[self.arch.gen_shared_layers - 1]
        x = z.astype(self.dtype, copy=False)
        pre_caches = []
        for layer in self.gen[0].stack.layers[:boundary + 1]:
            x, c = layer.forward(x, train=train, update_stats=update_stats)
            pre_caches.append(c)
        outs, suffixes = [], []
        for b in (0, 1):
            y = x
            caches = []
            for layer in self.gen[b].stack.layers[boundary + 1:]:
                y, c = layer.forward(y, train=train, update_stats=update_stats)
                caches.append(c)
            outs.append(y)
            suffixes.append(caches)
        return outs[0], outs[1], {"boundary": boundary, "pre": pre_caches, "suf": suffixes}

    def generate_pair_backward(self, pair_record, dx1, dx2):
        """Backward for generate_pair_training; branch gradients are summed
        at the shared boundary so the prefix runs once."""
        boundary = pair_record["boundary"]
        grads = []
        for b, dx in ((0, dx1), (1, dx2)):
            g = dx
            layers = self.gen[b].stack.layers[boundary + 1:]
            for layer, cache in zip(reversed(layers), reversed(pair_record["suf"][b])):
                g = layer.backward(cache, g)
            grads.append(g)
        g = grads[0] + grads[1]
        for layer, cache in zip(reversed(self.gen[0].stack.layers[:boundary + 1]),
                                reversed(pair_record["pre"])):
            g = layer.backward(cache, g)
        return g

    def taps(self, record, branch):
        return RepTaps(
            r_l=self.disc[branch].block_act(record, self.rl_block),
            r_h=self.disc[branch].block_act(record, self.rh_block),
        )

    # ---- contracts ----------------------------------------------------------

    def tie_check(self):
        violations = []
        for i in self.gen_shared_idx():
            a, b = self.gen_blocks[0][i], self.gen_blocks[1][i]
            for (name, pa), (_, pb) in zip(a.named_params(), b.named_params()):
                if not np.array_equal(pa.value, pb.value):
                    violations.append(f"gen.shared.{i}.{name}")
        for i in self.disc_shared_idx():
            a, b = self.disc_blocks[0][i], self.disc_blocks[1][i]
            for (name, pa), (_, pb) in zip(a.named_params(), b.named_params()):
                if not np.array_equal(pa.value, pb.value):
                    violations.append(f"disc.shared.{i}.{name}")
        return TieReport(passed=not violations, violations=violations)

    def _untie_for_test(self, kind, block_idx):
        """Replace branch 2's reference to a shared block with a deep copy.
        Test backdoor for exercising tie_check failure paths."""
        blocks = self.gen_blocks if kind == "gen" else self.disc_blocks
        blocks[1][block_idx] = _deep_copy_block(blocks[1][block_idx])
        self._rebuild_branches()

    # ---- naming / serialization ---------------------------------------------

    def named_params(self):
        out = {}
        for i, block in enumerate(self.gen_blocks[0]):
            scope = "gen.shared" if i in self.gen_shared_idx() else "gen.src"
            for name, p in block.named_params():
                out[f"{scope}.{i}.{name}"] = p
        for i in self.gen_private_idx():
            for name, p in self.gen_blocks[1][i].named_params():
                out[f"gen.tgt.{i}.{name}"] = p
        for i, block in enumerate(self.disc_blocks[0]):
            scope = "disc.src" if i in self.disc_private_idx() else "disc.shared"
            for name, p in block.named_params():
                out[f"{scope}.{i}.{name}"] = p
        for i in self.disc_private_idx():
            for name, p in self.disc_blocks[1][i].named_params():
                out[f"disc.tgt.{i}.{name}"] = p
        return out

    def named_state(self):
        out = {}
        for i, block in enumerate(self.gen_blocks[0]):
            scope = "gen.shared" if i in self.gen_shared_idx() else "gen.src"
            for name, arr in block.named_state():
                out[f"{scope}.{i}.{name}"] = arr
        for i in self.gen_private_idx():
            for name, arr in self.gen_blocks[1][i].named_state():
                out[f"gen.tgt.{i}.{name}"] = arr
        for i, block in enumerate(self.disc_blocks[0]):
            scope = "disc.src" if i in self.disc_private_idx() else "disc.shared"
            for name, arr in block.named_state():
                out[f"{scope}.{i}.{name}"] = arr
        for i in self.disc_private_idx():
            for name, arr in self.disc_blocks[1][i].named_state():
                out[f"disc.tgt.{i}.{name}"] = arr
        return out


def build_cogan(arch: ArchConfig, seed: int, dtype=np.float32) -> TiedTwinNet:
    return TiedTwinNet(arch, seed, dtype=dtype)


def generate_pair(net: TiedTwinNet, z):
    """Deterministic (eval-mode) paired images from shared noise."""
    x1, _ = net.generate(z, 0, train=False, update_stats=False)
    x2, _ = net.generate(z, 1, train=False, update_stats=False)
    return x1, x2


def discriminate(net: TiedTwinNet, x, branch):
    """Eval-mode scores in (0,1) plus representation taps."""
    branch_idx = {"source": 0, "target": 1}.get(branch, branch)
    logit, record = net.discriminate_full(x, branch_idx, train=False, update_stats=False)
    score = np.clip(sigmoid(logit.astype(np.float64)), SCORE_EPS, 1.0 - SCORE_EPS)
    return score, net.taps(record, branch_idx)


def tie_check(net: TiedTwinNet) -> TieReport:
    return net.tie_check()


def clone_nonshared_target(src: TiedTwinNet, dst: TiedTwinNet):
    """Copy target-branch private generator/discriminator blocks, value for
    value, from src into dst. Shared and source-branch blocks are untouched,
    and the copies stay independent afterwards."""
    if src.arch != dst.arch:
        raise ConfigError(f"architecture mismatch: {src.arch} vs {dst.arch}")
    for i in dst.gen_private_idx():
        dst.gen_blocks[1][i].copy_values_from(src.gen_blocks[1][i])
    for i in dst.disc_private_idx():
        dst.disc_blocks[1][i].copy_values_from(src.disc_blocks[1][i])


# ---- small classifier nets --------------------------------------------------


class SimpleNet:
    """A single Stack with checkpointable named params and build metadata."""

    def __init__(self, stack: Stack, meta: dict):
        self.stack = stack
        self.meta = meta

    def forward(self, x, train=False, update_stats=True):
        return self.stack.forward(x, train=train, update_stats=update_stats)

    def backward(self, record, dy, inject=None):
        return self.stack.backward(record, dy, inject=inject)

    def params(self):
        return unique_params(self.stack.params())

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.stack.layers):
            for p in layer.params():
                out[f"layer.{i}.{p.name}"] = p
        return out

    def named_state(self):
        out = {}
        for i, layer in enumerate(self.stack.layers):
            for key, arr in layer.state().items():
                out[f"layer.{i}.{key}"] = arr
        return out

    def param_vector(self):
        return np.concatenate([p.value.ravel() for p in self.params()])


def build_task_classifier(in_channels, seed, widths=(32, 64, 64, 64), dtype=np.float32):
    """Four conv layers plus a scalar logistic head over shift maps (C,7,7)."""
    rng = make_rng("taskclf", seed)
    w = tuple(widths)
    layers = [
        Conv2d(in_channels, w[0], 3, 1, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),
        Conv2d(w[0], w[1], 4, 2, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),   # 7 -> 3
        Conv2d(w[1], w[2], 3, 1, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),
        Conv2d(w[2], w[3], 3, 2, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),   # 3 -> 2
        Flatten(), Dense(w[3] * 4, 1, rng, dtype=dtype),
    ]
    meta = {"kind": "task_classifier", "in_channels": in_channels, "widths": list(w), "seed": seed}
    return SimpleNet(Stack(layers), meta)


def build_cotrain_classifier(d_in, classes, seed, dtype=np.float32):
    """Three fully-connected layers (200, 50, c) over flattened R_l."""
    rng = make_rng("cotrain", seed)
    layers = [
        Dense(d_in, 200, rng, dtype=dtype), ReLU(inplace=True),
        Dense(200, 50, rng, dtype=dtype), ReLU(inplace=True),
        Dense(50, classes, rng, dtype=dtype),
    ]
    meta = {"kind": "cotrain_classifier", "d_in": d_in, "classes": classes, "seed": seed}
    return SimpleNet(Stack(layers), meta)


def build_phi_classifier(in_channels, classes, seed, widths=(32, 64, 128), dtype=np.float32):
    """Two conv + two fully-connected layers; softmax head over c classes."""
    rng = make_rng("phi", seed)
    w = tuple(widths)
    layers = [
        Conv2d(in_channels, w[0], 4, 2, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),  # 28 -> 14
        Conv2d(w[0], w[1], 4, 2, 1, rng, dtype=dtype), LeakyReLU(0.2, inplace=True),         # 14 -> 7
        Flatten(),
        Dense(w[1] * 49, w[2], rng, dtype=dtype), ReLU(inplace=True),
        Dense(w[2], classes, rng, dtype=dtype),
    ]
    meta = {"kind": "phi_classifier", "in_channels": in_channels, "classes": classes,
            "widths": list(w), "seed": seed}
    return SimpleNet(Stack(layers), meta)


_BUILDERS = {
    "task_classifier": lambda m: build_task_classifier(m["in_channels"], m["seed"], widths=m["widths"]),
    "cotrain_classifier": lambda m: build_cotrain_classifier(m["d_in"], m["classes"], m["seed"]),
    "phi_classifier": lambda m: build_phi_classifier(m["in_channels"], m["classes"], m["seed"],
                                                     widths=m["widths"]),
}


# ---- checkpoints --------------------------------------------------------------


def save_checkpoint(obj, ckpt_dir, extra_meta=None):
    """Write params.bin + arch.json for a TiedTwinNet or SimpleNet."""
    os.makedirs(ckpt_dir, exist_ok=True)
    if isinstance(obj, TiedTwinNet):
        arch = {"kind": "cogan", "arch": obj.arch.to_dict(), "seed": obj.seed}
    else:
        arch = dict(obj.meta)
    if extra_meta:
        arch["meta"] = extra_meta
    tensors = {f"param.{k}": p.value for k, p in obj.named_params().items()}
    tensors.update({f"state.{k}": arr for k, arr in obj.named_state().items()})
    save_tensors(os.path.join(ckpt_dir, "params.bin"), tensors)
    with open(os.path.join(ckpt_dir, "arch.json"), "w") as fh:
        json.dump(arch, fh, indent=1, sort_keys=True)


def _fill_from_tensors(obj, tensors, ckpt_dir):
    named = obj.named_params()
    state = obj.named_state()
    expected = {f"param.{k}" for k in named} | {f"state.{k}" for k in state}
    if expected != set(tensors):
        missing = sorted(expected - set(tensors))[:3]
        extra = sorted(set(tensors) - expected)[:3]
        raise ConfigError(f"{ckpt_dir}: checkpoint does not match architecture "
                          f"(missing {missing}, unexpected {extra})")
    for k, p in named.items():
        arr = tensors[f"param.{k}"]
        if arr.shape != p.value.shape:
            raise ConfigError(f"{ckpt_dir}: shape mismatch for {k}")
        np.copyto(p.value, arr.astype(p.value.dtype))
    for k, dst in state.items():
        np.copyto(dst, tensors[f"state.{k}"].astype(dst.dtype))


def load_checkpoint(ckpt_dir, expect_kind=None):
    """Rebuild a net from arch.json and fill parameters from params.bin."""
    with open(os.path.join(ckpt_dir, "arch.json")) as fh:
        arch = json.load(fh)
    kind = arch.get("kind")
    if expect_kind and kind != expect_kind:
        raise ConfigError(f"{ckpt_dir}: checkpoint kind {kind!r}, expected {expect_kind!r}")
    if kind == "cogan":
        obj = build_cogan(ArchConfig(**arch["arch"]), arch["seed"])
    elif kind in _BUILDERS:
        obj = _BUILDERS[kind](arch)
    else:
        raise ConfigError(f"{ckpt_dir}: unknown checkpoint kind {kind!r}")
    tensors = load_tensors(os.path.join(ckpt_dir, "params.bin"))
    _fill_from_tensors(obj, tensors, ckpt_dir)
    return obj
