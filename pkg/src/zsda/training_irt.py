"""CoGAN training on the dual-domain irrelevant task, and extraction of the
domain-shift sample bank from the trained pair.

The two views feed the branches independently (plain marginal sampling; no
pairing information is consumed). Each iteration does one discriminator
update over both branches with summed loss, then one generator update with
the non-saturating objective.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .domains import batch_iter
from .errors import TrainingDivergedError, ZsdaError
from .networks import TiedTwinNet, generate_pair
from .nn import make_optimizer, sigmoid, zero_grads
from .nn.layers import softplus
from .rngutil import make_rng, rng_state, set_rng_state

LOG_EPS = 1e-7


@dataclass
class GanHyperparams:
    learning_rate: float = 2e-4
    batch_size: int = 128
    optimizer: str = "sgd"
    iters: int = 2000
    d_z: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iters < 0:
            raise ZsdaError("gan hyperparameters must be positive")


@dataclass
class ShiftSample:
    delta_h: np.ndarray


def gan_loss(real_scores, fake_scores):
    """Eq.-style GAN losses from discriminator scores in (0,1).

    disc = mean[-log f(x)] + mean[-log(1 - f(g(z)))]; gen = mean[-log f(g(z))]
    (non-saturating generator form). Scores at exactly 0/1 are clamped."""
    r = np.clip(np.asarray(real_scores, dtype=np.float64), LOG_EPS, 1 - LOG_EPS)
    f = np.clip(np.asarray(fake_scores, dtype=np.float64), LOG_EPS, 1 - LOG_EPS)
    disc = float(-np.log(r).mean() - np.log(1 - f).mean())
    gen = float(-np.log(f).mean())
    return disc, gen


class BatchCursor:
    """Deterministic resumable batch stream over a domain view."""

    def __init__(self, view, batch_size, seed):
        self.view, self.batch_size, self.seed = view, batch_size, seed
        self.epoch = 0
        self.pos = 0
        self._gen = None

    def _start_epoch(self):
        self._gen = batch_iter(self.view, self.batch_size, self.seed, self.epoch)

    def next(self):
        if self._gen is None:
            self._start_epoch()
        try:
            batch = next(self._gen)
        except StopIteration:
            self.epoch += 1
            self.pos = 0
            self._start_epoch()
            batch = next(self._gen)
        self.pos += 1
        return batch

    def state(self):
        return {"epoch": self.epoch, "pos": self.pos}

    def restore(self, state):
        self.epoch = int(state["epoch"])
        self.pos = 0
        self._start_epoch()
        for _ in range(int(state["pos"])):
            next(self._gen)
            self.pos += 1


def disc_loss_step(net, branch, real, fake):
    """Accumulate one branch's discriminator gradients; returns the loss.

    Without batchnorm the discriminator is purely per-sample, so real and
    fake batches fuse into one pass; with batchnorm they stay separate to
    keep the conventional per-population batch statistics."""
    n_r, n_f = len(real), len(fake)
    if not net.disc_has_norm():
        logit, rec = net.discriminate_full(np.concatenate([real, fake]), branch, train=True)
        s = sigmoid(logit)
        dlogit = np.concatenate([(s[:n_r] - 1.0) / n_r, s[n_r:] / n_f])
        net.disc[branch].backward(rec, dlogit[:, None].astype(real.dtype))
        disc_loss, _ = gan_loss(s[:n_r].astype(np.float64), s[n_r:].astype(np.float64))
        return disc_loss
    logit_r, rec_r = net.discriminate_full(real, branch, train=True)
    logit_f, rec_f = net.discriminate_full(fake, branch, train=True)
    net.disc[branch].backward(rec_r, ((sigmoid(logit_r) - 1.0) / n_r)[:, None].astype(real.dtype))
    net.disc[branch].backward(rec_f, ((sigmoid(logit_f)) / n_f)[:, None].astype(real.dtype))
    disc_loss, _ = gan_loss(sigmoid(logit_r.astype(np.float64)), sigmoid(logit_f.astype(np.float64)))
    return disc_loss


def gen_loss_backward(net, branch, fake):
    """Run D on fakes and return (loss, gradient w.r.t. the fake images)."""
    logit_f, rec_d = net.discriminate_full(fake, branch, train=True)
    n = len(logit_f)
    dx = net.disc[branch].backward(rec_d, ((sigmoid(logit_f) - 1.0) / n)[:, None].astype(fake.dtype))
    return float(softplus(-logit_f.astype(np.float64)).mean()), dx


class IrtTrainer:
    """Owns one CoGAN plus optimizers and deterministic data/noise streams."""

    def __init__(self, net: TiedTwinNet, view_src, view_tgt, hp: GanHyperparams):
        if not len(view_src) or not len(view_tgt):
            raise ZsdaError("both domain views must be non-empty")
        self.net, self.hp = net, hp
        self.cursor_s = BatchCursor(view_src, hp.batch_size, (hp.seed, "irt-src"))
        self.cursor_t = BatchCursor(view_tgt, hp.batch_size, (hp.seed, "irt-tgt"))
        self.rng_z = make_rng("irt-z", hp.seed)
        self.opt_d = make_optimizer(hp.optimizer, net.disc_params(), hp.learning_rate)
        self.opt_g = make_optimizer(hp.optimizer, net.gen_params(), hp.learning_rate)
        self.iteration = 0
        self.history = []

    def _draw_z(self, n):
        return self.rng_z.uniform(-1.0, 1.0, (n, self.hp.d_z)).astype(np.float32)

    def step(self):
        net = self.net
        real_s, _ = self.cursor_s.next()
        real_t, _ = self.cursor_t.next()
        z = self._draw_z(self.hp.batch_size)

        # one paired generator forward serves the D step and (since the
        # generator is unchanged by the D update) the G step as well
        fake_s, fake_t, gen_rec = net.generate_pair_training(z)

        zero_grads(net.all_params())
        disc_loss = disc_loss_step(net, 0, real_s, fake_s)
        disc_loss += disc_loss_step(net, 1, real_t, fake_t)
        self.opt_d.step()

        zero_grads(net.all_params())
        loss_s, dx_s = gen_loss_backward(net, 0, fake_s)
        loss_t, dx_t = gen_loss_backward(net, 1, fake_t)
        net.generate_pair_backward(gen_rec, dx_s, dx_t)
        gen_loss = loss_s + loss_t
        self.opt_g.step()

        self.iteration += 1
        row = (self.iteration, disc_loss, gen_loss)
        self.history.append(row)
        if not (np.isfinite(disc_loss) and np.isfinite(gen_loss)):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {self.iteration}",
                diagnostics={"recent": self.history[-5:]},
            )
        return row

    def run(self, n_iters):
        for _ in range(n_iters):
            self.step()
        return self.history

    def stream_state(self):
        return {
            "iteration": self.iteration,
            "cursor_s": self.cursor_s.state(),
            "cursor_t": self.cursor_t.state(),
            "rng_z": rng_state(self.rng_z),
        }

    def restore_stream_state(self, state):
        self.iteration = int(state["iteration"])
        self.cursor_s.restore(state["cursor_s"])
        self.cursor_t.restore(state["cursor_t"])
        set_rng_state(self.rng_z, state["rng_z"])


def train_cogan_irt(net, view_src, view_tgt, hp: GanHyperparams):
    """Run hp.iters alternating D/G updates; returns (net, loss history)."""
    trainer = IrtTrainer(net, view_src, view_tgt, hp)
    trainer.run(hp.iters)
    return net, trainer.history


def sample_domain_shift(net: TiedTwinNet, n, seed, chunk=256):
    """Draw n shift samples delta_h = R_h(x_t) - R_h(x_s) from paired
    generator outputs, varying the shared noise input."""
    if n <= 0:
        raise ZsdaError(f"shift sample count must be positive, got {n}")
    rng = make_rng("shift", seed)
    out = []
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        z = rng.uniform(-1.0, 1.0, (m, net.arch.d_z)).astype(np.float32)
        x_s, x_t = generate_pair(net, z)
        _, rec_s = net.discriminate_full(x_s, 0, train=False, update_stats=False)
        _, rec_t = net.discriminate_full(x_t, 1, train=False, update_stats=False)
        delta = net.taps(rec_t, 1).r_h - net.taps(rec_s, 0).r_h
        out.append(delta.astype(np.float32))
        remaining -= m
    return np.concatenate(out, axis=0)


class ShiftBank:
    """A bank of shift samples with optional refresh from a frozen source."""

    MAGIC = b"ZSBK"

    def __init__(self, samples, provider=None):
        self.samples = np.ascontiguousarray(samples, dtype=np.float32)
        self.provider = provider

    def __len__(self):
        return len(self.samples)

    @property
    def shape(self):
        return self.samples.shape[1:]

    def sample_batch(self, batch_size, rng):
        if not len(self):
            raise ZsdaError("shift bank is empty")
        replace = batch_size > len(self)
        idx = rng.choice(len(self), size=batch_size, replace=replace)
        return self.samples[idx]

    def refresh(self, seed):
        if self.provider is None:
            return False
        self.samples = np.ascontiguousarray(self.provider(seed), dtype=np.float32)
        return True

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<IB", len(self.samples), self.samples.ndim - 1))
            fh.write(struct.pack(f"<{self.samples.ndim - 1}I", *self.samples.shape[1:]))
            fh.write(self.samples.astype("<f4").tobytes())

    @classmethod
    def load(cls, path, provider=None):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != cls.MAGIC:
            raise ZsdaError(f"{path}: not a shift bank file")
        count, ndim = struct.unpack_from("<IB", blob, 4)
        dims = struct.unpack_from(f"<{ndim}I", blob, 9)
        arr = np.frombuffer(blob, dtype="<f4", offset=9 + 4 * ndim).reshape((count,) + dims)
        return cls(arr.copy(), provider=provider)


def bank_from_net(net, n, seed):
    """ShiftBank whose refresh re-samples from the (frozen) net."""
    bank = ShiftBank(sample_domain_shift(net, n, seed),
                     provider=lambda s: sample_domain_shift(net, n, s))
    return bank
