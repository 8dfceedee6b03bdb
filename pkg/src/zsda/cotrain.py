"""Co-training classifier pair over frozen discriminator representations.

The pair is trained to (i) stay mutually dissimilar in weight space, (ii)
classify the labeled source-domain data of the task of interest, (iii)
agree on dual-domain samples of the irrelevant task, and (iv) disagree on
supplementary samples unrelated to either task:

    total = lw * L_w + lacc * L_cls - lcon * L_con + ldiff * L_diff

L_cls/L_con/L_diff are averaged per batch inside the trainer so the
lambda weights stay batch-size independent; the standalone loss functions
below return the plain sums their definitions state.
"""

from dataclasses import dataclass

import numpy as np

from .domains import to_array
from .errors import TrainingDivergedError, ZsdaError
from .networks import SimpleNet
from .nn import make_optimizer, softmax, log_softmax, zero_grads
from .rngutil import make_rng


@dataclass
class CoTrainHyperparams:
    lambda_w: float = 0.01
    lambda_acc: float = 1.0
    lambda_con: float = 0.5
    lambda_diff: float = 0.5
    learning_rate: float = 2e-4
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_w", "lambda_acc", "lambda_con", "lambda_diff"):
            if getattr(self, name) < 0:
                raise ZsdaError(f"{name} must be >= 0")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ZsdaError("invalid co-training hyperparameters")


@dataclass
class PredictionPair:
    v1: np.ndarray
    v2: np.ndarray


def weight_similarity(clf_1: SimpleNet, clf_2: SimpleNet):
    """Cosine similarity of the fully vectorized parameters, in [-1, 1]."""
    w1 = clf_1.param_vector().astype(np.float64)
    w2 = clf_2.param_vector().astype(np.float64)
    if w1.shape != w2.shape:
        raise ZsdaError("classifiers must share one architecture")
    n1, n2 = np.linalg.norm(w1), np.linalg.norm(w2)
    if n1 == 0.0 or n2 == 0.0:
        raise ZsdaError("zero-norm parameter vector")
    return float(w1 @ w2 / (n1 * n2))


def _weight_similarity_grads(clf_1, clf_2):
    """d cos(w1,w2) / d w1 and / d w2 as flat float64 vectors."""
    w1 = clf_1.param_vector().astype(np.float64)
    w2 = clf_2.param_vector().astype(np.float64)
    n1, n2 = np.linalg.norm(w1), np.linalg.norm(w2)
    cos = w1 @ w2 / (n1 * n2)
    g1 = w2 / (n1 * n2) - cos * w1 / (n1 * n1)
    g2 = w1 / (n1 * n2) - cos * w2 / (n2 * n2)
    return cos, g1, g2


def _add_flat_grad(clf, flat, scale):
    """Scatter a flat parameter-space gradient back onto clf's params."""
    off = 0
    for p in clf.params():
        k = p.value.size
        p.grad += scale * flat[off:off + k].reshape(p.value.shape).astype(p.value.dtype)
        off += k


def classification_loss(pairs: PredictionPair, labels):
    """Summed cross-entropy of both prediction heads (log form of the
    bilinear score-label sum)."""
    v1, v2 = np.asarray(pairs.v1, dtype=np.float64), np.asarray(pairs.v2, dtype=np.float64)
    labels = np.asarray(labels)
    c = v1.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise ZsdaError(f"label outside [0, {c})")
    idx = np.arange(len(labels))
    eps = 1e-12
    return float(-(np.log(v1[idx, labels] + eps) + np.log(v2[idx, labels] + eps)).sum())


def consistency(pairs: PredictionPair):
    """Sum over samples of v1(x) . v2(x); each term lies in (0, 1]."""
    v1, v2 = np.asarray(pairs.v1, dtype=np.float64), np.asarray(pairs.v2, dtype=np.float64)
    return float((v1 * v2).sum())


@dataclass
class SupplementarySample:
    pixels: np.ndarray  # (H, W, C) uint8
    origin: str         # which training set's branch renders its R_l


def make_supplementary(train_sets, corpus_dir, n, seed):
    """Build n off-task samples: half random corpus crops when a corpus is
    configured (all corruption-mode otherwise), half corrupted training
    samples with one random square patch replaced by uniform noise."""
    if n % 2:
        raise ZsdaError("supplementary sample count must be even")
    tags = sorted(train_sets)
    if not tags:
        raise ZsdaError("no training sets given")
    rng = make_rng("supplementary", seed)
    out = []

    n_corpus = n // 2 if corpus_dir else 0
    if n_corpus:
        from .domains import make_patch_source
        src = make_patch_source("directory_of_images", seed, directory=corpus_dir)
        for i in range(n_corpus):
            tag = tags[i % len(tags)]
            crop = src.patch(("corpus", i))
            if train_sets[tag][0].pixels.shape[2] == 1:
                crop = crop.mean(axis=2, keepdims=True).astype(np.uint8)
            out.append(SupplementarySample(pixels=crop, origin=tag))

    for i in range(n - n_corpus):
        tag = tags[int(rng.integers(len(tags)))]
        pool = train_sets[tag]
        sample = pool[int(rng.integers(len(pool)))]
        px = sample.pixels.copy()
        side = int(rng.integers(8, 17))
        y0 = int(rng.integers(0, px.shape[0] - side + 1))
        x0 = int(rng.integers(0, px.shape[1] - side + 1))
        px[y0:y0 + side, x0:x0 + side, :] = rng.integers(
            0, 256, (side, side, px.shape[2]), dtype=np.int64).astype(np.uint8)
        out.append(SupplementarySample(pixels=px, origin=tag))
    return out


class RepExtractor:
    """Maps tagged pixel batches to flattened R_l features using the branch
    matching each tag's (task, domain)."""

    def __init__(self, routes):
        # routes: tag -> (TiedTwinNet, branch index)
        self.routes = dict(routes)

    def extract(self, tag, x):
        net, branch = self.routes[tag]
        _, rec = net.discriminate_full(x, branch, train=False, update_stats=False)
        r_l = net.taps(rec, branch).r_l
        return np.ascontiguousarray(r_l).reshape(len(x), -1)

    def extract_samples(self, tag, samples, batch=256):
        feats = []
        for i in range(0, len(samples), batch):
            x, _ = to_array(samples[i:i + batch])
            feats.append(self.extract(tag, x))
        return np.concatenate(feats, axis=0)


def _nll_and_grad(logits, labels):
    """Mean NLL over the batch plus d/dlogits (softmax - onehot)/n."""
    logp = log_softmax(logits.astype(np.float64))
    n = len(labels)
    idx = np.arange(n)
    loss = float(-logp[idx, labels].mean())
    grad = np.exp(logp)
    grad[idx, labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def _consistency_and_grads(logits1, logits2):
    """Mean consistency term plus gradients w.r.t. both logit arrays."""
    v1 = softmax(logits1.astype(np.float64))
    v2 = softmax(logits2.astype(np.float64))
    n = len(v1)
    val = float((v1 * v2).sum() / n)
    # d(v1.v2)/dz1 = v1*(v2 - (v1.v2)); softmax jacobian-vector product
    dot = (v1 * v2).sum(axis=1, keepdims=True)
    g1 = (v1 * (v2 - dot) / n).astype(logits1.dtype)
    g2 = (v2 * (v1 - dot) / n).astype(logits2.dtype)
    return val, g1, g2


class CoTrainer:
    """Couples the two classifiers through the four-term objective."""

    def __init__(self, clf_1, clf_2, features, hp: CoTrainHyperparams):
        # features: dict with keys "toi_src" (X, labels), "irt" (X,), "supp" (X,)
        self.clf = (clf_1, clf_2)
        self.hp = hp
        self.x_cls, self.y_cls = features["toi_src"]
        self.x_con = features["irt"]
        self.x_diff = features["supp"]
        params = clf_1.params() + clf_2.params()
        self.opt = make_optimizer(hp.optimizer, params, hp.learning_rate)
        self.rng = make_rng("cotrain-batches", hp.seed)
        self.history = []

    def _batches(self, n):
        order = self.rng.permutation(n)
        bs = self.hp.batch_size
        return [order[i:i + bs] for i in range(0, n, bs)]

    def _logits_pair(self, x):
        l1, r1 = self.clf[0].forward(x, train=True)
        l2, r2 = self.clf[1].forward(x, train=True)
        return (l1, r1), (l2, r2)

    def epoch(self):
        hp = self.hp
        sums = np.zeros(4)
        steps = 0
        con_iter = iter(self._batches(len(self.x_con))) if len(self.x_con) else iter([])
        diff_iter = iter(self._batches(len(self.x_diff))) if len(self.x_diff) else iter([])
        for idx in self._batches(len(self.x_cls)):
            zero_grads(self.clf[0].params() + self.clf[1].params())

            cos, gw1, gw2 = _weight_similarity_grads(*self.clf)
            if hp.lambda_w:
                _add_flat_grad(self.clf[0], gw1, hp.lambda_w)
                _add_flat_grad(self.clf[1], gw2, hp.lambda_w)

            (l1, r1), (l2, r2) = self._logits_pair(self.x_cls[idx])
            loss1, g1 = _nll_and_grad(l1, self.y_cls[idx])
            loss2, g2 = _nll_and_grad(l2, self.y_cls[idx])
            cls_val = loss1 + loss2
            if hp.lambda_acc:
                self.clf[0].backward(r1, g1 * hp.lambda_acc)
                self.clf[1].backward(r2, g2 * hp.lambda_acc)

            con_val = 0.0
            con_idx = next(con_iter, None)
            if con_idx is not None and len(con_idx):
                (l1, r1), (l2, r2) = self._logits_pair(self.x_con[con_idx])
                con_val, gc1, gc2 = _consistency_and_grads(l1, l2)
                if hp.lambda_con:
                    # maximized: enters the total with a negative sign
                    self.clf[0].backward(r1, -hp.lambda_con * gc1)
                    self.clf[1].backward(r2, -hp.lambda_con * gc2)

            diff_val = 0.0
            diff_idx = next(diff_iter, None)
            if diff_idx is not None and len(diff_idx):
                (l1, r1), (l2, r2) = self._logits_pair(self.x_diff[diff_idx])
                diff_val, gd1, gd2 = _consistency_and_grads(l1, l2)
                if hp.lambda_diff:
                    self.clf[0].backward(r1, hp.lambda_diff * gd1)
                    self.clf[1].backward(r2, hp.lambda_diff * gd2)

            self.opt.step()
            sums += (cos, cls_val, con_val, diff_val)
            steps += 1

        means = sums / max(steps, 1)
        total = (hp.lambda_w * means[0] + hp.lambda_acc * means[1]
                 - hp.lambda_con * means[2] + hp.lambda_diff * means[3])
        row = (len(self.history) + 1, *means.tolist(), float(total))
        if not np.isfinite(total):
            raise TrainingDivergedError("co-training loss became non-finite",
                                        diagnostics={"row": row})
        self.history.append(row)
        return row

    def run(self, epochs):
        for _ in range(epochs):
            self.epoch()
        return self.history


def train_cotrain(clf_1, clf_2, extractor: RepExtractor, sets, hp: CoTrainHyperparams):
    """Train the pair on pre-extracted representations.

    sets: {"toi_src": (samples, labels) or labeled samples list,
           "irt_src": samples, "irt_tgt": samples, "supp": SupplementarySample list}
    """
    toi = sets["toi_src"]
    x_cls = extractor.extract_samples("toi_src", toi)
    y_cls = np.array([s.label for s in toi], dtype=np.int64)
    x_con = np.concatenate([
        extractor.extract_samples("irt_src", sets["irt_src"]),
        extractor.extract_samples("irt_tgt", sets["irt_tgt"]),
    ], axis=0)
    supp = sets.get("supp", [])
    if supp:
        by_tag = {}
        for s in supp:
            by_tag.setdefault(s.origin, []).append(s)
        x_diff = np.concatenate([
            extractor.extract_samples(tag, group) for tag, group in sorted(by_tag.items())
        ], axis=0)
    else:
        x_diff = np.zeros((0, x_cls.shape[1]), dtype=x_cls.dtype)

    trainer = CoTrainer(clf_1, clf_2, {"toi_src": (x_cls, y_cls), "irt": x_con, "supp": x_diff}, hp)
    trainer.run(hp.epochs)
    return trainer.history


def predict_proba(clf: SimpleNet, x):
    logits, _ = clf.forward(x, train=False, update_stats=False)
    return softmax(logits.astype(np.float64))


def mean_consistency(clf_1, clf_2, x):
    """Mean v1.v2 over a feature batch (diagnostic used by evaluation)."""
    v1 = predict_proba(clf_1, x)
    v2 = predict_proba(clf_2, x)
    return float((v1 * v2).sum(axis=1).mean())
