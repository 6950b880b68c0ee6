"""Evaluation suite: transformer classifier, Fréchet feature distance,
and the multimodality score."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, gelu, softmax
from .denoiser import positional_encoding, scaled_dot_attention
from .errors import ConfigurationError, DataError, ShapeError
from .optim import ParameterStore, adam_step, gradients


@dataclass
class ClassifierConfig:
    k: int = 5
    width: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    classes: list = field(default_factory=list)

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigurationError(
                f"width {self.width} not divisible by {self.heads} heads")


class ClassifierWeights:
    """Encoder + MLP head; the pooled encoder output is the deep feature."""

    def __init__(self, config, rng):
        self.config = config
        self.feature_dim = config.width
        self.held_out_accuracy = None
        self.store = ParameterStore()
        w, m = config.width, 4 * config.width
        init = lambda *shape: rng.normal(0.0, 0.02, size=shape)
        self._affine("embed", 6 * config.k, w, init)
        for i in range(config.layers):
            p = f"enc.{i}"
            self._norm(f"{p}.ln1", w)
            for key in ("q", "k", "v", "o"):
                self._affine(f"{p}.{key}", w, w, init)
            self._norm(f"{p}.ln2", w)
            self._affine(f"{p}.ffn1", w, m, init)
            self._affine(f"{p}.ffn2", m, w, init)
        self._affine("head.1", w, w, init)
        self._affine("head.2", w, len(config.classes), init)

    def _affine(self, name, n_in, n_out, init):
        self.store.add(f"{name}.w", init(n_in, n_out))
        self.store.add(f"{name}.b", np.zeros(n_out))

    def _norm(self, name, n):
        self.store.add(f"{name}.g", np.ones(n))
        self.store.add(f"{name}.b", np.zeros(n))

    def __getitem__(self, name):
        return self.store[name]


def _proj(x, clf, name):
    return ad.affine(x, clf[f"{name}.w"], clf[f"{name}.b"])


def _feature_graph(frames, clf):
    """Pooled encoder representation of an N x k x 3 x 2 array."""
    cfg = clf.config
    frames = Tensor._lift(frames)
    if frames.ndim != 4 or frames.shape[1:] != (cfg.k, 3, 2):
        raise ShapeError(f"expected (N, {cfg.k}, 3, 2), got {tuple(frames.shape)}")
    n = frames.shape[0]
    # normalized sequences have whole-array Frobenius norm ~1, i.e. tiny
    # per-element values; rescale to unit RMS so the embedding is not
    # drowned by the positional encoding
    scale = float(np.sqrt(n * cfg.k * 6))
    x = _proj((frames * scale).permute(0, 3, 1, 2).reshape(n, 6 * cfg.k),
              clf, "embed")
    x = x + Tensor(positional_encoding(n, cfg.width))
    for i in range(cfg.layers):
        p = f"enc.{i}"
        h = ad.layer_norm(x, clf[f"{p}.ln1.g"], clf[f"{p}.ln1.b"])
        att = scaled_dot_attention(
            _proj(h, clf, f"{p}.q"), _proj(h, clf, f"{p}.k"),
            _proj(h, clf, f"{p}.v"), cfg.heads)
        x = x + _proj(att, clf, f"{p}.o")
        h = ad.layer_norm(x, clf[f"{p}.ln2.g"], clf[f"{p}.ln2.b"])
        x = x + _proj(gelu(_proj(h, clf, f"{p}.ffn1")), clf, f"{p}.ffn2")
    return x.mean(axis=0)


def _logits_graph(frames, clf):
    feat = _feature_graph(frames, clf)
    return _proj(gelu(_proj(feat, clf, "head.1")), clf, "head.2")


def _cross_entropy(logits, target_index):
    shifted = logits - float(logits.data.max())
    log_z = shifted.exp().sum().log()
    return log_z - shifted.narrow(0, target_index, 1).sum()


def train_classifier(dataset, config=None, rng=None):
    """Cross-entropy training on the train split; records held-out accuracy."""
    if config is None:
        config = ClassifierConfig()
    if not config.classes:
        config.classes = list(dataset.classes)
    if len(config.classes) < 2:
        raise DataError("need at least 2 classes")
    train = dataset.train
    for c in config.classes:
        if sum(1 for s in train if s.label == c) < 2:
            raise DataError(f"class {c!r} has fewer than 2 training samples")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    config.k = train[0].num_joints
    config.max_len = max(config.max_len, max(s.num_frames for s in dataset.sequences))
    clf = ClassifierWeights(config, rng)
    class_index = {c: i for i, c in enumerate(config.classes)}

    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(train))
        for lo in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[lo:lo + config.batch_size]]
            total = None
            for seq in batch:
                loss = _cross_entropy(_logits_graph(seq.frames, clf),
                                      class_index[seq.label])
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            grads = gradients(total, clf.store)
            step += 1
            adam_step(clf.store, grads, config.lr, step=step)

    test = dataset.test
    if test:
        correct = sum(1 for s in test if predict_label(s, clf) == s.label)
        clf.held_out_accuracy = correct / len(test)
    return clf


def predict_label(seq, clf):
    with ad.no_grad():
        logits = _logits_graph(seq.frames, clf).data
    return clf.config.classes[int(np.argmax(logits))]


def extract_features(seq, clf):
    """Deep feature: the pooled penultimate representation."""
    if not seq.normalized:
        raise DataError("extract_features expects a normalized sequence")
    with ad.no_grad():
        return _feature_graph(seq.frames, clf).data.copy()


def classification_accuracy(generated, clf):
    """Fraction of samples classified as their conditioning label."""
    per_class = {}
    for c in clf.config.classes:
        seqs = [s for s in generated.sequences if s.label == c]
        if seqs:
            per_class[c] = sum(
                1 for s in seqs if predict_label(s, clf) == c) / len(seqs)
    for s in generated.sequences:
        if s.label not in clf.config.classes:
            raise DataError(f"unknown label {s.label!r}")
    average = float(np.mean(list(per_class.values())))
    return per_class, average


@dataclass
class FeatureStats:
    mu: np.ndarray
    cov: np.ndarray
    n: int


def feature_stats(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise DataError("need at least 2 feature vectors")
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    cov = 0.5 * (cov + cov.T)
    return FeatureStats(mu=mu, cov=cov, n=features.shape[0])


def frechet_distance(a, b):
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}).

    The trace of the matrix square root is computed from the
    eigendecomposition of sqrt(Sa) Sb sqrt(Sa), which is symmetric and
    shares the eigenvalues of Sa Sb.  Small negative eigenvalues from
    rounding are clamped to zero.
    """
    if a.mu.shape != b.mu.shape:
        raise ShapeError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    ev_a, vec_a = np.linalg.eigh(a.cov)
    sqrt_a = (vec_a * np.sqrt(np.clip(ev_a, 0.0, None))) @ vec_a.T
    inner = sqrt_a @ b.cov @ sqrt_a
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if ev.min() < -1e-8 * max(1.0, abs(ev.max())):
        raise FloatingPointError(f"matrix square root failed: eigenvalue {ev.min()}")
    trace_sqrt = np.sum(np.sqrt(np.clip(ev, 0.0, None)))
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)


def _paired_distance(features, rng):
    """Average distance over a random half/half pairing; returns the
    recorded permutation alongside."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise DataError("need at least 2 feature vectors per class")
    if n % 2:
        drop = int(rng.integers(n))
        features = np.delete(features, drop, axis=0)
        n -= 1
    else:
        drop = None
    perm = rng.permutation(n)
    half = n // 2
    d = np.linalg.norm(features[perm[:half]] - features[perm[half:]], axis=1).mean()
    return float(d), {"dropped": drop, "permutation": perm.tolist()}


def multimodality(features_by_class_gen, features_by_class_gt, rng):
    """Mean over classes of |paired-distance(gen) - paired-distance(gt)|."""
    score = 0.0
    details = {}
    classes = sorted(features_by_class_gen)
    if sorted(features_by_class_gt) != classes:
        raise DataError("generated and ground-truth class sets differ")
    for c in classes:
        d_gen, rec_gen = _paired_distance(features_by_class_gen[c], rng)
        d_gt, rec_gt = _paired_distance(features_by_class_gt[c], rng)
        score += abs(d_gen - d_gt)
        details[c] = {"generated": d_gen, "reference": d_gt,
                      "split_generated": rec_gen, "split_reference": rec_gt}
    return score / len(classes), details


@dataclass
class EvalReport:
    per_class_accuracy: dict
    average_accuracy: float
    fvd: float
    multimodality: float
    multimodality_details: dict
    sample_counts: dict
    provenance: dict

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def evaluate_all(generated, reference, clf, rng, provenance=None):
    """Accuracy, Fréchet feature distance, and multimodality in one report."""
    per_class, average = classification_accuracy(generated, clf)

    def features_by_class(ds):
        out = {c: [] for c in clf.config.classes}
        for s in ds.sequences:
            out[s.label].append(extract_features(s, clf))
        return {c: np.array(v) for c, v in out.items() if v}

    feats_gen = features_by_class(generated)
    feats_ref = features_by_class(reference)
    pooled_gen = np.concatenate([feats_gen[c] for c in sorted(feats_gen)])
    pooled_ref = np.concatenate([feats_ref[c] for c in sorted(feats_ref)])
    fvd = frechet_distance(feature_stats(pooled_gen), feature_stats(pooled_ref))
    mm, details = multimodality(feats_gen, feats_ref, rng)
    return EvalReport(
        per_class_accuracy=per_class,
        average_accuracy=average,
        fvd=fvd,
        multimodality=mm,
        multimodality_details=details,
        sample_counts={"generated": len(generated.sequences),
                       "reference": len(reference.sequences)},
        provenance=provenance or {},
    )
