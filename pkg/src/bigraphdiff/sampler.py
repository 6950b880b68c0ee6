"""Training objective, reverse-diffusion generation, and the train loop."""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import DenoiserConfig, DenoiserWeights, encode_condition, predict_noise
from .errors import DataError, DivergenceError, ShapeError, VocabularyError
from .optim import adam_step, gradients
from .schedule import build_linear_schedule, default_beta_end, posterior_sigma, q_sample
from .dataset import MotionSequence


@dataclass
class TrainConfig:
    T: int = 100
    lr: float = 3e-4
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0
    beta_start: float = 1e-4
    beta_end: float = 0.0            # 0 -> default_beta_end(T)
    checkpoint_every: int = 0        # epochs; 0 disables periodic saves
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)

    def __post_init__(self):
        if not self.beta_end:
            self.beta_end = default_beta_end(self.T)

    def to_dict(self):
        d = {k: getattr(self, k) for k in
             ("T", "lr", "batch_size", "epochs", "seed", "beta_start",
              "beta_end", "checkpoint_every")}
        d["denoiser"] = self.denoiser.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["denoiser"] = DenoiserConfig.from_dict(d["denoiser"])
        return cls(**d)


def desk_config(**overrides):
    """Runnable single-core profile."""
    den = DenoiserConfig(num_layers=2, num_heads=4, text_layers=4, text_heads=4,
                         d_l=64, max_len=16)
    cfg = TrainConfig(T=100, lr=3e-4, batch_size=16, epochs=100, denoiser=den)
    return _apply(cfg, overrides)

def paper_config(**overrides):
    """Full-scale reference hyperparameters (not runnable at desk scale)."""
    den = DenoiserConfig(num_layers=8, num_heads=8, text_layers=4, text_heads=4,
                         d_l=512, max_len=300)
    cfg = TrainConfig(T=1000, lr=1e-4, batch_size=128, epochs=1500,
                      beta_start=1e-4, beta_end=2e-2, denoiser=den)
    return _apply(cfg, overrides)

PRESETS = {"desk": desk_config, "paper": paper_config}


def _apply(cfg, overrides):
    den_fields = set(DenoiserConfig.__dataclass_fields__)
    for key, value in overrides.items():
        if key in den_fields:
            setattr(cfg.denoiser, key, value)
        elif key in TrainConfig.__dataclass_fields__:
            setattr(cfg, key, value)
        else:
            raise KeyError(key)
    cfg.denoiser.__post_init__()
    cfg.__post_init__()
    return cfg


# -- label tokenization -------------------------------------------------------

def build_vocab(classes):
    tokens = set()
    for label in classes:
        tokens.update(label.split())
    return sorted(tokens)


def tokenize(label, vocab):
    ids = []
    for word in label.split():
        if word not in vocab:
            raise VocabularyError(f"token {word!r} not in vocabulary")
        ids.append(vocab.index(word))
    if not ids:
        raise VocabularyError(f"label {label!r} yields no tokens")
    return ids


# -- objective and sampling ---------------------------------------------------

def signal_scale(frames):
    """Normalized sequences carry unit Frobenius norm, i.e. per-element
    values of order 1/sqrt(size); the diffusion chain mixes them with
    unit-variance noise, so they are rescaled to unit RMS first."""
    return float(np.sqrt(np.asarray(frames).size))

def diffusion_loss(x0, t, eps, cond, weights, sched, rng=None):
    """Mean squared error between the injected and the predicted noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    x_t = q_sample(x0, t, eps, sched)
    pred = predict_noise(Tensor(x_t), t, cond, weights, weights.config, rng)
    diff = pred - Tensor(eps)
    return (diff * diff).mean()


CLEAN_SIGNAL_LIMIT = 6.0


def reverse_step(x_t, t, cond, weights, sched, rng):
    """One ancestral denoising step; deterministic at t=1.

    The implied clean signal is clamped to +-CLEAN_SIGNAL_LIMIT (far
    outside the unit-RMS data range), which keeps an imperfect noise
    predictor from compounding into a runaway trajectory. Within the
    clamp the update equals the analytic posterior mean.
    """
    sched._check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    with ad.no_grad():
        eps_hat = predict_noise(Tensor(x_t), t, cond, weights, weights.config).data
    alpha_t = sched.alpha[t - 1]
    beta_t = sched.beta[t - 1]
    ab_t = sched.alpha_bar[t - 1]
    ab_prev = sched.alpha_bar[t - 2] if t > 1 else 1.0
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    x0_hat = np.clip(x0_hat, -CLEAN_SIGNAL_LIMIT, CLEAN_SIGNAL_LIMIT)
    mean = (np.sqrt(ab_prev) * beta_t * x0_hat
            + np.sqrt(alpha_t) * (1.0 - ab_prev) * x_t) / (1.0 - ab_t)
    sigma = posterior_sigma(t, sched)
    if sigma > 0.0:
        mean = mean + sigma * rng.standard_normal(x_t.shape)
    return mean


def generate(label, num_frames, weights, sched, rng, fps=10):
    """Sample a two-person sequence of the given class from pure noise."""
    config = weights.config
    tokens = tokenize(label, config.vocab)
    with ad.no_grad():
        cond = encode_condition(tokens, weights, config)
    x = rng.standard_normal((num_frames, config.k, 3, 2))
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, t, cond, weights, sched, rng)
    # back from unit-RMS diffusion coordinates to the normalized convention
    x = x / signal_scale(x)
    return MotionSequence(frames=x, label=label, fps=fps, normalized=True)


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    weights: DenoiserWeights
    config: TrainConfig
    loss_history: list
    epoch: int
    step: int
    rng_state: dict


def _checkpoint_extra(result):
    return {
        "train_config": result.config.to_dict(),
        "epoch": result.epoch,
        "step": result.step,
        "loss_history": result.loss_history,
        "rng_state": result.rng_state,
    }


def save_train_checkpoint(path, result):
    save_checkpoint(path, result.weights, extra=_checkpoint_extra(result))


def load_train_checkpoint(path):
    weights, header = load_checkpoint(
        path, lambda cfg: DenoiserWeights(DenoiserConfig.from_dict(cfg),
                                          np.random.default_rng(0)))
    cfg = TrainConfig.from_dict(header["train_config"])
    return TrainResult(weights=weights, config=cfg,
                       loss_history=header["loss_history"],
                       epoch=header["epoch"], step=header["step"],
                       rng_state=header["rng_state"])


def write_loss_csv(loss_history, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(loss_history, start=1):
            writer.writerow([i, repr(loss)])


def train_model(dataset, cfg, checkpoint_path=None, resume_from=None, progress=None):
    """Minimize the noise-prediction loss with Adam; returns a TrainResult.

    Deterministic given cfg.seed.  With resume_from, continues a saved
    run to cfg.epochs total epochs, bit-identically to an uninterrupted
    run with the same seed.
    """
    train_seqs = dataset.train
    if not train_seqs:
        raise DataError("dataset has no training sequences")

    if resume_from is not None:
        state = load_train_checkpoint(resume_from)
        weights = state.weights
        cfg.denoiser = weights.config
        rng = np.random.default_rng(cfg.seed)
        rng.bit_generator.state = state.rng_state
        loss_history = list(state.loss_history)
        start_epoch, step = state.epoch, state.step
    else:
        cfg.denoiser.vocab = build_vocab(dataset.classes)
        cfg.denoiser.k = train_seqs[0].num_joints
        max_n = max(s.num_frames for s in train_seqs)
        if cfg.denoiser.max_len < max_n:
            cfg.denoiser.max_len = max_n
            cfg.denoiser.graph_len = max(cfg.denoiser.graph_len, max_n)
        rng = np.random.default_rng(cfg.seed)
        weights = DenoiserWeights(cfg.denoiser, rng)
        loss_history = []
        start_epoch, step = 0, 0

    sched = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    tokens_by_label = {c: tokenize(c, cfg.denoiser.vocab) for c in dataset.classes}
    last_saved = None

    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(len(train_seqs))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_seqs[i] for i in order[lo:lo + cfg.batch_size]]
            conds = {}
            total = None
            for seq in batch:
                if seq.label not in conds:
                    conds[seq.label] = encode_condition(
                        tokens_by_label[seq.label], weights, cfg.denoiser)
                t = int(rng.integers(1, cfg.T + 1))
                eps = rng.standard_normal(seq.frames.shape)
                x0 = seq.frames * signal_scale(seq.frames)
                loss = diffusion_loss(x0, t, eps, conds[seq.label],
                                      weights, sched)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            loss_value = float(total.data)
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at step {step + 1}", checkpoint_path=last_saved)
            grads = gradients(total, weights.store)
            step += 1
            adam_step(weights.store, grads, cfg.lr, step=step)
            loss_history.append(loss_value)
        if progress is not None:
            progress(epoch + 1, loss_history[-1])
        if (checkpoint_path and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            result = TrainResult(weights, cfg, loss_history, epoch + 1, step,
                                 rng.bit_generator.state)
            save_train_checkpoint(checkpoint_path, result)
            last_saved = checkpoint_path

    result = TrainResult(weights, cfg, loss_history, cfg.epochs, step,
                         rng.bit_generator.state)
    if checkpoint_path:
        save_train_checkpoint(checkpoint_path, result)
    return result
