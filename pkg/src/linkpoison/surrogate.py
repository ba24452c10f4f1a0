"""Variational graph autoencoder expressed on the differentiation tape.

Two GCN-style layers (shared hidden layer, then mean / log-variance heads),
inner-product decoder, class-weighted reconstruction cross-entropy plus a
standard-normal KL term. Everything is written with tape primitives so that
gradients can flow to the adjacency matrix, not just the weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from linkpoison import tape as tp
from linkpoison.graph import Graph
from linkpoison.tape import NonFiniteError, TracedValue

CLIP_EPS = 1e-7


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def identity_features(n: int) -> np.ndarray:
    return np.eye(n)


def epoch_noise(seed: int, epoch: int, n: int, latent: int) -> np.ndarray:
    """The reparameterization noise for one epoch, from a per-epoch stream."""
    return np.random.default_rng((seed, epoch)).standard_normal((n, latent))


@dataclass
class VgaeParams:
    """Encoder weights: shared first layer plus mean and log-variance heads."""

    w0: TracedValue
    w_mu: TracedValue
    w_logvar: TracedValue

    @classmethod
    def init(cls, tape: tp.Tape, in_dim: int, hidden: int, latent: int, seed: int):
        rng = np.random.default_rng(seed)
        return cls(
            tape.leaf(glorot(rng, in_dim, hidden)),
            tape.leaf(glorot(rng, hidden, latent)),
            tape.leaf(glorot(rng, hidden, latent)),
        )

    def as_list(self) -> list[TracedValue]:
        return [self.w0, self.w_mu, self.w_logvar]


def init_param_arrays(in_dim: int, hidden: int, latent: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [glorot(rng, in_dim, hidden), glorot(rng, hidden, latent),
            glorot(rng, hidden, latent)]


def normalize_adjacency(a: TracedValue) -> TracedValue:
    """Degree-normalized adjacency with self-loops, differentiable in a."""
    n = a.rows
    eye = np.eye(n)
    a_loop = tp.add(a, tp.constant(eye, a.tape))
    inv_sqrt_deg = tp.power(tp.row_sum(a_loop), -0.5)
    d = tp.diag(inv_sqrt_deg)
    return tp.matmul(tp.matmul(d, a_loop), d)


def encode(a_norm: TracedValue, x: TracedValue, params: VgaeParams, noise: np.ndarray):
    """Latent sample, mean and log-variance; noise is an exogenous constant."""
    h = tp.relu(tp.matmul(a_norm, tp.matmul(x, params.w0)))
    ah = tp.matmul(a_norm, h)
    mu = tp.matmul(ah, params.w_mu)
    logvar = tp.matmul(ah, params.w_logvar)
    std = tp.exp(tp.scale(logvar, 0.5))
    z = tp.add(mu, tp.mul(std, tp.constant(noise, a_norm.tape)))
    return z, mu, logvar


def decode(z: TracedValue) -> TracedValue:
    """Edge probabilities sigmoid(z z^T)."""
    return tp.sigmoid(tp.matmul(z, tp.transpose(z)))


def kl_divergence(mu: TracedValue, logvar: TracedValue) -> TracedValue:
    """KL(q || N(0, I)) averaged over nodes."""
    n = mu.rows
    inner = tp.sub(tp.sub(tp.add_scalar(logvar, 1.0), tp.mul(mu, mu)), tp.exp(logvar))
    return tp.scale(tp.matrix_sum(inner), -0.5 / n)


def class_weight(target: np.ndarray) -> float:
    """Positive-class weight (#entries - #positives) / #positives."""
    s = float(np.asarray(target).sum())
    if s <= 0:
        raise ValueError("target has no positive entries; pass an explicit weight")
    return (target.size - s) / s


def weighted_bce(a_hat: TracedValue, target, restrict=None, weight: float | None = None,
                 reduction: str = "sum") -> TracedValue:
    """Class-weighted binary cross-entropy against {0,1} targets.

    `restrict` limits the loss to the listed (i, j) entries. The positive
    weight defaults to the class ratio of the full target matrix and is a
    plain constant: no gradient flows through it. Predictions are clipped to
    [CLIP_EPS, 1 - CLIP_EPS] inside the logs.
    """
    y = tp.constant(target, a_hat.tape) if not isinstance(target, TracedValue) else target
    if weight is None:
        weight = class_weight(y.value)
    if restrict is not None:
        if len(restrict) == 0:
            raise ValueError("empty restriction set")
        a_hat = tp.gather_pairs(a_hat, restrict)
        y = tp.gather_pairs(y, restrict)
    yc = tp.clip(a_hat, CLIP_EPS, 1.0 - CLIP_EPS)
    pos = tp.mul(y, tp.log(yc))
    neg = tp.mul(tp.one_minus(y), tp.log(tp.one_minus(yc)))
    per_entry = tp.sub(tp.scale(pos, -weight), neg)
    if reduction == "sum":
        return tp.matrix_sum(per_entry)
    if reduction == "mean":
        return tp.matrix_mean(per_entry)
    raise ValueError(f"unknown reduction {reduction!r}")


def elbo_loss(a_hat: TracedValue, mu: TracedValue, logvar: TracedValue, target,
              weight: float | None = None) -> tuple[TracedValue, TracedValue, TracedValue]:
    """Training objective: mean weighted reconstruction BCE plus node-mean KL.

    Returns (loss, bce_term, kl_term); loss is exactly bce_term + kl_term.
    """
    bce = weighted_bce(a_hat, target, weight=weight, reduction="mean")
    kl = kl_divergence(mu, logvar)
    return tp.add(bce, kl), bce, kl


class VgaeTrainer:
    """Plain (non-unrolled) VGAE training with seeded gradient descent.

    Serves as the poisoning victims' VGAE and as the surrogate in smoke
    tests. Each step builds a fresh tape over the current parameter values,
    so the adjacency is an ordinary constant here.
    """

    def __init__(self, g: Graph, hidden: int = 32, latent: int = 16, lr: float = 0.01,
                 seed: int = 0, features: np.ndarray | None = None):
        self.g = g
        self.lr = lr
        self.seed = seed
        self.hidden = hidden
        self.latent = latent
        x = features if features is not None else g.features
        self.x = x if x is not None else identity_features(g.n)
        self.params = init_param_arrays(self.x.shape[1], hidden, latent, seed)
        self.weight = class_weight(g.adjacency)
        self.epoch = 0
        self.history: list[float] = []

    def step(self) -> tuple[float, np.ndarray]:
        """One forward/backward/update pass; returns (loss, reconstruction)."""
        self.epoch += 1
        tape = tp.Tape()
        a = tape.constant(self.g.adjacency)
        x = tape.constant(self.x)
        leaves = [tape.leaf(p) for p in self.params]
        params = VgaeParams(*leaves)
        a_norm = normalize_adjacency(a)
        noise = epoch_noise(self.seed, self.epoch, self.g.n, self.latent)
        z, mu, logvar = encode(a_norm, x, params, noise)
        a_hat = decode(z)
        loss, _, _ = elbo_loss(a_hat, mu, logvar, self.g.adjacency, weight=self.weight)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(
                f"vgae training diverged at epoch {self.epoch}: loss={value}")
        if self.lr != 0.0:
            grads = tp.grad(loss, leaves)
            self.params = [p - self.lr * gp for p, gp in zip(self.params, grads)]
        self.history.append(value)
        return value, a_hat.value

    def train(self, epochs: int) -> list[float]:
        for _ in range(epochs):
            self.step()
        return self.history

    def embeddings(self) -> np.ndarray:
        """Noise-free latent positions (the posterior means)."""
        tape = tp.Tape()
        tape.recording = False
        a = tape.constant(self.g.adjacency)
        x = tape.constant(self.x)
        params = VgaeParams(*[tape.constant(p) for p in self.params])
        a_norm = normalize_adjacency(a)
        _, mu, _ = encode(a_norm, x, params, np.zeros((self.g.n, self.latent)))
        return mu.value

    def score_pairs(self, pairs) -> np.ndarray:
        z = self.embeddings()
        out = np.empty(len(pairs))
        for t, (i, j) in enumerate(pairs):
            out[t] = 1.0 / (1.0 + np.exp(-float(z[i] @ z[j])))
        return out


# checkpoint format: one JSON header line, then all parameter matrices
# concatenated as little-endian float64

def save_checkpoint(path, params: list[np.ndarray], seed: int, epoch: int) -> None:
    header = {
        "shapes": [list(p.shape) for p in params],
        "seed": seed,
        "epoch": epoch,
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[list[np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    params = []
    offset = 0
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        params.append(arr.reshape(shape).astype(np.float64))
        offset += count * 8
    return params, header
