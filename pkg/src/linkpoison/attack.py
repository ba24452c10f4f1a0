"""Weighted meta-gradient attack: differentiate an accumulated attack loss
through the surrogate's training run with respect to the adjacency matrix.

Two execution modes:

* ``full-unroll``: every gradient-descent update is itself recorded on the
  tape (gradients of the training loss are emitted as traced operations), so
  the final backward pass flows through the whole parameter trajectory.
* ``first-order``: parameters are treated as constants within each epoch;
  the per-epoch adjacency gradients of the attack loss are weighted and
  summed. Far cheaper, and the only practical choice beyond small graphs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from linkpoison import metrics, surrogate, tape as tp
from linkpoison.graph import Graph, LinkSplit
from linkpoison.tape import NonFiniteError

log = logging.getLogger(__name__)

SCHEMES = ("uniform", "magnitude", "performance", "linear")
MODES = ("full-unroll", "first-order")
TARGETS = ("validation-links", "all-entries")


class UnrollTooLargeError(ValueError):
    """Graph exceeds the full-unroll node cap; use first-order mode."""


@dataclass
class AttackConfig:
    budget: float = 0.05          # edge-flip count (int) or fraction of edges (float < 1)
    epochs: int = 30              # surrogate training epochs to unroll
    scheme: str = "linear"
    seed: int = 0
    mode: str = "full-unroll"
    attack_target: str = "validation-links"
    lr: float = 0.1
    hidden: int = 32
    latent: int = 16
    unroll_node_cap: int = 1500
    mask_test_pairs: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ValueError("attack needs at least one epoch")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown weight scheme {self.scheme!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.attack_target not in TARGETS:
            raise ValueError(f"unknown attack target {self.attack_target!r}")
        if isinstance(self.budget, float) and 0 < self.budget < 1 and self.budget > 0.5:
            raise ValueError("fractional budget above 0.5 is not allowed")


@dataclass
class MetaGradient:
    value: np.ndarray                                  # n x n, symmetrizable
    epoch_records: list[tuple[int, float, float]]      # (epoch, weight, attack loss)
    config: AttackConfig


def epoch_weight(scheme: str, epoch: int, total_epochs: int,
                 grad_of_epoch: np.ndarray | None = None,
                 val_ap: float | None = None) -> float:
    """Per-epoch weight of the accumulated attack loss.

    uniform: 1. magnitude: Frobenius norm of the epoch's attack-loss gradient.
    performance: average precision on the validation links. linear: i/k.
    """
    if scheme == "uniform":
        return 1.0
    if scheme == "linear":
        if not 1 <= epoch <= total_epochs:
            raise ValueError(f"epoch {epoch} outside 1..{total_epochs}")
        return epoch / total_epochs
    if scheme == "magnitude":
        if grad_of_epoch is None:
            raise ValueError("magnitude scheme needs the epoch gradient")
        return float(np.linalg.norm(grad_of_epoch))
    if scheme == "performance":
        if val_ap is None or not 0.0 <= val_ap <= 1.0:
            raise ValueError("performance scheme needs a validation AP in [0, 1]")
        return float(val_ap)
    raise ValueError(f"unknown weight scheme {scheme!r}")


@dataclass
class _AttackContext:
    """Constants of one attack run: features, labels, targets, class weights."""

    x: np.ndarray
    target_pairs: list[tuple[int, int]] | None   # None means all entries
    label_matrix: np.ndarray                     # labels indexed by target pairs
    val_pairs: list[tuple[int, int]]
    val_relevance: np.ndarray
    train_weight: float
    attack_weight: float


def _build_context(g: Graph, split: LinkSplit, cfg: AttackConfig) -> _AttackContext:
    x = g.features if g.features is not None else surrogate.identity_features(g.n)
    labels = np.array(g.adjacency)
    # the attacker knows the held-out validation links exist
    for i, j in split.val_pos:
        labels[i, j] = 1.0
        labels[j, i] = 1.0
    if cfg.attack_target == "validation-links":
        pairs = list(split.val_pos) + list(split.val_neg)
        if not pairs:
            raise ValueError("validation-links target needs a non-empty validation split")
    else:
        pairs = None
    val_pairs = list(split.val_pos) + list(split.val_neg)
    val_rel = np.array([1] * len(split.val_pos) + [0] * len(split.val_neg))
    return _AttackContext(
        x=x,
        target_pairs=pairs,
        label_matrix=labels,
        val_pairs=val_pairs,
        val_relevance=val_rel,
        train_weight=surrogate.class_weight(g.adjacency),
        attack_weight=surrogate.class_weight(labels),
    )


def _resolve_weight(cfg: AttackConfig, ctx: _AttackContext, epoch: int,
                    a_hat_value: np.ndarray, epoch_grad) -> float:
    if cfg.scheme == "performance":
        scores = a_hat_value[tuple(np.array(ctx.val_pairs).T)]
        ap = metrics.average_precision(scores, ctx.val_relevance)
        return epoch_weight("performance", epoch, cfg.epochs, val_ap=ap)
    if cfg.scheme == "magnitude":
        return epoch_weight("magnitude", epoch, cfg.epochs, grad_of_epoch=epoch_grad())
    return epoch_weight(cfg.scheme, epoch, cfg.epochs)


def _check_finite(name: str, tv: tp.TracedValue, epoch: int) -> float:
    value = tv.item()
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} became non-finite at epoch {epoch}: {value}")
    return value


def unrolled_attack_loss(adjacency: np.ndarray, ctx: _AttackContext, cfg: AttackConfig):
    """Run the surrogate training on a tape and accumulate the attack loss.

    Returns (adjacency leaf, accumulated loss, per-epoch records). Exposed
    separately from run_attack so the same function can be re-evaluated
    under perturbed adjacencies with all by-design constants held fixed.
    """
    tape = tp.Tape()
    a = tape.leaf(adjacency, requires_grad=True)
    x = tape.constant(ctx.x)
    y = tape.constant(ctx.label_matrix)
    params = surrogate.VgaeParams.init(tape, ctx.x.shape[1], cfg.hidden, cfg.latent,
                                       cfg.seed)
    weights = params.as_list()
    a_norm = surrogate.normalize_adjacency(a)

    acc = None
    records = []
    n = adjacency.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        noise = surrogate.epoch_noise(cfg.seed, epoch, n, cfg.latent)
        z, mu, logvar = surrogate.encode(a_norm, x, params, noise)
        a_hat = surrogate.decode(z)
        train_loss, _, _ = surrogate.elbo_loss(a_hat, mu, logvar, a,
                                               weight=ctx.train_weight)
        _check_finite("training loss", train_loss, epoch)
        attack_loss = surrogate.weighted_bce(a_hat, y, restrict=ctx.target_pairs,
                                             weight=ctx.attack_weight, reduction="mean")
        loss_value = _check_finite("attack loss", attack_loss, epoch)

        def epoch_grad(attack_loss=attack_loss, stop=[w.node_id for w in weights]):
            # first-order sense: cut at this epoch's parameters
            return tp.grad(attack_loss, [a], stop_at=stop)[0]

        w_i = _resolve_weight(cfg, ctx, epoch, a_hat.value, epoch_grad)
        term = tp.scale(attack_loss, w_i)
        acc = term if acc is None else tp.add(acc, term)
        records.append((epoch, w_i, loss_value))

        if epoch < cfg.epochs:
            # traced update: later epochs see parameters that depend on a
            grads = tp.grad(train_loss, weights, traced=True)
            weights = [tp.sub(p, tp.scale(gp, cfg.lr)) for p, gp in zip(weights, grads)]
            params = surrogate.VgaeParams(*weights)
    return a, acc, records


def _first_order_meta(adjacency: np.ndarray, ctx: _AttackContext, cfg: AttackConfig):
    n = adjacency.shape[0]
    theta = surrogate.init_param_arrays(ctx.x.shape[1], cfg.hidden, cfg.latent, cfg.seed)
    acc = np.zeros_like(adjacency)
    records = []
    for epoch in range(1, cfg.epochs + 1):
        tape = tp.Tape()
        a = tape.leaf(adjacency, requires_grad=True)
        x = tape.constant(ctx.x)
        y = tape.constant(ctx.label_matrix)
        leaves = [tape.leaf(p) for p in theta]
        params = surrogate.VgaeParams(*leaves)
        a_norm = surrogate.normalize_adjacency(a)
        noise = surrogate.epoch_noise(cfg.seed, epoch, n, cfg.latent)
        z, mu, logvar = surrogate.encode(a_norm, x, params, noise)
        a_hat = surrogate.decode(z)
        train_loss, _, _ = surrogate.elbo_loss(a_hat, mu, logvar, a,
                                               weight=ctx.train_weight)
        _check_finite("training loss", train_loss, epoch)
        attack_loss = surrogate.weighted_bce(a_hat, y, restrict=ctx.target_pairs,
                                             weight=ctx.attack_weight, reduction="mean")
        loss_value = _check_finite("attack loss", attack_loss, epoch)

        grad_a = tp.grad(attack_loss, [a])[0]
        w_i = _resolve_weight(cfg, ctx, epoch, a_hat.value, lambda: grad_a)
        acc += w_i * grad_a
        records.append((epoch, w_i, loss_value))

        param_grads = tp.grad(train_loss, leaves)
        theta = [p - cfg.lr * gp for p, gp in zip(theta, param_grads)]
    return acc, records


def _mask_entries(meta: np.ndarray, split: LinkSplit, cfg: AttackConfig) -> np.ndarray:
    out = meta.copy()
    np.fill_diagonal(out, 0.0)
    if cfg.mask_test_pairs:
        for i, j in list(split.test_pos) + list(split.test_neg):
            out[i, j] = 0.0
            out[j, i] = 0.0
    return out


def run_attack(g: Graph, split: LinkSplit, cfg: AttackConfig) -> MetaGradient:
    """Accumulate the weighted attack loss over the surrogate's training run
    and differentiate it with respect to the adjacency."""
    cfg.validate()
    if g.features is not None and g.features.shape[0] != g.n:
        raise ValueError("feature matrix does not match the graph")
    ctx = _build_context(g, split, cfg)
    if cfg.mode == "full-unroll":
        if g.n > cfg.unroll_node_cap:
            raise UnrollTooLargeError(
                f"{g.n} nodes exceeds the full-unroll cap of {cfg.unroll_node_cap}; "
                "use first-order mode")
        a, acc, records = unrolled_attack_loss(g.adjacency, ctx, cfg)
        meta = tp.grad(acc, [a])[0]
    else:
        meta, records = _first_order_meta(g.adjacency, ctx, cfg)
    return MetaGradient(_mask_entries(meta, split, cfg), records, cfg)


def save_meta_gradient(mg: MetaGradient, matrix_path, sidecar_path) -> None:
    """Binary n x n little-endian float64 matrix plus a JSON audit sidecar."""
    np.ascontiguousarray(mg.value, dtype="<f8").tofile(matrix_path)
    sidecar = {
        "shape": list(mg.value.shape),
        "dtype": "<f8",
        "config": asdict(mg.config),
        "epochs": [
            {"epoch": e, "weight": w, "attack_loss": l}
            for e, w, l in mg.epoch_records
        ],
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_meta_gradient(matrix_path, sidecar_path) -> tuple[np.ndarray, dict]:
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    flat = np.fromfile(matrix_path, dtype="<f8")
    return flat.reshape(sidecar["shape"]).astype(np.float64), sidecar
