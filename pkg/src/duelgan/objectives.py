"""Losses for DuelGAN and the Vanilla GAN / D2GAN baselines, plus the alpha/beta schedule.

Every discriminator value here is a reward to be ascended; generator values
are descended. Probabilities are clamped to ``[eps, 1 - eps]`` right before
they enter a log.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .autodiff import DomainError, Node, Tape

DEFAULT_EPS = 1e-6

Variant = Literal["duelgan", "vanilla", "d2gan"]
GeneratorLoss = Literal["saturating", "non_saturating"]
Schedule = Literal["constant", "triangular"]


@dataclass(frozen=True)
class DuelConfig:
    variant: Variant = "duelgan"
    alpha_max: float = 0.3
    beta_max: float = 0.5
    schedule: Schedule = "triangular"
    m: int = 512
    k: int = 1
    generator_loss: GeneratorLoss = "non_saturating"
    d2gan_alpha: float = 0.2
    d2gan_beta: float = 0.1
    clamp_eps: float = DEFAULT_EPS
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    noise_dim: int = 256
    g_hidden: tuple[int, ...] = (128, 128)
    d_hidden: tuple[int, ...] = (128, 128)
    hidden_activation: Literal["tanh", "relu"] = "relu"
    update_order: Literal["simultaneous", "sequential"] = "simultaneous"
    peer_init: Literal["redraw", "copy"] = "redraw"

    def __post_init__(self):
        object.__setattr__(self, "g_hidden", tuple(int(w) for w in self.g_hidden))
        object.__setattr__(self, "d_hidden", tuple(int(w) for w in self.d_hidden))
        for problem in self.problems():
            raise ValueError(problem)

    def problems(self) -> list[str]:
        """Field-level validation messages; empty when the config is valid."""
        out = []
        if self.variant not in ("duelgan", "vanilla", "d2gan"):
            out.append(f"variant: unknown value {self.variant!r}")
        for name in ("alpha_max", "beta_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name}: must lie in [0, 1], got {v}")
        if self.schedule not in ("constant", "triangular"):
            out.append(f"schedule: unknown value {self.schedule!r}")
        if self.m < 2:
            out.append(f"m: batch size must be >= 2, got {self.m}")
        if self.k < 1:
            out.append(f"k: discriminator steps must be >= 1, got {self.k}")
        if self.generator_loss not in ("saturating", "non_saturating"):
            out.append(f"generator_loss: unknown value {self.generator_loss!r}")
        if not 0.0 < self.clamp_eps <= 1e-3:
            out.append(f"clamp_eps: must lie in (0, 1e-3], got {self.clamp_eps}")
        if self.lr <= 0:
            out.append(f"lr: must be positive, got {self.lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            out.append("adam_beta1/adam_beta2: must lie in [0, 1)")
        if self.noise_dim < 1:
            out.append(f"noise_dim: must be >= 1, got {self.noise_dim}")
        if not self.g_hidden or not self.d_hidden or min(self.g_hidden + self.d_hidden) < 1:
            out.append("g_hidden/d_hidden: need at least one positive width")
        if self.hidden_activation not in ("tanh", "relu"):
            out.append(f"hidden_activation: unknown value {self.hidden_activation!r}")
        if self.update_order not in ("simultaneous", "sequential"):
            out.append(f"update_order: unknown value {self.update_order!r}")
        if self.peer_init not in ("redraw", "copy"):
            out.append(f"peer_init: unknown value {self.peer_init!r}")
        return out


# -- scalar helpers -----------------------------------------------------------

def eval_ell(d: float, y: int) -> float:
    """log d for y=1, log(1-d) for y=0."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    return math.log(d) if y == 1 else math.log(1.0 - d)


def peer_label(d_peer):
    """1 where the peer says real (strictly above 1/2), else 0."""
    if np.ndim(d_peer) == 0:
        return int(d_peer > 0.5)
    return (np.asarray(d_peer) > 0.5).astype(np.float64)


def sample_pairs(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent (p1, p2) index pairs into a batch of size ``n``, with replacement."""
    return rng.integers(0, n, size=(n, 2))


# -- on-tape pieces -----------------------------------------------------------

def _vec(tape: Tape, x) -> Node:
    if not isinstance(x, Node):
        x = tape.constant(np.asarray(x, dtype=np.float64).ravel())
    elif x.value is not None and x.value.ndim != 1:
        x = tape.reshape(x, (-1,))
    return x


def clamped_log(tape: Tape, d: Node, eps: float) -> Node:
    return tape.log(tape.clip(d, eps, 1.0 - eps))


def clamped_log1m(tape: Tape, d: Node, eps: float) -> Node:
    return tape.log(tape.affine(tape.clip(d, eps, 1.0 - eps), -1.0, 1.0))


def ell(tape: Tape, d: Node, labels: np.ndarray, eps: float = DEFAULT_EPS) -> Node:
    """Elementwise evaluation function with constant 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64)
    return tape.add(tape.mul(clamped_log(tape, d, eps), labels),
                    tape.mul(clamped_log1m(tape, d, eps), 1.0 - labels))


def duel_d_minibatch(tape: Tape, d_self, d_peer, pairs, alpha: float,
                     eps: float = DEFAULT_EPS) -> Node:
    """Minibatch duel term for one discriminator.

    ``d_self`` holds this discriminator's outputs on the 2m-element batch
    (differentiable); ``d_peer`` holds the peer's outputs on the same batch,
    used only through its thresholded labels. ``pairs`` is (2m, 2): column 0
    indexes the sample scored by ``d_self``, column 1 the sample whose peer
    label it is scored against.
    """
    d_self = _vec(tape, d_self)
    peer = np.asarray(d_peer.value if isinstance(d_peer, Node) else d_peer, dtype=np.float64).ravel()
    pairs = np.asarray(pairs, dtype=np.intp)
    n = peer.shape[0]
    if pairs.shape != (n, 2):
        raise ValueError(f"pairs must have shape ({n}, 2), got {pairs.shape}")
    if pairs.min() < 0 or pairs.max() >= n:
        raise IndexError(f"pair index out of range for a batch of {n}")
    labels = peer_label(peer)
    agree = tape.mean(ell(tape, d_self, labels, eps))
    cross = tape.mean(ell(tape, tape.take(d_self, pairs[:, 0]), labels[pairs[:, 1]], eps))
    return tape.sub(agree, tape.scale(cross, alpha))


def gan_value(tape: Tape, d_real, d_fake, eps: float = DEFAULT_EPS) -> Node:
    """mean log D(x) + mean log(1 - D(G(z)))."""
    return tape.add(tape.mean(clamped_log(tape, _vec(tape, d_real), eps)),
                    tape.mean(clamped_log1m(tape, _vec(tape, d_fake), eps)))


def discriminator_objective(tape: Tape, d_real, d_fake, duel_term: Node | None,
                            beta: float, eps: float = DEFAULT_EPS) -> Node:
    value = gan_value(tape, d_real, d_fake, eps)
    if duel_term is None:
        return value
    return tape.add(value, tape.scale(duel_term, beta))


def generator_objective(tape: Tape, d1_fake, d2_fake=None,
                        mode: GeneratorLoss = "non_saturating",
                        eps: float = DEFAULT_EPS) -> Node:
    """Value the generator descends; pass ``d2_fake=None`` for a single discriminator."""
    outs = [_vec(tape, d1_fake)] + ([] if d2_fake is None else [_vec(tape, d2_fake)])
    if mode == "saturating":
        terms = [tape.mean(clamped_log1m(tape, d, eps)) for d in outs]
    elif mode == "non_saturating":
        terms = [tape.mean(clamped_log(tape, d, eps)) for d in outs]
    else:
        raise ValueError(f"unknown generator loss {mode!r}")
    total = terms[0] if len(terms) == 1 else tape.add(terms[0], terms[1])
    return total if mode == "saturating" else tape.neg(total)


def vanilla_objective(tape: Tape, d_real, d_fake, mode: GeneratorLoss = "non_saturating",
                      eps: float = DEFAULT_EPS) -> tuple[Node, Node]:
    """(discriminator value to ascend, generator value to descend)."""
    d_value = gan_value(tape, d_real, d_fake, eps)
    return d_value, generator_objective(tape, d_fake, None, mode, eps)


def d2gan_objective(tape: Tape, d1_real, d1_fake, d2_real, d2_fake,
                    alpha: float, beta: float, eps: float = DEFAULT_EPS) -> tuple[Node, Node]:
    """Dual-discriminator baseline on positive-valued heads.

    d_value = alpha*mean log D1(x) - mean D1(G(z)) - mean D2(x) + beta*mean log D2(G(z)),
    ascended by both heads; the generator descends the two terms that depend on it.
    """
    d1_real, d1_fake = _vec(tape, d1_real), _vec(tape, d1_fake)
    d2_real, d2_fake = _vec(tape, d2_real), _vec(tape, d2_fake)
    for label, node in (("D1(x)", d1_real), ("D2(G(z))", d2_fake)):
        if node.value is not None and np.any(node.value <= 0):
            raise DomainError(f"D2GAN head {label} produced a non-positive value before log")
    inf = np.inf
    log_d1_real = tape.mean(tape.log(tape.clip(d1_real, eps, inf)))
    log_d2_fake = tape.mean(tape.log(tape.clip(d2_fake, eps, inf)))
    g_value = tape.add(tape.neg(tape.mean(d1_fake)), tape.scale(log_d2_fake, beta))
    d_value = tape.sub(tape.add(tape.scale(log_d1_real, alpha), g_value), tape.mean(d2_real))
    return d_value, g_value


def schedule_alpha_beta(it: int, total_iters: int, cfg: DuelConfig) -> tuple[float, float]:
    """Constant maxima, or a 0 -> max -> 0 triangle peaking at the midpoint."""
    if not 0 <= it <= total_iters:
        raise ValueError(f"iteration {it} outside [0, {total_iters}]")
    if cfg.schedule == "constant":
        return cfg.alpha_max, cfg.beta_max
    half = total_iters / 2.0
    frac = it / half if it <= half else (total_iters - it) / half
    return cfg.alpha_max * frac, cfg.beta_max * frac
