"""Gaussian-mixture targets, seeded samplers and the noise prior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; passes existing generators through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normals from pairs of uniforms."""
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # in (0, 1], keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


@dataclass(frozen=True)
class MixtureSpec:
    means: np.ndarray        # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)
    weights: np.ndarray      # (K,)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64).reshape(-1, 2)
        covs = np.asarray(self.covariances, dtype=np.float64).reshape(-1, 2, 2)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (len(means) == len(covs) == len(w)) or len(w) == 0:
            raise ValueError("means, covariances and weights must have the same nonzero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        for k, c in enumerate(covs):
            if not np.allclose(c, c.T, rtol=0, atol=1e-15) or np.linalg.eigvalsh(c)[0] <= 0:
                raise ValueError(f"component {k}: covariance is not symmetric positive-definite")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", w)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def ring_mixture(n_modes: int = 8, radius: float = 2.0, variance: float = 0.02) -> MixtureSpec:
    if n_modes < 1 or radius < 0 or variance <= 0:
        raise ValueError("need n_modes >= 1, radius >= 0, variance > 0")
    theta = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    covs = np.repeat((variance * np.eye(2))[None], n_modes, axis=0)
    return MixtureSpec(means, covs, np.full(n_modes, 1.0 / n_modes))


def sample_mixture(spec: MixtureSpec, n: int, seed) -> np.ndarray:
    """``n`` draws: component by weight, then mean + chol(cov) @ normal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    comp = np.searchsorted(np.cumsum(spec.weights), rng.random(n), side="right")
    comp = np.minimum(comp, spec.n_components - 1)
    eps = box_muller(rng, 2 * n).reshape(n, 2)
    chol = np.linalg.cholesky(spec.covariances)
    return spec.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)


def mixture_density(spec: MixtureSpec, x) -> np.ndarray:
    """Density at one point (scalar result) or at each row of an (n, 2) array."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, 2)
    inv = np.linalg.inv(spec.covariances)
    det = np.linalg.det(spec.covariances)
    diff = pts[:, None, :] - spec.means[None, :, :]
    quad = np.einsum("nki,kij,nkj->nk", diff, inv, diff)
    dens = (spec.weights / (2.0 * np.pi * np.sqrt(det))) * np.exp(-0.5 * quad)
    out = dens.sum(axis=1)
    return out[0] if single else out


def sample_noise(d_z: int, n: int, seed) -> np.ndarray:
    if d_z < 1 or n < 1:
        raise ValueError("d_z and n must be >= 1")
    return box_muller(make_rng(seed), n * d_z).reshape(n, d_z)


def nearest_component(spec: MixtureSpec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of, and Euclidean distance to, the closest component mean."""
    d = np.linalg.norm(np.asarray(points)[:, None, :] - spec.means[None], axis=2)
    idx = d.argmin(axis=1)
    return idx, d[np.arange(len(idx)), idx]
