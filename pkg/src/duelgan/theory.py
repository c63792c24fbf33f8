"""Closed-form equilibrium quantities on finite sample spaces, with brute-force oracles.

Everything works on a :class:`DiscreteGameSpec`: K points carrying masses
under the data and generator distributions, and a peer confidence ``r_j(x)``
(the probability the peer discriminator labels ``x`` real).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

LOG16 = math.log(16.0)
GRID_POINTS = 100_000
GRID_LO, GRID_HI = 1e-6, 1.0 - 1e-6


class RegimeError(ValueError):
    """Inputs fall outside the regime where a closed form applies."""


class ConditionViolated(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteGameSpec:
    p_data: np.ndarray
    p_g: np.ndarray
    r_j: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        p_data = np.asarray(self.p_data, dtype=np.float64).ravel()
        p_g = np.asarray(self.p_g, dtype=np.float64).ravel()
        r = np.asarray(self.r_j, dtype=np.float64).ravel()
        if r.size == 1:
            r = np.full(p_data.shape, r[0])
        if not (p_data.shape == p_g.shape == r.shape) or p_data.size == 0:
            raise ValueError("p_data, p_g and r_j must share one nonzero length")
        for name, p in (("p_data", p_data), ("p_g", p_g)):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be nonnegative and sum to 1 (sum={p.sum()!r})")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("r_j must lie in [0, 1]")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("alpha and beta must lie in [0, 1]")
        object.__setattr__(self, "p_data", p_data)
        object.__setattr__(self, "p_g", p_g)
        object.__setattr__(self, "r_j", r)

    @property
    def K(self) -> int:
        return self.p_data.size

    @property
    def p_duel(self) -> np.ndarray:
        return 0.5 * (self.p_data + self.p_g)


@dataclass(frozen=True)
class OptimalDiscriminatorResult:
    d_star: np.ndarray
    p_j: float
    r_hat_star: np.ndarray
    w: float
    coeff_a: np.ndarray
    coeff_b: np.ndarray


# -- argmax of a log y + b log(1 - y) ------------------------------------------

def lemma1_argmax(a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise RegimeError(f"coefficients must be nonnegative, got a={a}, b={b}")
    if a == 0 and b == 0:
        raise ValueError("a and b cannot both be zero")
    return a / (a + b)


def _grid():
    y = np.linspace(GRID_LO, GRID_HI, GRID_POINTS)
    return y, np.log(y), np.log1p(-y)


def grid_argmax(f, y=None, log_y=None, log_1my=None) -> float:
    """Maximize a scalar function of ``y`` on the uniform grid, then refine.

    ``f`` takes (y, log y, log(1-y)) arrays so callers can reuse the grid's logs.
    """
    if y is None:
        y, log_y, log_1my = _grid()
    vals = f(y, log_y, log_1my)
    i = int(np.argmax(vals))
    lo, hi = y[max(i - 1, 0)], y[min(i + 1, len(y) - 1)]
    res = minimize_scalar(lambda t: -f(np.array([t]), np.log([t]), np.log1p([-t]))[0],
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return float(res.x) if -res.fun >= vals[i] else float(y[i])


# -- optimal discriminators ------------------------------------------------------

def optimal_discriminator(spec: DiscreteGameSpec) -> OptimalDiscriminatorResult:
    pd = spec.p_duel
    p_j = float(np.dot(pd, spec.r_j))
    r_hat = spec.r_j - spec.alpha * p_j
    a = spec.p_data + spec.beta * r_hat * pd
    b = spec.p_g + spec.beta * (1.0 - spec.alpha - r_hat) * pd
    bad = np.flatnonzero((a < 0) | (b < 0) | ((a == 0) & (b == 0)))
    if bad.size:
        raise RegimeError(f"coefficients negative or both zero at points {bad.tolist()}")
    d_star = np.array([lemma1_argmax(ai, bi) for ai, bi in zip(a, b)])
    return OptimalDiscriminatorResult(d_star, p_j, r_hat, spec.beta * (1.0 - spec.alpha), a, b)


def optimal_discriminator_bruteforce(spec: DiscreteGameSpec) -> np.ndarray:
    """Per-point grid maximization of the enumerated game objective.

    For a point x, collects every expectation term that involves D(x): the data
    and generator terms, the agreement term under the peer's label
    distribution at x, and the cross term summed over all partner points.
    """
    y, ly, l1y = _grid()
    pd = spec.p_duel
    out = np.empty(spec.K)
    for x in range(spec.K):
        w_log = spec.p_data[x]
        w_log1m = spec.p_g[x]
        w_log += spec.beta * pd[x] * spec.r_j[x]
        w_log1m += spec.beta * pd[x] * (1.0 - spec.r_j[x])
        for x2 in range(spec.K):
            w_log -= spec.alpha * spec.beta * pd[x] * pd[x2] * spec.r_j[x2]
            w_log1m -= spec.alpha * spec.beta * pd[x] * pd[x2] * (1.0 - spec.r_j[x2])
        out[x] = grid_argmax(lambda _y, a, b: w_log * a + w_log1m * b, y, ly, l1y)
    return out


def updated_distributions(spec: DiscreteGameSpec, result: OptimalDiscriminatorResult | None = None):
    """Reweighted (p_data_i, p_g_i) and their normalizers (z_data, z_g)."""
    result = result or optimal_discriminator(spec)
    pd = spec.p_duel
    u = spec.p_data + spec.beta * result.r_hat_star * pd
    v = spec.p_g + spec.beta * (1.0 - result.r_hat_star) * pd
    if np.any(u < 0) or np.any(v < 0):
        raise RegimeError("reweighted masses went negative")
    z_data, z_g = float(u.sum()), float(v.sum())
    if z_data <= 0 or z_g <= 0:
        raise RegimeError("degenerate spec: zero normalizer")
    return u / z_data, v / z_g, z_data, z_g


# -- virtual training criterion ---------------------------------------------------

def kl(u, v) -> float:
    """Sum u log(u/v) without renormalizing either argument."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(xlogy(u, u) - xlogy(u, v)))


def divergence_to_average(u, v) -> float:
    """KL(u || m) + KL(v || m) with m = (u + v)/2, i.e. twice the usual JSD."""
    m = 0.5 * (np.asarray(u) + np.asarray(v))
    return kl(u, m) + kl(v, m)


@dataclass(frozen=True)
class CofGReport:
    value: float
    gap_to_minimum: float | None = None
    # normalized reading: divergence_to_average(p_data_i, p_g_i)
    jsd: float | None = None
    identity_residual: float | None = None
    # printed arguments without renormalization, kept for comparison
    jsd_unnormalized: float | None = None
    identity_residual_unnormalized: float | None = None


def in_divergence_regime(spec: DiscreteGameSpec) -> bool:
    return spec.alpha == 0 and bool(np.all(spec.r_j == 0.5))


def c_of_g(spec: DiscreteGameSpec, with_identity: bool | None = None) -> CofGReport:
    """Inner-max value: both discriminators at their optimum, scored on the
    reweighted distributions. In the alpha=0, r=1/2 regime also reports the
    divergence form and its residual."""
    if with_identity is None:
        with_identity = in_divergence_regime(spec)
    if with_identity and not in_divergence_regime(spec):
        raise RegimeError("the divergence identity needs alpha = 0 and r_j = 1/2 everywhere")
    res = optimal_discriminator(spec)
    p_data_i, p_g_i, _, _ = updated_distributions(spec, res)
    value = 0.0
    for _ in range(2):  # D1 and D2 share the same peer confidence here
        value += float(np.sum(xlogy(p_data_i, res.d_star)) + np.sum(xlogy(p_g_i, 1.0 - res.d_star)))
    if not with_identity:
        return CofGReport(value)
    jsd = divergence_to_average(p_data_i, p_g_i)
    half_duel = 0.5 * spec.beta * spec.p_duel
    jsd_u = divergence_to_average(spec.p_data + half_duel, spec.p_g + half_duel)
    return CofGReport(
        value=value,
        gap_to_minimum=value + LOG16,
        jsd=jsd,
        identity_residual=value - (-LOG16 + 2.0 * jsd),
        jsd_unnormalized=jsd_u,
        identity_residual_unnormalized=value - (-LOG16 + 2.0 * jsd_u),
    )


# -- duel expectations -----------------------------------------------------------------

def _ell(d, y):
    return y * np.log(d) + (1.0 - y) * np.log1p(-d)


def duel_expectation_bruteforce(spec: DiscreteGameSpec, d_self, d_peer, alpha: float | None = None) -> float:
    """Exact duel value under p_duel by enumerating x and all (x_p1, x_p2) pairs."""
    alpha = spec.alpha if alpha is None else alpha
    d_self = np.asarray(d_self, dtype=np.float64)
    labels = (np.asarray(d_peer) > 0.5).astype(np.float64)
    pd = spec.p_duel
    agree = 0.0
    for x in range(spec.K):
        agree += pd[x] * _ell(d_self[x], labels[x])
    cross = 0.0
    for x1 in range(spec.K):
        for x2 in range(spec.K):
            cross += pd[x1] * pd[x2] * _ell(d_self[x1], labels[x2])
    return float(agree - alpha * cross)


def _duel_with_label_channel(pd, d_self, y_star, e_data, e_g, alpha):
    """Duel value when the peer's labels pass through a flip channel.

    y_star -> 0 with prob e_data when y_star = 1, y_star -> 1 with prob e_g when 0.
    """
    def p_noisy(y_clean, y_obs):
        if y_clean == 1:
            return 1.0 - e_data if y_obs == 1 else e_data
        return e_g if y_obs == 1 else 1.0 - e_g

    K = len(pd)
    agree = 0.0
    for x in range(K):
        for y in (0, 1):
            agree += pd[x] * p_noisy(int(y_star[x]), y) * _ell(d_self[x], y)
    cross = 0.0
    for x1 in range(K):
        for x2 in range(K):
            for y in (0, 1):
                cross += pd[x1] * pd[x2] * p_noisy(int(y_star[x2]), y) * _ell(d_self[x1], y)
    return agree - alpha * cross


@dataclass
class DivergedPeerReport:
    clean: np.ndarray
    corrupted: np.ndarray
    bias_closed_form: np.ndarray
    residual: np.ndarray
    argmax_clean: int
    argmax_corrupted: int
    equivalence_checked: bool
    ratio_residual: np.ndarray | None = field(default=None)

    def argmax_preserved(self, tol: float = 1e-12) -> bool:
        """Corrupted maximizer is among the (possibly tied) clean maximizers."""
        return bool(self.clean[self.argmax_corrupted] >= self.clean.max() - tol)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def theorem2_identity(spec: DiscreteGameSpec, d_self_candidates, e_data: float, e_g: float,
                      alpha: float, require_equivalence: bool | None = None) -> DivergedPeerReport:
    """Affine decomposition of the duel under a diverged peer.

    The peer's clean labels come from the optimal discriminator of ``spec``;
    the corrupted value is computed by enumerating the flip channel and
    compared with (1 - e_data - e_g) * clean + Bias, Bias in closed form.
    """
    if not (0 <= e_data < 1 and 0 <= e_g < 1):
        raise ValueError("flip rates must lie in [0, 1)")
    if require_equivalence is None:
        require_equivalence = alpha == 1.0 and e_data + e_g < 1
    if require_equivalence and e_data + e_g >= 1:
        raise ConditionViolated(f"e_data + e_g = {e_data + e_g} >= 1")
    y_star = (optimal_discriminator(spec).d_star > 0.5).astype(np.float64)
    pd = spec.p_duel
    cands = [np.asarray(c, dtype=np.float64) for c in d_self_candidates]
    clean = np.array([_duel_with_label_channel(pd, c, y_star, 0.0, 0.0, alpha) for c in cands])
    corrupted = np.array([_duel_with_label_channel(pd, c, y_star, e_data, e_g, alpha) for c in cands])
    bias = np.array([(1.0 - alpha) * np.sum(pd * (e_data * np.log1p(-c) + e_g * np.log(c)))
                     for c in cands])
    residual = corrupted - ((1.0 - e_data - e_g) * clean + bias)
    report = DivergedPeerReport(clean, corrupted, bias, residual,
                            int(np.argmax(clean)), int(np.argmax(corrupted)), require_equivalence)
    if require_equivalence:
        report.ratio_residual = corrupted - (1.0 - e_data - e_g) * clean
    return report


# -- full identity suite -------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float
    passed: bool
    note: str = ""


def random_spec(rng: np.random.Generator, K: int | None = None, alpha=None, beta=None,
                r=None, valid_only: bool = True) -> DiscreteGameSpec:
    """Random spec; with ``valid_only`` resamples until the optimal-D coefficients are nonnegative."""
    while True:
        k = int(K or rng.integers(2, 7))
        p_data = rng.dirichlet(np.ones(k))
        p_g = rng.dirichlet(np.ones(k))
        rr = rng.random(k) if r is None else np.full(k, float(r))
        a = float(rng.random()) if alpha is None else alpha
        b = float(rng.random()) if beta is None else beta
        spec = DiscreteGameSpec(p_data, p_g, rr, a, b)
        if not valid_only:
            return spec
        try:
            optimal_discriminator(spec)
        except RegimeError:
            continue
        return spec


def run_identity_suite(n_specs: int = 100, seed: int = 0) -> list[CheckResult]:
    """All closed-form identities against their oracles on random specs."""
    rng = np.random.Generator(np.random.Philox(seed))
    out = []

    # optimal discriminator vs grid maximization
    worst = 0.0
    for _ in range(n_specs):
        spec = random_spec(rng)
        closed = optimal_discriminator(spec).d_star
        worst = max(worst, float(np.max(np.abs(closed - optimal_discriminator_bruteforce(spec)))))
    out.append(CheckResult("optimal discriminator vs grid search", worst, 1e-6, worst < 1e-6))

    # inner-max value at p_data = p_g
    worst = 0.0
    for _ in range(n_specs):
        p = rng.dirichlet(np.ones(int(rng.integers(2, 7))))
        spec = DiscreteGameSpec(p, p, 0.5, 0.0, float(rng.random()))
        worst = max(worst, abs(c_of_g(spec).value + LOG16))
    out.append(CheckResult("C(G) = -log 16 at p_data = p_g", worst, 1e-9, worst < 1e-9))

    # divergence identity and strict gap when p_data != p_g
    worst, worst_u, min_gap = 0.0, 0.0, np.inf
    for _ in range(n_specs):
        spec = random_spec(rng, alpha=0.0, r=0.5)
        rep = c_of_g(spec)
        worst = max(worst, abs(rep.identity_residual))
        worst_u = max(worst_u, abs(rep.identity_residual_unnormalized))
        min_gap = min(min_gap, rep.gap_to_minimum)
    out.append(CheckResult("C(G) = -log 16 + 2 JSD (normalized)", worst, 1e-9, worst < 1e-9,
                           f"unnormalized reading residual up to {worst_u:.3e}"))
    out.append(CheckResult("C(G) > -log 16 when p_data != p_g", -min_gap, 0.0, min_gap > 0,
                           f"smallest gap {min_gap:.3e}"))

    # diverged peer: affine decomposition, and pure scaling at alpha = 1
    worst_dec, worst_ratio, argmax_ok = 0.0, 0.0, True
    for _ in range(n_specs):
        spec = random_spec(rng)
        cands = rng.uniform(0.02, 0.98, size=(8, spec.K))
        e_data, e_g = rng.uniform(0, 0.5, size=2)
        rep = theorem2_identity(spec, cands, e_data, e_g, float(rng.random()), require_equivalence=False)
        worst_dec = max(worst_dec, rep.max_residual)
        rep1 = theorem2_identity(spec, cands, e_data, e_g, 1.0)
        worst_ratio = max(worst_ratio, float(np.max(np.abs(rep1.ratio_residual))))
        argmax_ok &= rep1.argmax_preserved()
    out.append(CheckResult("diverged-peer decomposition residual", worst_dec, 1e-9, worst_dec < 1e-9))
    out.append(CheckResult("alpha=1: corrupted = (1-e_data-e_g) * clean", worst_ratio, 1e-9,
                           worst_ratio < 1e-9 and argmax_ok,
                           "argmax preserved" if argmax_ok else "argmax changed"))

    # beta = 0: duel-weighted objective is the plain GAN objective, bit for bit
    out.append(_beta_zero_check(rng, n_specs))
    return out


def _beta_zero_check(rng, n_batches) -> CheckResult:
    from .autodiff import Tape
    from .objectives import discriminator_objective, duel_d_minibatch, gan_value

    mismatches = 0
    for _ in range(n_batches):
        m = int(rng.integers(2, 33))
        d = rng.uniform(0.01, 0.99, size=2 * m)
        peer = rng.uniform(0.01, 0.99, size=2 * m)
        pairs = rng.integers(0, 2 * m, size=(2 * m, 2))
        tape = Tape()
        dn = tape.leaf("d", d)
        duel = duel_d_minibatch(tape, dn, peer, pairs, float(rng.random()))
        full = discriminator_objective(tape, tape.take(dn, np.arange(m)),
                                       tape.take(dn, np.arange(m, 2 * m)), duel, 0.0)
        tape2 = Tape()
        d2 = tape2.leaf("d", d)
        plain = gan_value(tape2, tape2.take(d2, np.arange(m)), tape2.take(d2, np.arange(m, 2 * m)))
        mismatches += full.value.tobytes() != plain.value.tobytes()
    return CheckResult("beta=0 objective equals vanilla (bitwise)", float(mismatches), 0.0,
                       mismatches == 0)
