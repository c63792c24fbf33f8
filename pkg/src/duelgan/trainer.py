"""Training loop: k discriminator ascent steps per generator descent step.

Randomness is split into four independent Philox streams (data, noise,
pairs, eval) so that, e.g., drawing duel pair indices never shifts the data
or noise sequence, and evaluation cadence never changes the trajectory.
"""
from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .autodiff import Tape
from .metrics import (
    agreement_level, histogram2d, mode_coverage, reference_histogram, symmetric_kl,
    wasserstein_grid,
)
from .nets import MlpParams, discriminator_spec, generator_spec, mlp_apply, mlp_forward, mlp_init
from .objectives import (
    DuelConfig, d2gan_objective, discriminator_objective, duel_d_minibatch, gan_value,
    generator_objective, sample_pairs, schedule_alpha_beta,
)
from .synth import MixtureSpec, sample_mixture, sample_noise

EVAL_SAMPLES = 10_000
STREAMS = ("data", "noise", "pairs", "eval")
CKPT_MAGIC = b"DUELCKPT"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    """A step produced a non-finite value; the message names where."""


# -- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_for(cls, params: MlpParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], 0)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.t)


def adam_update(params: MlpParams, grads: list[np.ndarray], state: AdamState, lr: float,
                beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8,
                iteration: int | None = None) -> tuple[MlpParams, AdamState]:
    """One bias-corrected descent step. Ascend by passing negated gradients."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or len(state.m) != len(arrays):
        raise ValueError("params, grads and optimizer state have different lengths")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(arrays, grads, state.m, state.v)):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"parameter {i}: shape {p.shape} but gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at iteration {iteration}, parameter index {i}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), AdamState(new_m, new_v, t)


# -- state ---------------------------------------------------------------------

def _child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(n)


def _stream(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TrainState:
    iter: int
    params_g: MlpParams
    params_d1: MlpParams
    params_d2: MlpParams
    opt_g: AdamState
    opt_d1: AdamState
    opt_d2: AdamState
    rngs: dict[str, np.random.Generator]
    config: DuelConfig
    target: MixtureSpec
    total_iters: int
    seed: int

    def copy(self) -> "TrainState":
        rngs = {}
        for name, g in self.rngs.items():
            bg = np.random.Philox()
            bg.state = g.bit_generator.state
            rngs[name] = np.random.Generator(bg)
        return replace(self, params_g=self.params_g.copy(), params_d1=self.params_d1.copy(),
                       params_d2=self.params_d2.copy(), opt_g=self.opt_g.copy(),
                       opt_d1=self.opt_d1.copy(), opt_d2=self.opt_d2.copy(), rngs=rngs)


def init_state(config: DuelConfig, target: MixtureSpec, total_iters: int, seed: int) -> TrainState:
    if total_iters < 1:
        raise ValueError("total_iters must be >= 1")
    children = _child_seeds(seed, len(STREAMS) + 3)
    rngs = {name: _stream(ss) for name, ss in zip(STREAMS, children)}
    net_seeds = [int(ss.generate_state(1, np.uint64)[0]) for ss in children[len(STREAMS):]]
    head = "softplus" if config.variant == "d2gan" else "sigmoid"
    g = mlp_init(generator_spec(config.noise_dim, config.g_hidden, config.hidden_activation, net_seeds[0]))
    d1 = mlp_init(discriminator_spec(config.d_hidden, config.hidden_activation, net_seeds[1], head))
    if config.peer_init == "copy":
        d2 = d1.copy()
    else:
        d2 = mlp_init(discriminator_spec(config.d_hidden, config.hidden_activation, net_seeds[2], head))
    return TrainState(0, g, d1, d2, AdamState.zeros_for(g), AdamState.zeros_for(d1),
                      AdamState.zeros_for(d2), rngs, config, target, int(total_iters), int(seed))


# -- one iteration -------------------------------------------------------------

def _check_finite(value: float, what: str, it: int):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what} at iteration {it}")


def _grads(grad_map: dict, params: MlpParams, prefix: str, sign: float = 1.0) -> list[np.ndarray]:
    return [sign * grad_map[n] for n in params.names(prefix)]


def duel_discriminator_value(params: MlpParams, batch: np.ndarray, peer_out: np.ndarray | None,
                             pairs: np.ndarray | None, alpha: float, beta: float,
                             eps: float) -> tuple[Tape, object]:
    """Record the discriminator objective on ``batch`` (X first, then G(Z)).

    ``peer_out=None`` gives the plain two-player value.
    """
    m = batch.shape[0] // 2
    tape = Tape()
    out = tape.reshape(mlp_forward(params, batch, tape, prefix="d"), (-1,))
    real = tape.take(out, np.arange(m))
    fake = tape.take(out, np.arange(m, 2 * m))
    duel = None if peer_out is None else duel_d_minibatch(tape, out, peer_out, pairs, alpha, eps)
    value = discriminator_objective(tape, real, fake, duel, beta, eps)
    return tape, value


def _ascend(state_params, opt, cfg, tape, value, it):
    grad_map = tape.backward(value)
    return adam_update(state_params, _grads(grad_map, state_params, "d", -1.0), opt,
                       cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, it)


def train_step(state: TrainState, record_batches: bool = False) -> tuple[TrainState, dict]:
    """Advance one iteration; the input state is left untouched."""
    s = state.copy()
    cfg = s.config
    it = s.iter
    alpha, beta = schedule_alpha_beta(it, s.total_iters, cfg)
    m = cfg.m
    summary = {"iter": it, "alpha": alpha, "beta": beta, "batches": []}

    for _ in range(cfg.k):
        x = sample_mixture(s.target, m, s.rngs["data"])
        z = sample_noise(cfg.noise_dim, m, s.rngs["noise"])
        batch = np.concatenate([x, mlp_apply(s.params_g, z)], axis=0)  # G(Z) detached

        if cfg.variant == "vanilla":
            tape, value = duel_discriminator_value(s.params_d1, batch, None, None, 0.0, 0.0, cfg.clamp_eps)
            _check_finite(float(value.value), "D1 objective", it)
            s.params_d1, s.opt_d1 = _ascend(s.params_d1, s.opt_d1, cfg, tape, value, it)
            summary.update(d1_value=float(value.value))
            if record_batches:
                summary["batches"].append({"batch": batch})

        elif cfg.variant == "duelgan":
            pairs1 = sample_pairs(s.rngs["pairs"], 2 * m)
            pairs2 = sample_pairs(s.rngs["pairs"], 2 * m)
            out2 = mlp_apply(s.params_d2, batch).ravel()
            tape1, v1 = duel_discriminator_value(s.params_d1, batch, out2, pairs1, alpha, beta, cfg.clamp_eps)
            _check_finite(float(v1.value), "D1 objective", it)
            new_d1, new_opt1 = _ascend(s.params_d1, s.opt_d1, cfg, tape1, v1, it)
            # simultaneous: D2 reads D1's pre-step outputs; sequential: post-step
            src = new_d1 if cfg.update_order == "sequential" else s.params_d1
            out1 = mlp_apply(src, batch).ravel()
            tape2, v2 = duel_discriminator_value(s.params_d2, batch, out1, pairs2, alpha, beta, cfg.clamp_eps)
            _check_finite(float(v2.value), "D2 objective", it)
            s.params_d2, s.opt_d2 = _ascend(s.params_d2, s.opt_d2, cfg, tape2, v2, it)
            s.params_d1, s.opt_d1 = new_d1, new_opt1
            summary.update(d1_value=float(v1.value), d2_value=float(v2.value),
                           agreement=agreement_level(out1, out2))
            if record_batches:
                summary["batches"].append({"batch": batch, "pairs1": pairs1, "pairs2": pairs2,
                                           "peer_for_d1": out2, "peer_for_d2": out1})

        else:  # d2gan: one joint value ascended by both heads
            tape = Tape()
            o1 = tape.reshape(mlp_forward(s.params_d1, batch, tape, prefix="d1"), (-1,))
            o2 = tape.reshape(mlp_forward(s.params_d2, batch, tape, prefix="d2"), (-1,))
            real, fake = np.arange(m), np.arange(m, 2 * m)
            d_value, _ = d2gan_objective(tape, tape.take(o1, real), tape.take(o1, fake),
                                         tape.take(o2, real), tape.take(o2, fake),
                                         cfg.d2gan_alpha, cfg.d2gan_beta, cfg.clamp_eps)
            _check_finite(float(d_value.value), "D2GAN objective", it)
            grad_map = tape.backward(d_value)
            s.params_d1, s.opt_d1 = adam_update(s.params_d1, _grads(grad_map, s.params_d1, "d1", -1.0),
                                                s.opt_d1, cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                                                cfg.adam_eps, it)
            s.params_d2, s.opt_d2 = adam_update(s.params_d2, _grads(grad_map, s.params_d2, "d2", -1.0),
                                                s.opt_d2, cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                                                cfg.adam_eps, it)
            summary.update(d_value=float(d_value.value))

    # generator step on fresh noise; discriminator weights are constants here
    z = sample_noise(cfg.noise_dim, m, s.rngs["noise"])
    tape = Tape()
    fake = mlp_forward(s.params_g, z, tape, prefix="g")
    o1 = mlp_forward(s.params_d1, fake, tape)
    if cfg.variant == "vanilla":
        g_value = generator_objective(tape, o1, None, cfg.generator_loss, cfg.clamp_eps)
    elif cfg.variant == "duelgan":
        o2 = mlp_forward(s.params_d2, fake, tape)
        g_value = generator_objective(tape, o1, o2, cfg.generator_loss, cfg.clamp_eps)
    else:
        o2 = mlp_forward(s.params_d2, fake, tape)
        dummy = tape.constant(np.ones(m))
        _, g_value = d2gan_objective(tape, dummy, o1, dummy, o2, cfg.d2gan_alpha, cfg.d2gan_beta,
                                     cfg.clamp_eps)
    _check_finite(float(g_value.value), "generator objective", it)
    grad_map = tape.backward(g_value)
    s.params_g, s.opt_g = adam_update(s.params_g, _grads(grad_map, s.params_g, "g"), s.opt_g,
                                      cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, it)
    summary["g_value"] = float(g_value.value)
    s.iter = it + 1
    return s, summary


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRecord:
    iter: int
    sym_kl: float
    wasserstein: float
    modes_captured: int
    hq_fraction: float
    agreement: float
    d1_loss: float
    d2_loss: float
    g_loss: float
    alpha: float
    beta: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise TrainingError(f"non-finite metric {f.name}={v} at iteration {self.iter}")


def _eval_losses(state: TrainState, real: np.ndarray, fake: np.ndarray,
                 alpha: float, beta: float):
    """Losses are negated discriminator values, and the generator's descended value."""
    cfg = state.config
    eps = cfg.clamp_eps
    batch = np.concatenate([real, fake], axis=0)
    out1 = mlp_apply(state.params_d1, batch).ravel()
    out2 = mlp_apply(state.params_d2, batch).ravel()
    n = real.shape[0]
    tape = Tape()
    r1, f1 = tape.constant(out1[:n]), tape.constant(out1[n:])
    r2, f2 = tape.constant(out2[:n]), tape.constant(out2[n:])
    if cfg.variant == "d2gan":
        d1_val = tape.sub(tape.scale(tape.mean(tape.log(tape.clip(r1, eps, np.inf))), cfg.d2gan_alpha),
                          tape.mean(f1))
        d2_val = tape.add(tape.neg(tape.mean(r2)),
                          tape.scale(tape.mean(tape.log(tape.clip(f2, eps, np.inf))), cfg.d2gan_beta))
        _, g_val = d2gan_objective(tape, r1, f1, r2, f2, cfg.d2gan_alpha, cfg.d2gan_beta, eps)
    elif cfg.variant == "vanilla":
        d1_val = gan_value(tape, r1, f1, eps)
        d2_val = gan_value(tape, r2, f2, eps)  # D2 never trains; reported for completeness
        g_val = generator_objective(tape, f1, None, cfg.generator_loss, eps)
    else:
        pairs = sample_pairs(state.rngs["eval"], 2 * n)
        t1 = duel_d_minibatch(tape, tape.constant(out1), out2, pairs, alpha, eps)
        t2 = duel_d_minibatch(tape, tape.constant(out2), out1, pairs, alpha, eps)
        d1_val = discriminator_objective(tape, r1, f1, t1, beta, eps)
        d2_val = discriminator_objective(tape, r2, f2, t2, beta, eps)
        g_val = generator_objective(tape, f1, f2, cfg.generator_loss, eps)
    return (-float(d1_val.value), -float(d2_val.value), float(g_val.value),
            agreement_level(out1, out2))


def generate(params_g: MlpParams, n: int, rng) -> np.ndarray:
    return mlp_apply(params_g, sample_noise(params_g.spec.d_in, n, rng))


def evaluate(state: TrainState, reference=None, n: int = EVAL_SAMPLES) -> tuple[MetricsRecord, np.ndarray]:
    """Metrics on ``n`` fresh generator samples; consumes only the eval stream."""
    reference = reference if reference is not None else reference_histogram(state.target)
    rng = state.rngs["eval"]
    fake = generate(state.params_g, n, rng)
    real = sample_mixture(state.target, n, rng)
    hist = histogram2d(fake, reference.extent, reference.bins_per_axis)
    modes, hq = mode_coverage(fake, state.target)
    alpha, beta = schedule_alpha_beta(state.iter, state.total_iters, state.config)
    d1_loss, d2_loss, g_loss, agree = _eval_losses(state, real, fake, alpha, beta)
    rec = MetricsRecord(state.iter, symmetric_kl(reference, hist), wasserstein_grid(reference, hist),
                        int(modes), float(hq), agree, d1_loss, d2_loss, g_loss, alpha, beta)
    return rec, fake


@dataclass
class RunRecord:
    records: list[MetricsRecord]
    state: TrainState
    final_samples: np.ndarray
    checkpoints: list[str] = field(default_factory=list)


def train(config: DuelConfig, target: MixtureSpec, total_iters: int, eval_every: int, seed: int,
          checkpoint_dir: str | None = None, checkpoint_every: int | None = None,
          progress=None) -> RunRecord:
    """Full run: a record at iteration 0 and after every ``eval_every`` steps."""
    if total_iters < 1 or eval_every < 1:
        raise ValueError("total_iters and eval_every must be >= 1")
    state = init_state(config, target, total_iters, seed)
    reference = reference_histogram(target)
    rec, samples = evaluate(state, reference)
    records = [rec]
    checkpoints: list[str] = []
    while state.iter < total_iters:
        try:
            state, _ = train_step(state)
        except TrainingError as exc:
            last = checkpoints[-1] if checkpoints else "none"
            raise TrainingError(f"{exc} (seed {seed}, last checkpoint: {last})") from exc
        if state.iter % eval_every == 0:
            rec, samples = evaluate(state, reference)
            records.append(rec)
            if progress is not None:
                progress(rec)
        if checkpoint_dir and checkpoint_every and state.iter % checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"iter_{state.iter:07d}.ckpt")
            save_checkpoint(state, path)
            checkpoints.append(path)
    return RunRecord(records, state, samples, checkpoints)


# -- checkpoints -----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__uint64__": [int(v) for v in obj.ravel()]}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__uint64__"}:
            return np.array(obj["__uint64__"], dtype=np.uint64)
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def _state_arrays(state: TrainState) -> list[tuple[str, np.ndarray]]:
    out = []
    for net in ("g", "d1", "d2"):
        params = getattr(state, f"params_{net}")
        opt = getattr(state, f"opt_{net}")
        names = params.names(net)
        out += list(zip(names, params.arrays()))
        out += [(f"{n}.m", a) for n, a in zip(names, opt.m)]
        out += [(f"{n}.v", a) for n, a in zip(names, opt.v)]
    return out


def checkpoint_bytes(state: TrainState) -> bytes:
    """Magic, version, header length, JSON header, then little-endian float64 payload."""
    arrays = _state_arrays(state)
    header = {
        "format_version": CKPT_VERSION,
        "iter": state.iter,
        "seed": state.seed,
        "total_iters": state.total_iters,
        "config": asdict(state.config),
        "target": {"means": state.target.means.tolist(),
                   "covariances": state.target.covariances.tolist(),
                   "weights": state.target.weights.tolist()},
        "specs": {net: asdict(getattr(state, f"params_{net}").spec) for net in ("g", "d1", "d2")},
        "opt_steps": {net: getattr(state, f"opt_{net}").t for net in ("g", "d1", "d2")},
        "rng": {name: _jsonable(g.bit_generator.state) for name, g in state.rngs.items()},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<IQ", CKPT_VERSION, len(head)))
    buf.write(head)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(state: TrainState, path: str) -> None:
    data = checkpoint_bytes(state)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path_or_bytes) -> TrainState:
    from .nets import MlpSpec

    data = path_or_bytes
    if not isinstance(data, (bytes, bytearray)):
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    offset = 20 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(data):
        raise ValueError("checkpoint payload length does not match its header")

    cfg_dict = header["config"]
    config = DuelConfig(**cfg_dict)
    nets = {}
    for net in ("g", "d1", "d2"):
        spec = MlpSpec(**header["specs"][net])
        names = [f"{net}.W{l}" if i % 2 == 0 else f"{net}.b{l}"
                 for l in range(len(spec.layer_widths) - 1) for i in range(2)]
        params = MlpParams(spec, [arrays[n] for n in names[0::2]], [arrays[n] for n in names[1::2]])
        opt = AdamState([arrays[f"{n}.m"] for n in names], [arrays[f"{n}.v"] for n in names],
                        int(header["opt_steps"][net]))
        nets[net] = (params, opt)
    rngs = {}
    for name in STREAMS:
        bg = np.random.Philox()
        bg.state = _from_jsonable(header["rng"][name])
        rngs[name] = np.random.Generator(bg)
    t = header["target"]
    return TrainState(int(header["iter"]), nets["g"][0], nets["d1"][0], nets["d2"][0],
                      nets["g"][1], nets["d1"][1], nets["d2"][1], rngs, config,
                      MixtureSpec(np.array(t["means"]), np.array(t["covariances"]), np.array(t["weights"])),
                      int(header["total_iters"]), int(header["seed"]))
