"""Function approximators and their single-model training losses.

All models are tanh Mlps over float64 tensors. Losses here follow one
pattern: anything sampled (noise, latent draws, clone actions) is produced
in inference mode and enters the differentiated objective as a constant;
only the model under training sits on the graph.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

DEFAULT_HIDDEN = 256
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
PERTURBATION_PHI = 0.05
RND_EMBED_DIM = 32
POLYAK_RATE = 0.005
ADAM_LR = 3e-4
SQUASH_EPS = 1e-9

CHECKPOINT_MAGIC = b"GIWRNET"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def clip_on_graph(x: Tensor, lo: float, hi: float) -> Tensor:
    """Differentiable clip from the clamp-above primitive; zero gradient
    outside (lo, hi)."""
    return dc.neg(dc.clamp_above(dc.neg(dc.clamp_above(x, hi)), -lo))


class Mlp:
    """Tanh hidden layers, linear output. hidden_out applies tanh to the
    last layer too, for use as a feature trunk."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator,
                 hidden_out: bool = False):
        self.widths = list(widths)
        self.hidden_out = hidden_out
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths, self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(Tensor.param(rng.uniform(-bound, bound, (fan_in, fan_out))))
            self.biases.append(Tensor.param(rng.uniform(-bound, bound, fan_out)))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x) -> Tensor:
        """x is a Tensor, an array, or a sequence of per-block inputs whose
        widths sum to the declared input width. Sequences let gradients
        reach an individual block (the first weight matrix is row-split);
        all-constant sequences just concatenate."""
        if isinstance(x, (list, tuple)):
            parts = [p if isinstance(p, Tensor) else Tensor(p) for p in x]
            live = dc._ACTIVE is not None and any(
                p.trainable or p._graph is dc._ACTIVE for p in parts)
            if not live:
                x = Tensor(np.concatenate([p.data for p in parts], axis=1))
                h = dc.add(dc.matmul(x, self.weights[0]), self.biases[0])
            else:
                offset = 0
                pieces = None
                for p in parts:
                    width = p.data.shape[1]
                    rows = np.arange(offset, offset + width)
                    term = dc.matmul(p, dc.gather_rows(self.weights[0], rows))
                    pieces = term if pieces is None else dc.add(pieces, term)
                    offset += width
                h = dc.add(pieces, self.biases[0])
        else:
            if not isinstance(x, Tensor):
                x = Tensor(x)
            h = dc.add(dc.matmul(x, self.weights[0]), self.biases[0])

        last = len(self.weights) - 1
        for i in range(1, len(self.weights) + 1):
            apply_act = i - 1 < last or self.hidden_out
            if apply_act:
                h = dc.tanh(h)
            if i <= last:
                h = dc.add(dc.matmul(h, self.weights[i]), self.biases[i])
        return h


class GaussianPolicy:
    """Squashed diagonal Gaussian: a = center + scale * tanh(mu + sigma * eps)."""

    def __init__(self, obs_dim: int, act_dim: int, act_low: float, act_high: float,
                 rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN):
        self.act_dim = act_dim
        self.center = 0.5 * (act_high + act_low)
        self.scale = 0.5 * (act_high - act_low)
        self.trunk = Mlp([obs_dim, hidden, hidden], rng, hidden_out=True)
        bound = 1.0 / np.sqrt(hidden)
        self.mean_w = Tensor.param(rng.uniform(-bound, bound, (hidden, act_dim)))
        self.mean_b = Tensor.param(rng.uniform(-bound, bound, act_dim))
        self.logstd_w = Tensor.param(rng.uniform(-bound, bound, (hidden, act_dim)))
        self.logstd_b = Tensor.param(rng.uniform(-bound, bound, act_dim))

    @property
    def params(self) -> list[Tensor]:
        return self.trunk.params + [self.mean_w, self.mean_b, self.logstd_w, self.logstd_b]

    def _heads(self, obs) -> tuple[Tensor, Tensor]:
        feat = self.trunk.forward(obs)
        mean = dc.add(dc.matmul(feat, self.mean_w), self.mean_b)
        log_std = dc.add(dc.matmul(feat, self.logstd_w), self.logstd_b)
        log_std = dc.neg(dc.clamp_above(dc.neg(dc.clamp_above(log_std, LOG_STD_MAX)),
                                        -LOG_STD_MIN))
        return mean, log_std

    def sample(self, obs, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        """Reparametrized draw and its log-prob; differentiable when a graph
        is active (the noise itself is a constant)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        mean, log_std = self._heads(obs)
        eps = Tensor(rng.standard_normal((obs.shape[0], self.act_dim)))
        raw = dc.add(mean, dc.mul(dc.exp(log_std), eps))
        squashed = dc.tanh(raw)
        action = dc.add(dc.mul(squashed, self.scale), self.center)
        logp = self._log_prob_terms(mean, log_std, raw, squashed)
        return action, logp

    def log_prob(self, obs, actions) -> Tensor:
        """Log-density of given in-bounds actions; finite everywhere on the
        closed action box."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        mean, log_std = self._heads(obs)
        u = np.clip((actions - self.center) / self.scale, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
        raw = Tensor(np.arctanh(u))
        return self._log_prob_terms(mean, log_std, raw, Tensor(u))

    def _log_prob_terms(self, mean, log_std, raw, squashed) -> Tensor:
        z = dc.mul(dc.sub(raw, mean), dc.exp(dc.neg(log_std)))
        gauss = dc.neg(dc.add(dc.add(dc.mul(dc.square(z), 0.5), log_std),
                              0.5 * np.log(2.0 * np.pi)))
        # Change of variables through a = center + scale * tanh(raw).
        jac = dc.log(dc.add(dc.mul(dc.sub(1.0, dc.square(squashed)), self.scale),
                            SQUASH_EPS))
        return dc.sum(dc.sub(gauss, jac), axis=1)

    def mean_action(self, obs) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        mean, _ = self._heads(obs)
        return np.tanh(mean.data) * self.scale + self.center

    def act(self, obs, rng, deterministic=False) -> np.ndarray:
        if deterministic:
            return self.mean_action(obs)[0]
        action, _ = self.sample(obs, rng)
        return action.data[0]


class TwinCritic:
    """Two independent action-value heads with Polyak-tracked targets.

    Bootstrap targets and best-of-m scoring read the min over the two
    target nets; advantages and the overestimation gap read the first main
    net only.
    """

    def __init__(self, obs_dim: int, act_dim: int, rng: np.random.Generator,
                 hidden: int = DEFAULT_HIDDEN):
        widths = [obs_dim + act_dim, hidden, hidden, 1]
        self.q1 = Mlp(widths, rng)
        self.q2 = Mlp(widths, rng)
        self.t1 = Mlp(widths, rng)
        self.t2 = Mlp(widths, rng)
        sync_targets(self)

    @property
    def params(self) -> list[Tensor]:
        return self.q1.params + self.q2.params

    def q(self, obs, act, net: Mlp | None = None) -> Tensor:
        net = self.q1 if net is None else net
        if isinstance(act, Tensor):
            out = net.forward([Tensor(np.asarray(obs, dtype=np.float64)), act])
        else:
            out = net.forward(np.concatenate([obs, act], axis=1))
        return dc.sum(out, axis=1)

    def predictions(self, obs, act) -> list[Tensor]:
        return [self.q(obs, act, self.q1), self.q(obs, act, self.q2)]

    def first_prediction(self, obs, act) -> Tensor:
        return self.q(obs, act, self.q1)

    def value_first_main(self, obs, act) -> np.ndarray:
        return self.q(obs, act, self.q1).data

    def value_min_targets(self, obs, act) -> np.ndarray:
        a = self.q(obs, act, self.t1).data
        b = self.q(obs, act, self.t2).data
        return np.minimum(a, b)


def sync_targets(critic: TwinCritic) -> None:
    for main, targ in ((critic.q1, critic.t1), (critic.q2, critic.t2)):
        for mp, tp in zip(main.params, targ.params):
            tp.data[...] = mp.data
            tp.trainable = False


def polyak_update(critic: TwinCritic, rate: float = POLYAK_RATE) -> None:
    """target <- (1 - rate) * target + rate * main, every iteration."""
    for main, targ in ((critic.q1, critic.t1), (critic.q2, critic.t2)):
        for mp, tp in zip(main.params, targ.params):
            tp.data[...] = (1.0 - rate) * tp.data + rate * mp.data


class BehaviorClone:
    """State-conditional VAE over dataset actions; latent dim is twice the
    action dim. Decoded samples are clipped to the action bounds."""

    def __init__(self, obs_dim: int, act_dim: int, act_low: float, act_high: float,
                 rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN):
        self.act_dim = act_dim
        self.lat_dim = 2 * act_dim
        self.act_low, self.act_high = act_low, act_high
        self.encoder = Mlp([obs_dim + act_dim, hidden, hidden], rng, hidden_out=True)
        bound = 1.0 / np.sqrt(hidden)
        self.mu_w = Tensor.param(rng.uniform(-bound, bound, (hidden, self.lat_dim)))
        self.mu_b = Tensor.param(rng.uniform(-bound, bound, self.lat_dim))
        self.logstd_w = Tensor.param(rng.uniform(-bound, bound, (hidden, self.lat_dim)))
        self.logstd_b = Tensor.param(rng.uniform(-bound, bound, self.lat_dim))
        self.decoder = Mlp([obs_dim + self.lat_dim, hidden, hidden, act_dim], rng)

    @property
    def params(self) -> list[Tensor]:
        return (self.encoder.params
                + [self.mu_w, self.mu_b, self.logstd_w, self.logstd_b]
                + self.decoder.params)

    def encode(self, obs, act) -> tuple[Tensor, Tensor]:
        feat = self.encoder.forward(np.concatenate([obs, act], axis=1))
        mu = dc.add(dc.matmul(feat, self.mu_w), self.mu_b)
        log_std = dc.add(dc.matmul(feat, self.logstd_w), self.logstd_b)
        return mu, log_std

    def decode(self, obs, z) -> Tensor:
        if isinstance(z, Tensor):
            return self.decoder.forward([Tensor(np.asarray(obs, dtype=np.float64)), z])
        return self.decoder.forward(np.concatenate([obs, z], axis=1))

    def sample(self, obs, rng: np.random.Generator) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        z = rng.standard_normal((obs.shape[0], self.lat_dim))
        raw = self.decode(obs, z).data
        return np.clip(raw, self.act_low, self.act_high)


def clone_loss(clone: BehaviorClone, obs: np.ndarray, act: np.ndarray,
               rng: np.random.Generator) -> Tensor:
    """Reconstruction MSE plus 0.5 * KL(latent || standard normal), with the
    reparametrization trick carrying gradients through the latent draw."""
    mu, log_std = clone.encode(obs, act)
    eps = Tensor(rng.standard_normal(mu.data.shape))
    z = dc.add(mu, dc.mul(dc.exp(log_std), eps))
    recon = dc.mean(dc.square(dc.sub(clone.decode(obs, z), Tensor(act))))
    kl_terms = dc.sub(dc.add(dc.square(mu), dc.exp(dc.mul(log_std, 2.0))),
                      dc.add(dc.mul(log_std, 2.0), 1.0))
    kl = dc.mean(dc.mul(dc.sum(kl_terms, axis=1), 0.5))
    return dc.add(recon, dc.mul(kl, 0.5))


class Perturbation:
    """Bounded residual on clone actions: a + phi * scale * tanh(net(s, a))."""

    def __init__(self, obs_dim: int, act_dim: int, act_low: float, act_high: float,
                 rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN):
        self.act_low, self.act_high = act_low, act_high
        self.scale = 0.5 * (act_high - act_low)
        self.net = Mlp([obs_dim + act_dim, hidden, hidden, act_dim], rng)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def offset(self, obs, act) -> Tensor:
        if isinstance(act, Tensor):
            raw = self.net.forward([Tensor(np.asarray(obs, dtype=np.float64)), act])
        else:
            raw = self.net.forward(np.concatenate([obs, act], axis=1))
        return dc.mul(dc.tanh(raw), PERTURBATION_PHI * self.scale)

    def apply(self, obs, clone_act) -> Tensor:
        shifted = dc.add(Tensor(clone_act), self.offset(obs, clone_act))
        return clip_on_graph(shifted, self.act_low, self.act_high)

    def sample(self, clone: BehaviorClone, obs, rng: np.random.Generator) -> np.ndarray:
        return self.apply(obs, clone.sample(obs, rng)).data


def perturbation_loss(xi: Perturbation, critic: TwinCritic, clone: BehaviorClone,
                      obs: np.ndarray, rng: np.random.Generator) -> Tensor:
    """Deterministic policy gradient on the first main critic: descend the
    negated value of perturbed clone samples. The clone sample is an input,
    not a gradient path."""
    clone_act = clone.sample(obs, rng)
    perturbed = xi.apply(obs, clone_act)
    return dc.neg(dc.mean(critic.q(obs, perturbed, critic.q1)))


class RndPair:
    """Random network distillation: a frozen embedding net, a trained
    predictor, and an online scale for the prediction error."""

    def __init__(self, obs_dim: int, act_dim: int, rng: np.random.Generator,
                 hidden: int = DEFAULT_HIDDEN):
        self.frozen = Mlp([obs_dim + act_dim, hidden, hidden, RND_EMBED_DIM], rng)
        for p in self.frozen.params:
            p.trainable = False
        self.predictor = Mlp([obs_dim + act_dim, hidden, hidden, RND_EMBED_DIM], rng)
        self._count = 0
        self._mean = 0.0
        self._m2 = 0.0

    @property
    def params(self) -> list[Tensor]:
        return self.predictor.params

    def eta(self, obs, act) -> np.ndarray:
        x = np.concatenate([obs, act], axis=1)
        diff = self.frozen.forward(x).data - self.predictor.forward(x).data
        return np.sum(diff * diff, axis=1)

    def observe(self, eta: np.ndarray) -> None:
        """Welford update of the online scale; training-time calls only."""
        for v in np.atleast_1d(eta):
            self._count += 1
            delta = v - self._mean
            self._mean += delta / self._count
            self._m2 += delta * (v - self._mean)

    def sigma(self) -> float:
        if self._count < 2:
            return 1.0
        s = np.sqrt(self._m2 / (self._count - 1))
        # Degenerate history (e.g. predictor equals the frozen net) keeps
        # the normalizer at 1 so scores stay finite.
        return float(s) if s > 1e-12 else 1.0

    def eta_bar(self, obs, act) -> np.ndarray:
        return self.eta(obs, act) / self.sigma()


def rnd_predictor_loss(rnd: RndPair, obs: np.ndarray, act: np.ndarray) -> Tensor:
    x = np.concatenate([obs, act], axis=1)
    target = Tensor(rnd.frozen.forward(x).data)
    pred = rnd.predictor.forward(x)
    return dc.mean(dc.sum(dc.square(dc.sub(pred, target)), axis=1))


class Adam:
    """Adaptive moment estimation; one shared step count, per-param state."""

    def __init__(self, params: Sequence[Tensor], lr: float = ADAM_LR,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def named_params(model, prefix: str) -> dict[str, Tensor]:
    out = {}
    for i, p in enumerate(model.params):
        out[f"{prefix}.{i}"] = p
    return out


def save_checkpoint(path, tensors: dict[str, Tensor | np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(tensors):
            data = tensors[name].data if isinstance(tensors[name], Tensor) else tensors[name]
            data = np.asarray(data, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:7] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic at byte 0, not a checkpoint")
    (version,) = struct.unpack("<I", raw[7:11])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 11
    try:
        while pos < len(raw):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            if pos + name_len > len(raw):
                raise struct.error("name overruns file")
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = pos + 8 * count
            if end > len(raw):
                raise struct.error("record overruns file")
            out[name] = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape).copy()
            pos = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: truncated or corrupt at byte {pos}: {exc}") from None
    return out
