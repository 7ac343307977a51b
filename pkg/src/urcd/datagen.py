"""Synthetic measure-valued target generators.

Each generator returns a ``(Dataset, sampler)`` pair.  The dataset holds
per-input empirical target measures of exactly S i.i.d. draws; the sampler
can re-draw from the true conditional law at any input (this is what the
Monte-Carlo oracle consumes).

Reproducibility contract: entry i of a dataset is drawn with
``entry_seed(master_seed, i)``, so re-driving ``sampler.draw(x_i, S,
entry_seed(seed, i))`` reproduces the stored samples bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from urcd.measures import make_empirical
from urcd.neural import Mlp, mlp_forward
from urcd.training import Dataset, build_dataset

TASKS = ("heteroscedastic", "mc_dropout", "elm", "sde")


@dataclass(frozen=True)
class GeneratorConfig:
    task: str
    d: int = 1
    D: int = 1
    size: int = 100              # number of inputs
    S: int = 1000                # samples per input
    seed: int = 0
    # heteroscedastic / mc_dropout base network
    base_depth: int = 1
    base_width: int = 100
    dropout_rate: float = 0.1
    # extreme-learning-machine task
    elm_width: int = 32
    elm_depth: int = 1
    elm_lambda: float = 1e-3
    elm_M: float = 1.0
    elm_sparsity: float = 0.75   # probability that a random parameter is zeroed
    # SDE marginals task
    sde_drift: str = "ou"        # zero | constant | linear | ou
    sde_diffusion: str = "constant"
    drift_a0: float = 0.0
    drift_a1: float = -1.0
    diffusion_b0: float = 1.0
    diffusion_b1: float = 0.0
    n_steps: int = 200
    t_max: float = 1.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.size < 2 or self.S < 2:
            raise ValueError("size and S must both be at least 2")
        if self.d < 1 or self.D < 1:
            raise ValueError("dimensions must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.elm_lambda <= 0:
            raise ValueError("ridge penalty must be positive")
        if self.task == "heteroscedastic" and self.D != 1:
            raise ValueError("the heteroscedastic task is scalar-valued (D = 1)")
        if self.n_steps < 1 or self.t_max <= 0 or self.x_max <= 0:
            raise ValueError("SDE grid parameters must be positive")

    def describe(self) -> str:
        """One-line exact parameterization, for report appendices."""
        common = f"task={self.task} d={self.d} D={self.D} size={self.size} S={self.S} seed={self.seed}"
        if self.task == "heteroscedastic":
            extra = f" base_depth={self.base_depth} base_width={self.base_width}"
        elif self.task == "mc_dropout":
            extra = (f" base_depth={self.base_depth} base_width={self.base_width}"
                     f" dropout_rate={self.dropout_rate}")
        elif self.task == "elm":
            extra = (f" elm_width={self.elm_width} elm_depth={self.elm_depth}"
                     f" elm_lambda={self.elm_lambda} elm_M={self.elm_M}"
                     f" elm_sparsity={self.elm_sparsity}")
        else:
            extra = (f" drift={self.sde_drift}({self.drift_a0},{self.drift_a1})"
                     f" diffusion={self.sde_diffusion}({self.diffusion_b0},{self.diffusion_b1})"
                     f" n_steps={self.n_steps} t_max={self.t_max} x_max={self.x_max}")
        return common + extra


def entry_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed-splitting contract: one independent stream per dataset entry."""
    return np.random.SeedSequence(entropy=(int(master_seed), int(index)))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(int(seed))


def _build(cfg: GeneratorConfig, inputs, sampler, train_all: bool = True) -> Dataset:
    entries = []
    for i, x in enumerate(inputs):
        pts = sampler.draw(x, cfg.S, entry_seed(cfg.seed, i))
        entries.append((x, make_empirical(pts)))
    if train_all:
        return build_dataset(entries, train_idx=range(len(entries)), test_idx=())
    return build_dataset(entries)


def generate(cfg: GeneratorConfig):
    """Dispatch on the task tag; returns (Dataset, sampler)."""
    return {
        "heteroscedastic": gen_heteroscedastic,
        "mc_dropout": gen_mc_dropout,
        "elm": gen_elm,
        "sde": gen_sde_marginals,
    }[cfg.task](cfg)


# ---------------------------------------------------------------------------
# heteroscedastic regression: f(x) + Laplace noise with variance ||x||
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeteroscedasticSampler:
    net: Mlp

    def draw(self, x, size, seed):
        rng = _rng(seed)
        x = np.asarray(x, dtype=float)
        loc = mlp_forward(self.net, x)[0]
        scale = math.sqrt(np.linalg.norm(x) / 2.0)   # Laplace variance 2 b^2 = ||x||
        if scale == 0.0:
            return np.full((size, 1), loc)
        return loc + rng.laplace(0.0, scale, size=(size, 1))

    def __call__(self, x, seed):
        return self.draw(x, 1, seed)[0]


def gen_heteroscedastic(cfg: GeneratorConfig):
    """Scalar regression targets around a fixed random network.

    The trunk's weights are drawn uniformly from [-1/2, 1/2]; the additive
    noise at x is Laplace with variance ||x||, so inputs near the origin
    are nearly deterministic.
    """
    if cfg.task != "heteroscedastic":
        raise ValueError("config task mismatch")
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.d] + [cfg.base_width] * cfg.base_depth + [1]
    weights = tuple(rng.uniform(-0.5, 0.5, size=(a, b))
                    for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(rng.uniform(-0.5, 0.5, size=b) for b in dims[1:])
    net = Mlp(layer_dims=tuple(dims), weights=weights, biases=biases,
              activation="relu")
    inputs = rng.uniform(0.0, 1.0, size=(cfg.size, cfg.d))
    sampler = HeteroscedasticSampler(net=net)
    return _build(cfg, inputs, sampler), sampler


# ---------------------------------------------------------------------------
# dropout-randomized network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DropoutSampler:
    """Bernoulli masks on every weight matrix of a fixed linear chain."""

    net: Mlp
    rate: float

    def draw(self, x, size, seed):
        rng = _rng(seed)
        x = np.asarray(x, dtype=float)
        out = np.empty((size, self.net.layer_dims[-1]))
        for s in range(size):
            h = x
            for w, b in zip(self.net.weights, self.net.biases):
                mask = rng.random(size=w.shape) >= self.rate
                h = h @ (w * mask) + b
            out[s] = h
        return out

    def __call__(self, x, seed):
        return self.draw(x, 1, seed)[0]


def gen_mc_dropout(cfg: GeneratorConfig):
    """Predictive law of a fixed network under weight dropout.

    The base network has standard-normal weights and biases and no
    activation between layers (the randomness, not the nonlinearity, is
    the object of study); each draw masks every weight matrix entrywise
    by independent Bernoulli(1 - rate).
    """
    if cfg.task != "mc_dropout":
        raise ValueError("config task mismatch")
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.d] + [cfg.base_width] * cfg.base_depth + [cfg.D]
    weights = tuple(rng.standard_normal((a, b))
                    for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(rng.standard_normal(b) for b in dims[1:])
    net = Mlp(layer_dims=tuple(dims), weights=weights, biases=biases,
              activation="identity")
    inputs = rng.uniform(0.0, 1.0, size=(cfg.size, cfg.d))
    sampler = DropoutSampler(net=net, rate=cfg.dropout_rate)
    return _build(cfg, inputs, sampler), sampler


# ---------------------------------------------------------------------------
# extreme learning machines on a synthetic return series
# ---------------------------------------------------------------------------

def ridge_solve(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Solve (X^T X + lam I) w = X^T Y; lam > 0 keeps the system regular."""
    if lam <= 0:
        raise ValueError("ridge penalty must be positive")
    W = X.shape[1]
    return np.linalg.solve(X.T @ X + lam * np.eye(W), X.T @ Y)


@dataclass(frozen=True)
class ElmSampler:
    """Random-feature ridge regressors with freshly drawn hidden weights.

    Each draw resamples the hidden parameters theta (uniform on [-M, M],
    then sparsified by a Bernoulli mask), rebuilds the feature design of
    the training inputs, and evaluates the resulting ridge solution at x.
    """

    train_X: np.ndarray          # (n_train, d)
    train_Y: np.ndarray          # (n_train, D)
    width: int
    depth: int
    lam: float
    M: float
    sparsity: float

    def draw_theta(self, rng):
        dims = [self.train_X.shape[1]] + [self.width] * self.depth
        params = []
        for a, b in zip(dims[:-1], dims[1:]):
            w = rng.uniform(-self.M, self.M, size=(a, b))
            w *= rng.random(size=w.shape) >= self.sparsity
            bias = rng.uniform(-self.M, self.M, size=b)
            bias *= rng.random(size=b) >= self.sparsity
            params.append((w, bias))
        return params

    def features(self, theta, X):
        h = np.atleast_2d(X)
        for w, b in theta:
            h = np.maximum(h @ w + b, 0.0)
        return h

    def predict(self, theta, X):
        design = self.features(theta, self.train_X)
        coef = ridge_solve(design, self.train_Y, self.lam)
        return self.features(theta, X) @ coef

    def draw(self, x, size, seed):
        rng = _rng(seed)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((size, self.train_Y.shape[1]))
        for s in range(size):
            out[s] = self.predict(self.draw_theta(rng), x)[0]
        return out

    def __call__(self, x, seed):
        return self.draw(x, 1, seed)[0]


def _synthetic_return_series(rng, rows: int, n_series: int = 12,
                             rho: float = 0.1, scale: float = 0.01) -> np.ndarray:
    """Seeded AR(1) return panel standing in for market data."""
    r = np.zeros((rows, n_series))
    innov = rng.normal(0.0, scale, size=(rows, n_series))
    r[0] = innov[0]
    for t in range(1, rows):
        r[t] = rho * r[t - 1] + innov[t]
    return r


def gen_elm(cfg: GeneratorConfig):
    """Next-day regression targets from randomized ridge regressors.

    A seeded 12-channel AR(1) return panel supplies 11 inputs and a
    held-out channel one step ahead; the first 80% of the rows are the
    ridge training window.  The measure at x collects predictions of S
    independently re-randomized feature maps.
    """
    if cfg.task != "elm":
        raise ValueError("config task mismatch")
    rng = np.random.default_rng(cfg.seed)
    rows = cfg.size + 1
    panel = _synthetic_return_series(rng, rows)
    inputs = panel[:-1, :11]
    targets = panel[1:, 11:12]
    if cfg.d != 11 or cfg.D != 1:
        raise ValueError("the elm task is fixed at d=11, D=1")

    cut = max(2, int(0.8 * cfg.size))
    sampler = ElmSampler(train_X=inputs[:cut], train_Y=targets[:cut],
                         width=cfg.elm_width, depth=cfg.elm_depth,
                         lam=cfg.elm_lambda, M=cfg.elm_M,
                         sparsity=cfg.elm_sparsity)
    entries = []
    for i, x in enumerate(inputs):
        pts = sampler.draw(x, cfg.S, entry_seed(cfg.seed, i))
        entries.append((x, make_empirical(pts)))
    data = build_dataset(entries, train_idx=range(cut),
                         test_idx=range(cut, cfg.size))
    return data, sampler


# ---------------------------------------------------------------------------
# SDE marginal laws via Euler-Maruyama
# ---------------------------------------------------------------------------

_DRIFTS = ("zero", "constant", "linear", "ou")
_DIFFUSIONS = ("constant", "linear")


@dataclass(frozen=True)
class SdeSampler:
    """Marginal law of X_t started at x under affine coefficients.

    Inputs are (t, x) with t first.  Drift and diffusion come from a small
    Lipschitz catalog (zero / constant / affine in the state, applied
    coordinatewise), so strong solutions exist.
    """

    drift: str
    diffusion: str
    a0: float
    a1: float
    b0: float
    b1: float
    n_steps: int
    dim: int

    def _mu(self, y):
        if self.drift == "zero":
            return np.zeros_like(y)
        if self.drift == "constant":
            return np.full_like(y, self.a0)
        # "linear" and "ou" are both affine: a0 + a1 * y (ou: a0 = 0, a1 < 0)
        return self.a0 + self.a1 * y

    def _sigma(self, y):
        if self.diffusion == "constant":
            return np.full_like(y, self.b0)
        return self.b0 + self.b1 * y

    def draw(self, tx, size, seed):
        rng = _rng(seed)
        tx = np.asarray(tx, dtype=float).ravel()
        t, x0 = float(tx[0]), tx[1:]
        y = np.tile(x0, (size, 1))
        if t == 0.0 or self.n_steps == 0:
            return y
        dt = t / self.n_steps
        sqdt = math.sqrt(dt)
        for _ in range(self.n_steps):
            noise = rng.standard_normal(y.shape)
            y = y + self._mu(y) * dt + self._sigma(y) * sqdt * noise
        return y

    def __call__(self, tx, seed):
        return self.draw(tx, 1, seed)[0]


def _grid(cfg: GeneratorConfig) -> np.ndarray:
    """Regular lattice over [0, t_max] x [-x_max, x_max]^d, truncated to size."""
    axes_count = cfg.d + 1
    per_axis = max(2, math.ceil(cfg.size ** (1.0 / axes_count)))
    axes = [np.linspace(0.0, cfg.t_max, per_axis)]
    axes += [np.linspace(-cfg.x_max, cfg.x_max, per_axis)] * cfg.d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[:cfg.size]


def gen_sde_marginals(cfg: GeneratorConfig):
    """Empirical marginal laws of a diffusion over a (t, x) grid."""
    if cfg.task != "sde":
        raise ValueError("config task mismatch")
    if cfg.sde_drift not in _DRIFTS or cfg.sde_diffusion not in _DIFFUSIONS:
        raise ValueError(
            f"coefficients must come from the catalog {_DRIFTS} x {_DIFFUSIONS}")
    if cfg.D != cfg.d:
        raise ValueError("the SDE state dimension is D = d")
    sampler = SdeSampler(drift=cfg.sde_drift, diffusion=cfg.sde_diffusion,
                         a0=cfg.drift_a0, a1=cfg.drift_a1,
                         b0=cfg.diffusion_b0, b1=cfg.diffusion_b1,
                         n_steps=cfg.n_steps, dim=cfg.d)
    inputs = _grid(cfg)
    return _build(cfg, inputs, sampler), sampler
