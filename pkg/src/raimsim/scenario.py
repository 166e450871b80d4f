"""Scenario construction, fault injection and linearization for ToA positioning.

A scenario fixes the base-station geometry, the true user state, per-station
noise levels and fault priors, and the expansion point used for
linearization. Epoch draws are pure functions of (scenario, seed), so
campaigns are reproducible under any parallel schedule. All units are meters.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

_MIN_STATIONS = 4  # below this the 4-state model is unobservable


@dataclass(frozen=True)
class FaultSpec:
    """Bernoulli fault prior with a Gaussian bias when the fault occurs."""

    theta: float
    bias_mean: float
    bias_std: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.bias_std < 0.0:
            raise ValueError("bias_std must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    """Base-station geometry plus noise/fault specification for one setup."""

    bs_positions: np.ndarray     # (M, 3)
    ue_true: np.ndarray          # (3,)
    clock_bias: float
    noise_std: np.ndarray        # (M,)
    faults: tuple                # M FaultSpec
    initial_estimate: np.ndarray  # (3,) expansion point for linearization

    def __post_init__(self):
        bs = np.asarray(self.bs_positions, dtype=float)
        if bs.ndim != 2 or bs.shape[1] != 3:
            raise ValueError("bs_positions must be (M, 3)")
        if bs.shape[0] < _MIN_STATIONS:
            raise ValueError(f"need at least {_MIN_STATIONS} base stations")
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "ue_true", np.asarray(self.ue_true, dtype=float).reshape(3))
        object.__setattr__(self, "initial_estimate",
                           np.asarray(self.initial_estimate, dtype=float).reshape(3))
        sig = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (bs.shape[0],)).copy()
        if np.any(sig <= 0.0):
            raise ValueError("noise_std entries must be positive")
        object.__setattr__(self, "noise_std", sig)
        if len(self.faults) != bs.shape[0]:
            raise ValueError("need one FaultSpec per base station")
        dists = np.linalg.norm(bs - self.initial_estimate, axis=1)
        if np.any(dists < 1e-9):
            raise ValueError("a base station coincides with the initial estimate")

    @property
    def m(self):
        return self.bs_positions.shape[0]

    @property
    def theta(self):
        return np.array([f.theta for f in self.faults])

    @property
    def bias_mean(self):
        return np.array([f.bias_mean for f in self.faults])

    @property
    def bias_std(self):
        return np.array([f.bias_std for f in self.faults])

    def with_initial_estimate(self, x0):
        return replace(self, initial_estimate=np.asarray(x0, dtype=float).reshape(3))

    # --- JSON config file (schema documented in the README) ---

    def to_json_dict(self):
        return {
            "bs_positions": self.bs_positions.tolist(),
            "ue_true": self.ue_true.tolist(),
            "clock_bias": float(self.clock_bias),
            "noise_std": self.noise_std.tolist(),
            "faults": [{"theta": f.theta, "bias_mean": f.bias_mean,
                        "bias_std": f.bias_std} for f in self.faults],
            "initial_estimate": self.initial_estimate.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d):
        bs = np.asarray(d["bs_positions"], dtype=float)
        m = bs.shape[0]
        faults_spec = d["faults"]
        if isinstance(faults_spec, dict):
            faults_spec = [faults_spec] * m
        faults = tuple(FaultSpec(float(f["theta"]), float(f["bias_mean"]),
                                 float(f["bias_std"])) for f in faults_spec)
        return cls(
            bs_positions=bs,
            ue_true=np.asarray(d["ue_true"], dtype=float),
            clock_bias=float(d.get("clock_bias", 0.0)),
            noise_std=np.asarray(d["noise_std"], dtype=float),
            faults=faults,
            initial_estimate=np.asarray(d["initial_estimate"], dtype=float),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class LinearModel:
    """Linearized observation model: rows of H are [g_i' 1], Sigma = diag(noise var)."""

    H: np.ndarray       # (M, 4)
    Sigma: np.ndarray   # (M, M) diagonal

    @property
    def m(self):
        return self.H.shape[0]

    @property
    def noise_var(self):
        return np.diag(self.Sigma)


@dataclass(frozen=True)
class EpochDraw:
    """One epoch's sampled faults, biases, noise and linearized observables."""

    y: np.ndarray            # (M,)
    lambda_true: np.ndarray  # (M,) bool
    b: np.ndarray            # (M,)
    n: np.ndarray            # (M,)
    rng_seed: int


def linearize(scenario):
    """First-order model around the initial estimate.

    g_i is the unit vector from the expansion point towards station i's
    *negative* direction, i.e. (x0 - x_i) / ||x0 - x_i||, and each row of H
    is [g_i' 1] so the fourth state component is the receiver clock bias.
    """
    x0 = scenario.initial_estimate
    diff = x0 - scenario.bs_positions
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < 1e-9):
        raise ValueError("expansion point coincides with a base station")
    g = diff / dist[:, None]
    h = np.hstack([g, np.ones((scenario.m, 1))])
    return LinearModel(H=h, Sigma=np.diag(scenario.noise_std ** 2))


def draw_epoch(scenario, seed):
    """Sample one epoch: fault flags, biases, noise and observables.

    The observable stored per station is d_i - ||x_i - x0|| + g_i' x0, where
    d_i is the true (nonlinear) pseudorange including bias and noise. With a
    perfect initial estimate this equals h_i' x + b_i + n_i exactly;
    otherwise the linearization residual is present, as it would be for any
    method working from this model.

    Bias values are drawn for every station regardless of the fault flag
    (then zeroed where no fault occurred) so that sweeps over the initial
    error reuse identical noise and bias realizations for a given seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    m = scenario.m
    lam = rng.random(m) < scenario.theta
    b_all = rng.normal(scenario.bias_mean, scenario.bias_std)
    b = np.where(lam, b_all, 0.0)
    n = rng.normal(0.0, scenario.noise_std)

    true_range = np.linalg.norm(scenario.bs_positions - scenario.ue_true, axis=1)
    d = true_range + scenario.clock_bias + b + n

    x0 = scenario.initial_estimate
    diff = x0 - scenario.bs_positions
    dist0 = np.linalg.norm(diff, axis=1)
    g = diff / dist0[:, None]
    y = d - dist0 + g @ x0
    return EpochDraw(y=y, lambda_true=lam, b=b, n=n, rng_seed=int(seed))


# Benchmark layout: 12 stations on a jittered 4x3 grid of 400 m x 250 m cells
# (about 1000 x 1000 m overall), heights uniform in [10, 30] m.
_GRID_X = (-400.0, 0.0, 400.0)
_GRID_Y = (-375.0, -125.0, 125.0, 375.0)
_GRID_JITTER_STD = 60.0
_HEIGHT_RANGE = (10.0, 30.0)


def benchmark_scenario(layout_seed, fault_type="nlos", noise_std=0.5,
                       theta=0.05, init_error=None):
    """Generate the 12-station benchmark scenario.

    fault_type "nlos" uses per-station bias means drawn uniformly in
    [1, 20] m with 1 m bias spread; "clock" uses zero-mean biases with 10 m
    spread. The true user sits at the origin with zero clock bias;
    ``init_error`` (a 3-vector) offsets the expansion point from the truth.
    """
    rng = np.random.default_rng(np.random.SeedSequence(layout_seed))
    xy = np.array([(gx, gy) for gy in _GRID_Y for gx in _GRID_X])
    xy = xy + rng.normal(0.0, _GRID_JITTER_STD, size=xy.shape)
    heights = rng.uniform(*_HEIGHT_RANGE, size=len(xy))
    bs = np.column_stack([xy, heights])

    if fault_type == "nlos":
        bias_means = rng.uniform(1.0, 20.0, size=len(bs))
        bias_std = 1.0
    elif fault_type == "clock":
        bias_means = np.zeros(len(bs))
        bias_std = 10.0
    else:
        raise ValueError(f"unknown fault_type {fault_type!r}")

    faults = tuple(FaultSpec(theta, float(mb), bias_std) for mb in bias_means)
    ue = np.zeros(3)
    x0 = ue if init_error is None else ue + np.asarray(init_error, dtype=float)
    return Scenario(bs_positions=bs, ue_true=ue, clock_bias=0.0,
                    noise_std=np.full(len(bs), noise_std), faults=faults,
                    initial_estimate=x0)
