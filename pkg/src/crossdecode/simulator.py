"""Synthetic sessions with known tuning curves and context effects.

A mouse performs a drifting, reflected Gaussian random walk from 0 to the
end of a 1-D track and back.  Each neuron fires Poisson spike counts whose
rate is a scaled beta pdf of location in the contexts where it is location
sensitive and a constant elsewhere.  Neuron kinds:

``random``
    never location sensitive
``both``
    same tuning curve in both contexts
``task_only`` / ``fr_only``
    tuned in one context only, so the encoding differs between contexts
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import beta as beta_dist

from .data import CONTEXTS, SessionDataset

NEURON_KINDS = ("random", "both", "task_only", "fr_only")
MAX_STEPS = 1_000_000


@dataclass(frozen=True)
class WalkParams:
    """Drift per step, step standard deviation and track length."""

    drift: float = 0.001
    sigma: float = 0.03
    extent: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.drift <= 0:
            raise ValueError("drift must be positive")
        if self.extent <= 0:
            raise ValueError("extent must be positive")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Locations and the sign of the drift in force at each step (+1 out, -1 back)."""

    location: np.ndarray
    drift_sign: np.ndarray


def random_walk(params: WalkParams = WalkParams(), seed=None) -> Trajectory:
    """Reflected drifting walk from 0 to ``extent`` and back.

    Steps are ``Normal(+-drift, sigma^2)``.  On the way out the walk is
    reflected at 0; on reaching ``extent`` it is reflected and the drift
    reverses.  The walk ends at the first step that returns to 0 or below;
    that terminal step is not included.

    Raises
    ------
    RuntimeError
        If the walk has not finished after ``MAX_STEPS`` steps.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = params.extent
    locs = np.empty(1024)
    signs = np.empty(1024, dtype=np.int8)
    x, sign, n = 0.0, 1, 0
    while True:
        if n == locs.size:
            locs = np.resize(locs, 2 * n)
            signs = np.resize(signs, 2 * n)
        locs[n] = x
        signs[n] = sign
        n += 1
        if n >= MAX_STEPS:
            raise RuntimeError(f"random walk did not finish within {MAX_STEPS} steps")
        x = x + rng.normal(sign * params.drift, params.sigma)
        if sign > 0:
            if x < 0:
                x = -x
            if x >= a:
                x = 2 * a - x
                sign = -1
                if x <= 0:
                    break
        elif x <= 0:
            break
        elif x > a:
            x = 2 * a - x
    return Trajectory(locs[:n].copy(), signs[:n].copy())


def beta_params(mean: float, var: float) -> tuple[float, float]:
    """Shape parameters of the beta distribution with the given mean and variance."""
    if not 0 < mean < 1:
        raise ValueError("mean must lie in (0, 1)")
    nu = mean * (1 - mean) / var - 1
    if nu <= 0:
        raise ValueError("variance too large for a beta distribution with this mean")
    return mean * nu, (1 - mean) * nu


@dataclass(frozen=True)
class NeuronSpec:
    """One simulated neuron; ``alpha = beta = 1`` means a flat tuning curve."""

    kind: str
    alpha: float = 1.0
    beta: float = 1.0
    scale: float = 0.5

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ValueError(f"unknown neuron kind {self.kind!r}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.kind == "random" and (self.alpha != 1 or self.beta != 1):
            raise ValueError("random neurons have alpha = beta = 1")

    def sensitive(self, context: str) -> bool:
        if self.kind == "both":
            return True
        if self.kind == "task_only":
            return context == "task"
        if self.kind == "fr_only":
            return context == "fr"
        return False

    def rate(self, y, context: str):
        """Poisson rate at normalized location ``y`` in ``context``."""
        y = np.asarray(y, dtype=float)
        if self.sensitive(context):
            return self.scale * beta_dist.pdf(y, self.alpha, self.beta)
        return np.full_like(y, self.scale)


def fire(neuron: NeuronSpec, y, context: str, seed=None):
    """Spike counts at location(s) ``y``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.poisson(neuron.rate(y, context))


@dataclass(frozen=True)
class SimSpec:
    """Generative model settings.

    ``n_context`` neurons are split evenly between ``task_only`` and
    ``fr_only``.  Tuning-curve means of each sensitive kind are spread evenly
    over ``mu_range``.
    """

    n_random: int = 30
    n_both: int = 20
    n_context: int = 0
    scale: float = 0.5
    n_subdatasets: int = 10
    n_classes: int = 3
    walk: WalkParams = field(default_factory=WalkParams)
    beta_var: float = 0.01
    mu_range: tuple[float, float] = (0.15, 0.85)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_random", "n_both", "n_context"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_context % 2:
            raise ValueError("n_context must be even")
        if self.n_subdatasets < 1:
            raise ValueError("n_subdatasets must be at least 1")
        if self.n_random + self.n_both + self.n_context == 0:
            raise ValueError("at least one neuron is required")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def n_neurons(self) -> int:
        return self.n_random + self.n_both + self.n_context

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu_range"] = list(self.mu_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimSpec:
        d = dict(d)
        if "walk" in d:
            d["walk"] = WalkParams(**d["walk"])
        if "mu_range" in d:
            d["mu_range"] = tuple(d["mu_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SimSpec fields {sorted(unknown)}")
        return cls(**d)


def _means(n: int, lo: float, hi: float) -> np.ndarray:
    return np.array([0.5 * (lo + hi)]) if n == 1 else np.linspace(lo, hi, n)


def tuned_neurons(kind: str, n: int, scale: float, var: float = 0.01,
                  mu_range: tuple[float, float] = (0.15, 0.85)) -> list[NeuronSpec]:
    """``n`` neurons of a sensitive kind with evenly spaced tuning means."""
    out = []
    for mu in _means(n, *mu_range) if n else []:
        a, b = beta_params(float(mu), var)
        out.append(NeuronSpec(kind, a, b, scale))
    return out


def neurons(spec: SimSpec) -> list[NeuronSpec]:
    """Neurons in column order: random, both, task_only, fr_only."""
    half = spec.n_context // 2
    out = [NeuronSpec("random", 1.0, 1.0, spec.scale) for _ in range(spec.n_random)]
    for kind, n in (("both", spec.n_both), ("task_only", half), ("fr_only", half)):
        out += tuned_neurons(kind, n, spec.scale, spec.beta_var, spec.mu_range)
    return out


def discretize(y: np.ndarray, n_classes: int = 3) -> np.ndarray:
    """Equal-width bins of ``[0, 1]``; the right edge belongs to the last bin."""
    y = np.asarray(y, dtype=float)
    return np.clip(np.floor(y * n_classes), 0, n_classes - 1).astype(np.int64)


def discretized_curve(neuron: NeuronSpec, context: str, n_classes: int = 3) -> np.ndarray:
    """Average rate over each location bin."""
    edges = np.linspace(0.0, 1.0, n_classes + 1)
    if not neuron.sensitive(context):
        return np.full(n_classes, neuron.scale)
    cdf = beta_dist.cdf(edges, neuron.alpha, neuron.beta)
    return neuron.scale * np.diff(cdf) * n_classes


def _session_from_walks(walks, spikes_by_walk, n_subdatasets, n_classes):
    loc, dirn, ctx, sub, spikes = [], [], [], [], []
    for i, (c, traj) in enumerate(walks):
        loc.append(discretize(traj.location, n_classes))
        dirn.append(np.where(traj.drift_sign > 0, "F", "B"))
        ctx.append(np.full(traj.location.size, c))
        sub.append(np.full(traj.location.size, i))
        spikes.append(spikes_by_walk[i])
    return SessionDataset(
        spikes=np.vstack(spikes), location=np.concatenate(loc), direction=np.concatenate(dirn),
        context=np.concatenate(ctx), subdataset=np.concatenate(sub), n_classes=n_classes,
    )


def generate(spec: SimSpec) -> SessionDataset:
    """Simulate ``n_subdatasets`` walks per context.

    Task walks get subdataset ids ``0..n-1`` and free-running walks
    ``n..2n-1``.  Direction is the sign of the drift (``F`` out, ``B`` back).
    """
    rng = np.random.default_rng(spec.seed)
    cells = neurons(spec)
    walks, spikes = [], []
    for c in CONTEXTS:
        for _ in range(spec.n_subdatasets):
            traj = random_walk(spec.walk, rng)
            y = np.clip(traj.location / spec.walk.extent, 0.0, 1.0)
            rates = np.column_stack([cell.rate(y, c) for cell in cells])
            walks.append((c, traj))
            spikes.append(rng.poisson(rates))
    return _session_from_walks(walks, spikes, spec.n_subdatasets, spec.n_classes)


def ground_truth(spec: SimSpec) -> dict:
    """Manifest of every neuron's kind, shape and discretized curve per context."""
    out = []
    for i, cell in enumerate(neurons(spec)):
        out.append({
            "neuron": i, "kind": cell.kind, "alpha": float(cell.alpha), "beta": float(cell.beta),
            "scale": float(cell.scale),
            "curves": {c: discretized_curve(cell, c, spec.n_classes).tolist() for c in CONTEXTS},
        })
    return {"spec": spec.to_dict(), "neurons": out}


def mean_bin_rate_numeric(neuron: NeuronSpec, context: str, lo: float, hi: float) -> float:
    """Average rate over ``[lo, hi]`` by quadrature (oracle for :func:`discretized_curve`)."""
    val, _ = integrate.quad(lambda t: float(neuron.rate(t, context)), lo, hi, limit=200)
    return val / (hi - lo)


# --------------------------------------------------------------------------
# Tuning-curve recovery harness
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RecoveryResult:
    recovered: np.ndarray
    truth: np.ndarray
    sensitive: np.ndarray
    peak_agreement: int
    mean_correlation: float


def constant_speed_session(cells: list[NeuronSpec], n_points: int = 600, n_classes: int = 3,
                           seed=None) -> SessionDataset:
    """One forward sweep over ``[0, 1]`` at constant speed, repeated in each context."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n_points) + 0.5) / n_points
    walks, spikes = [], []
    for c in CONTEXTS:
        traj = Trajectory(y, np.ones(n_points, dtype=np.int8))
        walks.append((c, traj))
        spikes.append(rng.poisson(np.column_stack([cell.rate(y, c) for cell in cells])))
    return _session_from_walks(walks, spikes, 1, n_classes)


def tuning_recovery(n_insensitive: int = 4, n_sensitive: int = 6, n_points: int = 600, scale: float = 1.0,
                    context: str = "task", seed=0, n_classes: int = 3) -> RecoveryResult:
    """Fit a lag-0 Poisson decoder and compare its rates with the true binned curves."""
    from .data import build_windowed
    from .decoders import fit_poisson, tuning_curves

    cells = [NeuronSpec("random", 1.0, 1.0, scale) for _ in range(n_insensitive)]
    cells += tuned_neurons("both", n_sensitive, scale)
    ds = constant_speed_session(cells, n_points, n_classes, seed)
    design = build_windowed(ds, 0, "F", context)
    model = fit_poisson(design, 0.0, 0.0)
    rec = tuning_curves(model, 0)
    truth = np.array([discretized_curve(c, context, n_classes) for c in cells])
    sens = np.array([c.sensitive(context) for c in cells])
    peaks = int(np.sum(np.argmax(rec[sens], axis=1) == np.argmax(truth[sens], axis=1)))
    corr = float(np.mean([np.corrcoef(rec[i], truth[i])[0, 1] for i in np.flatnonzero(sens)]))
    return RecoveryResult(rec, truth, sens, peaks, corr)
