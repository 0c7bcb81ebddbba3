"""Bootstrap particle filters with independent-batch composition.

The filter runs at a fixed level l: particles start with one unit-time
transition away from x*, are weighted by the observation density, resampled
multinomially every step, and propagated by the level-l kernel. Weighting
happens in log space with max-subtraction, so only a full underflow of
every weight is fatal (DegenerateWeights).

Sample sizes are organized in doubling batches N_0, N_1 - N_0, ... of
mutually independent filters. The combined estimate through batch q weights
each batch's self-normalized ratio by its size, which reproduces a single
N_q-particle average in expectation while letting a randomized estimator
reuse the batches shared by consecutive prefixes.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateWeights
from .sde import transition


def normalized_weights(log_w, level=None, p=None, time_index=None):
    """Normalize log-weights to a probability vector, via max-subtraction.

    Raises DegenerateWeights (with whatever context was passed in) when all
    weights underflow or any log-weight is NaN/+inf.
    """
    lw = np.asarray(log_w, dtype=float)
    if lw.size == 0:
        raise ValueError("empty weight vector")
    m = np.max(lw)
    if np.isnan(m) or m == np.inf:
        raise DegenerateWeights(
            "non-finite log-weights", level=level, p=p, time_index=time_index
        )
    if m == -np.inf:
        raise DegenerateWeights(
            "all log-weights underflowed", level=level, p=p, time_index=time_index
        )
    w = np.exp(lw - m)
    s = w.sum()
    if not np.isfinite(s) or s <= 0.0:
        raise DegenerateWeights(
            "weight normalization failed", level=level, p=p, time_index=time_index
        )
    return w / s


def multinomial_indices(gen, weights, size):
    """Draw `size` ancestor indices i.i.d. from a normalized weight vector."""
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, gen.random(size), side="right")


@dataclass(frozen=True)
class BatchSchedule:
    """Doubling sample sizes N_p = n0 * 2^p and their increments."""

    n0: int
    rule: str = "doubling"

    def __post_init__(self):
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise ValueError(f"base sample size must be a positive integer, got {self.n0!r}")
        if self.rule != "doubling":
            raise ValueError(f"unknown growth rule {self.rule!r}")
        object.__setattr__(self, "n0", int(self.n0))

    def size(self, p):
        """Total sample size N_p."""
        return self.n0 * (1 << p)

    def batch_sizes(self, p):
        """Sizes of the p+1 independent batches composing N_p."""
        return [self.n0] + [self.n0 * (1 << (q - 1)) for q in range(1, p + 1)]


@dataclass(frozen=True)
class ParticleSystem:
    """A particle cloud at one time step of a level-l filter."""

    model: object
    level: object
    positions: np.ndarray
    time_index: int
    stream: object
    counter: object = None

    @property
    def n(self):
        return self.positions.shape[0]


def init_particle_system(model, level, n, stream, counter=None):
    """Start a filter: n particles drawn from the level-l kernel at x*."""
    x0 = np.tile(np.asarray(model.initial_state, dtype=float), (n, 1))
    pos = transition(model, x0, level, stream.gen, counter)
    return ParticleSystem(model, level, pos, 0, stream, counter)


def pf_step(system, log_weights):
    """One filter step: multinomial resampling by log_weights, then propagate."""
    w = normalized_weights(
        log_weights, level=system.level.l, time_index=system.time_index
    )
    gen = system.stream.gen
    idx = multinomial_indices(gen, w, system.n)
    pos = transition(
        system.model, system.positions[idx], system.level, gen, system.counter
    )
    return replace(system, positions=pos, time_index=system.time_index + 1)


@dataclass(frozen=True)
class PfBatchEstimate:
    """Per-batch numerators and denominators of a filter functional.

    num[q] and den[q] are the batch-q particle means of exp(log g - scale)
    times phi and of exp(log g - scale); `scale` is one shared offset, so
    ratios across batches are consistent. combined(q) is the size-weighted
    ratio through batch q.
    """

    batch_sizes: np.ndarray
    num: np.ndarray
    den: np.ndarray
    scale: float = 0.0
    time_index: int = 0

    def combined(self, q=None):
        if q is None:
            q = len(self.num) - 1
        sizes = np.asarray(self.batch_sizes[: q + 1], dtype=float)
        num = float(np.dot(sizes, self.num[: q + 1]))
        den = float(np.dot(sizes, self.den[: q + 1]))
        if den <= 0.0 or not np.isfinite(den):
            raise DegenerateWeights(
                "combined batch estimate has zero mass",
                p=q,
                time_index=self.time_index,
            )
        return num / den


def weighted_ratio(log_g_values, values, time_index=0):
    """sum(w * values) / sum(w) with w = exp(log_g - max), guarding underflow."""
    lg = np.asarray(log_g_values, dtype=float)
    m = np.max(lg)
    if np.isnan(m) or m == np.inf:
        raise DegenerateWeights("non-finite log-weights", time_index=time_index)
    if m == -np.inf:
        raise DegenerateWeights("all log-weights underflowed", time_index=time_index)
    w = np.exp(lg - m)
    den = float(np.sum(w))
    if den <= 0.0 or not np.isfinite(den):
        raise DegenerateWeights("weight normalization failed", time_index=time_index)
    return float(np.sum(w * np.asarray(values, dtype=float))) / den


def filter_functional(obj, log_g=None, phi=None, q=None):
    """Self-normalized filter estimate of phi.

    For a ParticleSystem, log_g may be a callable on positions or a
    precomputed vector; the result is sum(w * phi) / sum(w) with
    max-subtracted weights w. For a PfBatchEstimate, returns the combined
    ratio through batch q.
    """
    if isinstance(obj, PfBatchEstimate):
        return obj.combined(q)
    lg = log_g(obj.positions) if callable(log_g) else log_g
    return weighted_ratio(lg, phi(obj.positions), time_index=obj.time_index)


def batch_pf_run(bm, data, schedule, p, level, stream, counter=None, phi=None):
    """Run p+1 independent batch filters over a dataset.

    Batch q gets its own child stream (so prefixes of a larger run are
    bit-identical to the smaller run) and size schedule.batch_sizes(p)[q].

    Returns a list with one PfBatchEstimate per observation time; entry k
    estimates the filter at observation count k+1. Resampling after the
    last observation is skipped since nothing consumes it.
    """
    if phi is None:
        phi = bm.phi
    model = bm.diffusion
    obs = bm.observation
    sizes = schedule.batch_sizes(p)
    systems = [
        init_particle_system(model, level, m, stream.child(q), counter)
        for q, m in enumerate(sizes)
    ]
    out = []
    n = data.n
    for k in range(n):
        y = data.y[k]
        logg = [obs.log_g(s.positions, y) for s in systems]
        shift = max(float(np.max(lg)) for lg in logg)
        if np.isnan(shift) or shift == np.inf:
            raise DegenerateWeights("non-finite log-weights", level=level.l, p=p, time_index=k)
        if shift == -np.inf:
            raise DegenerateWeights("all log-weights underflowed", level=level.l, p=p, time_index=k)
        num = np.empty(len(systems))
        den = np.empty(len(systems))
        for q, (s, lg) in enumerate(zip(systems, logg)):
            g = np.exp(lg - shift)
            num[q] = np.mean(g * np.asarray(phi(s.positions), dtype=float))
            den[q] = np.mean(g)
        out.append(
            PfBatchEstimate(np.asarray(sizes), num, den, scale=shift, time_index=k)
        )
        if k < n - 1:
            try:
                systems = [pf_step(s, lg) for s, lg in zip(systems, logg)]
            except DegenerateWeights as err:
                raise DegenerateWeights(
                    "batch filter lost all weight", level=level.l, p=p, time_index=k
                ) from err
    return out
