"""The multilevel particle filter baseline.

Fix a highest level L, run one plain level-0 filter and one coupled filter
per level 1..L, all mutually independent, and sum the level-0 estimate with
the coupled increments. The particle counts shrink with l so that variance
is balanced against cost; the two allocation regimes follow the coupled
increments' variance decay (faster when the diffusion coefficient is
constant). This is the fixed-bias estimator the randomized ones are
benchmarked against.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cpf import batch_cpf_run
from .errors import InvalidRate
from .pf import BatchSchedule, batch_pf_run
from .randomization import _parallel_for
from .rng import ROLE_MLPF, RngStream
from .sde import CostCounter, Level


@dataclass(frozen=True)
class LevelAllocation:
    """Particle counts M_0..M_L for one multilevel run."""

    max_level: int
    sizes: np.ndarray
    c1: float
    regime: str


def allocate(max_level, regime, c1=1.0):
    """Balanced particle counts for levels 0..max_level.

    regime "constant" (constant diffusion coefficient) uses
    M_l = ceil(c1 * 2^(2L - 1.5 l)); regime "nonconstant" uses
    M_l = ceil(c1 * 2^(2L - l) * max(L, 1)).
    """
    if int(max_level) != max_level or max_level < 0:
        raise InvalidRate(f"max_level must be a non-negative integer, got {max_level!r}")
    if c1 <= 0:
        raise InvalidRate(f"c1 must be positive, got {c1!r}")
    if regime not in ("constant", "nonconstant"):
        raise ValueError(f"unknown allocation regime {regime!r}")
    big_l = int(max_level)
    sizes = np.empty(big_l + 1, dtype=np.int64)
    for l in range(big_l + 1):
        if regime == "constant":
            sizes[l] = math.ceil(c1 * 2.0 ** (2 * big_l - 1.5 * l))
        else:
            sizes[l] = math.ceil(c1 * 2.0 ** (2 * big_l - l) * max(big_l, 1))
    return LevelAllocation(big_l, sizes, float(c1), regime)


@dataclass(frozen=True)
class MlpfResult:
    """One multilevel run: the summed estimate and its level components."""

    allocation: LevelAllocation
    per_time: np.ndarray
    level_per_time: np.ndarray
    total_cost: int

    @property
    def value(self):
        """The estimate at the final observation time."""
        return float(self.per_time[-1])

    def level_values(self):
        """Final-time value of each level component, shape (L+1,)."""
        return self.level_per_time[:, -1].copy()


def mlpf_estimate(bm, data, alloc, seed=0, scheme="wasserstein", threads=1,
                  phi=None, stream=None):
    """Run one multilevel particle filter over a dataset.

    The level components are independent (each gets its own keyed
    sub-stream, so any thread count reproduces the same numbers) and are
    summed per observation time. Costs are measured by counters: level 0
    contributes n*M_0 Euler steps, level l >= 1 contributes
    n*M_l*(2^l + 2^(l-1)).
    """
    if stream is None:
        stream = RngStream(seed, (0, ROLE_MLPF))
    n = data.n
    big_l = alloc.max_level
    level_per_time = np.empty((big_l + 1, n))
    counters = [CostCounter() for _ in range(big_l + 1)]

    def work(l):
        sub = stream.child(l)
        sched = BatchSchedule(int(alloc.sizes[l]))
        if l == 0:
            ests = batch_pf_run(
                bm, data, sched, 0, Level(0), sub, counters[l], phi=phi
            )
            level_per_time[l] = [e.combined(0) for e in ests]
        else:
            ests = batch_cpf_run(
                bm, data, sched, 0, Level(l), sub, scheme, counters[l], phi=phi
            )
            level_per_time[l] = [e.increment(0) for e in ests]

    _parallel_for(work, big_l + 1, threads)
    per_time = level_per_time.sum(axis=0)
    total = sum(c.euler_steps for c in counters)
    return MlpfResult(alloc, per_time, level_per_time, int(total))


def mlpf_cost(alloc, n):
    """Closed-form Euler-step cost of one run; equals the measured total."""
    sizes = alloc.sizes
    total = int(n) * int(sizes[0])
    for l in range(1, alloc.max_level + 1):
        total += int(n) * int(sizes[l]) * ((1 << l) + (1 << (l - 1)))
    return total
