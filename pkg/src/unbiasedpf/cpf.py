"""Coupled particle filters across consecutive discretization levels.

A coupled filter carries pairs (fine, coarse) of particle clouds at levels
l and l-1, propagated on shared Gaussian increments and resampled with a
coupled scheme, so that the fine and coarse marginals are each an ordinary
bootstrap filter while the pairs stay positively correlated. The object of
interest is the increment: the fine filter functional minus the coarse one,
whose variance shrinks with l and makes level randomization affordable.

Two resampling couplings are provided. The maximal coupling draws a shared
ancestor with the largest probability the two weight vectors allow
(alpha = sum of pointwise minima) and falls back to independent residual
draws otherwise. The Wasserstein coupling (scalar states only) pushes one
shared uniform through both weighted empirical quantile functions, which
keeps resampled pairs close in position rather than merely equal in index.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateWeights, InvalidSimplex, UnsupportedDimension
from .pf import normalized_weights, weighted_ratio
from .sde import coupled_transition


def _check_simplex(w, what):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidSimplex(f"{what} must be a non-empty vector")
    if np.any(w < -1e-12) or not np.isfinite(w).all():
        raise InvalidSimplex(f"{what} has negative or non-finite entries")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise InvalidSimplex(f"{what} does not sum to 1")
    return np.maximum(w, 0.0)


@dataclass(frozen=True)
class CouplingDiagnostics:
    """alpha is the overlap sum(min(w_f, w_c)). For the maximal coupling,
    matched_fraction is the share of draws that took the common branch; for
    the Wasserstein coupling (which has no branches) it is the share of
    draws whose two ancestor indices coincided."""

    alpha: float
    matched_fraction: float


def maximal_coupling_resample(gen, w_fine, w_coarse, size):
    """Draw `size` ancestor index pairs from the maximal coupling.

    With probability alpha = sum(min(w_fine, w_coarse)) a pair shares one
    index drawn from the overlap; otherwise the two indices come
    independently from the normalized residuals. When the residual mass is
    below 1e-14 every pair is forced to match, avoiding division blowups.

    Returns (idx_fine, idx_coarse, CouplingDiagnostics).
    """
    wf = _check_simplex(w_fine, "fine weights")
    wc = _check_simplex(w_coarse, "coarse weights")
    if wf.shape != wc.shape:
        raise InvalidSimplex("weight vectors must have matching lengths")
    m = np.minimum(wf, wc)
    alpha = float(m.sum())
    u = gen.random((4, size))

    if 1.0 - alpha < 1e-14:
        cum = np.cumsum(m / alpha)
        cum[-1] = 1.0
        j = np.searchsorted(cum, u[1], side="right")
        return j, j.copy(), CouplingDiagnostics(alpha, 1.0)

    if alpha <= 0.0:
        cf = np.cumsum(wf)
        cf[-1] = 1.0
        cc = np.cumsum(wc)
        cc[-1] = 1.0
        idx_f = np.searchsorted(cf, u[2], side="right")
        idx_c = np.searchsorted(cc, u[3], side="right")
        return idx_f, idx_c, CouplingDiagnostics(0.0, 0.0)

    matched = u[0] < alpha
    cum_m = np.cumsum(m / alpha)
    cum_m[-1] = 1.0
    shared = np.searchsorted(cum_m, u[1], side="right")

    resid = 1.0 - alpha
    cf = np.cumsum((wf - m) / resid)
    cf[-1] = 1.0
    cc = np.cumsum((wc - m) / resid)
    cc[-1] = 1.0
    idx_f = np.where(matched, shared, np.searchsorted(cf, u[2], side="right"))
    idx_c = np.where(matched, shared, np.searchsorted(cc, u[3], side="right"))
    return idx_f, idx_c, CouplingDiagnostics(alpha, float(matched.mean()))


def wasserstein_resample(gen, pos_fine, w_fine, pos_coarse, w_coarse, size):
    """Comonotone (optimal transport) resampling for scalar states.

    One shared uniform per draw is pushed through the weighted empirical
    quantile functions of both clouds, so the resampled pairs are matched
    by rank. Only d = 1 is supported.

    Returns (idx_fine, idx_coarse).
    """
    pos_fine = np.asarray(pos_fine, dtype=float)
    pos_coarse = np.asarray(pos_coarse, dtype=float)
    if pos_fine.ndim != 2 or pos_fine.shape[1] != 1 or pos_coarse.shape[1] != 1:
        raise UnsupportedDimension("Wasserstein resampling is only implemented for d=1")
    wf = _check_simplex(w_fine, "fine weights")
    wc = _check_simplex(w_coarse, "coarse weights")

    u = gen.random(size)
    of = np.argsort(pos_fine[:, 0], kind="stable")
    cf = np.cumsum(wf[of])
    cf[-1] = 1.0
    oc = np.argsort(pos_coarse[:, 0], kind="stable")
    cc = np.cumsum(wc[oc])
    cc[-1] = 1.0
    idx_f = of[np.searchsorted(cf, u, side="right")]
    idx_c = oc[np.searchsorted(cc, u, side="right")]
    return idx_f, idx_c


@dataclass(frozen=True)
class CoupledParticleSystem:
    """Paired particle clouds at one time step of a coupled level-(l, l-1) filter."""

    model: object
    level: object
    fine: np.ndarray
    coarse: np.ndarray
    time_index: int
    stream: object
    scheme: str = "wasserstein"
    counter: object = None
    diag: object = None

    @property
    def n(self):
        return self.fine.shape[0]


def init_coupled_system(model, level, n, stream, counter=None, scheme="wasserstein"):
    """Start a coupled filter: n pairs drawn from the coupled kernel at x*."""
    if scheme not in ("maximal", "wasserstein"):
        raise ValueError(f"unknown coupled resampling scheme {scheme!r}")
    x0 = np.tile(np.asarray(model.initial_state, dtype=float), (n, 1))
    xf, xc = coupled_transition(model, x0, x0, level, stream.gen, counter)
    return CoupledParticleSystem(model, level, xf, xc, 0, stream, scheme, counter)


def cpf_step(system, log_w_fine, log_w_coarse):
    """One coupled filter step: coupled resampling, then coupled propagation."""
    lvl = system.level.l
    wf = normalized_weights(log_w_fine, level=lvl, time_index=system.time_index)
    wc = normalized_weights(log_w_coarse, level=lvl, time_index=system.time_index)
    gen = system.stream.gen
    if system.scheme == "maximal":
        idx_f, idx_c, diag = maximal_coupling_resample(gen, wf, wc, system.n)
    else:
        idx_f, idx_c = wasserstein_resample(
            gen, system.fine, wf, system.coarse, wc, system.n
        )
        alpha = float(np.minimum(wf, wc).sum())
        diag = CouplingDiagnostics(alpha, float(np.mean(idx_f == idx_c)))
    xf, xc = coupled_transition(
        system.model, system.fine[idx_f], system.coarse[idx_c],
        system.level, gen, system.counter,
    )
    return replace(
        system, fine=xf, coarse=xc, time_index=system.time_index + 1, diag=diag
    )


@dataclass(frozen=True)
class CpfBatchEstimate:
    """Per-batch functional pieces of a coupled filter at one time step.

    Fine and coarse sides keep separate shared scales; the increment is the
    size-weighted fine ratio minus the size-weighted coarse ratio.
    """

    batch_sizes: np.ndarray
    num_fine: np.ndarray
    den_fine: np.ndarray
    num_coarse: np.ndarray
    den_coarse: np.ndarray
    scale_fine: float = 0.0
    scale_coarse: float = 0.0
    time_index: int = 0

    def _combined(self, num, den, q):
        if q is None:
            q = len(num) - 1
        sizes = np.asarray(self.batch_sizes[: q + 1], dtype=float)
        n = float(np.dot(sizes, num[: q + 1]))
        d = float(np.dot(sizes, den[: q + 1]))
        if d <= 0.0 or not np.isfinite(d):
            raise DegenerateWeights(
                "combined batch estimate has zero mass", p=q, time_index=self.time_index
            )
        return n / d

    def combined_fine(self, q=None):
        return self._combined(self.num_fine, self.den_fine, q)

    def combined_coarse(self, q=None):
        return self._combined(self.num_coarse, self.den_coarse, q)

    def increment(self, q=None):
        return self.combined_fine(q) - self.combined_coarse(q)


def increment_functional(obj, log_g=None, phi=None, q=None):
    """Fine-minus-coarse filter functional.

    For a CoupledParticleSystem, log_g is applied to both clouds and the
    two self-normalized ratios are differenced; identical clouds give
    exactly zero. For a CpfBatchEstimate, returns the combined increment
    through batch q.
    """
    if isinstance(obj, CpfBatchEstimate):
        return obj.increment(q)
    if not callable(log_g):
        raise TypeError("log_g must be callable when evaluating a live coupled system")
    rf = weighted_ratio(log_g(obj.fine), phi(obj.fine), time_index=obj.time_index)
    rc = weighted_ratio(log_g(obj.coarse), phi(obj.coarse), time_index=obj.time_index)
    return rf - rc


def batch_cpf_run(bm, data, schedule, p, level, stream, scheme="wasserstein",
                  counter=None, phi=None):
    """Run p+1 independent coupled batch filters over a dataset.

    The batch layout, child streams and prefix property mirror
    batch_pf_run; each batch carries a fine/coarse pair instead of one
    cloud. Returns one CpfBatchEstimate per observation time.
    """
    if phi is None:
        phi = bm.phi
    model = bm.diffusion
    obs = bm.observation
    sizes = schedule.batch_sizes(p)
    systems = [
        init_coupled_system(model, level, m, stream.child(q), counter, scheme)
        for q, m in enumerate(sizes)
    ]
    out = []
    n = data.n
    for k in range(n):
        y = data.y[k]
        lg_f = [obs.log_g(s.fine, y) for s in systems]
        lg_c = [obs.log_g(s.coarse, y) for s in systems]
        est = _time_estimate(sizes, systems, lg_f, lg_c, phi, level, p, k)
        out.append(est)
        if k < n - 1:
            try:
                systems = [
                    cpf_step(s, f, c) for s, f, c in zip(systems, lg_f, lg_c)
                ]
            except DegenerateWeights as err:
                raise DegenerateWeights(
                    "coupled batch filter lost all weight",
                    level=level.l, p=p, time_index=k,
                ) from err
    return out


def _shift(logs, level, p, k, side):
    m = max(float(np.max(lg)) for lg in logs)
    if np.isnan(m) or m == np.inf:
        raise DegenerateWeights(
            f"non-finite {side} log-weights", level=level.l, p=p, time_index=k
        )
    if m == -np.inf:
        raise DegenerateWeights(
            f"all {side} log-weights underflowed", level=level.l, p=p, time_index=k
        )
    return m


def _time_estimate(sizes, systems, lg_f, lg_c, phi, level, p, k):
    shift_f = _shift(lg_f, level, p, k, "fine")
    shift_c = _shift(lg_c, level, p, k, "coarse")
    nb = len(systems)
    num_f = np.empty(nb)
    den_f = np.empty(nb)
    num_c = np.empty(nb)
    den_c = np.empty(nb)
    for q, (s, f, c) in enumerate(zip(systems, lg_f, lg_c)):
        gf = np.exp(f - shift_f)
        gc = np.exp(c - shift_c)
        num_f[q] = np.mean(gf * np.asarray(phi(s.fine), dtype=float))
        den_f[q] = np.mean(gf)
        num_c[q] = np.mean(gc * np.asarray(phi(s.coarse), dtype=float))
        den_c[q] = np.mean(gc)
    return CpfBatchEstimate(
        np.asarray(sizes), num_f, den_f, num_c, den_c,
        scale_fine=shift_f, scale_coarse=shift_c, time_index=k,
    )
