"""Tail objects and Monte Carlo estimators built on them.

A `TailLaw` bundles samplers for the spectral tail process Theta (``|Theta_0| = 1``),
the tail process ``Y = |Y_0| Theta`` with a Pareto magnitude, and optionally the
cluster process Q (``sup |Q| = 1``, compact support).  All samplers are
batched: ``sampler(rng, n) -> PathBatch``.

Every estimator takes ``seed`` and ``workers``; replications are split into
fixed chunks with derived substreams (see `rvpaths.rng`), so reports do not
depend on the worker count.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

from . import rng as rngmod
from .pathkit import INF, NormChoice, PathBatch, PiecewiseConstantPath

Sampler = Callable[[np.random.Generator, int], PathBatch]


@dataclass
class EstimatorReport:
    estimate: float
    std_error: float
    n: int
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.estimate - 1.96 * self.std_error, self.estimate + 1.96 * self.std_error)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n": self.n,
            "ci95": list(self.ci95),
            "seed": self.seed,
            "meta": self.meta,
        }

    @classmethod
    def from_values(cls, values, seed=None, meta=None, trim: float = 0.001) -> "EstimatorReport":
        """Sample mean with CLT standard error; a trimmed mean goes into ``meta`` as a diagnostic."""
        values = np.asarray(values, dtype=float)
        n = values.size
        est = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else INF
        meta = dict(meta or {})
        if trim and n >= 1000:
            meta["trimmed_estimate"] = float(stats.trim_mean(values, trim))
        return cls(est, se, n, seed, meta)

    def zscore(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.estimate == target else math.copysign(INF, self.estimate - target)
        return (self.estimate - target) / self.std_error


def zscore(lhs: EstimatorReport, rhs: EstimatorReport) -> float:
    se = math.hypot(lhs.std_error, rhs.std_error)
    diff = lhs.estimate - rhs.estimate
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(INF, diff)
    return diff / se


def pareto_sample(alpha: float, rng: np.random.Generator, size=None):
    """Pareto(alpha) on [1, inf): ``U^(-1/alpha)`` with U uniform on (0, 1]."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    u = 1.0 - rng.random(size)
    return u ** (-1.0 / alpha)


def sign_sample(p: float, rng: np.random.Generator, size=None):
    """+1 with probability p, -1 otherwise (extremal skewness)."""
    if not 0 <= p <= 1:
        raise ValueError("skewness p must lie in [0, 1]")
    if p == 1:
        return np.ones(size) if size is not None else 1.0
    return np.where(rng.random(size) < p, 1.0, -1.0)


@dataclass
class TailLaw:
    alpha: float
    sample_theta: Sampler
    sample_q: Sampler | None = None
    theta_closed_form: float | None = None
    support_radius: float = INF
    norm: NormChoice = NormChoice.SUP_ABS
    name: str = "tail"
    meta: dict = field(default_factory=dict)
    # replications per chunk; lowered for laws whose paths carry many intervals
    chunk: int = rngmod.DEFAULT_CHUNK

    def sample_y(self, rng: np.random.Generator, n: int) -> PathBatch:
        theta = self.sample_theta(rng, n)
        return theta.scale(pareto_sample(self.alpha, rng, n))


@dataclass
class SpectralLaw:
    alpha: float
    sample_z: Sampler
    z0_moment: float = 1.0
    norm: NormChoice = NormChoice.SUP_ABS
    name: str = "spectral"
    chunk: int = rngmod.DEFAULT_CHUNK


# shift sampling for Y built from Q


def _draw_anchor_shift(q: PathBatch, alpha: float, norm, rng: np.random.Generator):
    """Draw T with density proportional to ``|Q(-t)|^alpha`` for every row.

    Returns the shift, the interval index of Q at ``-T`` and ``|Q(-T)|``.
    """
    nrm = q.norms(norm)
    w = q.lengths * nrm ** alpha
    cum = np.cumsum(w, axis=1)
    total = cum[:, -1]
    if np.any(total <= 0):
        raise ValueError("a Q draw has zero alpha-mass")
    u = rng.random(len(q)) * total
    j = np.minimum(np.sum(cum <= u[:, None], axis=1), q.breaks.shape[1] - 1)
    rows = np.arange(len(q))
    prev = np.where(j > 0, cum[rows, np.maximum(j - 1, 0)], 0.0)
    frac = (u - prev) / w[rows, j]
    pos = q.breaks[rows, j] + frac * q.lengths[rows, j]
    return -pos, j, nrm[rows, j]


def shifted_by_anchor(q: PathBatch, alpha: float, norm, rng: np.random.Generator, max_tries: int = 50):
    """``B^T Q / |Q(-T)|`` with T drawn from ``|Q(-t)|^alpha``; rows that land on a
    breakpoint through rounding are redrawn.  Returns (batch, redraw count)."""
    shift, j, qval = _draw_anchor_shift(q, alpha, norm, rng)
    redraws = 0
    for _ in range(max_tries):
        idx, _inside = q.shift(shift)._index_at(0.0)
        bad = idx != j
        if not bad.any():
            break
        redraws += int(bad.sum())
        s2, j2, v2 = _draw_anchor_shift(q[np.flatnonzero(bad)], alpha, norm, rng)
        shift[bad], j[bad], qval[bad] = s2, j2, v2
    else:
        raise RuntimeError("could not place the anchor shift inside an interval")
    return q.shift(shift).divide(qval), redraws


def tilted_q_sampler(q_sampler: Sampler, alpha: float, mass_bound: float, norm=NormChoice.SUP_ABS,
                     max_rounds: int = 10_000) -> Sampler:
    """Exact sampler of Q tilted by ``int |Q_t|^alpha dt``, by rejection.

    ``mass_bound`` must dominate ``int |Q|^alpha`` on every draw; the support
    length of Q works because ``sup |Q| = 1``.
    """
    if not (mass_bound > 0 and math.isfinite(mass_bound)):
        raise ValueError("rejection needs a finite positive mass bound")

    def sample(rng, n):
        parts, have = [], 0
        for _ in range(max_rounds):
            if have >= n:
                break
            q = q_sampler(rng, n)
            mass = q.lp_power(alpha, norm)
            if np.any(mass > mass_bound * (1 + 1e-12)):
                raise ValueError("a Q draw exceeds the declared alpha-mass bound")
            keep = np.flatnonzero(rng.random(n) * mass_bound < mass)
            if keep.size:
                parts.append(q[keep])
                have += keep.size
        else:
            raise RuntimeError("tilted Q rejection sampler did not fill the batch")
        out = PathBatch.concat(parts)
        return out[np.arange(n)]

    return sample


def tail_from_q(q_sampler: Sampler, alpha: float, theta: float, *, support_radius: float = INF,
                q_tilted: Sampler | None = None, mass_bound: float | None = None,
                norm: NormChoice = NormChoice.SUP_ABS, name: str = "from-q",
                check_n: int = 20_000, check_seed: int = 0) -> TailLaw:
    """Tail law ``Y = |Y_0| B^T Q / |Q(-T)|``.

    The pair (Q, T) has law ``theta int E[delta_(Q, t) |Q_(-t)|^alpha] dt``: Q is
    drawn from its law tilted by ``int |Q|^alpha`` (``q_tilted``, or exact
    rejection under ``mass_bound``), then T given Q has density proportional to
    ``|Q_(-t)|^alpha``.  The normalization ``theta int E|Q_t|^alpha dt = 1`` is
    checked by Monte Carlo (3 standard errors) unless ``check_n`` is 0.
    """
    if q_tilted is None:
        if mass_bound is None:
            raise ValueError("tail_from_q needs a tilted Q sampler or a bound on int |Q|^alpha")
        q_tilted = tilted_q_sampler(q_sampler, alpha, mass_bound, norm)
    if check_n:
        q = q_sampler(rngmod.substream(check_seed, "q-normalization"), check_n)
        rep = EstimatorReport.from_values(theta * q.lp_power(alpha, norm))
        if abs(rep.zscore(1.0)) > 3:
            raise ValueError(
                f"theta * int E|Q|^alpha = {rep.estimate:.4f} +- {rep.std_error:.4f}, expected 1")
    counter = {"redraws": 0}

    def sample_theta(rng, n):
        batch, redraws = shifted_by_anchor(q_tilted(rng, n), alpha, norm, rng)
        counter["redraws"] += redraws
        return batch

    return TailLaw(alpha, sample_theta, q_sampler, theta, support_radius, norm, name, {"redraws": counter})


# spectral process from the tail process


def uniform_density_cdf(radius: float):
    def cdf(t):
        return np.clip((np.asarray(t) + radius) / (2 * radius), 0.0, 1.0)
    return cdf


def spectral_from_tail(tail: TailLaw, density: PiecewiseConstantPath | None = None,
                       radius: float | None = None) -> SpectralLaw:
    """``Z = J(B^T Y)^(-1/alpha) B^T Y`` with ``T ~ f`` and ``J(y) = int f(t) |y_t|^alpha dt``.

    ``f`` defaults to the uniform density on ``[-R, R]`` with R the support radius
    of the tail law (or ``radius`` / 1 when the support is unbounded).
    """
    alpha = tail.alpha
    if density is None:
        r = radius if radius is not None else (tail.support_radius if math.isfinite(tail.support_radius) else 1.0)
        cdf = uniform_density_cdf(r)

        def draw_t(rng, n):
            return rng.uniform(-r, r, n)
    else:
        if np.any(density.values < 0):
            raise ValueError("density must be non-negative")
        mass = np.concatenate(([0.0], np.cumsum(density.lengths * density.values[:, 0])))
        if not math.isclose(mass[-1], 1.0, rel_tol=1e-9):
            raise ValueError(f"density integrates to {mass[-1]}, not 1")
        knots = np.append(density.breakpoints, density.window_end)

        def cdf(t):
            return np.interp(t, knots, mass)

        def draw_t(rng, n):
            return np.interp(rng.random(n), mass, knots)

    def sample_z(rng, n):
        y = tail.sample_y(rng, n)
        y = y.shift(draw_t(rng, n))
        j = y.weighted_power(cdf, alpha, tail.norm)
        if np.any(j <= 0):
            raise RuntimeError("normalizing functional vanished on a tail draw")
        return y.scale(j ** (-1.0 / alpha))

    return SpectralLaw(alpha, sample_z, 1.0, tail.norm, f"spectral({tail.name})", tail.chunk)


# Q from Theta by self-normalized importance sampling


@dataclass
class QFromTheta:
    candidates: PathBatch
    weights: np.ndarray
    theta: EstimatorReport
    ess: float
    recenter: bool = True

    def sample(self, rng: np.random.Generator, n: int) -> PathBatch:
        p = self.weights / self.weights.sum()
        idx = rng.choice(len(p), size=n, p=p)
        q = self.candidates[idx]
        if self.recenter:
            q = q.shift(-q.infargmax())
        return q

    __call__ = sample


def q_from_theta(theta_sampler, alpha: float | None = None, n: int = 100_000, seed: int = 0, *,
                 norm: NormChoice | None = None, recenter: bool = True,
                 workers: int = 1) -> QFromTheta:
    """Weights ``(Theta*)^alpha / ||Theta||_alpha^alpha`` on candidates ``Theta / Theta*``.

    The weight mean estimates the candidate extremal index; Q draws come from
    weighted resampling of the candidate pool.
    """
    theta_sampler, alpha, norm, _name, chunk_size = _unpack(theta_sampler, alpha, norm)

    def chunk(r, size):
        th = theta_sampler(r, size)
        sup = th.sup_all(norm)
        if np.any(sup <= 0):
            raise ValueError("an all-zero Theta draw: the tail law is invalid")
        w = sup ** alpha / th.lp_power(alpha, norm)
        return th.divide(sup), w

    parts = rngmod.replicate(chunk, n, seed, "q-from-theta", workers, chunk_size)
    cands = PathBatch.concat([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    if ess / n < 0.1:
        warnings.warn(f"importance weights are degenerate: ESS/n = {ess / n:.3f}", RuntimeWarning)
    report = EstimatorReport.from_values(w, seed, {"ess": ess, "estimator": "q_from_theta"})
    return QFromTheta(cands, w, report, ess, recenter)


# candidate extremal index


def _mean_report(values_fn, n, seed, key, workers, meta=None, chunk=rngmod.DEFAULT_CHUNK) -> EstimatorReport:
    vals = rngmod.replicate_concat(values_fn, n, seed, key, workers, chunk)
    return EstimatorReport.from_values(vals, seed, meta)


def candidate_via_exceedance(tail: TailLaw, n: int, seed: int = 0, workers: int = 1) -> EstimatorReport:
    """Monte Carlo mean of ``1 / exceedance(Y, 1)``."""
    def chunk(r, size):
        exc = tail.sample_y(r, size).exceedance(1.0, tail.norm)
        if np.any(exc <= 0):
            raise ValueError("a tail draw spends no time above 1, which contradicts |Y_0| > 1")
        return 1.0 / exc

    return _mean_report(chunk, n, seed, ("exceedance", tail.name), workers,
                        {"estimator": "candidate_via_exceedance", "model": tail.name}, tail.chunk)


def theta_weights(theta: PathBatch, alpha: float, norm=NormChoice.SUP_ABS) -> np.ndarray:
    return theta.sup_all(norm) ** alpha / theta.lp_power(alpha, norm)


def candidate_via_theta(tail_or_sampler, alpha: float | None = None, n: int = 100_000,
                        seed: int = 0, workers: int = 1, norm=None) -> EstimatorReport:
    """Monte Carlo mean of ``(Theta*)^alpha / ||Theta||_alpha^alpha``."""
    sampler, alpha, norm, name, chunk_size = _unpack(tail_or_sampler, alpha, norm)

    def chunk(r, size):
        return theta_weights(sampler(r, size), alpha, norm)

    return _mean_report(chunk, n, seed, ("theta", name), workers,
                        {"estimator": "candidate_via_theta", "model": name}, chunk_size)


def _unpack(tail_or_sampler, alpha, norm):
    if isinstance(tail_or_sampler, TailLaw):
        t = tail_or_sampler
        return t.sample_theta, t.alpha if alpha is None else alpha, norm or t.norm, t.name, t.chunk
    if alpha is None:
        raise ValueError("alpha is required with a bare sampler")
    name = getattr(tail_or_sampler, "__name__", "theta")
    return tail_or_sampler, alpha, norm or NormChoice.SUP_ABS, name, rngmod.DEFAULT_CHUNK


def candidate_conditional_shotnoise(eta_law, alpha: float, n: int, seed: int = 0) -> EstimatorReport:
    """``1 / E[eta]`` from session lengths, the conditional mean exceedance given a start at 0.

    ``alpha`` does not enter: the exceedance of the anchored tail process is the
    session length whatever the Pareto magnitude.
    """
    r = rngmod.substream(seed, "conditional-shotnoise")
    eta = np.asarray(eta_law.sample(r, n), dtype=float)
    mean = float(eta.mean())
    if mean <= 0:
        raise ValueError("session lengths must have positive mean")
    se = float(eta.std(ddof=1) / math.sqrt(n)) / mean ** 2 if n > 1 else INF
    return EstimatorReport(1.0 / mean, se, n, seed,
                           {"estimator": "candidate_conditional_shotnoise", "mean_exceedance": mean,
                            "alpha": alpha})


# functionals


@dataclass(frozen=True)
class PathFunctional:
    """A batched path functional with a declared bound (``inf`` when unbounded)."""
    name: str
    func: Callable[[PathBatch], np.ndarray]
    bound: float = INF

    def __call__(self, batch: PathBatch) -> np.ndarray:
        return np.asarray(self.func(batch), dtype=float)


def constant(c: float = 1.0) -> PathFunctional:
    return PathFunctional(f"const({c:g})", lambda b: np.full(len(b), float(c)), abs(c))


def exceedance_capped(level: float = 1.0, cap: float = 10.0, norm=NormChoice.SUP_ABS) -> PathFunctional:
    return PathFunctional(f"min(exceedance>{level:g},{cap:g})",
                          lambda b: np.minimum(b.exceedance(level, norm), cap), cap)


def sup_exceeds(a: float, b: float, level: float, norm=NormChoice.SUP_ABS) -> PathFunctional:
    return PathFunctional(f"1{{sup[{a:g},{b:g}]>{level:g}}}",
                          lambda bt: (bt.sup(a, b, norm) > level).astype(float), 1.0)


def value_clipped(t: float, lo: float = -5.0, hi: float = 5.0) -> PathFunctional:
    return PathFunctional(f"clip(y({t:g}))",
                          lambda b: np.clip(b.value_at(t)[:, 0], lo, hi), max(abs(lo), abs(hi)))


def infargmax_before(s: float, norm=NormChoice.SUP_ABS) -> PathFunctional:
    return PathFunctional(f"1{{infargmax<={s:g}}}", lambda b: (b.infargmax(norm) <= s).astype(float), 1.0)


def first_exceedance_before(s: float, level: float = 1.0, norm=NormChoice.SUP_ABS) -> PathFunctional:
    return PathFunctional(f"1{{first_exceedance<={s:g}}}",
                          lambda b: (b.first_exceedance(level, norm) <= s).astype(float), 1.0)


def sup_ratio(a: float, b: float, norm=NormChoice.SUP_ABS) -> PathFunctional:
    """``sup_[a,b] |y| / sup |y|`` -- bounded and 0-homogeneous."""
    def f(bt):
        top = bt.sup_all(norm)
        return np.where(top > 0, bt.sup(a, b, norm) / np.where(top > 0, top, 1.0), 0.0)
    return PathFunctional(f"sup[{a:g},{b:g}]/sup", f, 1.0)


def exceedance_ratio(level: float, cap: float = 10.0, norm=NormChoice.SUP_ABS) -> PathFunctional:
    """Capped time above ``level * sup |y|`` -- shift invariant and 0-homogeneous."""
    return PathFunctional(f"min(exceedance>{level:g}*sup,{cap:g})",
                          lambda b: np.minimum(b.exceedance(level * b.sup_all(norm), norm), cap), cap)


def sliding_sup_integral(q: PiecewiseConstantPath, alpha: float, width: float,
                         norm=NormChoice.SUP_ABS) -> float:
    """Exact ``int sup_{u in [-s, width - s]} |q(u)|^alpha ds`` for a compactly supported step path.

    Computed level by level: the window meets ``{|q|^alpha >= v}`` for ``s`` in a
    union of intervals whose total length is integrated over ``v``.
    """
    if width < 0:
        raise ValueError("width must be non-negative")
    if np.any(q.outside_norm(norm) != 0):
        raise ValueError("q must vanish outside its window")
    g = q.norms(norm) ** alpha
    starts = q.breakpoints
    ends = np.append(q.breakpoints[1:], q.window_end)
    total, prev = 0.0, 0.0
    for level in np.unique(g[g > 0]):
        hit = g >= level
        # the closed window [-s, width - s] meets [c, d) iff s lies in (-d, width - c]
        lo, hi = -ends[hit], width - starts[hit]
        order = np.argsort(lo)
        lo, hi = lo[order], hi[order]
        length, cur_lo, cur_hi = 0.0, lo[0], hi[0]
        for a, b in zip(lo[1:], hi[1:]):
            if a > cur_hi:
                length += cur_hi - cur_lo
                cur_lo, cur_hi = a, b
            else:
                cur_hi = max(cur_hi, b)
        length += cur_hi - cur_lo
        total += (level - prev) * length
        prev = level
    return float(total)


# identity checks


def _two_sided(lhs_fn, rhs_fn, n, seed, key, workers, chunk=rngmod.DEFAULT_CHUNK) -> dict:
    lhs = _mean_report(lhs_fn, n, seed, (key, "lhs"), workers, chunk=chunk)
    rhs = _mean_report(rhs_fn, n, seed, (key, "rhs"), workers, chunk=chunk)
    return {"lhs": lhs, "rhs": rhs, "zscore": zscore(lhs, rhs)}


def time_change_panel(tail: TailLaw, combos, n: int, seed: int = 0, workers: int = 1) -> list[dict]:
    """Both sides of ``E[H(Y) 1{|Y_t|>x}] = x^-alpha E[H(x B^t Y) 1{x |Y_-t| > 1}]`` for many ``(H, t, x)``.

    The two sides use independent streams; all combinations share the same
    draws within a side.
    """
    alpha, norm = tail.alpha, tail.norm

    def lhs_chunk(r, size):
        y = tail.sample_y(r, size)
        return np.stack([h(y) * (y.norm_at(t, norm) > x) for h, t, x in combos], axis=1)

    def rhs_chunk(r, size):
        y = tail.sample_y(r, size)
        cols = []
        for h, t, x in combos:
            moved = y.shift(t).scale(x)
            cols.append(x ** (-alpha) * h(moved) * (x * y.norm_at(-t, norm) > 1))
        return np.stack(cols, axis=1)

    lv = rngmod.replicate_concat(lhs_chunk, n, seed, ("tcf", tail.name, "lhs"), workers, tail.chunk)
    rv = rngmod.replicate_concat(rhs_chunk, n, seed, ("tcf", tail.name, "rhs"), workers, tail.chunk)
    out = []
    for k, (h, t, x) in enumerate(combos):
        lhs = EstimatorReport.from_values(lv[:, k], seed)
        rhs = EstimatorReport.from_values(rv[:, k], seed)
        out.append({"H": h.name, "t": t, "x": x, "lhs": lhs, "rhs": rhs, "zscore": zscore(lhs, rhs)})
    return out


def standard_panel(norm=NormChoice.SUP_ABS) -> list[tuple[PathFunctional, float, float]]:
    """Fixed set of 20 ``(H, t, x)`` combinations: five bounded functionals times four ``(t, x)``."""
    hs = [constant(1.0), exceedance_capped(1.0, 10.0, norm), sup_exceeds(-1.0, 1.0, 1.5, norm),
          value_clipped(0.5), infargmax_before(0.0, norm)]
    tx = [(0.5, 1.5), (-1.0, 2.0), (2.0, 1.2), (-0.25, 3.0)]
    return [(h, t, x) for h in hs for t, x in tx]


def check_time_change(tail: TailLaw, H: PathFunctional, t: float, x: float, n: int,
                      seed: int = 0, workers: int = 1) -> dict:
    if not x > 0:
        raise ValueError("x must be positive")
    return time_change_panel(tail, [(H, t, x)], n, seed, workers)[0]


def _check_zero_homogeneous(H: PathFunctional, sampler: Sampler, seed: int) -> None:
    r = rngmod.substream(seed, "homogeneity")
    z = sampler(r, 200)
    c = np.exp(r.normal(0, 2, len(z)))
    if not np.allclose(H(z), H(z.scale(c)), rtol=1e-9, atol=1e-12):
        raise ValueError(f"functional {H.name} is not 0-homogeneous")


def check_tilt_shift(spectral: SpectralLaw, H0: PathFunctional, t: float, n: int,
                     seed: int = 0, workers: int = 1) -> dict:
    """``E[|Z_t|^alpha H0(Z)] = E[|Z_0|^alpha H0(B^t Z)]`` for 0-homogeneous H0."""
    _check_zero_homogeneous(H0, spectral.sample_z, seed)
    alpha, norm = spectral.alpha, spectral.norm

    def lhs(r, size):
        z = spectral.sample_z(r, size)
        return z.norm_at(t, norm) ** alpha * H0(z)

    def rhs(r, size):
        z = spectral.sample_z(r, size)
        return z.norm_at(0.0, norm) ** alpha * H0(z.shift(t))

    return _two_sided(lhs, rhs, n, seed, ("tilt-shift", spectral.name, H0.name, t), workers, spectral.chunk)


def check_independence_tilted(tail: TailLaw, S: PathFunctional, x: float, n: int,
                              seed: int = 0, workers: int = 1) -> dict:
    """Paired check of ``E[S(Y) 1{Y*>x} / E(Y)] = x^-alpha E[S(Y) / E(Y)]``."""
    if not x > 1:
        raise ValueError("x must exceed 1")
    norm = tail.norm

    def chunk(r, size):
        y = tail.sample_y(r, size)
        base = S(y) / y.exceedance(1.0, norm)
        return np.stack([base * (y.sup_all(norm) > x), x ** (-tail.alpha) * base], axis=1)

    vals = rngmod.replicate_concat(chunk, n, seed, ("indep-tilted", tail.name, S.name, x), workers, tail.chunk)
    lhs = EstimatorReport.from_values(vals[:, 0], seed)
    rhs = EstimatorReport.from_values(vals[:, 1], seed)
    diff = EstimatorReport.from_values(vals[:, 0] - vals[:, 1], seed)
    return {"lhs": lhs, "rhs": rhs, "zscore": diff.zscore(0.0), "paired_difference": diff}


def _forward_integral(batch: PathBatch, signed: bool, norm) -> np.ndarray:
    right = np.concatenate([batch.breaks[:, 1:], batch.ends[:, None]], axis=1)
    pos_len = np.clip(right, 0.0, None) - np.clip(batch.breaks, 0.0, None)
    vals = batch.values[:, :, 0] if signed else batch.norms(norm)
    return np.sum(pos_len * vals, axis=1)


def _pos_power(x: np.ndarray, p: float) -> np.ndarray:
    """``x_+^p`` with the convention ``x_+^p = 0`` for ``x <= 0`` (also when p <= 0)."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** p
    return out


def check_forward_identity(theta_sampler, q_sampler: Sampler, theta, alpha: float, n: int,
                           seed: int = 0, workers: int = 1, signed: bool = False,
                           norm=NormChoice.SUP_ABS) -> dict:
    """``theta E[(int |Q|)^alpha] = alpha E[(int_0^inf |Theta|)^(alpha-1)]``.

    With ``signed=True`` (scalar paths) the variant without absolute values is
    checked: ``theta E[(int Q)_+^alpha] = alpha E[Theta_0 (int_0^inf Theta)_+^(alpha-1)]``.
    ``theta`` may be a number or an `EstimatorReport` (its error then enters the z-score).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    chunk_size = rngmod.DEFAULT_CHUNK
    if isinstance(theta_sampler, TailLaw):
        theta_sampler, chunk_size = theta_sampler.sample_theta, theta_sampler.chunk
    th_est = theta.estimate if isinstance(theta, EstimatorReport) else float(theta)
    th_se = theta.std_error if isinstance(theta, EstimatorReport) else 0.0

    def lhs_chunk(r, size):
        q = q_sampler(r, size)
        if signed:
            total = np.sum(q.lengths * q.values[:, :, 0], axis=1)
            return _pos_power(total, alpha)
        return q.lp_power(1.0, norm) ** alpha

    def rhs_chunk(r, size):
        th = theta_sampler(r, size)
        fwd = _forward_integral(th, signed, norm)
        if signed:
            return alpha * th.value_at(0.0)[:, 0] * _pos_power(fwd, alpha - 1)
        return alpha * fwd ** (alpha - 1)

    key = ("forward", signed, alpha)
    qm = _mean_report(lhs_chunk, n, seed, key + ("lhs",), workers, chunk=chunk_size)
    lhs = EstimatorReport(th_est * qm.estimate, math.hypot(th_est * qm.std_error, qm.estimate * th_se),
                          n, seed, {"q_moment": qm.to_dict()})
    rhs = _mean_report(rhs_chunk, n, seed, key + ("rhs",), workers, chunk=chunk_size)
    return {"lhs": lhs, "rhs": rhs, "zscore": zscore(lhs, rhs)}


def check_q_normalization(q_sampler: Sampler, theta, alpha: float, n: int, seed: int = 0,
                          workers: int = 1, norm=NormChoice.SUP_ABS, chunk: int = rngmod.DEFAULT_CHUNK) -> dict:
    """z-score of ``theta * int E|Q_t|^alpha dt`` against 1."""
    th_est = theta.estimate if isinstance(theta, EstimatorReport) else float(theta)
    th_se = theta.std_error if isinstance(theta, EstimatorReport) else 0.0
    qm = _mean_report(lambda r, s: q_sampler(r, s).lp_power(alpha, norm), n, seed, "q-normalization", workers,
                      chunk=chunk)
    est = th_est * qm.estimate
    se = math.hypot(th_est * qm.std_error, qm.estimate * th_se)
    rep = EstimatorReport(est, se, n, seed, {"q_alpha_mass": qm.to_dict()})
    return {"product": rep, "zscore": rep.zscore(1.0)}


# anchoring


ANCHORS = ("infargmax", "first_exceedance")


def anchor_density(tail: TailLaw, anchor: str, t_grid, n: int, seed: int = 0, workers: int = 1,
                   theta: float | None = None) -> dict:
    """Monte Carlo density of the anchor of the tail process on ``t_grid``.

    ``infargmax`` uses ``E[|Theta_{I(Theta)-t}|^alpha / ||Theta||_alpha^alpha]``;
    ``first_exceedance`` uses ``theta P(Y |Q_{I(YQ)-t}| > 1)`` and needs a Q sampler.
    """
    if anchor not in ANCHORS:
        raise ValueError(f"anchor must be one of {ANCHORS}")
    t_grid = np.asarray(t_grid, dtype=float)
    alpha, norm = tail.alpha, tail.norm
    if anchor == "first_exceedance":
        if tail.sample_q is None:
            raise ValueError("first_exceedance density needs a Q sampler")
        th = theta if theta is not None else tail.theta_closed_form
        if th is None:
            raise ValueError("first_exceedance density needs theta")

        def chunk(r, size):
            q = tail.sample_q(r, size)
            y = pareto_sample(alpha, r, size)
            anchor_t = q.scale(y).first_exceedance(1.0, norm)
            if not np.all(np.isfinite(anchor_t)):
                raise ValueError("anchor is infinite on a draw")
            cols = [th * (y * q.norm_at(anchor_t - t, norm) > 1) for t in t_grid]
            return np.stack(cols, axis=1)
    else:
        def chunk(r, size):
            thb = tail.sample_theta(r, size)
            anchor_t = thb.infargmax(norm)
            mass = thb.lp_power(alpha, norm)
            cols = [thb.norm_at(anchor_t - t, norm) ** alpha / mass for t in t_grid]
            return np.stack(cols, axis=1)

    vals = rngmod.replicate_concat(chunk, n, seed, ("anchor", anchor, tail.name), workers, tail.chunk)
    f_hat = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n)
    mass = float(integrate.trapezoid(f_hat, t_grid)) if len(t_grid) > 1 else float("nan")
    out = {"t": t_grid, "f_hat": f_hat, "se": se, "mass": mass, "n": n, "seed": seed}
    if anchor == "first_exceedance":
        out["continuity_probability"] = float(f_hat[np.argmin(np.abs(t_grid))] / th) if len(t_grid) else None
    return out


def anchor_table_csv(table: dict) -> str:
    lines = ["t,f_hat,se"]
    for t, f, s in zip(table["t"], table["f_hat"], table["se"]):
        lines.append(f"{t!r},{f!r},{s!r}")
    return "\n".join(lines) + "\n"


# structural checks on a tail law


def pareto_independence_check(tail: TailLaw, n: int = 100_000, seed: int = 0,
                              functional: PathFunctional | None = None, workers: int = 1) -> dict:
    """KS test of ``|Y_0|`` against Pareto(alpha) and correlation of ``|Y_0|`` with a bounded
    functional of ``Theta = Y / |Y_0|``."""
    func = functional or exceedance_capped(0.5, 10.0, tail.norm)

    def chunk(r, size):
        y = tail.sample_y(r, size)
        y0 = y.norm_at(0.0, tail.norm)
        theta = y.divide(y0)
        dev = np.abs(theta.norm_at(0.0, tail.norm) - 1.0)
        return np.stack([y0, func(theta), dev], axis=1)

    cols = rngmod.replicate_concat(chunk, n, seed, ("pareto-independence", tail.name), workers,
                                     tail.chunk)
    y0, h, dev = cols[:, 0], cols[:, 1], cols[:, 2]
    ks = stats.kstest(y0, stats.pareto(tail.alpha).cdf)
    # correlate a bounded transform of |Y_0| so the standard error is finite for every alpha
    u = 1.0 - y0 ** (-tail.alpha)
    if np.std(h) == 0:
        corr, se = 0.0, 1.0 / math.sqrt(n)
    else:
        corr = float(np.corrcoef(u, h)[0, 1])
        se = 1.0 / math.sqrt(n)
    theta0_ok = bool(np.all(dev <= 1e-12))
    return {"ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue), "correlation": corr,
            "correlation_se": se, "correlation_z": corr / se,
            "correlation_pvalue": float(2 * stats.norm.sf(abs(corr / se))), "theta0_unit": theta0_ok,
            "y0_above_one": bool(np.all(y0 > 1)), "n": n}
