"""Windowed simulators for stationary regularly varying process classes.

Each class pairs a simulator with its analytic `TailLaw`:

* `ShotNoise` -- infinite source Poisson model, exact stationary start.
* `FunctionalMA` -- ``X_t = sum f(t - T_k) V_k`` over unit-rate Poisson points.
* `MaxStableM3` -- mixed moving maxima, exact on a window by dominated stopping.
* `BrownResnick` -- ``exp(W_t - alpha c|t|/2)`` atoms on a time grid.
* `SumStableSeries` -- LePage-type series with K points.

Simulators are batched: ``simulate_batch(rng, n, t_sim)`` returns a `PathBatch`
of n independent windows ``[0, t_sim)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng as rngmod
from .pathkit import (INF, NormChoice, PathBatch, PiecewiseConstantPath, batch_from_jumps,
                      pointwise_max, restrict)
from .tailcore import (Sampler, TailLaw, pareto_sample, sign_sample, sliding_sup_integral,
                       tail_from_q)


class UnsupportedConfiguration(ValueError):
    pass


# session-length laws


class EtaLaw:
    """Positive session-length law with finite mean.

    Subclasses provide ``sample``, ``mean`` and ``sample_length_biased`` (the law
    with density ``l P(dl) / E[eta]``).
    """
    name = "eta"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample_length_biased(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantEta(EtaLaw):
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("session length must be positive")

    name = property(lambda self: f"const({self.value:g})")
    mean = property(lambda self: float(self.value))

    def sample(self, rng, n):
        return np.full(n, float(self.value))

    sample_length_biased = sample

    def to_dict(self):
        return {"law": "constant", "value": self.value}


@dataclass(frozen=True)
class ExpEta(EtaLaw):
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    name = property(lambda self: f"exp({self.rate:g})")
    mean = property(lambda self: 1.0 / self.rate)

    def sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)

    def sample_length_biased(self, rng, n):
        return rng.gamma(2.0, 1.0 / self.rate, n)

    def to_dict(self):
        return {"law": "exp", "rate": self.rate}


@dataclass(frozen=True)
class UniformEta(EtaLaw):
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not 0 <= self.low < self.high:
            raise ValueError("need 0 <= low < high")

    name = property(lambda self: f"uniform({self.low:g},{self.high:g})")
    mean = property(lambda self: 0.5 * (self.low + self.high))

    def sample(self, rng, n):
        # 1 - U keeps draws strictly positive when low = 0
        return self.high - (self.high - self.low) * rng.random(n)

    def sample_length_biased(self, rng, n):
        a2, b2 = self.low ** 2, self.high ** 2
        return np.sqrt(b2 - (b2 - a2) * rng.random(n))

    def to_dict(self):
        return {"law": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class ParetoEta(EtaLaw):
    shape: float = 2.5
    scale: float = 1.0

    def __post_init__(self):
        if not self.shape > 1:
            raise ValueError("Pareto session lengths need shape > 1 for a finite mean")

    name = property(lambda self: f"pareto({self.shape:g},{self.scale:g})")
    mean = property(lambda self: self.shape * self.scale / (self.shape - 1))

    def sample(self, rng, n):
        return self.scale * pareto_sample(self.shape, rng, n)

    def sample_length_biased(self, rng, n):
        return self.scale * pareto_sample(self.shape - 1, rng, n)

    def to_dict(self):
        return {"law": "pareto", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class SampledEta(EtaLaw):
    """Generic law given by a sampler; length bias by weighted resampling of a pool."""
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    label: str = "sampled"
    pool: int = 200_000
    pool_seed: int = 0

    name = property(lambda self: self.label)

    def _pool(self) -> np.ndarray:
        cached = self.__dict__.get("_cache")
        if cached is None:
            cached = np.asarray(self.sampler(rngmod.substream(self.pool_seed, "eta-pool", self.label), self.pool),
                                dtype=float)
            if np.any(cached <= 0):
                raise ValueError("session lengths must be positive")
            object.__setattr__(self, "_cache", cached)
        return cached

    @property
    def mean(self):
        return float(self._pool().mean())

    def sample(self, rng, n):
        out = np.asarray(self.sampler(rng, n), dtype=float)
        if np.any(out <= 0):
            raise ValueError("session lengths must be positive")
        return out

    def sample_length_biased(self, rng, n):
        pool = self._pool()
        return rng.choice(pool, size=n, p=pool / pool.sum())

    def to_dict(self):
        return {"law": "sampled", "label": self.label}


ETA_LAWS = {"constant": ConstantEta, "exp": ExpEta, "uniform": UniformEta, "pareto": ParetoEta}


def eta_from_dict(spec: dict) -> EtaLaw:
    spec = dict(spec)
    kind = spec.pop("law", None)
    if kind not in ETA_LAWS:
        raise ValueError(f"unknown session-length law {kind!r}; expected one of {sorted(ETA_LAWS)}")
    return ETA_LAWS[kind](**spec)


@dataclass(frozen=True)
class JumpLaw:
    """``V = eps * Pareto(alpha)`` with ``P(eps = 1) = p``, or a constant ``V``.

    A constant law still declares ``alpha`` for bookkeeping; it is not regularly varying.
    """
    alpha: float
    p: float = 1.0
    constant: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.p <= 1:
            raise ValueError("skewness p must lie in [0, 1]")

    def sample(self, rng, n):
        if self.constant is not None:
            return np.full(n, float(self.constant))
        return sign_sample(self.p, rng, n) * pareto_sample(self.alpha, rng, n)

    def to_dict(self):
        return {"alpha": self.alpha, "p": self.p, "constant": self.constant}


@dataclass
class SimulatedPath:
    path: PiecewiseConstantPath
    model: str
    diagnostics: dict = field(default_factory=dict)


def _check_window(t_sim: float) -> None:
    if not t_sim > 0:
        raise ValueError("simulation window length must be positive")


def _top_quantile(fn, n: int, seed: int, key, level: float, chunk: int = 1_000_000) -> float:
    """Exact empirical (1 - level) quantile of ``n`` draws without storing them all.

    The k-th largest overall value is among the k largest of every chunk.
    """
    k = max(int(math.floor(n * level)), 1)
    keep = []
    for part in rngmod.replicate(lambda r, s: fn(r, s), n, seed, key, chunk=chunk):
        kk = min(k, part.size)
        keep.append(np.partition(part, part.size - kk)[part.size - kk:])
    top = np.sort(np.concatenate(keep))[::-1]
    return float(top[k - 1])


class ProcessModel:
    """Common interface of the process classes."""
    kind = "process"
    alpha: float

    @property
    def theta(self) -> float | None:
        return None

    def simulate_batch(self, rng, n: int, t_sim: float) -> PathBatch:
        raise NotImplementedError

    def simulate(self, rng, t_sim: float) -> SimulatedPath:
        batch = self.simulate_batch(rng, 1, t_sim)
        return SimulatedPath(batch[0], self.fingerprint(), {"t_sim": t_sim})

    def window_sup(self, rng, n: int, t_sim: float) -> np.ndarray:
        return self.simulate_batch(rng, n, t_sim).sup(0.0, t_sim)

    def marginal(self, rng, n: int) -> np.ndarray:
        return self.simulate_batch(rng, n, 1.0).value_at(0.0)[:, 0]

    def tail_law(self) -> TailLaw:
        raise NotImplementedError

    def coupled_batch(self, rng, n: int, t_sim: float, m: float) -> tuple[PathBatch, PathBatch]:
        raise UnsupportedConfiguration(f"m-dependent truncation is not available for {self.kind}")

    def to_dict(self) -> dict:
        raise NotImplementedError

    def fingerprint(self) -> str:
        return f"{self.kind}:{sorted(self.to_dict().items())!r}"

    def calibrate_scale(self, T: float, n: int = 2_000_000, seed: int = 0) -> float:
        """``a_T`` with ``T P(|X_0| > a_T) = 1`` as an empirical quantile of ``n`` marginal draws."""
        if T <= 1:
            raise ValueError("T must exceed 1")
        return _top_quantile(lambda r, s: np.abs(self.marginal(r, s)), n, seed,
                             ("scale", self.fingerprint(), float(T)), 1.0 / T)


# shot noise


@dataclass
class SessionTable:
    row: np.ndarray
    start: np.ndarray
    length: np.ndarray
    value: np.ndarray

    def end(self, m: float | None = None) -> np.ndarray:
        return self.start + (self.length if m is None else np.minimum(self.length, m))


@dataclass
class ShotNoise(ProcessModel):
    """``X_t = sum_j V_j 1{T_j <= t < T_j + eta_j}`` with unit-rate arrivals."""
    eta: EtaLaw
    jumps: JumpLaw
    truncation: float | None = None
    kind = "shot_noise"

    @property
    def alpha(self) -> float:
        return self.jumps.alpha

    @property
    def theta(self) -> float:
        return 1.0 / self.eta.mean

    def sessions(self, rng, n: int, t_sim: float) -> SessionTable:
        """Sessions alive at 0 (age ``U L`` with L length-biased) and arrivals on ``(0, t_sim]``."""
        _check_window(t_sim)
        k0 = rng.poisson(self.eta.mean, n)
        total0 = int(k0.sum())
        lengths0 = self.eta.sample_length_biased(rng, total0)
        ages = rng.random(total0) * lengths0
        k1 = rng.poisson(t_sim, n)
        total1 = int(k1.sum())
        births = t_sim - t_sim * rng.random(total1)
        lengths1 = self.eta.sample(rng, total1)
        if np.any(lengths1 <= 0) or np.any(lengths0 <= 0):
            raise ValueError("session-length sampler returned a non-positive value")
        values = self.jumps.sample(rng, total0 + total1)
        row = np.concatenate([np.repeat(np.arange(n), k0), np.repeat(np.arange(n), k1)])
        return SessionTable(row, np.concatenate([-ages, births]), np.concatenate([lengths0, lengths1]), values)

    def paths_from_sessions(self, table: SessionTable, n: int, t_sim: float, m: float | None = None) -> PathBatch:
        m = self.truncation if m is None else m
        end = table.end(m)
        alive = end > 0
        row = table.row[alive]
        times = np.concatenate([table.start[alive], end[alive]])
        jumps = np.concatenate([table.value[alive], -table.value[alive]])
        return batch_from_jumps(np.concatenate([row, row]), times, jumps, n, 0.0, t_sim)

    def simulate_batch(self, rng, n, t_sim):
        return self.paths_from_sessions(self.sessions(rng, n, t_sim), n, t_sim)

    def simulate(self, rng, t_sim) -> SimulatedPath:
        table = self.sessions(rng, 1, t_sim)
        batch = self.paths_from_sessions(table, 1, t_sim)
        diag = {"t_sim": t_sim, "sessions": int(table.row.size),
                "sessions_at_zero": int(np.sum(table.start <= 0)), "truncation": self.truncation}
        sim = SimulatedPath(batch[0], self.fingerprint(), diag)
        sim.diagnostics["session_table"] = table
        return sim

    def coupled_batch(self, rng, n, t_sim, m):
        if not m > 0:
            raise ValueError("m must be positive")
        table = self.sessions(rng, n, t_sim)
        return self.paths_from_sessions(table, n, t_sim), self.paths_from_sessions(table, n, t_sim, m)

    def marginal(self, rng, n):
        k = rng.poisson(self.eta.mean, n)
        if self.truncation is not None:
            # a session alive at 0 survives truncation iff its age is below m
            lengths = self.eta.sample_length_biased(rng, int(k.sum()))
            ages = rng.random(lengths.size) * lengths
            keep = ages < np.minimum(lengths, self.truncation)
        else:
            keep = np.ones(int(k.sum()), dtype=bool)
        v = self.jumps.sample(rng, int(k.sum()))
        return np.bincount(np.repeat(np.arange(n), k), weights=np.where(keep, v, 0.0), minlength=n)

    def tail_law(self) -> TailLaw:
        return shot_noise_tail_law(self.eta, self.alpha, self.jumps.p)

    def to_dict(self):
        return {"class": self.kind, "eta": self.eta.to_dict(), "jumps": self.jumps.to_dict(),
                "truncation": self.truncation}


def sim_shot_noise(eta_law: EtaLaw, v_law: JumpLaw, t_sim: float, rng) -> SimulatedPath:
    return ShotNoise(eta_law, v_law).simulate(rng, t_sim)


def shot_noise_tail_law(eta_law: EtaLaw, alpha: float, p: float = 1.0) -> TailLaw:
    """``Y = |Y_0| eps 1[-zeta', zeta)`` with ``(zeta', zeta) = (U L, (1 - U) L)``, L length-biased."""
    def sample_theta(rng, n):
        length = eta_law.sample_length_biased(rng, n)
        back = rng.random(n) * length
        eps = sign_sample(p, rng, n) * np.ones(n)
        breaks = np.stack([-back, length - back], axis=1)
        values = np.stack([eps, np.zeros(n)], axis=1)
        return PathBatch(breaks, values, length - back)

    def sample_q(rng, n):
        length = eta_law.sample(rng, n)
        eps = sign_sample(p, rng, n) * np.ones(n)
        return PathBatch(np.zeros((n, 1)), eps[:, None], length)

    return TailLaw(alpha, sample_theta, sample_q, 1.0 / eta_law.mean, INF, NormChoice.SUP_ABS,
                   f"shot-noise[{eta_law.name},a={alpha:g},p={p:g}]",
                   {"eta": eta_law.to_dict(), "p": p})


# functional moving averages


def _shape_events(shape: PiecewiseConstantPath):
    """Offsets and increments turning a compactly supported shape into jump events."""
    vals = shape.values[:, 0]
    offsets = np.append(shape.breakpoints, shape.window_end)
    incr = np.diff(np.concatenate(([0.0], vals, [0.0])))
    return offsets, incr


def _support(shape: PiecewiseConstantPath) -> tuple[float, float]:
    live = shape.values[:, 0] != 0
    if not live.any():
        raise ValueError("shape is identically zero")
    idx = np.flatnonzero(live)
    right = np.append(shape.breakpoints[1:], shape.window_end)
    return float(shape.breakpoints[idx[0]]), float(right[idx[-1]])


@dataclass
class FunctionalMA(ProcessModel):
    """``X_t = sum_k f(t - T_k) V_k`` for unit-rate Poisson points ``T_k`` (alpha < 1 only)."""
    shape: PiecewiseConstantPath
    jumps: JumpLaw
    truncation: float | None = None
    kind = "functional_ma"

    def __post_init__(self):
        if self.jumps.alpha >= 1:
            raise UnsupportedConfiguration(
                "functional moving averages are only supported for alpha < 1: the truncation bound "
                "behind the simulator is available in that range only; use shot noise for alpha >= 1")
        if self.shape.dim != 1:
            raise ValueError("shape must be scalar")
        if np.any(self.shape.outside != 0):
            raise ValueError("shape must vanish outside its window")

    @property
    def alpha(self) -> float:
        return self.jumps.alpha

    def effective_shape(self, m: float | None = None) -> PiecewiseConstantPath:
        m = self.truncation if m is None else m
        if m is None:
            return self.shape
        if not m > 0:
            raise ValueError("m must be positive")
        lo, hi = max(self.shape.window_start, -m), min(self.shape.window_end, m)
        if lo >= hi:
            return PiecewiseConstantPath([lo], [0.0], lo + 1.0)
        return restrict(self.shape, lo, hi)

    @property
    def theta(self) -> float:
        return ma_theta(self.shape, self.alpha)

    def _points(self, rng, n, t_sim):
        lo, hi = _support(self.shape)
        span = t_sim + hi - lo
        k = rng.poisson(span, n)
        pts = (t_sim - lo) - span * rng.random(int(k.sum()))
        return np.repeat(np.arange(n), k), pts, self.jumps.sample(rng, pts.size)

    def _paths(self, row, pts, v, n, t_sim, shape):
        offsets, incr = _shape_events(shape)
        times = (pts[:, None] + offsets[None, :]).ravel()
        jumps = (v[:, None] * incr[None, :]).ravel()
        rows = np.repeat(row, offsets.size)
        return batch_from_jumps(rows, times, jumps, n, 0.0, t_sim)

    def simulate_batch(self, rng, n, t_sim):
        _check_window(t_sim)
        row, pts, v = self._points(rng, n, t_sim)
        return self._paths(row, pts, v, n, t_sim, self.effective_shape())

    def coupled_batch(self, rng, n, t_sim, m):
        _check_window(t_sim)
        row, pts, v = self._points(rng, n, t_sim)
        return (self._paths(row, pts, v, n, t_sim, self.effective_shape()),
                self._paths(row, pts, v, n, t_sim, self.effective_shape(m)))

    def marginal(self, rng, n):
        shape = self.effective_shape()
        lo, hi = _support(self.shape)
        k = rng.poisson(hi - lo, n)
        pts = -lo - (hi - lo) * rng.random(int(k.sum()))
        contrib = shape.value_at(-pts)[:, 0] * self.jumps.sample(rng, pts.size)
        return np.bincount(np.repeat(np.arange(n), k), weights=contrib, minlength=n)

    def tail_law(self) -> TailLaw:
        return ma_tail_law(self.shape, self.alpha, self.jumps.p)

    def to_dict(self):
        return {"class": self.kind, "shape": self.shape.to_dict(), "jumps": self.jumps.to_dict(),
                "truncation": self.truncation}


def sim_functional_ma(shape: PiecewiseConstantPath, v_law: JumpLaw, t_sim: float, rng) -> SimulatedPath:
    return FunctionalMA(shape, v_law).simulate(rng, t_sim)


def ma_theta(shape: PiecewiseConstantPath, alpha: float) -> float:
    """``sup|f|^alpha / int |f|^alpha``, exact for step shapes."""
    nrm = np.abs(shape.values[:, 0])
    return float(nrm.max() ** alpha / np.sum(shape.lengths * nrm ** alpha))


def ma_tail_law(shape: PiecewiseConstantPath, alpha: float, p: float = 1.0, chunk: int | None = None) -> TailLaw:
    """``Y_t = |Y_0| eps f(t - T) / |f(-T)|`` with T of density proportional to ``|f(-t)|^alpha``."""
    if np.any(shape.outside != 0):
        raise ValueError("shape must vanish outside its window")
    top = float(np.abs(shape.values[:, 0]).max())
    if top == 0:
        raise ValueError("shape is identically zero")
    q_shape = PathBatch.repeat(shape, 1).divide(top)

    def sample_q(rng, n):
        eps = sign_sample(p, rng, n) * np.ones(n)
        return PathBatch(np.repeat(q_shape.breaks, n, axis=0), q_shape.values[0][None] * eps[:, None, None],
                         np.full(n, shape.window_end))

    theta = ma_theta(shape, alpha)
    radius = max(abs(shape.window_start), abs(shape.window_end))
    # every Q draw has the same alpha-mass, so the tilt is the identity
    law = tail_from_q(sample_q, alpha, theta, support_radius=2 * radius, q_tilted=sample_q, check_n=0,
                      name=f"ma[m={len(shape)},a={alpha:g},p={p:g}]")
    law.meta.update({"shape_intervals": len(shape), "p": p})
    law.chunk = chunk or max(1, min(rngmod.DEFAULT_CHUNK, 2_000_000 // len(shape)))
    return law


# max-stable mixed moving maxima


@dataclass
class MaxStableM3(ProcessModel):
    """``eta_t = max_i P_i Q_i(t - T_i)`` with points of intensity ``theta dt x alpha u^(-alpha-1) du``.

    ``q_support`` bounds the support of every Q draw.
    """
    q_law: Sampler
    theta_value: float
    alpha: float
    q_support: tuple[float, float]
    label: str = "m3"
    components: tuple | None = None
    kind = "max_stable_m3"

    def __post_init__(self):
        if not self.theta_value > 0:
            raise ValueError("theta must be positive")
        lo, hi = self.q_support
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise UnsupportedConfiguration("M3 simulation needs Q with compact support")

    @property
    def theta(self) -> float:
        return self.theta_value

    def sup_moment(self, width: float) -> float:
        return _components_sup_moment(self, width)

    def _rate(self, a: float, b: float) -> tuple[float, float, float]:
        lo, hi = self.q_support
        first, last = a - hi, b - lo
        return first, last, self.theta_value * (last - first)

    def window_sup(self, rng, n, t_sim=None, a: float = 0.0, b: float | None = None,
                   return_counts: bool = False):
        """Exact ``sup_[a, b] eta`` for n independent windows (``b`` defaults to ``t_sim``)."""
        b = t_sim if b is None else b
        if b < a:
            raise ValueError("need a <= b")
        first, last, rate = self._rate(a, b)
        best = np.zeros(n)
        gamma = np.zeros(n)
        counts = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        while active.size:
            gamma[active] += rng.exponential(1.0, active.size)
            p = (rate / gamma[active]) ** (1.0 / self.alpha)
            go = p > best[active]
            active, p = active[go], p[go]
            if not active.size:
                break
            t = first + (last - first) * rng.random(active.size)
            q = self.q_law(rng, active.size)
            val = p * q.sup(a - t, b - t)
            best[active] = np.maximum(best[active], val)
            counts[active] += 1
        return (best, counts) if return_counts else best

    def marginal(self, rng, n):
        return self.window_sup(rng, n, a=0.0, b=0.0)

    def simulate(self, rng, t_sim, max_points: int = 1_000_000) -> SimulatedPath:
        """Exact path on ``[0, t_sim)``; stops once the next point lies below the window minimum."""
        _check_window(t_sim)
        first, last, rate = self._rate(0.0, t_sim)
        env = PiecewiseConstantPath([0.0], [0.0], t_sim)
        gamma, used = 0.0, 0
        while True:
            gamma += rng.exponential()
            p = (rate / gamma) ** (1.0 / self.alpha)
            low = float(np.min(np.abs(env.values[:, 0])))
            if low > 0 and p < low:
                break
            t = first + (last - first) * rng.random()
            atom = self.q_law(rng, 1).shift(t).scale(p).restrict(0.0, t_sim)
            env = _envelope_max(env, atom)
            used += 1
            if used >= max_points:
                raise RuntimeError("M3 simulation did not stop; check the Q law")
        return SimulatedPath(env, self.fingerprint(), {"points_used": used, "stopping_level": p,
                                                       "t_sim": t_sim})

    def simulate_batch(self, rng, n, t_sim):
        return PathBatch.from_paths([self.simulate(rng, t_sim).path for _ in range(n)])

    def tail_law(self) -> TailLaw:
        lo, hi = self.q_support
        return tail_from_q(self.q_law, self.alpha, self.theta_value, support_radius=hi - lo,
                           mass_bound=hi - lo, check_n=0, name=f"m3[{self.label},a={self.alpha:g}]")

    def to_dict(self):
        return {"class": self.kind, "q": self.label, "theta": self.theta_value, "alpha": self.alpha,
                "q_support": list(self.q_support)}


def _envelope_max(env: PiecewiseConstantPath, atom: PathBatch) -> PiecewiseConstantPath:
    if not np.any(atom.lengths[0] > 0):
        return env
    return pointwise_max(env, atom[0])


def sim_max_stable_m3(q_law: Sampler, theta: float, alpha: float, q_support, t_sim: float, rng) -> SimulatedPath:
    return MaxStableM3(q_law, theta, alpha, tuple(q_support)).simulate(rng, t_sim)


def _components_sup_moment(model, width: float) -> float:
    """``theta int E[sup_{[-s, width - s]} |Q|^alpha] ds``, exact for a known finite mixture of Q shapes.

    For M3 this is ``-y^alpha log P(sup_[0, width] eta <= y)``; for the sum-stable
    series it is the limit of ``x^alpha P(sup_[0, width] |X| > x)``.
    """
    if not model.components:
        raise UnsupportedConfiguration("the Q law is not a known finite mixture of shapes")
    return model.theta_value * sum(p * sliding_sup_integral(q, model.alpha, width) for q, p in model.components)


def mixture_q_law(shapes: list[PiecewiseConstantPath], weights=None, label: str = "mixture"):
    """Q law drawing one of finitely many sup-normalized step shapes."""
    for s in shapes:
        if not math.isclose(float(np.abs(s.values[:, 0]).max()), 1.0, rel_tol=0, abs_tol=0):
            raise ValueError("every Q shape must have sup exactly 1")
    probs = np.full(len(shapes), 1.0 / len(shapes)) if weights is None else np.asarray(weights, float)
    probs = probs / probs.sum()
    bank = PathBatch.from_paths(shapes)

    def sample_q(rng, n):
        return bank[rng.choice(len(shapes), size=n, p=probs)]

    sample_q.__name__ = label
    lo = min(s.window_start for s in shapes)
    hi = max(s.window_end for s in shapes)
    return sample_q, probs, (lo, hi)


def mixture_alpha_mass(shapes, probs, alpha: float) -> float:
    return float(sum(p * np.sum(s.lengths * np.abs(s.values[:, 0]) ** alpha) for s, p in zip(shapes, probs)))


# Brown-Resnick type


@dataclass
class BrownResnick(ProcessModel):
    """Atoms ``exp(W_t - alpha c|t|/2)`` with W a two-sided Brownian motion of variance ``c|t|``.

    Paths live on the grid of step ``grid_step``; the tail law is truncated to
    ``[-radius, radius)``.  Window simulation uses sup-normalized atoms drawn by
    weighted resampling of a pool of ``pool`` atoms per chunk.
    """
    alpha: float = 1.0
    c: float = 4.0
    grid_step: float = 0.01
    radius: float = 6.0
    pool: int = 20_000
    kind = "max_stable_brown_resnick"

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ValueError("grid step must be positive")
        if not (self.alpha > 0 and self.c > 0 and self.radius > 0):
            raise ValueError("alpha, c and radius must be positive")

    @property
    def continuous_theta(self) -> float:
        """Reference value ``alpha^2 c / 2`` of the continuous-time model (the grid biases it down)."""
        return self.alpha ** 2 * self.c / 2

    def _log_atoms(self, rng, n, t0: float, cells: int, origin: float) -> np.ndarray:
        """``log Z`` on grid points ``t0 + k Delta`` with the Brownian motion pinned at ``origin``."""
        step = self.grid_step
        t = t0 + step * np.arange(cells)
        sd = math.sqrt(self.c * step)
        k0 = int(round((origin - t0) / step))
        out = np.empty((n, cells))
        right = cells - k0 - 1
        if right > 0:
            out[:, k0 + 1:] = np.cumsum(rng.normal(0.0, sd, (n, right)), axis=1)
        if k0 > 0:
            out[:, k0 - 1::-1] = np.cumsum(rng.normal(0.0, sd, (n, k0)), axis=1)
        out[:, k0] = 0.0
        return out - 0.5 * self.alpha * self.c * np.abs(t - t[k0])[None, :]

    def sample_theta(self, rng, n):
        cells = 2 * int(round(self.radius / self.grid_step))
        logz = self._log_atoms(rng, n, -self.radius, cells, 0.0)
        breaks = np.broadcast_to(-self.radius + self.grid_step * np.arange(cells), (n, cells)).copy()
        return PathBatch(breaks, np.exp(logz), np.full(n, self.radius))

    def tail_law(self) -> TailLaw:
        cells = 2 * int(round(self.radius / self.grid_step))
        law = TailLaw(self.alpha, self.sample_theta, None, None, self.radius, NormChoice.SUP_ABS,
                      f"brown-resnick[a={self.alpha:g},c={self.c:g},d={self.grid_step:g}]",
                      {"continuous_theta": self.continuous_theta})
        law.chunk = max(1, 2_000_000 // cells)
        return law

    def simulate_batch(self, rng, n, t_sim, return_diagnostics: bool = False):
        _check_window(t_sim)
        step = self.grid_step
        cells = max(int(round(t_sim / step)), 1)
        origin = step * (cells // 2)
        logz = self._log_atoms(rng, self.pool, 0.0, cells, origin)
        top = logz.max(axis=1)
        w = np.exp(self.alpha * top)
        c_alpha = float(w.mean())
        ess = float(w.sum() ** 2 / np.sum(w ** 2))
        probs = w / w.sum()
        shapes = np.exp(logz - top[:, None])
        scale = c_alpha ** (1.0 / self.alpha)
        env = np.zeros((n, cells))
        gamma = np.zeros(n)
        atoms = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        while active.size:
            gamma[active] += rng.exponential(1.0, active.size)
            p = scale * gamma[active] ** (-1.0 / self.alpha)
            go = p >= env[active].min(axis=1)
            active, p = active[go], p[go]
            if not active.size:
                break
            pick = rng.choice(self.pool, size=active.size, p=probs)
            env[active] = np.maximum(env[active], p[:, None] * shapes[pick])
            atoms[active] += 1
        breaks = np.broadcast_to(step * np.arange(cells), (n, cells)).copy()
        batch = PathBatch(breaks, env, np.full(n, step * cells))
        if return_diagnostics:
            return batch, {"c_alpha": c_alpha, "ess": ess, "pool": self.pool, "mean_atoms": float(atoms.mean())}
        return batch

    def marginal(self, rng, n):
        # a one-cell window: the atom is pinned at its only grid point, so Z = 1 there
        return self.simulate_batch(rng, n, self.grid_step).value_at(0.0)[:, 0]

    def to_dict(self):
        return {"class": self.kind, "alpha": self.alpha, "c": self.c, "grid_step": self.grid_step,
                "radius": self.radius, "pool": self.pool}


def sim_brown_resnick(c: float, alpha: float, t_sim: float, grid_step: float, rng, pool: int = 20_000) -> SimulatedPath:
    model = BrownResnick(alpha, c, grid_step, pool=pool)
    batch, diag = model.simulate_batch(rng, 1, t_sim, return_diagnostics=True)
    return SimulatedPath(batch[0], model.fingerprint(), diag)


# sum-stable series


@dataclass
class SumStableSeries(ProcessModel):
    """``X_t = sum_{i <= K} eps_i P_i Q_i(t - T_i)`` restricted to points that reach the window.

    ``P_i = (theta Lambda / Gamma_i)^(1/alpha)`` with Lambda the length of the
    relevant shift range.  Signs are Rademacher when ``symmetric``.
    """
    q_law: Sampler
    theta_value: float
    alpha: float
    q_support: tuple[float, float]
    symmetric: bool = True
    points: int = 64
    truncation: float | None = None
    label: str = "sum-stable"
    components: tuple | None = None
    kind = "sum_stable_series"

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError("sum-stable series need alpha in (0, 2)")
        if self.alpha >= 1 and not self.symmetric:
            raise UnsupportedConfiguration("alpha >= 1 requires a symmetric series")
        if self.points < 1:
            raise ValueError("need at least one point")

    @property
    def theta(self) -> float:
        return self.theta_value

    def sup_moment(self, width: float) -> float:
        return _components_sup_moment(self, width)

    def _atoms(self, rng, n, a, b, count):
        lo, hi = self.q_support
        first, last = a - hi, b - lo
        rate = self.theta_value * (last - first)
        gam = np.cumsum(rng.exponential(1.0, (n, count)), axis=1)
        p = (rate / gam) ** (1.0 / self.alpha)
        if self.symmetric:
            p = p * np.where(rng.random((n, count)) < 0.5, -1.0, 1.0)
        t = first + (last - first) * rng.random((n, count))
        q = self.q_law(rng, n * count)
        return p, t, q

    def _assemble(self, p, t, q, n, count_used, a, b, m=None):
        count = p.shape[1]
        if m is not None:
            q = q.restrict(-m, m)
        keep = np.tile(np.arange(count) < count_used, n)
        qk = q[np.flatnonzero(keep)]
        breaks = np.concatenate([qk.breaks, qk.ends[:, None]], axis=1) + t.ravel()[keep][:, None]
        vals = qk.values[:, :, 0]
        incr = np.diff(np.concatenate([np.zeros((len(qk), 1)), vals, np.zeros((len(qk), 1))], axis=1), axis=1)
        incr = incr * p.ravel()[keep][:, None]
        rows = np.repeat(np.repeat(np.arange(n), count_used), breaks.shape[1])
        # the window is extended past b so that the value at b itself is represented
        return batch_from_jumps(rows, breaks.ravel(), incr.ravel(), n, a, b + 1.0)

    def window_sups(self, rng, n, a: float, b: float, counts) -> dict:
        """``sup_[a, b] |X|`` for several truncation levels sharing the same atoms."""
        counts = sorted(set(int(k) for k in counts))
        p, t, q = self._atoms(rng, n, a, b, counts[-1])
        return {k: self._assemble(p, t, q, n, k, a, b).sup(a, b) for k in counts}

    def window_sup(self, rng, n, t_sim):
        return self.window_sups(rng, n, 0.0, t_sim, [self.points])[self.points]

    def simulate_batch(self, rng, n, t_sim):
        _check_window(t_sim)
        p, t, q = self._atoms(rng, n, 0.0, t_sim, self.points)
        return self._assemble(p, t, q, n, self.points, 0.0, t_sim, self.truncation).restrict(0.0, t_sim)

    def coupled_batch(self, rng, n, t_sim, m):
        _check_window(t_sim)
        p, t, q = self._atoms(rng, n, 0.0, t_sim, self.points)
        full = self._assemble(p, t, q, n, self.points, 0.0, t_sim, self.truncation).restrict(0.0, t_sim)
        cut = self._assemble(p, t, q, n, self.points, 0.0, t_sim, m).restrict(0.0, t_sim)
        return full, cut

    def simulate(self, rng, t_sim, threshold: float | None = None) -> SimulatedPath:
        sim = super().simulate(rng, t_sim)
        sim.diagnostics.update({"points": self.points})
        if threshold is not None:
            sim.diagnostics["remainder_order"] = remainder_order(threshold, self.points, self.alpha)
        return sim

    def marginal(self, rng, n):
        p, t, q = self._atoms(rng, n, 0.0, 0.0, self.points)
        return self._assemble(p, t, q, n, self.points, 0.0, 0.0, self.truncation).value_at(0.0)[:, 0]

    def tail_law(self) -> TailLaw:
        lo, hi = self.q_support
        q_law, p = self.q_law, 0.5 if self.symmetric else 1.0

        def signed_q(rng, n):
            q = q_law(rng, n)
            return q.scale(sign_sample(p, rng, n) * np.ones(n))

        return tail_from_q(signed_q, self.alpha, self.theta_value, support_radius=hi - lo,
                           mass_bound=hi - lo, check_n=0, name=f"sum-stable[{self.label},a={self.alpha:g},sym={self.symmetric}]")

    def to_dict(self):
        return {"class": self.kind, "q": self.label, "theta": self.theta_value, "alpha": self.alpha,
                "symmetric": self.symmetric, "points": self.points, "truncation": self.truncation}


def remainder_order(x: float, points: int, alpha: float) -> float:
    """Order ``x^(-K alpha)`` of the probability that the atoms past K matter above level x."""
    return float(x ** (-points * alpha))


def sim_sum_stable_series(q_law: Sampler, theta: float, alpha: float, q_support, t_sim: float, rng,
                          symmetric: bool = True, points: int = 64, threshold: float | None = None) -> SimulatedPath:
    return SumStableSeries(q_law, theta, alpha, tuple(q_support), symmetric, points).simulate(rng, t_sim, threshold)


def m_dependent_truncation(model: ProcessModel, m: float) -> ProcessModel:
    """Copy of ``model`` with sessions (or shapes) truncated to length / radius m."""
    if not m > 0:
        raise ValueError("m must be positive")
    if not hasattr(model, "truncation"):
        raise UnsupportedConfiguration(f"m-dependent truncation is not available for {model.kind}")
    return replace(model, truncation=m)


# built-in models


BOX = PiecewiseConstantPath.indicator(0.0, 1.0)
# a non-unimodal Q: peak on [0, 1), gap, lower plateau on [2, 3)
TWO_BUMP = PiecewiseConstantPath([0.0, 1.0, 2.0], [1.0, 0.0, 0.5], 3.0)


def exp_shape(step: float = 0.01, length: float = 25.0) -> PiecewiseConstantPath:
    """``e^{-t} 1{t >= 0}`` sampled at the left grid points on ``[0, length)``."""
    cells = int(round(length / step))
    return PiecewiseConstantPath.from_grid(0.0, step, np.exp(-step * np.arange(cells)))


def m3_zoo_model(alpha: float = 1.0) -> MaxStableM3:
    shapes = [BOX, TWO_BUMP]
    q_law, probs, support = mixture_q_law(shapes, label="box|two-bump")
    theta = 1.0 / mixture_alpha_mass(shapes, probs, alpha)
    return MaxStableM3(q_law, theta, alpha, support, "box|two-bump", tuple(zip(shapes, probs)))


def sum_stable_zoo_model(alpha: float = 0.7, symmetric: bool = True, points: int = 64) -> SumStableSeries:
    q_law, probs, support = mixture_q_law([BOX], label="box")
    return SumStableSeries(q_law, 1.0, alpha, support, symmetric, points, label="box",
                           components=tuple(zip([BOX], probs)))


def builtin_models() -> dict[str, ProcessModel]:
    return {
        "shot-noise-exp": ShotNoise(ExpEta(1.0), JumpLaw(1.5)),
        "functional-ma-box2": FunctionalMA(PiecewiseConstantPath.indicator(0.0, 2.0), JumpLaw(0.7, 0.5)),
        "m3-two-bump": m3_zoo_model(1.0),
        "brown-resnick": BrownResnick(1.0, 4.0, 0.01, 6.0),
        "sum-stable-box": sum_stable_zoo_model(0.7),
    }


_TAIL_LAW_FACTORIES: dict[str, Callable[[], TailLaw]] = {
    "shot-noise-const2": lambda: shot_noise_tail_law(ConstantEta(2.0), 1.5),
    "shot-noise-exp": lambda: shot_noise_tail_law(ExpEta(1.0), 1.5),
    "shot-noise-uniform-signed": lambda: shot_noise_tail_law(UniformEta(0.0, 1.0), 0.8, 0.7),
    "ma-box1": lambda: ma_tail_law(BOX, 0.5),
    "ma-box2": lambda: ma_tail_law(PiecewiseConstantPath.indicator(0.0, 2.0), 0.7),
    "ma-exp": lambda: ma_tail_law(exp_shape(0.01, 25.0), 0.5, chunk=1000),
    "m3-two-bump": lambda: m3_zoo_model(1.0).tail_law(),
    "brown-resnick": lambda: BrownResnick(1.0, 4.0, 0.01, 6.0).tail_law(),
    "sum-stable-box": lambda: sum_stable_zoo_model(0.7).tail_law(),
}
BUILTIN_TAIL_LAWS = tuple(_TAIL_LAW_FACTORIES)


def builtin_tail_law(name: str) -> TailLaw:
    if name not in _TAIL_LAW_FACTORIES:
        raise KeyError(f"unknown built-in tail law {name!r}; expected one of {list(BUILTIN_TAIL_LAWS)}")
    law = _TAIL_LAW_FACTORIES[name]()
    law.name = name
    return law


def builtin_tail_laws() -> dict[str, TailLaw]:
    """The tail-law zoo used by the identity checks."""
    return {name: builtin_tail_law(name) for name in BUILTIN_TAIL_LAWS}


MODEL_CLASSES = ("shot_noise", "functional_ma", "max_stable_m3", "max_stable_brown_resnick", "sum_stable_series")
