"""Block machinery: cluster extraction, empirical cluster measures and diagnostics.

A path on ``[0, T)`` is cut into ``floor(T / r_T)`` blocks of length ``r_T``;
each block is moved to start at 0 and divided by the scale ``a_T`` (or by a
threshold ``u_T``).  Block functionals summed over blocks and divided by
``T P(|X_0| > a_T)`` estimate the cluster measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import rng as rngmod
from .pathkit import INF, NormChoice, PathBatch, PiecewiseConstantPath, modulus_w_prime
from .procsim import ProcessModel, SimulatedPath
from .tailcore import EstimatorReport, PathFunctional, TailLaw, zscore


class InsufficientData(RuntimeError):
    pass


class UnderpoweredTest(RuntimeError):
    pass


# blocks


@dataclass
class ClusterBlocks:
    blocks: PathBatch
    scaled_times: np.ndarray
    scale: float
    r_T: float
    T: float
    threshold_mode: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i: int) -> PiecewiseConstantPath:
        return self.blocks[i]

    @property
    def T_used(self) -> float:
        return len(self) * self.r_T


def _as_path(path) -> PiecewiseConstantPath:
    return path.path if isinstance(path, SimulatedPath) else path


def extract_blocks(path, r_T: float, a_T: float | None = None, *, u_T: float | None = None,
                   T: float | None = None, phase: float = 0.0) -> ClusterBlocks:
    """Cut ``path`` on ``[phase, T)`` into full blocks of length ``r_T``, recentred and rescaled.

    Exactly one of ``a_T`` (scale) and ``u_T`` (threshold) must be given.
    """
    path = _as_path(path)
    T = path.window_end if T is None else float(T)
    if (a_T is None) == (u_T is None):
        raise ValueError("give exactly one of a_T and u_T")
    scale = float(a_T if a_T is not None else u_T)
    if not scale > 0:
        raise ValueError("the block scale must be positive")
    if not r_T > 0:
        raise ValueError("r_T must be positive")
    if r_T > T - phase:
        raise ValueError(f"r_T = {r_T} exceeds the usable window length {T - phase}")
    m = int(math.floor((T - phase) / r_T + 1e-12))
    edges = phase + r_T * np.arange(m + 1)
    bp = path.breakpoints
    inner = bp[(bp > edges[0]) & (bp < edges[-1])]
    cuts = np.unique(np.concatenate([edges[:-1], inner]))
    vals = path.value_at(cuts) / scale
    block = np.minimum(np.floor((cuts - phase) / r_T + 1e-12).astype(np.int64), m - 1)
    # a cut that rounds onto the next block edge belongs to that block
    block = np.where(cuts >= edges[block + 1], block + 1, block)
    counts = np.bincount(block, minlength=m)
    width = int(counts.max())
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    col = np.arange(cuts.size) - offsets[block]
    breaks = np.full((m, width), r_T)
    values = np.zeros((m, width, path.dim))
    breaks[block, col] = cuts - edges[block]
    values[block, col] = vals
    batch = PathBatch(breaks, values, np.full(m, r_T))
    meta = {"discarded_length": float(T - edges[-1]), "phase": phase, "blocks": m}
    return ClusterBlocks(batch, np.arange(1, m + 1) / m, scale, float(r_T), T, u_T is not None, meta)


# cluster functionals


@dataclass(frozen=True)
class ClusterFunctional(PathFunctional):
    pass


def K_e(norm=NormChoice.SUP_ABS) -> ClusterFunctional:
    return ClusterFunctional("K_e", lambda b: (b.sup_all(norm) > 1).astype(float), 1.0)


def K_exceed(x: float, norm=NormChoice.SUP_ABS) -> ClusterFunctional:
    return ClusterFunctional(f"K_exceed({x:g})", lambda b: (b.sup_all(norm) > x).astype(float), 1.0)


def K_log(norm=NormChoice.SUP_ABS) -> ClusterFunctional:
    def f(b):
        return b.integral(lambda v: np.log(np.maximum(v, 1.0)), norm)
    return ClusterFunctional("K_log", f, INF)


def K_log_squared(norm=NormChoice.SUP_ABS) -> ClusterFunctional:
    base = K_log(norm)
    return ClusterFunctional("K_log^2", lambda b: base(b) ** 2, INF)


def custom_functional(name: str, func: Callable[[PathBatch], np.ndarray], bound: float = INF) -> ClusterFunctional:
    return ClusterFunctional(name, func, bound)


def zero_functional() -> ClusterFunctional:
    return ClusterFunctional("zero", lambda b: np.zeros(len(b)), 0.0)


def check_shift_invariance(K: PathFunctional, batch: PathBatch, rng, atol: float = 1e-9) -> bool:
    t = rng.normal(0.0, 10.0, len(batch))
    return bool(np.allclose(K(batch), K(batch.shift(t)), rtol=1e-9, atol=atol))


# empirical cluster measure


def empirical_cluster_measure(blocks: ClusterBlocks, K: PathFunctional, marginal_tail: float | None = None,
                              n_boot: int = 1000, seed: int = 0) -> EstimatorReport:
    """``sum_i K(block_i) / (T_used * marginal_tail)`` with a block-bootstrap standard error.

    Without ``marginal_tail`` (threshold mode) the denominator is the empirical
    fraction of time spent above the threshold, computed from the same blocks;
    the bootstrap resamples numerator and denominator together.
    """
    kv = K(blocks.blocks)
    n = len(kv)
    if marginal_tail is None:
        above = blocks.blocks.exceedance(1.0)
        if above.sum() <= 0:
            raise ValueError("no time above the threshold: the plug-in denominator vanishes")

        def stat(idx):
            return kv[idx].sum() / above[idx].sum()
        mode = "plug-in"
        denom = float(above.sum() / blocks.T_used)
    else:
        if not 0 < marginal_tail < 1:
            raise ValueError("marginal_tail must lie in (0, 1)")
        scale = blocks.T_used * marginal_tail

        def stat(idx):
            return kv[idx].sum() / scale
        mode = "scale"
        denom = float(marginal_tail)
    est = float(stat(np.arange(n)))
    r = rngmod.substream(seed, "block-bootstrap", K.name)
    idx = r.integers(0, n, size=(n_boot, n))
    boot = np.array([stat(row) for row in idx]) if mode == "plug-in" else kv[idx].sum(axis=1) / scale
    se = float(np.std(boot, ddof=1)) if n_boot > 1 else INF
    meta = {"functional": K.name, "mode": mode, "blocks": n, "r_T": blocks.r_T, "T_used": blocks.T_used,
            "marginal_tail": denom, "n_boot": n_boot, "discarded_length": blocks.meta.get("discarded_length")}
    return EstimatorReport(est, se, n, seed, meta)


def block_count_threshold(path, r_T: float, k: int, norm=NormChoice.SUP_ABS) -> float:
    """Threshold with exactly ``k`` block sups above it (midpoint of the k-th and (k+1)-th largest)."""
    path = _as_path(path)
    m = int(math.floor(path.window_end / r_T + 1e-12))
    if not 0 < k < m:
        raise ValueError(f"k must lie strictly between 0 and the block count {m}")
    sups = np.sort(block_sups(PathBatch.from_paths([path]), r_T, m, norm)[0])[::-1]
    if sups[k - 1] == sups[k]:
        raise InsufficientData(f"tie at the {k}-th largest block sup")
    return float(0.5 * (sups[k - 1] + sups[k]))


def occupation_quantile(path, time_above: float, norm=NormChoice.SUP_ABS) -> float:
    """Level u such that the path spends (just under) ``time_above`` time strictly above u."""
    path = _as_path(path)
    nrm = path.norms(norm)
    order = np.argsort(-nrm, kind="stable")
    cum = np.cumsum(path.lengths[order])
    k = int(np.searchsorted(cum, time_above, side="left"))
    if k >= nrm.size:
        raise ValueError("time_above exceeds the window length")
    return float(nrm[order][k])


def gamma_variance_functional(tail: TailLaw, n: int, seed: int = 0, workers: int = 1) -> EstimatorReport:
    """``nu*(K_log^2) = 2 gamma^2 int E[(|Y_t| ^ 1)^alpha] dt`` with ``gamma = 1 / alpha``.

    ``meta`` carries the direct Monte Carlo value ``int E[log|Y_0| log+|Y_t|] dt``
    (an independent route to the same number) and the single-gamma variant
    ``gamma int E[(|Y_t| ^ 1)^alpha] dt``, which differs by the factor ``2 gamma``.
    """
    alpha, norm = tail.alpha, tail.norm
    gamma = 1.0 / alpha

    def trunc_chunk(r, size):
        y = tail.sample_y(r, size)
        return y.integral(lambda v: np.minimum(v, 1.0) ** alpha, norm)

    def direct_chunk(r, size):
        y = tail.sample_y(r, size)
        return np.log(y.norm_at(0.0, norm)) * y.integral(lambda v: np.log(np.maximum(v, 1.0)), norm)

    mass = EstimatorReport.from_values(
        rngmod.replicate_concat(trunc_chunk, n, seed, ("gamma-var", tail.name), workers, tail.chunk), seed)
    direct = EstimatorReport.from_values(
        rngmod.replicate_concat(direct_chunk, n, seed, ("gamma-var-direct", tail.name), workers, tail.chunk), seed)
    factor = 2 * gamma ** 2
    rep = EstimatorReport(factor * mass.estimate, factor * mass.std_error, n, seed,
                          {"truncated_mass": mass.to_dict(), "direct": direct.to_dict(),
                           "single_gamma_variant": gamma * mass.estimate, "gamma": gamma})
    rep.meta["zscore_vs_direct"] = zscore(rep, direct)
    return rep


# diagnostics


def wilson_interval(k: int, n: int) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _conditioned_windows(model: ProcessModel, half: float, level: float, n_events: int, seed: int,
                         key, batch: int = 2000, max_windows: int = 10_000_000):
    """Windows ``[0, 2 half)`` of ``model`` accepted when ``|X(half)| > level``."""
    r = rngmod.substream(seed, "conditioned", key)
    kept, tried = [], 0
    have = 0
    while have < n_events and tried < max_windows:
        b = model.simulate_batch(r, batch, 2 * half)
        tried += batch
        hit = np.flatnonzero(b.norm_at(half) > level)
        if hit.size:
            kept.append(b[hit])
            have += hit.size
    accepted = PathBatch.concat(kept) if kept else None
    return accepted, have, tried


def anticlustering_diagnostic(model: ProcessModel, a_T: float, r_T: float, t_grid, x: float = 1.0,
                              n_events: int = 500, seed: int = 0, max_windows: int = 2_000_000) -> list[dict]:
    """``P(sup_{t <= |s| <= r_T} |X_s| > a_T x | |X_0| > a_T)`` per t, with Wilson intervals."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(t_grid > r_T):
        raise ValueError("t_grid must lie in [0, r_T]")
    paths, have, tried = _conditioned_windows(model, r_T, a_T, n_events, seed, ("anticluster", a_T, r_T),
                                              max_windows=max_windows)
    if have < 100:
        raise InsufficientData(f"only {have} conditioning events in {tried} windows (need at least 100)")
    paths = paths[np.arange(min(have, n_events))]
    rows = []
    for t in t_grid:
        right = paths.sup(r_T + t, 2 * r_T)
        left = paths.sup(0.0, r_T - t)
        k = int(np.sum(np.maximum(left, right) > a_T * x))
        lo, hi = wilson_interval(k, len(paths))
        rows.append({"t": float(t), "estimate": k / len(paths), "lo": lo, "hi": hi, "n": len(paths)})
    return rows


def _panel(L: float, norm=NormChoice.SUP_ABS) -> list[PathFunctional]:
    from .tailcore import exceedance_capped, sup_exceeds, value_clipped
    return [exceedance_capped(1.0, 2 * L, norm), sup_exceeds(-L / 2, 0.0, 1.5, norm),
            sup_exceeds(0.0, L / 2, 1.5, norm), value_clipped(L / 4), value_clipped(-L / 4)]


def conditional_tail_paths(model: ProcessModel, x_levels, L: float, n: int, seed: int = 0,
                           tail: TailLaw | None = None, n_tail: int = 100_000,
                           max_windows: int = 20_000_000) -> list[dict]:
    """Ensembles of ``x^-1 X`` on ``[-L, L)`` given ``|X_0| > x``, compared with the tail process."""
    tail = tail or model.tail_law()
    panel = _panel(L, tail.norm)

    def tail_chunk(r, size):
        ty = tail.sample_y(r, size).restrict(-L, L)
        return np.stack([H(ty) for H in panel], axis=1)

    tail_cols = rngmod.replicate_concat(tail_chunk, n_tail, seed, "tail-panel", 1, tail.chunk)
    tail_vals = [EstimatorReport.from_values(tail_cols[:, j]) for j in range(len(panel))]
    out = []
    for x in x_levels:
        p_hat = np.mean(np.abs(model.marginal(rngmod.substream(seed, "rate", x), 100_000)) > x)
        if p_hat < 1e-6:
            raise InsufficientData(f"acceptance rate {p_hat:.2e} below 1e-6 at x = {x}; lower x")
        paths, have, tried = _conditioned_windows(model, L, x, n, seed, ("tail-paths", x), max_windows=max_windows)
        if have < n:
            raise InsufficientData(f"only {have} of {n} conditioned paths at x = {x} in {tried} windows")
        ens = paths[np.arange(n)].shift(-L).scale(1.0 / x)
        rows = []
        for H, tv in zip(panel, tail_vals):
            ev = EstimatorReport.from_values(H(ens))
            rows.append({"functional": H.name, "ensemble": ev.estimate, "tail": tv.estimate,
                         "zscore": zscore(ev, tv)})
        ks = stats.kstest(ens.norm_at(0.0, tail.norm), stats.pareto(tail.alpha).cdf)
        out.append({"x": float(x), "n": n, "acceptance": have / tried, "panel": rows,
                    "max_abs_z": max(abs(rw["zscore"]) for rw in rows), "pareto_ks": float(ks.statistic),
                    "ensemble": ens})
    return out


def block_sups(batch: PathBatch, r: float, m: int, norm=NormChoice.SUP_ABS) -> np.ndarray:
    """``sup`` of ``|X|`` over the half-open blocks ``[(i-1) r, i r)``, i = 1..m, per row."""
    n = len(batch)
    out = np.zeros((n, m))
    nrm = np.where(batch._live(), batch.norms(norm), 0.0)
    blk = np.floor(batch.breaks / r).astype(np.int64)
    ok = (blk >= 0) & (blk < m)
    rows = np.broadcast_to(np.arange(n)[:, None], blk.shape)
    np.maximum.at(out, (rows[ok], blk[ok]), nrm[ok])
    for i in range(m):
        out[:, i] = np.maximum(out[:, i], batch.norm_at(i * r, norm))
    return out


def cluster_count_poisson_test(model: ProcessModel, a_T: float, r_T: float, x: float, T: float,
                               n_windows: int, seed: int = 0, theta: float | None = None,
                               batch: int = 20, workers: int = 1) -> dict:
    """Chi-square fit of per-window counts of blocks with ``sup > a_T x`` to Poisson(theta x^-alpha)."""
    if r_T > T:
        raise ValueError("r_T must not exceed T")
    theta = model.theta if theta is None else theta
    if theta is None:
        raise ValueError("theta is required")
    m = int(math.floor(T / r_T + 1e-12))
    mean = theta * x ** (-model.alpha)

    def chunk(r, size):
        sups = block_sups(model.simulate_batch(r, size, T), r_T, m)
        return sups > a_T * x

    hits = rngmod.replicate_concat(chunk, n_windows, seed, ("cluster-counts", a_T, r_T, x, T), workers, batch)
    counts = hits.sum(axis=1)
    # cells 0, 1, ... with the tail pooled so every cell expects at least 5 windows
    cells, expected = [], []
    k = 0
    while True:
        pk = stats.poisson.pmf(k, mean)
        rest = stats.poisson.sf(k, mean)
        if n_windows * rest < 5:
            cells.append((k, INF))
            expected.append(n_windows * (pk + rest))
            break
        cells.append((k, k))
        expected.append(n_windows * pk)
        k += 1
    if len(cells) < 2 or min(expected) < 2:
        raise UnderpoweredTest(f"expected cell counts {np.round(expected, 2).tolist()} are too small")
    observed = [int(np.sum((counts >= lo) & (counts <= hi))) for lo, hi in cells]
    chi = stats.chisquare(observed, expected)
    scaled = (np.nonzero(hits)[1] + 1) / m
    uniform = stats.kstest(scaled, "uniform") if scaled.size else None
    half = m // 2
    first, second = hits[:, :half].sum(axis=1), hits[:, half:2 * half].sum(axis=1)
    corr = float(np.corrcoef(first, second)[0, 1]) if first.std() > 0 and second.std() > 0 else 0.0
    return {"mean_expected": mean, "mean_observed": float(counts.mean()),
            "mean_se": float(counts.std(ddof=1) / math.sqrt(n_windows)),
            "cells": [[lo, hi] for lo, hi in cells], "observed": observed, "expected": expected,
            "chi2": float(chi.statistic), "p_value": float(chi.pvalue),
            "times_ks_pvalue": float(uniform.pvalue) if uniform is not None else None,
            "half_window_correlation": corr, "correlation_se": 1.0 / math.sqrt(n_windows),
            "n_windows": n_windows, "blocks_per_window": m}


def _ecdf_discrepancy(sample: np.ndarray, cdf, lo: float, hi: float) -> float:
    """Exact ``sup_{lo <= x <= hi} |F_n(x) - F(x)|`` for a continuous increasing F."""
    s = np.sort(sample)
    n = s.size
    inside = s[(s >= lo) & (s <= hi)]
    pts = np.concatenate(([lo, hi], inside))
    right = np.searchsorted(s, pts, side="right") / n
    left = np.searchsorted(s, pts, side="left") / n
    f = cdf(pts)
    gaps = np.concatenate([np.abs(right - f), np.abs(left[2:] - f[2:])])
    return float(gaps.max())


def running_max_law(model: ProcessModel, T: float, x_grid, n_windows: int, a_T: float,
                    theta: float | None = None, seed: int = 0, x_range: tuple[float, float] | None = None,
                    batch: int = 50, workers: int = 1, sups: np.ndarray | None = None) -> dict:
    """Empirical law of ``sup_[0,T] |X| / a_T`` against ``exp(-theta x^-alpha)``."""
    theta = model.theta if theta is None else theta
    alpha = model.alpha
    x_grid = np.asarray(x_grid, dtype=float)
    if sups is None:
        sups = rngmod.replicate_concat(lambda r, s: model.window_sup(r, s, T), n_windows, seed,
                                       ("running-max", T), workers, batch)
    scaled = sups / a_T

    def cdf(x):
        return np.exp(-theta * np.asarray(x, dtype=float) ** (-alpha))

    ecdf = np.array([np.mean(scaled <= x) for x in x_grid])
    lo, hi = x_range or (float(x_grid.min()), float(x_grid.max()))
    disc = _ecdf_discrepancy(scaled, cdf, lo, hi)
    p1 = float(np.mean(scaled <= 1.0))
    theta_hat = -math.log(p1) if 0 < p1 < 1 else float("nan")
    theta_se = math.sqrt((1 - p1) / (p1 * n_windows)) if 0 < p1 < 1 else float("nan")
    table = [{"x": float(x), "ecdf": float(e), "limit": float(cdf(x)),
              "se": float(math.sqrt(max(e * (1 - e), 1e-300) / n_windows))} for x, e in zip(x_grid, ecdf)]
    return {"table": table, "discrepancy": disc, "x_range": [lo, hi], "theta": theta, "a_T": a_T,
            "theta_running_max": theta_hat, "theta_running_max_se": theta_se, "n_windows": n_windows, "T": T}


def tightness_diagnostic(model: ProcessModel, a: float, b: float, delta_grid, x: float, eps: float = 1.0,
                         n: int = 2000, seed: int = 0, n_marginal: int = 200_000, min_events: int = 30) -> list[dict]:
    """``P(w'(X, a, b, delta) > x eps) / P(|X_0| > x)`` per delta."""
    if not a < b:
        raise ValueError("need a < b")
    r = rngmod.substream(seed, "tightness", a, b, x)
    p0 = float(np.mean(np.abs(model.marginal(r, n_marginal)) > x))
    if p0 * n_marginal < min_events:
        raise UnderpoweredTest(f"{int(p0 * n_marginal)} marginal exceedances of {x} (need {min_events})")
    batch = model.simulate_batch(r, n, b).restrict(a, b)
    rows = []
    for delta in delta_grid:
        w = np.array([modulus_w_prime(batch[i], a, b, delta) for i in range(n)])
        k = int(np.sum(w > x * eps))
        rows.append({"delta": float(delta), "estimate": (k / n) / p0, "exceed": k, "n": n, "marginal_tail": p0})
    return rows


def table_csv(rows: list[dict], key: str, est: str = "estimate", se: str | None = "se", n: str = "n") -> str:
    lines = [f"{key},estimate,se,n"]
    for rw in rows:
        s = rw.get(se, "") if se else ""
        lines.append(f"{rw[key]!r},{rw[est]!r},{s!r},{rw.get(n, '')!r}")
    return "\n".join(lines) + "\n"
