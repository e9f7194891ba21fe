"""Piecewise-constant càdlàg paths on bounded windows.

A path is stored as breakpoints ``b_0 < b_1 < ... < b_{m-1}`` inside a half-open
window ``[b_0, end)`` with one d-vector per interval ``[b_i, b_{i+1})`` and a
constant value assumed outside the window.  Every operation here is exact
(no quadrature, no time grid).

`PathBatch` holds many paths as padded arrays so that Monte Carlo code can
evaluate functionals on 10^5 draws without a Python loop per path.
"""
from __future__ import annotations

import csv
import io
import json
import math
from enum import Enum
from typing import Sequence

import numpy as np

INF = math.inf


class NormChoice(str, Enum):
    SUP_ABS = "sup-abs"
    EUCLIDEAN = "euclidean"
    MAX_COORD = "max-coordinate"


def vector_norm(values: np.ndarray, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
    """Norm over the last axis of ``values``."""
    norm = NormChoice(norm)
    d = values.shape[-1]
    if norm is NormChoice.SUP_ABS:
        if d != 1:
            raise ValueError("sup-abs norm is for scalar paths; use euclidean or max-coordinate")
        return np.abs(values[..., 0])
    if d == 1:
        return np.abs(values[..., 0])
    if norm is NormChoice.EUCLIDEAN:
        return np.sqrt(np.sum(values * values, axis=-1))
    return np.max(np.abs(values), axis=-1)


def _as_values(values, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if dim in (None, 1) else arr.reshape(-1, dim)
    if arr.ndim != 2:
        raise ValueError("values must be a sequence of d-vectors")
    return arr


class PiecewiseConstantPath:
    """Right-continuous step path on the window ``[breakpoints[0], window_end)``.

    Adjacent intervals carrying equal values are merged on construction so the
    representation is unique and ``==`` compares functions on the window.
    """

    __slots__ = ("breakpoints", "values", "window_end", "outside")

    def __init__(self, breakpoints, values, window_end: float, outside=None, *, coalesce: bool = True):
        b = np.array(breakpoints, dtype=float).reshape(-1)
        v = _as_values(values)
        if b.size == 0:
            raise ValueError("a path needs at least one breakpoint")
        if v.shape[0] != b.size:
            raise ValueError(f"{b.size} breakpoints but {v.shape[0]} values")
        if not np.all(np.isfinite(b)) or not np.all(np.isfinite(v)):
            raise ValueError("breakpoints and values must be finite")
        if b.size > 1 and not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        window_end = float(window_end)
        if not window_end > b[-1]:
            raise ValueError("window_end must exceed the last breakpoint")
        out = np.zeros(v.shape[1]) if outside is None else np.array(outside, dtype=float).reshape(-1)
        if out.size == 1 and v.shape[1] > 1:
            out = np.full(v.shape[1], out[0])
        if out.size != v.shape[1] or not np.all(np.isfinite(out)):
            raise ValueError("outside value must be a finite d-vector")
        if coalesce and b.size > 1:
            keep = np.ones(b.size, dtype=bool)
            keep[1:] = np.any(v[1:] != v[:-1], axis=1)
            b, v = b[keep], v[keep]
        for arr in (b, v, out):
            arr.setflags(write=False)
        self.breakpoints = b
        self.values = v
        self.window_end = window_end
        self.outside = out

    # construction helpers
    @classmethod
    def indicator(cls, a: float, b: float, value=1.0) -> "PiecewiseConstantPath":
        """``value * 1_[a, b)`` on the window [a, b) with zero outside."""
        return cls([a], [np.atleast_1d(np.asarray(value, dtype=float))], b)

    @classmethod
    def constant(cls, start: float, end: float, value=0.0, outside=None) -> "PiecewiseConstantPath":
        val = np.atleast_1d(np.asarray(value, dtype=float))
        return cls([start], [val], end, outside)

    @classmethod
    def from_grid(cls, start: float, step: float, values, outside=None) -> "PiecewiseConstantPath":
        """Values on consecutive grid cells ``[start + k*step, start + (k+1)*step)``."""
        v = _as_values(values)
        n = v.shape[0]
        b = start + step * np.arange(n)
        return cls(b, v, start + step * n, outside)

    @classmethod
    def from_function(cls, func, start: float, end: float, step: float) -> "PiecewiseConstantPath":
        """Left-endpoint discretization of ``func`` on a grid of the given step."""
        n = int(round((end - start) / step))
        t = start + step * np.arange(n)
        return cls.from_grid(start, step, np.asarray(func(t), dtype=float))

    # basic attributes
    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def window_start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.breakpoints, self.window_end))

    def norms(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        return vector_norm(self.values, norm)

    def outside_norm(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
        return float(vector_norm(self.outside[None, :], norm)[0])

    def __len__(self) -> int:
        return self.breakpoints.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, PiecewiseConstantPath):
            return NotImplemented
        return (
            self.window_end == other.window_end
            and self.breakpoints.shape == other.breakpoints.shape
            and self.values.shape == other.values.shape
            and bool(np.all(self.breakpoints == other.breakpoints))
            and bool(np.all(self.values == other.values))
            and bool(np.all(self.outside == other.outside))
        )

    def __hash__(self):
        return hash((self.breakpoints.tobytes(), self.values.tobytes(), self.window_end, self.outside.tobytes()))

    def isclose(self, other: "PiecewiseConstantPath", atol: float = 1e-12) -> bool:
        return (
            self.breakpoints.shape == other.breakpoints.shape
            and self.values.shape == other.values.shape
            and abs(self.window_end - other.window_end) <= atol
            and np.allclose(self.breakpoints, other.breakpoints, rtol=0, atol=atol)
            and np.allclose(self.values, other.values, rtol=0, atol=atol)
            and np.allclose(self.outside, other.outside, rtol=0, atol=atol)
        )

    def __repr__(self) -> str:
        return (
            f"PiecewiseConstantPath(window=[{self.window_start:g}, {self.window_end:g}), "
            f"intervals={len(self)}, dim={self.dim})"
        )

    # evaluation
    def value_at(self, t) -> np.ndarray:
        """Path value(s) at time(s) ``t``; shape ``(d,)`` or ``(len(t), d)``."""
        ts = np.asarray(t, dtype=float)
        flat = np.atleast_1d(ts)
        idx = np.searchsorted(self.breakpoints, flat, side="right") - 1
        inside = (idx >= 0) & (flat < self.window_end)
        out = np.where(inside[:, None], self.values[np.clip(idx, 0, None)], self.outside[None, :])
        return out[0] if ts.ndim == 0 else out

    def __call__(self, t) -> np.ndarray:
        return self.value_at(t)

    def scale(self, c: float) -> "PiecewiseConstantPath":
        return PiecewiseConstantPath(self.breakpoints, self.values * c, self.window_end, self.outside * c)

    def __mul__(self, c: float) -> "PiecewiseConstantPath":
        return self.scale(c)

    __rmul__ = __mul__

    def shift(self, t: float) -> "PiecewiseConstantPath":
        return shift(self, t)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "window": [self.window_start, self.window_end],
            "breakpoints": self.breakpoints.tolist(),
            "values": self.values.tolist(),
            "outside": self.outside.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "PiecewiseConstantPath":
        start, end = obj["window"]
        b = obj["breakpoints"]
        if not b or b[0] != start:
            raise ValueError("first breakpoint must equal the window start")
        vals = np.asarray(obj["values"], dtype=float).reshape(len(b), int(obj["dim"]))
        return cls(b, vals, end, obj.get("outside"))

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseConstantPath":
        return cls.from_dict(json.loads(text))

    def to_csv(self, step: float, start: float | None = None, end: float | None = None) -> str:
        """Sample the path on a regular grid; columns ``t, v1..vd``."""
        start = self.window_start if start is None else start
        end = self.window_end if end is None else end
        t = start + step * np.arange(int(math.floor((end - start) / step)) + 1)
        vals = self.value_at(t)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"v{i + 1}" for i in range(self.dim)])
        for ti, row in zip(t, vals):
            writer.writerow([repr(float(ti))] + [repr(float(x)) for x in row])
        return buf.getvalue()


def _check_norm_outside_zero(path: PiecewiseConstantPath, what: str) -> None:
    if np.any(path.outside != 0):
        raise ValueError(f"{what} needs a path that vanishes outside its window")


def sup_norm(path: PiecewiseConstantPath, a: float, b: float, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
    """Exact ``sup_{a<=t<=b} |path(t)|`` (left limits inside (a, b] included)."""
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    bp = path.breakpoints
    right = np.append(bp[1:], path.window_end)
    hit = (bp <= b) & (right > a)
    best = float(np.max(path.norms(norm)[hit])) if np.any(hit) else 0.0
    if a < path.window_start or b >= path.window_end:
        best = max(best, path.outside_norm(norm))
    return best


def exceedance(path: PiecewiseConstantPath, level: float = 1.0, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
    """Lebesgue measure of ``{t : |path(t)| > level}``; ``inf`` if the outside value exceeds."""
    if not level > 0:
        raise ValueError("level must be positive")
    if path.outside_norm(norm) > level:
        return INF
    return float(np.sum(path.lengths[path.norms(norm) > level]))


def lp_power_norm(path: PiecewiseConstantPath, p: float, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
    """``int |path(t)|^p dt`` (the p-th power, no root)."""
    if not p > 0:
        raise ValueError("p must be positive")
    _check_norm_outside_zero(path, "lp_power_norm")
    return float(np.sum(path.lengths * path.norms(norm) ** p))


def shift(path: PiecewiseConstantPath, t: float) -> PiecewiseConstantPath:
    """Backshift ``B^t y = y(. - t)``: the graph moves right by ``t``."""
    return PiecewiseConstantPath(path.breakpoints + t, path.values, path.window_end + t, path.outside, coalesce=False)


def scale(path: PiecewiseConstantPath, c: float) -> PiecewiseConstantPath:
    return path.scale(c)


def _cut_points(path: PiecewiseConstantPath, a: float, b: float) -> np.ndarray:
    bp = path.breakpoints
    extra = [x for x in (path.window_start, path.window_end) if a < x < b]
    pts = np.concatenate(([a], bp[(bp > a) & (bp < b)], extra))
    return np.unique(pts)


def restrict(path: PiecewiseConstantPath, a: float, b: float) -> PiecewiseConstantPath:
    """The path on ``[a, b)``, zero outside."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    cuts = _cut_points(path, a, b)
    return PiecewiseConstantPath(cuts, path.value_at(cuts), b)


def infargmax(path: PiecewiseConstantPath, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
    """Left endpoint of the first interval attaining the sup norm; ``inf`` for the zero path."""
    _check_norm_outside_zero(path, "infargmax")
    nrm = path.norms(norm)
    top = nrm.max()
    if top <= 0:
        return INF
    return float(path.breakpoints[int(np.argmax(nrm == top))])


def first_exceedance(path: PiecewiseConstantPath, level: float = 1.0, norm: NormChoice | str = NormChoice.SUP_ABS) -> float:
    """``inf{t : |path(t)| > level}``; ``inf`` when the level is never exceeded."""
    if path.outside_norm(norm) > level:
        return -INF
    above = np.flatnonzero(path.norms(norm) > level)
    return float(path.breakpoints[above[0]]) if above.size else INF


def combine(p: PiecewiseConstantPath, q: PiecewiseConstantPath, op) -> PiecewiseConstantPath:
    """Pointwise ``op(p, q)`` on the union of both windows (outside: ``op`` of outsides)."""
    start = min(p.window_start, q.window_start)
    end = max(p.window_end, q.window_end)
    cuts = np.unique(np.concatenate(([start], p.breakpoints, q.breakpoints, [p.window_end, q.window_end])))
    cuts = cuts[cuts < end]
    vals = op(p.value_at(cuts), q.value_at(cuts))
    return PiecewiseConstantPath(cuts, vals, end, op(p.outside, q.outside))


def pointwise_max(p: PiecewiseConstantPath, q: PiecewiseConstantPath) -> PiecewiseConstantPath:
    return combine(p, q, np.maximum)


def add(p: PiecewiseConstantPath, q: PiecewiseConstantPath) -> PiecewiseConstantPath:
    return combine(p, q, np.add)


# moduli of continuity


def _window_steps(path: PiecewiseConstantPath, a: float, b: float):
    """Interval edges and values of the path on [a, b); the value at b is the left limit."""
    cuts = _cut_points(path, a, b)
    vals = path.value_at(cuts)
    keep = np.ones(len(cuts), dtype=bool)
    keep[1:] = np.any(vals[1:] != vals[:-1], axis=1)
    cuts, vals = cuts[keep], vals[keep]
    return np.append(cuts, b), vals


def _pairwise(vals: np.ndarray, norm) -> np.ndarray:
    return vector_norm(vals[:, None, :] - vals[None, :, :], norm)


def _check_delta(a: float, b: float, delta: float) -> None:
    if not (0 < delta < b - a):
        raise ValueError(f"need 0 < delta < b - a, got delta={delta} on [{a}, {b}]")


def modulus_w_second(path: PiecewiseConstantPath, a: float, b: float, delta: float,
                     norm: NormChoice | str = NormChoice.EUCLIDEAN) -> float:
    """``sup min(|f(t)-f(s)|, |f(u)-f(t)|)`` over ``a <= s <= t <= u <= b`` with ``u - s <= delta``."""
    _check_delta(a, b, delta)
    edges, vals = _window_steps(path, a, b)
    m = len(vals)
    if m < 3:
        return 0.0
    dist = _pairwise(vals, norm)
    # s in interval i, u in interval k > i: the closest pair has u - s -> edges[k] - edges[i+1]
    reach = (edges[None, :m] - edges[1:m + 1, None]) < delta
    best = 0.0
    for j in range(1, m - 1):
        left = dist[:j, j]
        right = dist[j, j + 1:]
        ok = reach[:j, j + 1:]
        if not ok.any():
            continue
        val = np.minimum(left[:, None], right[None, :])
        best = max(best, float(val[ok].max()))
    return best


def _range_diameters(dist: np.ndarray) -> np.ndarray:
    m = dist.shape[0]
    diam = np.zeros((m, m))
    for e in range(m):
        col = dist[: e + 1, e]
        rc = np.maximum.accumulate(col[::-1])[::-1]
        prev = np.append(diam[:e, e - 1], 0.0) if e > 0 else np.zeros(1)
        diam[: e + 1, e] = np.maximum(prev, rc)
    return diam


def _w_prime_feasible(edges: np.ndarray, diam: np.ndarray, eta: float, level: float) -> bool:
    """Is there a partition with cells of length >= eta and oscillation <= level?"""
    m = diam.shape[0]
    b = edges[-1]
    # state 2k: cut exactly at edges[k]; state 2k+1: cut strictly inside interval k
    # earliest[(x, open)] where open means x + 0
    n_states = 2 * m
    best_x = np.full(n_states, np.inf)
    best_open = np.zeros(n_states, dtype=bool)
    best_x[0] = edges[0]
    for st in range(n_states):
        x = best_x[st]
        if not np.isfinite(x):
            continue
        is_open = best_open[st]
        s_idx = st // 2
        lo = x + eta
        # the end of the window closes the current cell
        if diam[s_idx, m - 1] <= level and (b > lo if is_open else b >= lo):
            return True
        for nxt in range(st + 1, n_states):
            k = nxt // 2
            e_idx = k - 1 if nxt % 2 == 0 else k
            if e_idx < s_idx:
                continue
            if diam[s_idx, e_idx] > level:
                break  # diameters only grow with the end index
            if nxt % 2 == 0:
                pos = edges[k]
                if (pos > lo) if is_open else (pos >= lo):
                    if pos < best_x[nxt] or (pos == best_x[nxt] and best_open[nxt]):
                        best_x[nxt], best_open[nxt] = pos, False
            else:
                if (lo, is_open) >= (edges[k], True):
                    cand, cand_open = lo, is_open
                else:
                    cand, cand_open = edges[k], True
                if cand < edges[k + 1]:
                    if cand < best_x[nxt] or (cand == best_x[nxt] and best_open[nxt] and not cand_open):
                        best_x[nxt], best_open[nxt] = cand, cand_open
    return False


def modulus_w_prime(path: PiecewiseConstantPath, a: float, b: float, delta: float,
                    norm: NormChoice | str = NormChoice.EUCLIDEAN) -> float:
    """Infimum over partitions of [a, b) with mesh >= delta of the largest cell oscillation."""
    _check_delta(a, b, delta)
    edges, vals = _window_steps(path, a, b)
    m = len(vals)
    if m == 1:
        return 0.0
    diam = _range_diameters(_pairwise(vals, norm))
    levels = np.unique(diam[np.triu_indices(m)])
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _w_prime_feasible(edges, diam, delta, levels[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


# batches


class PathBatch:
    """``n`` scalar-or-vector step paths stored as padded arrays.

    Row ``i`` has window ``[starts[i], ends[i])``; padding intervals sit at the
    window end with zero length, so they never contribute.  Batches always
    vanish outside their windows.
    """

    __slots__ = ("breaks", "values", "ends")

    def __init__(self, breaks: np.ndarray, values: np.ndarray, ends: np.ndarray):
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if breaks.ndim != 2 or values.shape[:2] != breaks.shape:
            raise ValueError("breaks must be (n, m) and values (n, m, d)")
        self.breaks = breaks
        self.values = values
        self.ends = np.asarray(ends, dtype=float).reshape(-1)

    @classmethod
    def from_paths(cls, paths: Sequence[PiecewiseConstantPath]) -> "PathBatch":
        n = len(paths)
        m = max(len(p) for p in paths)
        d = paths[0].dim
        ends = np.array([p.window_end for p in paths])
        breaks = np.repeat(ends[:, None], m, axis=1)
        values = np.zeros((n, m, d))
        for i, p in enumerate(paths):
            _check_norm_outside_zero(p, "PathBatch")
            k = len(p)
            breaks[i, :k] = p.breakpoints
            values[i, :k] = p.values
        return cls(breaks, values, ends)

    @classmethod
    def repeat(cls, path: PiecewiseConstantPath, n: int) -> "PathBatch":
        _check_norm_outside_zero(path, "PathBatch")
        breaks = np.broadcast_to(path.breakpoints, (n, len(path))).copy()
        values = np.broadcast_to(path.values, (n,) + path.values.shape).copy()
        return cls(breaks, values, np.full(n, path.window_end))

    @staticmethod
    def concat(batches: Sequence["PathBatch"]) -> "PathBatch":
        m = max(bt.breaks.shape[1] for bt in batches)
        parts_b, parts_v = [], []
        for bt in batches:
            pad = m - bt.breaks.shape[1]
            parts_b.append(np.concatenate([bt.breaks, np.repeat(bt.ends[:, None], pad, axis=1)], axis=1))
            parts_v.append(np.concatenate([bt.values, np.zeros((len(bt), pad, bt.dim))], axis=1))
        return PathBatch(np.concatenate(parts_b), np.concatenate(parts_v),
                         np.concatenate([bt.ends for bt in batches]))

    def __len__(self) -> int:
        return self.breaks.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def starts(self) -> np.ndarray:
        return self.breaks[:, 0]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.concatenate([self.breaks, self.ends[:, None]], axis=1), axis=1)

    def norms(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        return vector_norm(self.values, norm)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            live = self.lengths[idx] > 0
            if not live.any():
                live[0] = True
            return PiecewiseConstantPath(self.breaks[idx][live], self.values[idx][live], self.ends[idx])
        return PathBatch(self.breaks[idx], self.values[idx], self.ends[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def shift(self, t) -> "PathBatch":
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(self),))
        return PathBatch(self.breaks + t[:, None], self.values, self.ends + t)

    def scale(self, c) -> "PathBatch":
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(self),))
        return PathBatch(self.breaks, self.values * c[:, None, None], self.ends)

    def divide(self, c) -> "PathBatch":
        """Row-wise division; unlike ``scale(1/c)`` it maps a value equal to ``c`` to exactly 1."""
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(self),))
        return PathBatch(self.breaks, self.values / c[:, None, None], self.ends)

    def restrict(self, a, b) -> "PathBatch":
        """Row-wise restriction to ``[a, b)``; intervals outside collapse to zero length."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (len(self),))
        b = np.broadcast_to(np.asarray(b, dtype=float), (len(self),))
        lo = np.maximum(self.starts, a)
        hi = np.maximum(np.minimum(self.ends, b), lo)
        breaks = np.clip(self.breaks, lo[:, None], hi[:, None])
        return PathBatch(breaks, self.values, hi)

    def _live(self) -> np.ndarray:
        return self.lengths > 0

    def sup(self, a, b, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        """Row-wise ``sup_{a<=t<=b} |y(t)|`` (a, b scalars or arrays)."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (len(self),))[:, None]
        b = np.broadcast_to(np.asarray(b, dtype=float), (len(self),))[:, None]
        right = np.concatenate([self.breaks[:, 1:], self.ends[:, None]], axis=1)
        hit = (self.breaks <= b) & (right > a) & self._live()
        return np.max(np.where(hit, self.norms(norm), 0.0), axis=1)

    def sup_all(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        return np.max(np.where(self._live(), self.norms(norm), 0.0), axis=1)

    def exceedance(self, level=1.0, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        level = np.broadcast_to(np.asarray(level, dtype=float), (len(self),))[:, None]
        return np.sum(np.where(self.norms(norm) > level, self.lengths, 0.0), axis=1)

    def lp_power(self, p: float, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        return np.sum(self.lengths * self.norms(norm) ** p, axis=1)

    def integral(self, func, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        """Row-wise ``int func(|y(t)|) dt`` over the window (``func(0)`` need not vanish)."""
        return np.sum(self.lengths * func(self.norms(norm)), axis=1)

    def weighted_power(self, cdf, p: float, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        """``int w(t) |y(t)|^p dt`` for a weight with cumulative integral ``cdf``."""
        right = np.concatenate([self.breaks[:, 1:], self.ends[:, None]], axis=1)
        mass = cdf(right) - cdf(self.breaks)
        return np.sum(mass * self.norms(norm) ** p, axis=1)

    def _index_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(self),))
        idx = np.sum(self.breaks <= t[:, None], axis=1) - 1
        inside = (idx >= 0) & (t < self.ends)
        return np.clip(idx, 0, None), inside

    def value_at(self, t) -> np.ndarray:
        idx, inside = self._index_at(t)
        vals = self.values[np.arange(len(self)), idx]
        return np.where(inside[:, None], vals, 0.0)

    def norm_at(self, t, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        return vector_norm(self.value_at(t), norm)

    def infargmax(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        nrm = np.where(self._live(), self.norms(norm), -1.0)
        top = nrm.max(axis=1)
        idx = np.argmax(nrm == top[:, None], axis=1)
        out = self.breaks[np.arange(len(self)), idx]
        return np.where(top > 0, out, INF)

    def first_exceedance(self, level=1.0, norm: NormChoice | str = NormChoice.SUP_ABS) -> np.ndarray:
        above = (self.norms(norm) > level) & self._live()
        idx = np.argmax(above, axis=1)
        out = self.breaks[np.arange(len(self)), idx]
        return np.where(above.any(axis=1), out, INF)

    def normalize_by_sup(self, norm: NormChoice | str = NormChoice.SUP_ABS) -> "PathBatch":
        return self.divide(self.sup_all(norm))


def batch_from_jumps(row: np.ndarray, times: np.ndarray, jumps: np.ndarray, n: int,
                     start: float, end: float) -> PathBatch:
    """Assemble ``n`` step paths on ``[start, end)`` from jump events.

    Event ``e`` adds ``jumps[e]`` (a d-vector or scalar) to path ``row[e]`` from
    ``times[e]`` on.  Jumps at or before ``start`` are folded into the initial
    value; jumps at or after ``end`` are ignored.  Values are running sums; a
    value within rounding of zero (relative to the absolute mass summed so far)
    is set to exactly zero, so cancelled jumps leave no residue.
    """
    jumps = np.asarray(jumps, dtype=float)
    if jumps.ndim == 1:
        jumps = jumps[:, None]
    d = jumps.shape[1]
    row = np.asarray(row, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    early = times <= start
    initial = np.stack([np.bincount(row[early], jumps[early, k], minlength=n) for k in range(d)], axis=1)
    live = (~early) & (times < end)
    row, times, jumps = row[live], times[live], jumps[live]
    # two stable passes equal lexsort((times, row)) but are much faster on large inputs
    order = np.argsort(times, kind="stable")
    order = order[np.argsort(row[order], kind="stable")]
    row, times, jumps = row[order], times[order], jumps[order]
    counts = np.bincount(row, minlength=n)
    m = int(counts.max()) + 1 if counts.size else 1
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    col = np.arange(row.size) - offsets[row] + 1
    breaks = np.full((n, m), float(end))
    breaks[:, 0] = start
    breaks[row, col] = times
    deltas = np.zeros((n, m, d))
    deltas[:, 0] = initial
    deltas[row, col] = jumps
    values = np.cumsum(deltas, axis=1)
    mass = np.cumsum(np.abs(deltas), axis=1)
    values[np.abs(values) <= 8 * np.finfo(float).eps * mass] = 0.0
    return PathBatch(breaks, values, np.full(n, float(end)))

