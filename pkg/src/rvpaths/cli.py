"""Config-driven experiment runner.

A run reads one YAML file naming a model (or tail law), a list of tasks and
their tolerance checks, executes the tasks in order and writes

* ``<out>/<task id>.json``: the task payload (seed, config hash, parameters, result),
* ``<out>/<task id>.csv``: the task table, one row per entry, each row tagged
  with the seed and the config hash,
* ``<out>/manifest.json``: config hash, version, timestamps, output files and
  per-task pass/fail.

Payloads never contain timings, so reruns with the same config and seed are
byte-identical whatever the worker count.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml
from scipy import stats

from . import __version__
from . import clusterlab as cl
from . import procsim as ps
from . import rng as rngmod
from . import tailcore as tc
from .pathkit import PiecewiseConstantPath


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


REQUIRED = object()


# model and tail-law construction


SHAPE_KEYS = {"box": {"length": 1.0}, "indicator": {"start": REQUIRED, "end": REQUIRED, "value": 1.0},
              "two_bump": {}, "exp": {"step": 0.01, "length": 25.0},
              "steps": {"breakpoints": REQUIRED, "values": REQUIRED, "end": REQUIRED}}


def build_shape(spec, where: str = "shape") -> PiecewiseConstantPath:
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in SHAPE_KEYS:
        raise ConfigError(f"unknown shape kind {where}.kind = {kind!r}; expected one of {list(SHAPE_KEYS)}")
    p = _take(spec, where, SHAPE_KEYS[kind])
    if kind == "box":
        return PiecewiseConstantPath.indicator(0.0, float(p["length"]))
    if kind == "indicator":
        return PiecewiseConstantPath.indicator(float(p["start"]), float(p["end"]), float(p["value"]))
    if kind == "two_bump":
        return ps.TWO_BUMP
    if kind == "exp":
        return ps.exp_shape(float(p["step"]), float(p["length"]))
    return PiecewiseConstantPath(p["breakpoints"], p["values"], float(p["end"]))


def _take(spec: dict, where: str, allowed: dict) -> dict:
    extra = sorted(set(spec) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key {where}.{extra[0]!r}")
    out = {}
    for k, default in allowed.items():
        if k in spec:
            out[k] = spec[k]
        elif default is REQUIRED:
            raise ConfigError(f"missing key {where}.{k!r}")
        else:
            out[k] = default
    return out


def _mixture(spec: dict, where: str):
    shapes = [build_shape(s, f"{where}.shapes[{i}]") for i, s in enumerate(spec["shapes"])]
    q_law, probs, support = ps.mixture_q_law(shapes, spec["weights"], label=spec.get("label") or "mixture")
    return shapes, q_law, probs, support


def _shot_noise(spec, where):
    p = _take(spec, where, {"eta": REQUIRED, "alpha": REQUIRED, "p": 1.0, "truncation": None})
    try:
        eta = ps.eta_from_dict(p["eta"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.eta: {exc}") from None
    return ps.ShotNoise(eta, ps.JumpLaw(float(p["alpha"]), float(p["p"])), p["truncation"])


def _functional_ma(spec, where):
    p = _take(spec, where, {"shape": REQUIRED, "alpha": REQUIRED, "p": 1.0, "truncation": None})
    shape = build_shape(p["shape"], f"{where}.shape")
    return ps.FunctionalMA(shape, ps.JumpLaw(float(p["alpha"]), float(p["p"])), p["truncation"])


def _m3(spec, where):
    p = _take(spec, where, {"shapes": REQUIRED, "weights": None, "alpha": REQUIRED, "theta": None, "label": None})
    shapes, q_law, probs, support = _mixture(p, where)
    alpha = float(p["alpha"])
    theta = float(p["theta"]) if p["theta"] is not None else 1.0 / ps.mixture_alpha_mass(shapes, probs, alpha)
    return ps.MaxStableM3(q_law, theta, alpha, support, p["label"] or "mixture", tuple(zip(shapes, probs)))


def _brown_resnick(spec, where):
    p = _take(spec, where, {"alpha": 1.0, "c": 4.0, "grid_step": 0.01, "radius": 6.0, "pool": 20_000})
    return ps.BrownResnick(float(p["alpha"]), float(p["c"]), float(p["grid_step"]), float(p["radius"]),
                           int(p["pool"]))


def _sum_stable(spec, where):
    p = _take(spec, where, {"shapes": REQUIRED, "weights": None, "alpha": REQUIRED, "theta": 1.0,
                            "symmetric": True, "points": 64, "truncation": None, "label": None})
    shapes, q_law, probs, support = _mixture(p, where)
    return ps.SumStableSeries(q_law, float(p["theta"]), float(p["alpha"]), support, bool(p["symmetric"]),
                              int(p["points"]), p["truncation"], p["label"] or "mixture",
                              tuple(zip(shapes, probs)))


MODEL_BUILDERS: dict[str, Callable[[dict, str], ps.ProcessModel]] = {
    "shot_noise": _shot_noise,
    "functional_ma": _functional_ma,
    "max_stable_m3": _m3,
    "max_stable_brown_resnick": _brown_resnick,
    "sum_stable_series": _sum_stable,
}

MODEL_DESCRIPTIONS = {
    "shot_noise": "X_t = sum_j V_j 1{T_j <= t < T_j + eta_j}: Poisson arrivals, session lengths eta, "
                  "regularly varying jumps V",
    "functional_ma": "X_t = sum_k f(t - T_k) V_k: step kernel f on unit-rate Poisson points (alpha < 1)",
    "max_stable_m3": "eta_t = max_i P_i Q_i(t - T_i): moving maxima of compact step kernels Q",
    "max_stable_brown_resnick": "max_i P_i exp(W_i(t - T_i) - alpha c|t - T_i|/2) on a grid, W Brownian",
    "sum_stable_series": "X_t = sum_{i <= K} eps_i P_i Q_i(t - T_i): truncated stable series of kernels Q",
}


def build_model(spec, where: str = "model") -> ps.ProcessModel:
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be a mapping")
    spec = dict(spec)
    if "builtin" in spec:
        if len(spec) > 1:
            raise ConfigError(f"unknown key {where}.{sorted(set(spec) - {'builtin'})[0]!r}")
        models = ps.builtin_models()
        if spec["builtin"] not in models:
            raise ConfigError(f"unknown built-in model {where}.builtin = {spec['builtin']!r}; "
                              f"expected one of {sorted(models)}")
        return models[spec["builtin"]]
    cls = spec.pop("class", None)
    if cls not in MODEL_BUILDERS:
        raise ConfigError(f"unknown model class {where}.class = {cls!r}; expected one of {list(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[cls](spec, where)


def build_tail_law(spec, where: str = "tail_law") -> tc.TailLaw:
    """Tail law from ``{builtin: name}``, an analytic shot-noise / moving-average spec, or any model spec."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be a mapping")
    spec = dict(spec)
    if "builtin" in spec:
        if len(spec) > 1:
            raise ConfigError(f"unknown key {where}.{sorted(set(spec) - {'builtin'})[0]!r}")
        if spec["builtin"] not in ps.BUILTIN_TAIL_LAWS:
            raise ConfigError(f"unknown built-in tail law {where}.builtin = {spec['builtin']!r}; "
                              f"expected one of {list(ps.BUILTIN_TAIL_LAWS)}")
        return ps.builtin_tail_law(spec["builtin"])
    cls = spec.get("class")
    # the analytic laws exist for every alpha, also where the simulators do not
    if cls == "shot_noise":
        p = _take({k: v for k, v in spec.items() if k != "class"}, where,
                  {"eta": REQUIRED, "alpha": REQUIRED, "p": 1.0, "truncation": None})
        return ps.shot_noise_tail_law(ps.eta_from_dict(p["eta"]), float(p["alpha"]), float(p["p"]))
    if cls == "functional_ma":
        p = _take({k: v for k, v in spec.items() if k != "class"}, where,
                  {"shape": REQUIRED, "alpha": REQUIRED, "p": 1.0, "truncation": None, "chunk": None})
        return ps.ma_tail_law(build_shape(p["shape"], f"{where}.shape"), float(p["alpha"]), float(p["p"]), p["chunk"])
    return build_model(spec, where).tail_law()


def list_models() -> list[str]:
    return list(ps.MODEL_CLASSES)


# tasks


@dataclass
class TaskContext:
    seed: int
    workers: int
    config_hash: str
    results: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)

    def scale(self, model: ps.ProcessModel, T: float, a_T, n: int) -> float:
        """``a_T`` from the config: a number, ``"power"`` (T^(1/alpha)) or ``"calibrate"``."""
        if isinstance(a_T, (int, float)):
            return float(a_T)
        if a_T == "power":
            return float(T) ** (1.0 / model.alpha)
        if a_T == "calibrate":
            key = (model.fingerprint(), float(T), int(n), self.seed)
            if key not in self.scales:
                self.scales[key] = model.calibrate_scale(T, int(n), self.seed)
            return self.scales[key]
        raise ConfigError(f"a_T must be a number, 'power' or 'calibrate', got {a_T!r}")


@dataclass(frozen=True)
class Task:
    name: str
    target: str  # "tail", "model" or "none"
    params: dict
    run: Callable[..., tuple[dict, list[dict] | None]]
    summary: str
    computes: str


TASKS: dict[str, Task] = {}


def task(name: str, target: str, params: dict, summary: str, computes: str):
    def deco(fn):
        TASKS[name] = Task(name, target, params, fn, summary, computes)
        return fn
    return deco


def _grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


def _report(rep: tc.EstimatorReport, **extra) -> dict:
    out = rep.to_dict()
    out.update(extra)
    return out


def _closed_form(tail: tc.TailLaw) -> dict:
    return {"closed_form": tail.theta_closed_form, "tail_law": tail.name, "alpha": tail.alpha}


def _theta_for(tail: tc.TailLaw, ctx: TaskContext, n: int):
    if tail.theta_closed_form is not None:
        return tail.theta_closed_form
    return tc.candidate_via_exceedance(tail, n, ctx.seed, ctx.workers)


def _q_sampler(tail: tc.TailLaw, ctx: TaskContext, n: int):
    if tail.sample_q is not None:
        return tail.sample_q
    return tc.q_from_theta(tail, n=n, seed=ctx.seed, workers=ctx.workers).sample


@task("candidate_via_exceedance", "tail", {"n": REQUIRED},
      "candidate extremal index as the mean reciprocal exceedance time of the tail process",
      "theta = E[1 / Leb{t : |Y_t| > 1}]")
def _t_cand_exc(ctx, tail, n):
    return _report(tc.candidate_via_exceedance(tail, n, ctx.seed, ctx.workers), **_closed_form(tail)), None


@task("candidate_via_theta", "tail", {"n": REQUIRED},
      "candidate extremal index from the spectral tail process",
      "theta = E[sup_t |Theta_t|^alpha / int |Theta_t|^alpha dt]")
def _t_cand_theta(ctx, tail, n):
    return _report(tc.candidate_via_theta(tail, n=n, seed=ctx.seed, workers=ctx.workers), **_closed_form(tail)), None


@task("candidate_agreement", "tail", {"n": REQUIRED},
      "agreement of the exceedance-time and spectral routes to the candidate extremal index",
      "E[1 / Leb{|Y| > 1}] = E[(Theta*)^alpha / ||Theta||_alpha^alpha]")
def _t_cand_agree(ctx, tail, n):
    a = tc.candidate_via_exceedance(tail, n, ctx.seed, ctx.workers)
    b = tc.candidate_via_theta(tail, n=n, seed=ctx.seed, workers=ctx.workers)
    return {"via_exceedance": a.to_dict(), "via_theta": b.to_dict(), "zscore": tc.zscore(a, b),
            "abs_zscore": abs(tc.zscore(a, b)), **_closed_form(tail)}, None


@task("candidate_conditional_shotnoise", "model", {"n": REQUIRED},
      "shot-noise candidate extremal index by conditioning on the session covering time 0",
      "theta = E[1 / eta~] with eta~ the length-biased session length")
def _t_cand_cond(ctx, model, n):
    if not isinstance(model, ps.ShotNoise):
        raise ConfigError("candidate_conditional_shotnoise needs a shot_noise model")
    rep = tc.candidate_conditional_shotnoise(model.eta, model.alpha, n, ctx.seed)
    return _report(rep, closed_form=model.theta), None


@task("time_change_panel", "tail", {"n": REQUIRED},
      "time-change formula on a fixed panel of 20 bounded functionals, shifts and levels",
      "E[H(Y) 1{|Y_t| > x}] = x^-alpha E[H(x B^t Y) 1{x |Y_-t| > 1}]")
def _t_tcf(ctx, tail, n):
    rows = []
    for r in tc.time_change_panel(tail, tc.standard_panel(tail.norm), n, ctx.seed, ctx.workers):
        rows.append({"H": r["H"], "t": r["t"], "x": r["x"], "lhs": r["lhs"].estimate,
                     "lhs_se": r["lhs"].std_error, "rhs": r["rhs"].estimate, "rhs_se": r["rhs"].std_error,
                     "zscore": r["zscore"]})
    return {"rows": rows, "max_abs_z": max(abs(r["zscore"]) for r in rows), "tail_law": tail.name}, rows


@task("tilt_shift", "tail", {"n": REQUIRED, "t_values": [0.5, -1.0, 2.0]},
      "tilt-shift identity of the spectral process for 0-homogeneous functionals",
      "E[|Z_t|^alpha H0(Z)] = E[|Z_0|^alpha H0(B^t Z)]")
def _t_tilt(ctx, tail, n, t_values):
    spectral = tc.spectral_from_tail(tail)
    rows = []
    for h in (tc.sup_ratio(-1.0, 1.0, tail.norm), tc.exceedance_ratio(0.5, 10.0, tail.norm)):
        for t in t_values:
            r = tc.check_tilt_shift(spectral, h, float(t), n, ctx.seed, ctx.workers)
            rows.append({"H": h.name, "t": float(t), "lhs": r["lhs"].estimate, "rhs": r["rhs"].estimate,
                         "zscore": r["zscore"]})
    return {"rows": rows, "max_abs_z": max(abs(r["zscore"]) for r in rows), "tail_law": tail.name}, rows


@task("independence_tilted", "tail", {"n": REQUIRED, "x_values": [1.5, 2.0, 4.0]},
      "Pareto factorisation of the exceedance-tilted law for a shift-invariant 0-homogeneous S",
      "E[S(Y) 1{Y* > x} / E(Y)] = x^-alpha E[S(Y) / E(Y)]")
def _t_indep(ctx, tail, n, x_values):
    S = tc.exceedance_ratio(0.5, 10.0, tail.norm)
    rows = []
    for x in x_values:
        r = tc.check_independence_tilted(tail, S, float(x), n, ctx.seed, ctx.workers)
        rows.append({"x": float(x), "lhs": r["lhs"].estimate, "rhs": r["rhs"].estimate, "zscore": r["zscore"]})
    return {"rows": rows, "max_abs_z": max(abs(r["zscore"]) for r in rows), "tail_law": tail.name}, rows


@task("forward_identity", "tail", {"n": REQUIRED, "signed": False},
      "forward identity linking the cluster process Q to the spectral tail process",
      "theta E[(int |Q_t| dt)^alpha] = alpha E[(int_0^inf |Theta_t| dt)^(alpha - 1)]")
def _t_forward(ctx, tail, n, signed):
    theta = _theta_for(tail, ctx, n)
    r = tc.check_forward_identity(tail, _q_sampler(tail, ctx, n), theta, tail.alpha, n, ctx.seed,
                                  ctx.workers, bool(signed), tail.norm)
    return {"lhs": r["lhs"].to_dict(), "rhs": r["rhs"].to_dict(), "zscore": r["zscore"],
            "abs_zscore": abs(r["zscore"]), "tail_law": tail.name, "alpha": tail.alpha}, None


@task("q_normalization", "tail", {"n": REQUIRED},
      "normalisation of the cluster process",
      "theta int E[|Q_t|^alpha] dt = 1")
def _t_qnorm(ctx, tail, n):
    theta = _theta_for(tail, ctx, n)
    r = tc.check_q_normalization(_q_sampler(tail, ctx, n), theta, tail.alpha, n, ctx.seed, ctx.workers,
                                 tail.norm, tail.chunk)
    return {"product": r["product"].to_dict(), "zscore": r["zscore"], "abs_zscore": abs(r["zscore"]),
            "tail_law": tail.name}, None


@task("anchor_density", "tail", {"n": REQUIRED, "anchor": "infargmax", "t_grid": REQUIRED},
      "density of an anchoring time (infargmax or first exceedance) of the tail process",
      "f(t) = E[|Theta_{I(Theta) - t}|^alpha / ||Theta||_alpha^alpha]")
def _t_anchor(ctx, tail, n, anchor, t_grid):
    r = tc.anchor_density(tail, anchor, _grid(t_grid), n, ctx.seed, ctx.workers)
    rows = [{"t": t, "f_hat": f, "se": s} for t, f, s in zip(r["t"], r["f_hat"], r["se"])]
    out = {"mass": r["mass"], "anchor": anchor, "tail_law": tail.name, "rows": rows}
    if "continuity_probability" in r:
        out["continuity_probability"] = r["continuity_probability"]
    return out, rows


@task("pareto_independence", "tail", {"n": REQUIRED},
      "Pareto law of |Y_0| and its independence of the spectral process",
      "|Y_0| ~ Pareto(alpha), independent of Theta = Y / |Y_0|")
def _t_pareto(ctx, tail, n):
    r = tc.pareto_independence_check(tail, n, ctx.seed, workers=ctx.workers)
    r["abs_correlation_z"] = abs(r["correlation_z"])
    r["tail_law"] = tail.name
    return r, None


@task("gamma_variance", "tail", {"n": REQUIRED},
      "cluster-measure value of the squared log-occupation functional",
      "nu*(K_log^2) = 2 gamma^2 int E[(|Y_t| ^ 1)^alpha] dt, gamma = 1/alpha")
def _t_gamma(ctx, tail, n):
    return _report(cl.gamma_variance_functional(tail, n, ctx.seed, ctx.workers), tail_law=tail.name), None


FUNCTIONALS = {"K_e": cl.K_e, "K_log": cl.K_log, "K_log_squared": cl.K_log_squared}


@task("block_estimator", "model",
      {"T": REQUIRED, "r_T": REQUIRED, "threshold": REQUIRED, "functional": "K_e", "n_boot": 1000},
      "block estimator of a cluster-measure functional from one simulated path",
      "sum_i K(block_i / u) / (T_used P(|X_0| > u))")
def _t_block(ctx, model, T, r_T, threshold, functional, n_boot):
    if functional not in FUNCTIONALS:
        raise ConfigError(f"unknown functional {functional!r}; expected one of {sorted(FUNCTIONALS)}")
    K = FUNCTIONALS[functional]()
    path = model.simulate(rngmod.substream(ctx.seed, "block-path", float(T)), float(T)).path
    if "exceed_blocks" in threshold:
        u = cl.block_count_threshold(path, float(r_T), int(threshold["exceed_blocks"]))
        rep = cl.empirical_cluster_measure(cl.extract_blocks(path, float(r_T), u_T=u), K, None, n_boot, ctx.seed)
        level = {"u_T": u, "rule": f"exceed_blocks={int(threshold['exceed_blocks'])}"}
    elif "a_T" in threshold:
        a = ctx.scale(model, T, threshold["a_T"], threshold.get("calibration_n", 20_000_000))
        rep = cl.empirical_cluster_measure(cl.extract_blocks(path, float(r_T), a), K, 1.0 / float(T),
                                           n_boot, ctx.seed)
        level = {"a_T": a, "rule": "scale"}
    else:
        raise ConfigError("threshold needs 'exceed_blocks' or 'a_T'")
    return _report(rep, theta=model.theta, **level), None


def _window_scale(ctx, model, T, a_T, calibration_n):
    return ctx.scale(model, float(T), a_T, int(calibration_n))


@task("running_max_law", "model",
      {"T": REQUIRED, "n_windows": REQUIRED, "x_grid": REQUIRED, "x_range": None, "a_T": "calibrate",
       "calibration_n": 100_000_000, "theta": None, "batch": 50},
      "law of the scaled running maximum against its Frechet-type limit",
      "P(sup_[0,T] |X| <= a_T x) ~ exp(-theta x^-alpha)")
def _t_runmax(ctx, model, T, n_windows, x_grid, x_range, a_T, calibration_n, theta, batch):
    a = _window_scale(ctx, model, T, a_T, calibration_n)
    r = cl.running_max_law(model, float(T), _grid(x_grid), int(n_windows), a, theta, ctx.seed,
                           tuple(x_range) if x_range else None, int(batch), ctx.workers)
    return r, r["table"]


@task("cluster_count_poisson", "model",
      {"T": REQUIRED, "r_T": REQUIRED, "x": 1.0, "n_windows": REQUIRED, "a_T": "calibrate",
       "calibration_n": 100_000_000, "theta": None, "batch": 20},
      "Poisson goodness of fit of per-window counts of extreme blocks",
      "#{blocks with sup > a_T x} ~ Poisson(theta x^-alpha)")
def _t_counts(ctx, model, T, r_T, x, n_windows, a_T, calibration_n, theta, batch):
    a = _window_scale(ctx, model, T, a_T, calibration_n)
    r = cl.cluster_count_poisson_test(model, a, float(r_T), float(x), float(T), int(n_windows), ctx.seed,
                                      theta, int(batch), ctx.workers)
    r["a_T"] = a
    rows = [{"cell": f"{lo}-{hi}", "observed": o, "expected": e}
            for (lo, hi), o, e in zip(r["cells"], r["observed"], r["expected"])]
    return r, rows


@task("marginal_ks", "model", {"n": REQUIRED},
      "Kolmogorov-Smirnov distance of the one-point marginal to the unit Frechet(alpha) law",
      "P(X_0 <= y) = exp(-y^-alpha)")
def _t_marg(ctx, model, n):
    if model.kind not in ("max_stable_m3", "max_stable_brown_resnick"):
        raise ConfigError("marginal_ks needs a max-stable model")
    x = np.concatenate(rngmod.replicate(lambda r, s: model.marginal(r, s), int(n), ctx.seed, "marginal-ks",
                                        ctx.workers))
    ks = stats.kstest(x, stats.invweibull(model.alpha).cdf)
    return {"ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue), "n": int(n)}, None


@task("max_stable_prelimit", "model", {"n": REQUIRED, "T_values": [10.0, 100.0], "x_values": [0.5, 1.0, 2.0]},
      "running maximum of a moving-maxima process at finite T against the limit and the exact display",
      "-log P(sup_[0,T] eta <= T^(1/alpha) x) = x^-alpha theta int E[sup_[-s,T-s] Q^alpha] ds / T")
def _t_prelimit(ctx, model, n, T_values, x_values):
    if not isinstance(model, ps.MaxStableM3):
        raise ConfigError("max_stable_prelimit needs a max_stable_m3 model")
    rows = []
    for T in T_values:
        T = float(T)
        sups = np.concatenate(rngmod.replicate(lambda r, s: model.window_sup(r, s, a=0.0, b=T), int(n),
                                               ctx.seed, ("prelimit", T), ctx.workers)) / T ** (1 / model.alpha)
        exact_c = model.sup_moment(T) / T
        for x in x_values:
            p = float(np.mean(sups <= x))
            est = -math.log(p)
            se = math.sqrt((1 - p) / (p * len(sups)))
            limit = model.theta * x ** (-model.alpha)
            exact = exact_c * x ** (-model.alpha)
            rows.append({"T": T, "x": float(x), "estimate": est, "se": se, "limit": limit, "exact": exact,
                         "z_limit": (est - limit) / se, "z_exact": (est - exact) / se})
    return {"rows": rows, "max_abs_z_limit": max(abs(r["z_limit"]) for r in rows),
            "max_abs_z_exact": max(abs(r["z_exact"]) for r in rows), "theta": model.theta}, rows


@task("sup_tail", "model", {"n": REQUIRED, "x": REQUIRED, "a": 0.0, "b": 1.0, "points": None},
      "tail of the window supremum of a truncated stable series and its sensitivity to the truncation K",
      "x^alpha P(sup_[a,b] |X| > x) -> theta int E[sup_[a-s,b-s] |Q|^alpha] ds")
def _t_suptail(ctx, model, n, x, a, b, points):
    if not isinstance(model, ps.SumStableSeries):
        raise ConfigError("sup_tail needs a sum_stable_series model")
    ks = [int(k) for k in (points or [model.points, 2 * model.points])]
    x, a, b = float(x), float(a), float(b)

    def chunk(r, s):
        sups = model.window_sups(r, s, a, b, ks)
        return np.stack([sups[k] > x for k in ks], axis=1)

    hits = rngmod.replicate_concat(chunk, int(n), ctx.seed, ("sup-tail", x, a, b), ctx.workers)
    target = model.sup_moment(b - a)
    rows = []
    for j, k in enumerate(ks):
        p = float(hits[:, j].mean())
        rows.append({"K": k, "value": x ** model.alpha * p,
                     "se": x ** model.alpha * math.sqrt(p * (1 - p) / len(hits)),
                     "remainder_order": ps.remainder_order(x, k, model.alpha)})
    base = rows[0]["value"]
    return {"rows": rows, "target": target, "value": base, "rel_error": abs(base - target) / target,
            "k_sensitivity": abs(rows[-1]["value"] - base) / base if base > 0 else float("inf")}, rows


@task("extremal_index_inequality", "none", {"pairs": REQUIRED},
      "running-maximum extremal index against the candidate extremal index",
      "theta_hat <= candidate_hat + 3 SE")
def _t_inequality(ctx, _, pairs):
    rows = []
    for pair in pairs:
        rm, cand = pair.get("running_max"), pair.get("candidate")
        for ref in (rm, cand):
            if ref not in ctx.results:
                raise ConfigError(f"extremal_index_inequality refers to unknown or later task {ref!r}")
        rr, cr = ctx.results[rm], ctx.results[cand]
        th, th_se = rr["theta_running_max"], rr["theta_running_max_se"]
        cv, cv_se = cr["estimate"], cr["std_error"]
        se = math.hypot(th_se, cv_se)
        rows.append({"running_max": rm, "candidate": cand, "theta_hat": th, "candidate_hat": cv, "se": se,
                     "excess": th - cv - 3 * se})
    return {"rows": rows, "max_excess": max(r["excess"] for r in rows)}, rows


@task("anticlustering", "model",
      {"T": REQUIRED, "r_T": REQUIRED, "t_grid": REQUIRED, "x": 1.0, "n_events": 500, "a_T": "calibrate",
       "calibration_n": 20_000_000},
      "conditional probability of a second extreme at distance at least t from an extreme at 0",
      "P(sup_{t <= |s| <= r_T} |X_s| > a_T x | |X_0| > a_T)")
def _t_anticlust(ctx, model, T, r_T, t_grid, x, n_events, a_T, calibration_n):
    a = _window_scale(ctx, model, T, a_T, calibration_n)
    rows = cl.anticlustering_diagnostic(model, a, float(r_T), _grid(t_grid), float(x), int(n_events), ctx.seed)
    return {"rows": rows, "a_T": a}, rows


@task("conditional_tail_paths", "model", {"x_levels": REQUIRED, "L": REQUIRED, "n": REQUIRED, "n_tail": 100_000},
      "paths rescaled by x given |X_0| > x, compared with the tail process as x grows",
      "law(X / x | |X_0| > x) -> law(Y)")
def _t_condpaths(ctx, model, x_levels, L, n, n_tail):
    rows = cl.conditional_tail_paths(model, [float(v) for v in x_levels], float(L), int(n), ctx.seed,
                                     n_tail=int(n_tail))
    return {"rows": rows}, rows


@task("tightness", "model", {"a": REQUIRED, "b": REQUIRED, "delta_grid": REQUIRED, "x": REQUIRED, "eps": 1.0,
                             "n": 2000},
      "conditional size of the w' modulus of continuity as the mesh delta shrinks",
      "P(w'(X, a, b, delta) > x eps) / P(|X_0| > x)")
def _t_tight(ctx, model, a, b, delta_grid, x, eps, n):
    rows = cl.tightness_diagnostic(model, float(a), float(b), _grid(delta_grid), float(x), float(eps), int(n),
                                   ctx.seed)
    return {"rows": rows}, rows


def describe(task_name: str | None = None) -> str:
    if task_name is None:
        return "\n".join(f"{t.name}: {t.summary}" for t in TASKS.values())
    if task_name not in TASKS:
        raise KeyError(f"unknown task {task_name!r}; expected one of {sorted(TASKS)}")
    t = TASKS[task_name]
    params = ", ".join(k if v is REQUIRED else f"{k}={v!r}" for k, v in t.params.items())
    return f"{t.name}\n  {t.summary}\n  computes: {t.computes}\n  acts on: {t.target}\n  params: {params}"


# serialization


def jsonable(obj):
    if isinstance(obj, tc.EstimatorReport):
        return jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def _number(v) -> float:
    # "inf" and "nan" strings come back from the JSON form
    return float(v)


def lookup(payload, key: str):
    cur = payload
    for part in key.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        elif isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            raise KeyError(key)
    return cur


# checks


CHECK_KEYS = {"key", "target", "target_key", "abs", "rel", "max", "min", "zmax", "se_key", "slack", "equals"}


def evaluate_check(result: dict, check: dict) -> dict:
    try:
        raw = lookup(result, check["key"])
    except KeyError:
        return {**check, "value": None, "passed": False, "reason": f"key {check['key']!r} missing from result"}
    if "equals" in check:
        return {**check, "value": raw, "passed": raw == check["equals"]}
    value = _number(raw)
    target = check.get("target")
    if "target_key" in check:
        target = lookup(result, check["target_key"])
    target = None if target is None else _number(target)
    ok = math.isfinite(value)
    if "abs" in check:
        ok &= abs(value - target) <= check["abs"]
    if "rel" in check:
        ok &= abs(value - target) <= check["rel"] * abs(target)
    if "max" in check:
        ok &= value < check["max"]
    if "min" in check:
        ok &= value > check["min"]
    if "zmax" in check:
        se = _number(lookup(result, check.get("se_key", "std_error")))
        ok &= abs(value - target) <= check["zmax"] * se + check.get("slack", 0.0)
    out = {**check, "value": value, "passed": bool(ok)}
    if target is not None:
        out["target"] = target
    return out


# config


TOP_KEYS = {"name", "description", "seed", "replications", "output", "model", "tail_law", "tolerances", "tasks"}
TASK_KEYS = {"id", "task", "model", "tail_law", "params", "checks", "seed"}


@dataclass
class TaskSpec:
    id: str
    task: Task
    params: dict
    checks: list
    model_spec: dict | None
    tail_spec: dict | None
    seed: int | None


@dataclass
class ExperimentConfig:
    name: str
    seed: int | None
    replications: int | None
    output: str | None
    tasks: list[TaskSpec]
    raw: dict

    def hash(self, seed: int) -> str:
        canon = json.dumps(jsonable({"config": self.raw, "seed": seed}), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _check_spec(check, where):
    if not isinstance(check, dict) or "key" not in check:
        raise ConfigError(f"{where} must be a mapping with a 'key'")
    extra = sorted(set(check) - CHECK_KEYS)
    if extra:
        raise ConfigError(f"unknown key {where}.{extra[0]!r}")
    needs_target = any(k in check for k in ("abs", "rel", "zmax"))
    if needs_target and "target" not in check and "target_key" not in check:
        raise ConfigError(f"{where} needs 'target' or 'target_key'")
    return dict(check)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    extra = sorted(set(raw) - TOP_KEYS)
    if extra:
        raise ConfigError(f"unknown top-level key {extra[0]!r}")
    if not raw.get("tasks"):
        raise ConfigError("config has no tasks")
    overrides = raw.get("tolerances") or {}
    default_n = raw.get("replications")
    specs, seen = [], set()
    for i, t in enumerate(raw["tasks"]):
        where = f"tasks[{i}]"
        if not isinstance(t, dict):
            raise ConfigError(f"{where} must be a mapping")
        bad = sorted(set(t) - TASK_KEYS)
        if bad:
            raise ConfigError(f"unknown key {where}.{bad[0]!r}")
        tag = t.get("task")
        if tag not in TASKS:
            raise ConfigError(f"unknown task tag {where}.task = {tag!r}; expected one of {sorted(TASKS)}")
        task_def = TASKS[tag]
        tid = str(t.get("id") or f"{i:02d}-{tag}")
        if tid in seen:
            raise ConfigError(f"duplicate task id {tid!r}")
        seen.add(tid)
        params = dict(t.get("params") or {})
        bad = sorted(set(params) - set(task_def.params))
        if bad:
            raise ConfigError(f"unknown parameter {where}.params.{bad[0]!r} for task {tag}")
        for k, default in task_def.params.items():
            if k not in params:
                if k == "n" and default is REQUIRED and default_n is not None:
                    params[k] = default_n
                elif default is REQUIRED:
                    raise ConfigError(f"missing parameter {where}.params.{k!r} for task {tag}")
                else:
                    params[k] = default
        if "r_T" in params and "T" in params and float(params["r_T"]) > float(params["T"]):
            raise ConfigError(f"{where}.params.r_T = {params['r_T']} exceeds T = {params['T']}")
        checks = overrides.get(tid, t.get("checks") or [])
        checks = [_check_spec(c, f"{where}.checks[{j}]") for j, c in enumerate(checks)]
        model_spec = t.get("model", raw.get("model"))
        tail_spec = t.get("tail_law", raw.get("tail_law"))
        if task_def.target == "model" and model_spec is None:
            raise ConfigError(f"{where} (task {tag}) needs a model")
        if task_def.target == "tail" and tail_spec is None and model_spec is None:
            raise ConfigError(f"{where} (task {tag}) needs a tail_law or a model")
        specs.append(TaskSpec(tid, task_def, params, checks, model_spec, tail_spec, t.get("seed")))
    unknown = sorted(set(overrides) - seen)
    if unknown:
        raise ConfigError(f"tolerances refer to unknown task id {unknown[0]!r}")
    return ExperimentConfig(raw.get("name", "experiment"), raw.get("seed"), default_n, raw.get("output"), specs, raw)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw)


# running


@dataclass
class RunManifest:
    config_hash: str
    version: str
    seed: int
    started: str
    finished: str
    tasks: list[dict]

    @property
    def passed(self) -> bool:
        return all(t["passed"] for t in self.tasks)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version, "seed": self.seed,
                "started": self.started, "finished": self.finished, "passed": self.passed, "tasks": self.tasks}


def _target(spec: TaskSpec, cache: dict):
    """Model or tail law of a task, memoised by spec; built for every task before any simulation."""
    kind = spec.task.target
    if kind == "none":
        return None
    if kind == "tail" and spec.tail_spec is not None:
        key = ("tail", json.dumps(spec.tail_spec, sort_keys=True))
        if key not in cache:
            cache[key] = build_tail_law(spec.tail_spec, f"{spec.id}.tail_law")
        return cache[key]
    key = ("model", json.dumps(spec.model_spec, sort_keys=True))
    if key not in cache:
        cache[key] = build_model(spec.model_spec, f"{spec.id}.model")
    if kind == "model":
        return cache[key]
    tkey = ("model-tail", key[1])
    if tkey not in cache:
        cache[tkey] = cache[key].tail_law()
    return cache[tkey]


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _csv(rows: list[dict], seed: int, config_hash: str, task_id: str) -> str:
    rows = [jsonable(r) for r in rows]
    cols = ["task_id", "seed", "config_hash"]
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"task_id": task_id, "seed": seed, "config_hash": config_hash,
                    **{k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in r.items()}})
    return buf.getvalue()


def _scalar_row(result: dict) -> dict:
    return {k: v for k, v in result.items() if isinstance(v, (int, float, str, bool, np.floating, np.integer))}


def run(config, seed: int | None = None, workers: int = 1, out=None, ci: bool = False,
        log: Callable[[str], None] | None = None) -> RunManifest:
    """Execute every task of ``config`` (a path or an `ExperimentConfig`) and write the outputs."""
    if not isinstance(config, ExperimentConfig):
        cfg_path = Path(config)
        config = load_config(cfg_path)
        default_out = Path("results") / cfg_path.stem
    else:
        default_out = Path("results") / config.name
    seed = seed if seed is not None else config.seed
    if seed is None:
        if ci:
            raise ConfigError("CI mode needs a seed in the config or on the command line")
        seed = int(np.random.SeedSequence().entropy % (2 ** 63))
    seed = int(seed)
    out = Path(out or config.output or default_out)
    config_hash = config.hash(seed)
    # build every model before simulating so configuration errors surface first
    cache: dict = {}
    targets = [_target(spec, cache) for spec in config.tasks]
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    ctx = TaskContext(seed, int(workers), config_hash)
    outcomes = []
    for spec, target in zip(config.tasks, targets):
        if log:
            log(f"[{spec.id}] {spec.task.name}")
        tctx = ctx if spec.seed is None else TaskContext(int(spec.seed), ctx.workers, config_hash, ctx.results,
                                                         ctx.scales)
        try:
            result, rows = spec.task.run(tctx, target, **spec.params)
        except (ConfigError, ps.UnsupportedConfiguration):
            raise
        except Exception as exc:
            if not ci:
                raise
            result, rows = {"error": f"{type(exc).__name__}: {exc}"}, None
        result = jsonable(result)
        ctx.results[spec.id] = result
        checks = [evaluate_check(result, c) for c in spec.checks] if "error" not in result else \
            [{"key": "error", "value": result["error"], "passed": False}]
        payload = {"id": spec.id, "task": spec.task.name, "seed": tctx.seed, "config_hash": config_hash,
                   "params": spec.params, "target": spec.tail_spec or spec.model_spec, "result": result}
        json_path, csv_path = out / f"{spec.id}.json", out / f"{spec.id}.csv"
        json_path.write_text(dumps(payload))
        csv_path.write_text(_csv(rows if rows else [_scalar_row(result)], tctx.seed, config_hash, spec.id))
        passed = all(c["passed"] for c in checks)
        outcomes.append({"id": spec.id, "task": spec.task.name, "outputs": [json_path.name, csv_path.name],
                         "checks": jsonable(checks), "passed": passed})
        if log:
            log(f"[{spec.id}] {'pass' if passed else 'FAIL'}")
    manifest = RunManifest(config_hash, __version__, seed, started, _now(), outcomes)
    (out / "manifest.json").write_text(dumps(manifest.to_dict()))
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rvpaths", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the tasks of a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--ci", action="store_true", help="require a seed and record task errors as failures")
    sub.add_parser("list-models", help="list the process model classes")
    p_desc = sub.add_parser("describe", help="describe a task (all tasks without an argument)")
    p_desc.add_argument("task", nargs="?")
    args = parser.parse_args(argv)

    if args.command == "list-models":
        for name in list_models():
            print(f"{name}: {MODEL_DESCRIPTIONS[name]}")
        return 0
    if args.command == "describe":
        try:
            print(describe(args.task))
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return 2
        return 0
    try:
        manifest = run(args.config, args.seed, args.workers, args.out, args.ci,
                       log=lambda m: print(m, file=sys.stderr))
    except (ConfigError, ps.UnsupportedConfiguration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for t in manifest.tasks:
        print(f"{'PASS' if t['passed'] else 'FAIL'} {t['id']}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
