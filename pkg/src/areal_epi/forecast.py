"""One-step-ahead forecasts, component decomposition and forward simulation."""
from __future__ import annotations

import csv
import logging
import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from os import PathLike
from typing import TextIO

import numpy as np

from . import kernels
from .data import CountPanel, RegionCovariates
from .errors import ExplosionGuard, SingularInformation
from .estimation import FitOptions, FitResult, fit as fit_model
from .graph import RegionSet, WeightMatrix
from .model import ModelSpec, Params, mean, predictor_arrays

DEFAULT_CAP = 1e9
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Forecast:
    regions: RegionSet
    horizon_date: dt.date
    mu_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float = 0.8
    components: np.ndarray | None = None  # R x 3 (within, between, endemic)

    @property
    def total(self) -> float:
        return float(self.mu_hat.sum())


@dataclass(frozen=True)
class Decomposition:
    regions: RegionSet
    proportions: np.ndarray  # R x 3, time-averaged
    per_day: np.ndarray | None = None  # R x (T-1) x 3


def nb_interval(mu, psi, level: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Equal-tailed integer interval ``[q_(1-level)/2, q_(1+level)/2]`` of NB(mu, psi).

    Each endpoint is the smallest integer whose cdf reaches the tail
    probability, found by exact pmf summation.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    psi = np.broadcast_to(np.asarray(psi, dtype=float), mu.shape)
    lo = kernels.nb_quantile(mu, psi, (1.0 - level) / 2.0)
    hi = kernels.nb_quantile(mu, psi, (1.0 + level) / 2.0)
    return lo, hi


def _psi_vector(params: Params, spec: ModelSpec, R: int) -> np.ndarray:
    if spec.overdispersion == "none":
        return np.zeros(R)
    return params.psi if params.psi.size == R else np.full(R, params.psi[0])


def _next_mean(params: Params, spec: ModelSpec, cov: RegionCovariates, y_prev: np.ndarray,
               day: int, weights: WeightMatrix | None) -> np.ndarray:
    """R x 3 component means for 1-based ``day`` given counts of the previous day."""
    lam, phi, nu = predictor_arrays(params, spec, cov, [day + spec.time_shift])
    out = np.zeros((y_prev.size, 3))
    if spec.within:
        out[:, 0] = lam * y_prev
    if spec.between:
        q = y_prev if spec.between_uses_counts else y_prev / cov.pop_share
        out[:, 1] = phi * (weights.entries.T @ q)
    if spec.endemic:
        out[:, 2] = cov.pop_share * nu[:, 0]
    return out


def one_step_ahead(result: FitResult, panel: CountPanel, cov: RegionCovariates,
                   graph: WeightMatrix | None = None, level: float = 0.8,
                   allow_unconverged: bool = False) -> Forecast:
    """Plug-in forecast for the day after the last day of ``panel``."""
    if not result.converged and not allow_unconverged:
        raise ValueError("fit did not converge; pass allow_unconverged=True to forecast anyway")
    spec = result.spec if graph is None else result.spec.with_weights(graph)
    return forecast_from_params(result.params, spec, panel, cov, level)


def forecast_from_params(params: Params, spec: ModelSpec, panel: CountPanel,
                         cov: RegionCovariates, level: float = 0.8) -> Forecast:
    T = panel.n_days
    comps = _next_mean(params, spec, cov, panel.counts[:, -1].astype(float), T + 1, spec.weights)
    mu = comps.sum(axis=1)
    lo, hi = nb_interval(mu, _psi_vector(params, spec, panel.n_regions), level)
    return Forecast(panel.regions, panel.days[-1] + dt.timedelta(days=1), mu, lo, hi, level, comps)


def decompose(result: FitResult, panel: CountPanel, cov: RegionCovariates,
              graph: WeightMatrix | None = None, per_day: bool = False) -> Decomposition:
    """Share of each component in the fitted mean, averaged over days 2..T."""
    spec = result.spec if graph is None else result.spec.with_weights(graph)
    return decompose_params(result.params, spec, panel, cov, per_day)


def decompose_params(params: Params, spec: ModelSpec, panel: CountPanel,
                     cov: RegionCovariates, per_day: bool = False) -> Decomposition:
    m = mean(params, spec, panel, cov)
    stack = np.stack([m.within, m.between, m.endemic], axis=-1)
    total = stack.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0, stack / total, np.nan)
    # days with zero total mean (endemic off, no lagged counts) carry no share
    prop = np.nanmean(share, axis=1)
    prop = np.where(np.isnan(prop), 0.0, prop)
    return Decomposition(panel.regions, prop, share if per_day else None)


def simulate(params: Params, spec: ModelSpec, graph: WeightMatrix | None, cov: RegionCovariates,
             T: int, y0, seed=None, start_date: dt.date = dt.date(2020, 1, 1),
             cap: float = DEFAULT_CAP) -> CountPanel:
    """Draw a T-day panel from the model, starting from day-1 counts ``y0``.

    Multi-day trajectories are simulations, not forecasts.  Raises
    :class:`ExplosionGuard` when any mean exceeds ``cap``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = graph if graph is not None else spec.weights
    R = cov.pop_share.size
    y0 = np.asarray(y0)
    if y0.shape != (R,) or (y0 < 0).any():
        raise ValueError("y0 must hold one nonnegative count per region")
    if T < 2:
        raise ValueError("T must be >= 2")
    psi = _psi_vector(params, spec, R)
    y = np.zeros((R, T), dtype=np.int64)
    y[:, 0] = y0
    for t in range(1, T):
        mu = _next_mean(params, spec, cov, y[:, t - 1].astype(float), t + 1, weights).sum(axis=1)
        bad = ~(mu <= cap)
        if bad.any():
            r = int(np.argmax(bad))
            raise ExplosionGuard(cov.regions.ids[r], (start_date + dt.timedelta(days=t)).isoformat(),
                                 float(mu[r]), cap)
        y[:, t] = draw_counts(mu, psi, rng)
    days = tuple(start_date + dt.timedelta(days=k) for k in range(T))
    return CountPanel(y, days, cov.regions)


def draw_counts(mu: np.ndarray, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """NB(mu, psi) draws (Poisson where ``psi == 0``); ``mu`` and ``psi`` broadcast."""
    mu, psi = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(psi, dtype=float))
    out = np.zeros(mu.shape, dtype=np.int64)
    pos = mu > 0
    pois = pos & (psi == 0)
    nb = pos & (psi > 0)
    if pois.any():
        out[pois] = rng.poisson(mu[pois])
    if nb.any():
        k = 1.0 / psi[nb]
        out[nb] = rng.negative_binomial(k, k / (k + mu[nb]))
    return out


def replicate_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent per-replicate seeds derived from a master seed."""
    return np.random.SeedSequence(seed).spawn(n)


def interval_coverage(spec: ModelSpec, params: Params, graph: WeightMatrix | None,
                      cov: RegionCovariates, n_reps: int, seed, T: int = 40, y0=None,
                      level: float = 0.8, refit: bool = False,
                      fit_opts: FitOptions = FitOptions(), n_jobs: int = 1,
                      cap: float = DEFAULT_CAP) -> np.ndarray:
    """Per-region fraction of replicates whose day T+1 count lies in the interval.

    Each replicate simulates T+1 days, builds the one-step interval from the
    first T (with the true parameters, or refitted ones when ``refit``), and
    checks the held-out count.  Refitted replicates whose information matrix
    is singular (a component vanishing from the data) are dropped.
    """
    weights = graph if graph is not None else spec.weights
    spec = spec.with_weights(weights)
    R = cov.pop_share.size
    if y0 is None:
        y0 = np.round(_next_mean(params, spec, cov, np.zeros(R), 1, weights)[:, 2]).astype(np.int64)
    seeds = replicate_seeds(seed, n_reps)

    def one(ss):
        rng = np.random.default_rng(ss)
        full = simulate(params, spec, weights, cov, T + 1, y0, rng, cap=cap)
        train = full.head(T)
        if refit:
            try:
                p = fit_model(spec, train, cov, weights, fit_opts).params
            except SingularInformation as exc:
                log.warning("replicate dropped: refit failed (%s)", exc)
                return np.full(R, np.nan)
        else:
            p = params
        fc = forecast_from_params(p, spec, train, cov, level)
        y_next = full.counts[:, T]
        return (fc.lo <= y_next) & (y_next <= fc.hi)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            hits = list(ex.map(one, seeds))
    else:
        hits = [one(s) for s in seeds]
    hits = np.array(hits, dtype=float)
    if np.isnan(hits).all():
        raise SingularInformation("every refitted replicate failed")
    return np.nanmean(hits, axis=0)


# --------------------------------------------------------------------------
# CSV emitters


def write_forecast(fc: Forecast, dest: TextIO | str | PathLike, observed=None) -> None:
    """``region_id,acronym,observed,predicted,loNN,hiNN`` plus a national total row."""
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_forecast(fc, fh, observed)
    pct = f"{round(fc.level * 100):d}"
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["region_id", "acronym", "observed", "predicted", f"lo{pct}", f"hi{pct}"])
    obs = [""] * len(fc.mu_hat) if observed is None else [int(v) for v in observed]
    for (rid, name), o, mu, lo, hi in zip(fc.regions.regions, obs, fc.mu_hat, fc.lo, fc.hi):
        w.writerow([rid, name, o, f"{mu:.1f}", _fmt_q(lo), _fmt_q(hi)])
    total_obs = "" if observed is None else int(np.sum(observed))
    w.writerow(["TOTAL", "", total_obs, f"{fc.total:.1f}", "", ""])


def _fmt_q(v) -> str:
    return "inf" if int(v) == kernels.QMAX else str(int(v))


def write_decomposition(dec: Decomposition, dest: TextIO | str | PathLike) -> None:
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_decomposition(dec, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["region_id", "within", "between", "endemic"])
    for rid, row in zip(dec.regions.ids, dec.proportions):
        w.writerow([rid] + [repr(float(v)) for v in row])
