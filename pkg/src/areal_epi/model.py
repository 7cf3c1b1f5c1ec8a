"""Three-component mean, negative-binomial likelihood and its derivatives.

For region r and day t (t = 2..T; day 1 is conditioned on)::

    mu[r,t] = lambda[r] * Y[r,t-1]
            + phi[r] * sum_s w[s,r] * Q[s,t-1]
            + e[r] * nu[r,t]

    log lambda[r] = alpha_lambda + b_lambda[r]
    log phi[r]    = alpha_phi + b_phi[r] + beta_phi_pop * log e[r]
    log nu[r,t]   = alpha_nu + b_nu[r] + beta_nu_t*t + beta_nu_t2*t**2
                    + beta_nu_age * log a[r]

and ``Y[r,t] ~ NB(mu, psi)`` with ``Var = mu (1 + psi mu)``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import digamma, polygamma

from . import kernels
from .data import CountPanel, RegionCovariates
from .errors import DimensionMismatch, NonFiniteGradient, NonFiniteInput, SchemaMismatch
from .graph import WeightMatrix

COMPONENTS = ("lambda", "phi", "nu")
OVERDISPERSION = ("shared", "per_region", "none")

#: means below this are replaced by it; keeps log-likelihoods finite
MU_FLOOR = 1e-300


class LikelihoodGuardWarning(RuntimeWarning):
    """A mean hit ``MU_FLOOR`` while its count was positive."""


@dataclass(frozen=True)
class ModelSpec:
    within: bool = True
    between: bool = True
    endemic: bool = True
    lambda_random: bool = True
    phi_random: bool = True
    phi_log_pop: bool = True
    nu_random: bool = True
    nu_t: bool = True
    nu_t2: bool = True
    nu_log_over65: bool = True
    overdispersion: str = "shared"
    between_uses_counts: bool = False
    time_shift: int = 0
    weights: WeightMatrix | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (self.within or self.between or self.endemic):
            raise ValueError("at least one component must be enabled")
        if self.overdispersion not in OVERDISPERSION:
            raise ValueError(f"overdispersion must be one of {OVERDISPERSION}")

    def enabled(self, comp: str) -> bool:
        return {"lambda": self.within, "phi": self.between, "nu": self.endemic}[comp]

    def random(self, comp: str) -> bool:
        flag = {"lambda": self.lambda_random, "phi": self.phi_random, "nu": self.nu_random}[comp]
        return flag and self.enabled(comp)

    @property
    def random_components(self) -> tuple[str, ...]:
        return tuple(c for c in COMPONENTS if self.random(c))

    def with_weights(self, weights: WeightMatrix | None) -> "ModelSpec":
        return replace(self, weights=weights)

    def to_dict(self) -> dict:
        return {
            "lambda_terms": {"enabled": self.within, "random_intercept": self.lambda_random},
            "phi_terms": {"enabled": self.between, "random_intercept": self.phi_random,
                          "log_pop_share": self.phi_log_pop},
            "nu_terms": {"enabled": self.endemic, "random_intercept": self.nu_random,
                         "t": self.nu_t, "t_squared": self.nu_t2, "log_over65": self.nu_log_over65},
            "overdispersion": self.overdispersion,
            "between_uses_counts": self.between_uses_counts,
            "time_shift": self.time_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        lt, pt, nt = d.get("lambda_terms", {}), d.get("phi_terms", {}), d.get("nu_terms", {})
        return cls(
            within=lt.get("enabled", True), lambda_random=lt.get("random_intercept", True),
            between=pt.get("enabled", True), phi_random=pt.get("random_intercept", True),
            phi_log_pop=pt.get("log_pop_share", True),
            endemic=nt.get("enabled", True), nu_random=nt.get("random_intercept", True),
            nu_t=nt.get("t", True), nu_t2=nt.get("t_squared", True),
            nu_log_over65=nt.get("log_over65", True),
            overdispersion=d.get("overdispersion", "shared"),
            between_uses_counts=d.get("between_uses_counts", False),
            time_shift=d.get("time_shift", 0),
        )


@dataclass
class Params:
    """Model parameters on their natural scale (intercepts on the log scale)."""

    n_regions: int
    alpha_lambda: float = 0.0
    alpha_phi: float = 0.0
    alpha_nu: float = 0.0
    b_lambda: np.ndarray | None = None
    b_phi: np.ndarray | None = None
    b_nu: np.ndarray | None = None
    beta_phi_pop: float = 0.0
    beta_nu_t: float = 0.0
    beta_nu_t2: float = 0.0
    beta_nu_age: float = 0.0
    sigma2: np.ndarray | None = None
    psi: np.ndarray | float = 0.0

    def __post_init__(self):
        R = self.n_regions
        for name in ("b_lambda", "b_phi", "b_nu"):
            v = getattr(self, name)
            v = np.zeros(R) if v is None else np.array(v, dtype=float)
            if v.shape != (R,):
                raise DimensionMismatch(f"{name} has shape {v.shape}, expected ({R},)")
            setattr(self, name, v)
        s2 = np.ones(3) if self.sigma2 is None else np.array(self.sigma2, dtype=float)
        if s2.shape != (3,) or (s2 < 0).any():
            raise ValueError("sigma2 must be three nonnegative variances (lambda, phi, nu)")
        self.sigma2 = s2
        psi = np.atleast_1d(np.array(self.psi, dtype=float))
        if psi.shape not in ((1,), (R,)) or (psi < 0).any():
            raise ValueError("psi must be a nonnegative scalar or one value per region")
        self.psi = psi

    def copy(self) -> "Params":
        return Params(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                         for k, v in self.__dict__.items()})

    def b(self, comp: str) -> np.ndarray:
        return getattr(self, f"b_{comp}")

    def to_dict(self, regions: Sequence[str] | None = None) -> dict:
        d = {
            "alpha_lambda": self.alpha_lambda, "alpha_phi": self.alpha_phi,
            "alpha_nu": self.alpha_nu,
            "b_lambda": self.b_lambda.tolist(), "b_phi": self.b_phi.tolist(),
            "b_nu": self.b_nu.tolist(),
            "beta_phi_pop": self.beta_phi_pop, "beta_nu_t": self.beta_nu_t,
            "beta_nu_t2": self.beta_nu_t2, "beta_nu_age": self.beta_nu_age,
            "sigma2_lambda": float(self.sigma2[0]), "sigma2_phi": float(self.sigma2[1]),
            "sigma2_nu": float(self.sigma2[2]),
            "psi": float(self.psi[0]) if self.psi.size == 1 else self.psi.tolist(),
        }
        d = {k: (float(v) if isinstance(v, (float, np.floating, int)) else v) for k, v in d.items()}
        if regions is not None:
            d["regions"] = list(regions)
        return d

    @classmethod
    def from_dict(cls, d: dict, n_regions: int | None = None) -> "Params":
        if n_regions is None:
            n_regions = len(d["regions"]) if "regions" in d else len(d["b_lambda"])
        try:
            return cls(
                n_regions=n_regions,
                alpha_lambda=d["alpha_lambda"], alpha_phi=d["alpha_phi"], alpha_nu=d["alpha_nu"],
                b_lambda=d.get("b_lambda"), b_phi=d.get("b_phi"), b_nu=d.get("b_nu"),
                beta_phi_pop=d.get("beta_phi_pop", 0.0), beta_nu_t=d.get("beta_nu_t", 0.0),
                beta_nu_t2=d.get("beta_nu_t2", 0.0), beta_nu_age=d.get("beta_nu_age", 0.0),
                sigma2=[d.get("sigma2_lambda", 1.0), d.get("sigma2_phi", 1.0), d.get("sigma2_nu", 1.0)],
                psi=d.get("psi", 0.0),
            )
        except (KeyError, DimensionMismatch, ValueError) as exc:
            raise SchemaMismatch(f"invalid parameter document: {exc}") from exc

    def to_json(self, regions: Sequence[str] | None = None) -> str:
        return json.dumps(self.to_dict(regions), indent=2)

    @classmethod
    def from_json(cls, text: str, n_regions: int | None = None) -> "Params":
        return cls.from_dict(json.loads(text), n_regions)


@dataclass(frozen=True)
class ComponentMeans:
    within: np.ndarray
    between: np.ndarray
    endemic: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.within + self.between + self.endemic


# --------------------------------------------------------------------------
# parameter layout


class Layout:
    """Maps the free (unconstrained) parameters of a spec to a flat vector.

    ``frozen`` names random-effect components whose deviations are pinned at
    zero (variance at its floor) and therefore not free.
    """

    def __init__(self, spec: ModelSpec, regions: Sequence[str], frozen: Sequence[str] = ()):
        self.spec = spec
        self.regions = list(regions)
        self.frozen = tuple(frozen)
        R = len(self.regions)
        blocks: list[tuple[str, int]] = []
        if spec.within:
            blocks.append(("alpha_lambda", 1))
            if spec.lambda_random and "lambda" not in self.frozen:
                blocks.append(("b_lambda", R))
        if spec.between:
            blocks.append(("alpha_phi", 1))
            if spec.phi_log_pop:
                blocks.append(("beta_phi_pop", 1))
            if spec.phi_random and "phi" not in self.frozen:
                blocks.append(("b_phi", R))
        if spec.endemic:
            blocks.append(("alpha_nu", 1))
            for flag, name in ((spec.nu_t, "beta_nu_t"), (spec.nu_t2, "beta_nu_t2"),
                               (spec.nu_log_over65, "beta_nu_age")):
                if flag:
                    blocks.append((name, 1))
            if spec.nu_random and "nu" not in self.frozen:
                blocks.append(("b_nu", R))
        if spec.overdispersion == "shared":
            blocks.append(("log_psi", 1))
        elif spec.overdispersion == "per_region":
            blocks.append(("log_psi", R))
        self.slices: dict[str, slice] = {}
        k = 0
        for name, size in blocks:
            self.slices[name] = slice(k, k + size)
            k += size
        self.size = k

    def __contains__(self, name: str) -> bool:
        return name in self.slices

    @property
    def names(self) -> list[str]:
        return list(self.slices)

    @property
    def labels(self) -> list[str]:
        out = []
        for name, sl in self.slices.items():
            n = sl.stop - sl.start
            if name.startswith("b_") or (name == "log_psi" and n > 1):
                out.extend(f"{name}[{r}]" for r in self.regions)
            else:
                out.append(name)
        return out

    @property
    def fixed_names(self) -> list[str]:
        return [n for n in self.slices if not n.startswith("b_")]

    def pack(self, p: Params) -> np.ndarray:
        theta = np.empty(self.size)
        for name, sl in self.slices.items():
            if name == "log_psi":
                psi = p.psi if sl.stop - sl.start == p.psi.size else np.full(sl.stop - sl.start, p.psi[0])
                with np.errstate(divide="ignore"):
                    theta[sl] = np.log(psi)
            else:
                theta[sl] = getattr(p, name)
        return theta

    def unpack(self, theta: np.ndarray, base: Params) -> Params:
        p = base.copy()
        for c in self.frozen:
            setattr(p, f"b_{c}", np.zeros(p.n_regions))
        for name, sl in self.slices.items():
            v = theta[sl]
            if name == "log_psi":
                p.psi = np.exp(v)
            elif name.startswith("b_"):
                setattr(p, name, v.copy())
            else:
                setattr(p, name, float(v[0]))
        if self.spec.overdispersion == "none":
            p.psi = np.zeros(1)
        return p


# --------------------------------------------------------------------------
# panel evaluator


class PanelModel:
    """Likelihood, score and information of one (spec, panel, covariates) triple.

    Cells are the R x (T-1) observations for days 2..T, flattened region-major.
    """

    def __init__(self, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                 frozen: Sequence[str] = ()):
        if panel.regions.ids != cov.regions.ids:
            raise DimensionMismatch("panel and covariates use different region sets")
        R, T = panel.counts.shape
        if T < 2:
            raise DimensionMismatch("panel needs at least two days")
        self.spec = spec
        self.panel = panel
        self.cov = cov
        self.layout = Layout(spec, panel.regions.ids, frozen)
        self.R, self.T = R, T
        y = panel.counts.astype(float)
        self.y = y[:, 1:].ravel()
        self.lag_y, self.lag_s = lagged_inputs(spec, y, cov)
        self.days = np.arange(2, T + 1) + spec.time_shift
        self._build_designs()

    def _build_designs(self) -> None:
        """Dense fixed-effect designs per component; deviations are region one-hots."""
        L, R, n = self.layout, self.R, self.T - 1
        N = R * n
        reg = np.repeat(np.arange(R), n)
        self.fixed_idx = np.array([L.slices[k].start for k in L.names
                                   if not k.startswith("b_") and k != "log_psi"], dtype=int)
        col = {k: j for j, k in enumerate(nm for nm in L.names
                                          if not nm.startswith("b_") and nm != "log_psi")}
        self.fixed_designs: dict[str, np.ndarray] = {}
        self.b_slices: dict[str, slice] = {}
        for comp in COMPONENTS:
            if not self.spec.enabled(comp):
                continue
            X = np.zeros((N, len(col)))
            X[:, col[f"alpha_{comp}"]] = 1.0
            if comp == "phi" and "beta_phi_pop" in col:
                X[:, col["beta_phi_pop"]] = np.log(self.cov.pop_share)[reg]
            if comp == "nu":
                t = np.tile(self.days.astype(float), R)
                for name, v in (("beta_nu_t", t), ("beta_nu_t2", t * t),
                                ("beta_nu_age", np.log(self.cov.over65)[reg])):
                    if name in col:
                        X[:, col[name]] = v
            self.fixed_designs[comp] = X
            if f"b_{comp}" in L:
                self.b_slices[comp] = L.slices[f"b_{comp}"]

    def components(self, p: Params) -> dict[str, np.ndarray]:
        """Flattened per-cell component means for enabled components."""
        return cell_components(p, self.spec, self.lag_y, self.lag_s, self.cov, self.days)

    def _psi_cells(self, p: Params) -> np.ndarray:
        if self.spec.overdispersion == "none":
            return np.zeros(self.y.size)
        psi = p.psi if p.psi.size == self.R else np.full(self.R, p.psi[0])
        return np.repeat(psi, self.T - 1)

    def _mu(self, comps) -> tuple[np.ndarray, bool]:
        mu = sum(comps.values())
        low = mu < MU_FLOOR
        guarded = bool((low & (self.y > 0)).any())
        if low.any():
            mu = np.where(low, MU_FLOOR, mu)
        return mu, guarded

    def loglik(self, p: Params) -> float:
        comps = self.components(p)
        mu, guarded = self._mu(comps)
        if guarded:
            warnings.warn("expected count underflowed with a positive observation; "
                          "log-likelihood uses the guard floor", LikelihoodGuardWarning, stacklevel=3)
        ll = kernels.nb_terms(self.y, mu, self._psi_cells(p))[0]
        return _region_sum(ll, self.R)

    def _rsum(self, v: np.ndarray) -> np.ndarray:
        """Sum cell values (N,) or (N, k) over days within each region."""
        return v.reshape(self.R, self.T - 1, *v.shape[1:]).sum(axis=1)

    def derivatives(self, p: Params, hessian: str | None = None):
        """Return ``(loglik, grad, info)`` of the unpenalised log-likelihood.

        ``hessian`` selects the information matrix: ``"observed"`` (negative
        Hessian), ``"expected"`` (Fisher information; the psi block stays
        observed since the cross term vanishes in expectation) or ``None``.
        """
        L = self.layout
        comps = self.components(p)
        mu, _ = self._mu(comps)
        psi = self._psi_cells(p)
        ll, s, h, fi = kernels.nb_terms(self.y, mu, psi)
        fx = self.fixed_idx
        Jf = sum(comps[c][:, None] * X for c, X in self.fixed_designs.items())
        grad = np.zeros(L.size)
        grad[fx] = Jf.T @ s
        for c, sl in self.b_slices.items():
            grad[sl] = self._rsum(s * comps[c])
        info = None
        if hessian is not None:
            observed = hessian == "observed"
            w = h if observed else fi
            info = np.zeros((L.size, L.size))
            ff = Jf.T @ (w[:, None] * Jf)
            if observed:
                for c, X in self.fixed_designs.items():
                    ff += X.T @ ((s * comps[c])[:, None] * X)
            info[np.ix_(fx, fx)] = ff
            for c, sl in self.b_slices.items():
                fb = self._rsum((w * comps[c])[:, None] * Jf)
                if observed:
                    fb += self._rsum((s * comps[c])[:, None] * self.fixed_designs[c])
                info[sl, fx] = fb
                info[fx, sl] = fb.T
                for d, sl2 in self.b_slices.items():
                    bb = self._rsum(w * comps[c] * comps[d])
                    if observed and c == d:
                        bb = bb + self._rsum(s * comps[c])
                    idx = np.arange(self.R)
                    info[sl.start + idx, sl2.start + idx] = bb
            if observed:
                info = -info
        if "log_psi" in L:
            sl = L.slices["log_psi"]
            g_psi, h_psi, cross = _psi_terms(self.y, mu, psi)
            per_region = sl.stop - sl.start > 1
            grad[sl] = self._rsum(g_psi) if per_region else g_psi.sum()
            if info is not None:
                # cross derivatives of the log density in (mean params, log psi)
                cf = self._rsum(cross[:, None] * Jf)
                cb = {c: self._rsum(cross * comps[c]) for c in self.b_slices}
                if per_region:
                    idx = np.arange(sl.start, sl.stop)
                    info[idx, idx] = -self._rsum(h_psi)
                    if hessian == "observed":
                        info[sl, fx] = -cf
                        info[fx, sl] = -cf.T
                        for c, bsl in self.b_slices.items():
                            r = np.arange(self.R)
                            info[sl.start + r, bsl.start + r] = -cb[c]
                            info[bsl.start + r, sl.start + r] = -cb[c]
                else:
                    info[sl, sl] = -h_psi.sum()
                    if hessian == "observed":
                        info[sl.start, fx] = -cf.sum(axis=0)
                        info[fx, sl.start] = -cf.sum(axis=0)
                        for c, bsl in self.b_slices.items():
                            info[sl.start, bsl] = -cb[c]
                            info[bsl, sl.start] = -cb[c]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("log-likelihood gradient is not finite")
        return _region_sum(ll, self.R), grad, info


def _psi_terms(y, mu, psi):
    """d/dlog(psi), d2/dlog(psi)2 and d2/(dmu dlog(psi)) of the NB log density."""
    k = 1.0 / psi
    km = k + mu
    dk = digamma(y + k) - digamma(k) - np.log1p(psi * mu) + (mu - y) / km
    d2k = (polygamma(1, y + k) - polygamma(1, k) + 1.0 / k - 1.0 / km
           - (mu - y) / (km * km))
    g = -k * dk
    h = k * k * d2k + k * dk
    cross = -(y - mu) * psi / (1.0 + psi * mu) ** 2
    return g, h, cross


def _region_sum(cell_values: np.ndarray, n_regions: int) -> float:
    """Sum region by region, then across regions in index order."""
    per_region = cell_values.reshape(n_regions, -1).sum(axis=1)
    return math.fsum(per_region.tolist())


def lagged_inputs(spec: ModelSpec, y: np.ndarray, cov: RegionCovariates):
    """Flattened lag-1 counts and lag-1 neighbour sums for days 2..T."""
    R = y.shape[0]
    lag_y = y[:, :-1]
    if spec.between:
        if spec.weights is None:
            raise DimensionMismatch("between component enabled but spec has no weight matrix")
        W = spec.weights.entries
        if W.shape != (R, R):
            raise DimensionMismatch(f"weight matrix is {W.shape}, panel has {R} regions")
        q = y if spec.between_uses_counts else y / cov.pop_share[:, None]
        lag_s = W.T @ q[:, :-1]
    else:
        lag_s = np.zeros_like(lag_y)
    return lag_y.ravel(), lag_s.ravel()


def cell_components(p: Params, spec: ModelSpec, lag_y, lag_s, cov: RegionCovariates,
                    days: np.ndarray) -> dict[str, np.ndarray]:
    R = cov.pop_share.size
    n = lag_y.size // R
    lam, phi, nu = predictor_arrays(p, spec, cov, days)
    out = {}
    if spec.within:
        out["lambda"] = np.repeat(lam, n) * lag_y
    if spec.between:
        out["phi"] = np.repeat(phi, n) * lag_s
    if spec.endemic:
        out["nu"] = (cov.pop_share[:, None] * nu).ravel()
    return out


def predictor_arrays(p: Params, spec: ModelSpec, cov: RegionCovariates, days):
    """``lambda`` (R,), ``phi`` (R,), ``nu`` (R, len(days)); disabled parts are zero."""
    R = cov.pop_share.size
    days = np.asarray(days, dtype=float)
    lam = np.exp(p.alpha_lambda + p.b_lambda) if spec.within else np.zeros(R)
    if spec.between:
        eta = p.alpha_phi + p.b_phi
        if spec.phi_log_pop:
            eta = eta + p.beta_phi_pop * np.log(cov.pop_share)
        phi = np.exp(eta)
    else:
        phi = np.zeros(R)
    if spec.endemic:
        eta = (p.alpha_nu + p.b_nu)[:, None] + np.zeros(days.size)
        if spec.nu_t:
            eta = eta + p.beta_nu_t * days
        if spec.nu_t2:
            eta = eta + p.beta_nu_t2 * days * days
        if spec.nu_log_over65:
            eta = eta + p.beta_nu_age * np.log(cov.over65)[:, None]
        nu = np.exp(eta)
    else:
        nu = np.zeros((R, days.size))
    return lam, phi, nu


# --------------------------------------------------------------------------
# public operations


def predictors(params: Params, spec: ModelSpec, cov: RegionCovariates, t: int):
    """Per-region ``(lambda, phi, nu)`` at 1-based day index ``t``."""
    if t < 1:
        raise ValueError("day index t is 1-based")
    lam, phi, nu = predictor_arrays(params, spec, cov, [t + spec.time_shift])
    return lam, phi, nu[:, 0]


def mean(params: Params, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates) -> ComponentMeans:
    """Component means for days 2..T, each an R x (T-1) array."""
    R, T = panel.counts.shape
    if params.n_regions != R or cov.pop_share.size != R:
        raise DimensionMismatch("params, panel and covariates disagree on the number of regions")
    y = panel.counts.astype(float)
    lag_y, lag_s = lagged_inputs(spec, y, cov)
    days = np.arange(2, T + 1) + spec.time_shift
    comps = cell_components(params, spec, lag_y, lag_s, cov, days)
    zero = np.zeros((R, T - 1))
    return ComponentMeans(
        within=comps["lambda"].reshape(R, -1) if "lambda" in comps else zero,
        between=comps["phi"].reshape(R, -1) if "phi" in comps else zero.copy(),
        endemic=comps["nu"].reshape(R, -1) if "nu" in comps else zero.copy(),
    )


def nb_loglik(y, mu, psi) -> float:
    """Log density of NB(mu, psi) at count ``y``; ``psi == 0`` is Poisson exactly."""
    y, mu, psi = float(y), float(mu), float(psi)
    if not (math.isfinite(y) and math.isfinite(mu) and math.isfinite(psi)):
        raise NonFiniteInput(f"non-finite input y={y}, mu={mu}, psi={psi}")
    if mu <= 0 or psi < 0 or y < 0:
        raise ValueError("need mu > 0, psi >= 0, y >= 0")
    return float(kernels.nb_terms(np.array([y]), np.array([mu]), np.array([psi]))[0][0])


def nb_logpmf(y, mu, psi) -> np.ndarray:
    """Vectorised version of :func:`nb_loglik` without input checks."""
    y = np.asarray(y, dtype=float)
    mu_b = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    return kernels.nb_terms(y, mu_b, psi)[0]


def panel_loglik(params: Params, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates) -> float:
    return PanelModel(spec, panel, cov).loglik(params)


def loglik_gradient(params: Params, spec: ModelSpec, panel: CountPanel,
                    cov: RegionCovariates) -> dict[str, np.ndarray]:
    """Analytic gradient keyed by free-parameter block name.

    Blocks of disabled terms are absent.  ``log_psi`` is the derivative with
    respect to ``log(psi)``.
    """
    m = PanelModel(spec, panel, cov)
    _, g, _ = m.derivatives(params)
    return {name: g[sl].copy() for name, sl in m.layout.slices.items()}
