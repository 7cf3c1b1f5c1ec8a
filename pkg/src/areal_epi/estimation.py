"""Penalised maximum likelihood with Laplace-approximate variance components.

The objective for fixed variances ``sigma2`` is the panel log-likelihood
minus the Gaussian log-density penalty of the random-intercept deviations.
Fixed effects, deviations and ``log psi`` are maximised by Newton steps with
step halving (Fisher scoring when the observed information is not positive
definite).  Each variance is then set to the maximiser of the Laplace
approximation of the marginal likelihood,

    -1/2 (b'b / s + R log s) - 1/2 log det(I_pen(s)),

whose stationarity condition is ``s = (b'b + tr P_bb) / R`` with ``P`` the
inverse penalised information.  The two steps alternate until parameters and
penalised log-likelihood stop moving.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, stats
from threadpoolctl import threadpool_limits

from .data import CountPanel, RegionCovariates
from .errors import NonFiniteStep, SchemaMismatch, SingularInformation, ZeroVariance
from .graph import WeightMatrix
from .model import COMPONENTS, Layout, ModelSpec, PanelModel, Params, lagged_inputs

log = logging.getLogger(__name__)

RIDGE = 1e-8
# smallest eigenvalue of the unit-diagonal scaled information tolerated
SINGULAR_RTOL = 1e-10
SIGMA2_MAX = 1e4
# below this a variance is treated as zero: creeping towards the floor otherwise
# never settles because the penalty's -R/2 log(sigma2) keeps growing
SIGMA2_NEGLIGIBLE = 1e-6
_BIG = 1e300
# largest change of any log-scale parameter in one Newton step
MAX_STEP = 5.0
ROUNDING_RTOL = 1e-13
MAX_POLISH = 5
NOISE_FACTOR = 10.0
NEAR_FLOOR_RTOL = 1e-8
_SIGMA_INDEX = {c: i for i, c in enumerate(COMPONENTS)}


@dataclass(frozen=True)
class FitOptions:
    max_outer_iters: int = 100
    max_inner_iters: int = 50
    tol_params: float = 1e-6
    tol_loglik: float = 1e-8
    sigma2_floor: float = 1e-8
    init: str = "endemic_glm_warmstart"
    sigma2_start: float = 1.0

    def __post_init__(self):
        if self.tol_params <= 0 or self.tol_loglik <= 0 or self.sigma2_floor <= 0:
            raise ValueError("tolerances and the variance floor must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.init not in ("zeros", "endemic_glm_warmstart"):
            raise ValueError("init must be 'zeros' or 'endemic_glm_warmstart'")


@dataclass
class FitResult:
    params: Params
    spec: ModelSpec
    regions: list[str]
    se: dict[str, float]
    penalized_loglik: float
    marginal_loglik_approx: float
    loglik: float
    converged: bool
    n_outer_iters: int
    grad_max: float
    aic_like: float | None = None
    boundary: dict[str, bool] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "regions": self.regions,
            "params": self.params.to_dict(),
            "se": self.se,
            "penalized_loglik": self.penalized_loglik,
            "marginal_loglik_approx": self.marginal_loglik_approx,
            "loglik": self.loglik,
            "converged": self.converged,
            "n_outer_iters": self.n_outer_iters,
            "grad_max": self.grad_max,
            "aic_like": self.aic_like,
            "boundary": self.boundary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, weights: WeightMatrix | None = None) -> "FitResult":
        try:
            spec = ModelSpec.from_dict(d["spec"]).with_weights(weights)
            regions = list(d["regions"])
            params = Params.from_dict(d["params"], len(regions))
            return cls(params=params, spec=spec, regions=regions, se=dict(d.get("se", {})),
                       penalized_loglik=d["penalized_loglik"],
                       marginal_loglik_approx=d.get("marginal_loglik_approx", float("nan")),
                       loglik=d.get("loglik", float("nan")), converged=bool(d["converged"]),
                       n_outer_iters=int(d.get("n_outer_iters", 0)),
                       grad_max=float(d.get("grad_max", float("nan"))),
                       aic_like=d.get("aic_like"), boundary=dict(d.get("boundary", {})))
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"fit document is missing {exc}") from exc

    @classmethod
    def from_json(cls, text: str, weights: WeightMatrix | None = None) -> "FitResult":
        return cls.from_dict(json.loads(text), weights)


# --------------------------------------------------------------------------
# objective


class Objective:
    """Penalised log-likelihood over the free parameters of a layout."""

    def __init__(self, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                 base: Params, frozen: Sequence[str] = (), sigma2_floor: float = 1e-8):
        self.model = PanelModel(spec, panel, cov, frozen)
        self.layout: Layout = self.model.layout
        self.base = base
        self.penalized = [c for c in spec.random_components if c not in frozen]
        for c in self.penalized:
            if base.sigma2[_SIGMA_INDEX[c]] < sigma2_floor:
                raise ZeroVariance(f"sigma2_{c} = {base.sigma2[_SIGMA_INDEX[c]]:g} is below the "
                                   f"floor {sigma2_floor:g} while its deviations are free")

    def params(self, theta: np.ndarray) -> Params:
        return self.layout.unpack(theta, self.base)

    def penalty(self, p: Params) -> float:
        R = p.n_regions
        total = 0.0
        for c in self.penalized:
            s2 = p.sigma2[_SIGMA_INDEX[c]]
            b = p.b(c)
            total += float(b @ b) / s2 + R * math.log(2.0 * math.pi * s2)
        return -0.5 * total

    def value(self, theta: np.ndarray) -> float:
        p = self.params(theta)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self.model.loglik(p) + self.penalty(p)

    def derivatives(self, theta: np.ndarray, hessian: str | None = "observed"):
        p = self.params(theta)
        ll, g, info = self.model.derivatives(p, hessian)
        val = ll + self.penalty(p)
        for c in self.penalized:
            sl = self.layout.slices[f"b_{c}"]
            s2 = p.sigma2[_SIGMA_INDEX[c]]
            g[sl] -= theta[sl] / s2
            if info is not None:
                idx = np.arange(sl.start, sl.stop)
                info[idx, idx] += 1.0 / s2
        return val, g, info


def _scaled_min_eig(info: np.ndarray) -> float:
    d = np.diag(info)
    if (d <= 0).any() or not np.all(np.isfinite(info)):
        return -np.inf
    s = 1.0 / np.sqrt(d)
    return float(linalg.eigvalsh(info * s[:, None] * s[None, :], subset_by_index=[0, 0])[0])


def _is_regular(info: np.ndarray) -> bool:
    return _scaled_min_eig(info) > SINGULAR_RTOL


def solve_information(info: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``info @ d = g`` for a positive semi-definite information matrix.

    A numerically singular matrix gets ``RIDGE * I`` added once; if that does
    not make it regular :class:`SingularInformation` is raised.
    """
    if not _is_regular(info):
        info = info + RIDGE * np.eye(info.shape[0])
        if not _is_regular(info):
            raise SingularInformation("penalised information matrix is singular "
                                      "(collinear or unidentifiable terms?)")
    return linalg.cho_solve(linalg.cho_factor(info), g)


def _fisher(obj: Objective, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, g, F = obj.derivatives(theta, "expected")
    if "log_psi" in obj.layout:
        sl = obj.layout.slices["log_psi"]
        idx = np.arange(sl.start, sl.stop)
        F[idx, idx] = np.maximum(np.abs(F[idx, idx]), 1e-8)
    return g, F


def information(obj: Objective, theta: np.ndarray) -> np.ndarray:
    """Observed penalised information, or Fisher information if it is not regular."""
    _, _, H = obj.derivatives(theta, "observed")
    if _is_regular(H):
        return H
    _, F = _fisher(obj, theta)
    return F


@dataclass
class InnerStats:
    n_iter: int = 0
    grad_max: float = np.inf
    converged: bool = False
    values: list[float] = field(default_factory=list)


def newton_maximize(obj: Objective, theta: np.ndarray, opts: FitOptions) -> tuple[np.ndarray, InnerStats]:
    """Maximise ``obj`` from ``theta`` by damped Newton / Fisher scoring.

    Accepted steps never decrease the objective beyond its rounding level.
    Stops once the gradient max-norm drops below ``opts.tol_params``, or once
    full Newton steps with a predicted gain below the rounding level of the
    objective stop reducing it (large counts put the noise floor of the
    t^2 gradient entry above any fixed absolute tolerance).
    """
    stats_ = InnerStats()
    val = obj.value(theta)
    stats_.values.append(val)
    polish = 0
    for it in range(opts.max_inner_iters + 1):
        val, g, H = obj.derivatives(theta, "observed")
        stats_.grad_max = float(np.max(np.abs(g))) if g.size else 0.0
        if stats_.grad_max < opts.tol_params:
            stats_.converged = True
            break
        if it == opts.max_inner_iters:
            break
        if _is_regular(H):
            try:
                d = linalg.cho_solve(linalg.cho_factor(H), g)
            except linalg.LinAlgError:
                d = solve_information(_fisher(obj, theta)[1], g)
        else:
            d = solve_information(_fisher(obj, theta)[1], g)
        if not np.all(np.isfinite(d)):
            raise NonFiniteStep("Newton direction is not finite")
        stats_.n_iter = it + 1
        resolution = ROUNDING_RTOL * max(1.0, abs(val))
        gain = float(g @ d)
        if gain < NEAR_FLOOR_RTOL * max(1.0, abs(val)):
            # large counts make the objective noisier than its magnitude
            # suggests; measure the noise with a negligible step
            noise = abs(obj.value(theta + 1e-6 * d) - val)
            resolution = max(resolution, NOISE_FACTOR * noise)
        if gain < resolution:
            # The predicted gain is below what the objective can resolve, so a
            # value comparison is meaningless; the quadratic model is exact at
            # this scale.  Take the full step to polish badly scaled gradient
            # entries (e.g. the t^2 coefficient).
            polish += 1
            cand = theta + d
            v = obj.value(cand)
            if polish > MAX_POLISH or not (np.isfinite(v) and v >= val - resolution):
                # the gradient sits at its floating-point noise floor
                stats_.converged = True
                break
            theta = cand
            stats_.values.append(max(v, val))
            continue
        big = float(np.max(np.abs(d)))
        if big > MAX_STEP:
            d *= MAX_STEP / big
        step = 1.0
        accepted = False
        while step > 1e-12:
            cand = theta + step * d
            v = obj.value(cand)
            if np.isfinite(v) and v >= val:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # A step a million times shorter changes the objective by rounding
            # noise only; a predicted gain within that noise is not resolvable.
            noise = abs(obj.value(theta + 1e-6 * d) - val)
            if gain <= NOISE_FACTOR * noise + resolution:
                stats_.converged = True
            else:
                log.debug("line search stalled at |grad|=%.3g", stats_.grad_max)
            break
        theta = cand
        stats_.values.append(v)
    return theta, stats_


# --------------------------------------------------------------------------
# public operations


def penalized_loglik(params: Params, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                     frozen: Sequence[str] = (), sigma2_floor: float = 1e-8) -> float:
    """Panel log-likelihood minus the random-intercept penalty (constants included)."""
    obj = Objective(spec, panel, cov, params, frozen, sigma2_floor)
    return obj.model.loglik(params) + obj.penalty(params)


def inner_maximize(params0: Params, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                   opts: FitOptions = FitOptions(), frozen: Sequence[str] = ()) -> Params:
    """Maximise the penalised log-likelihood with the variances held fixed."""
    obj = Objective(spec, panel, cov, params0, frozen, opts.sigma2_floor)
    theta, _ = newton_maximize(obj, obj.layout.pack(params0), opts)
    return obj.params(theta)


def laplace_marginal(obj: Objective, theta: np.ndarray, info: np.ndarray | None = None) -> float:
    """Penalised log-likelihood plus the Laplace volume term of the deviations."""
    if info is None:
        info = information(obj, theta)
    val = obj.value(theta)
    idx = _random_index(obj)
    if idx.size == 0:
        return val
    sub = info[np.ix_(idx, idx)]
    sign, logdet = np.linalg.slogdet(sub)
    if sign <= 0:
        return -np.inf
    return val - 0.5 * logdet + 0.5 * idx.size * math.log(2.0 * math.pi)


def _random_index(obj: Objective) -> np.ndarray:
    parts = [np.arange(obj.layout.slices[f"b_{c}"].start, obj.layout.slices[f"b_{c}"].stop)
             for c in obj.penalized]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def update_variances(params: Params, spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                     frozen: Sequence[str] = (), sigma2_floor: float = 1e-8,
                     data_info: np.ndarray | None = None) -> tuple[np.ndarray, dict[str, bool]]:
    """Coordinate-wise Laplace-marginal update of the random-intercept variances.

    Returns the new ``(sigma2_lambda, sigma2_phi, sigma2_nu)`` and a boundary
    flag per random component (``True`` when the maximiser is at the floor).
    Components without free deviations keep their current value.
    """
    obj = Objective(spec, panel, cov, params, frozen, sigma2_floor)
    theta = obj.layout.pack(params)
    if data_info is None:
        data_info = _data_information(obj, theta)
    sigma2 = params.sigma2.copy()
    boundary = {c: (c in frozen) for c in spec.random_components}
    R = params.n_regions
    slices = {c: obj.layout.slices[f"b_{c}"] for c in obj.penalized}

    def pen_info(s2):
        M = data_info.copy()
        for c, sl in slices.items():
            idx = np.arange(sl.start, sl.stop)
            M[idx, idx] += 1.0 / s2[_SIGMA_INDEX[c]]
        return M

    for c, sl in slices.items():
        b = params.b(c)
        q = float(b @ b)
        k = _SIGMA_INDEX[c]

        def neg_f(log_s, k=k, q=q):
            s2 = sigma2.copy()
            s2[k] = math.exp(log_s)
            sign, logdet = np.linalg.slogdet(pen_info(s2))
            if sign <= 0:
                return _BIG
            return 0.5 * (q / s2[k] + R * log_s) + 0.5 * logdet

        lo, hi = math.log(sigma2_floor), math.log(SIGMA2_MAX)
        res = optimize.minimize_scalar(neg_f, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10, "maxiter": 500})
        best = res.x
        if neg_f(lo) <= res.fun:
            best = lo
        new = max(math.exp(best), sigma2_floor)
        # polish with the stationarity fixed point, s = (b'b + tr P_bb) / R
        for _ in range(50):
            s2 = sigma2.copy()
            s2[k] = new
            P = linalg.inv(pen_info(s2))
            nxt = (q + float(np.trace(P[sl, sl]))) / R
            if abs(nxt - new) <= 1e-12 * max(new, 1e-300) or nxt <= sigma2_floor:
                new = max(nxt, sigma2_floor)
                break
            new = nxt
        if new <= max(sigma2_floor * (1.0 + 1e-9), SIGMA2_NEGLIGIBLE):
            new = sigma2_floor
        sigma2[k] = new
        boundary[c] = new == sigma2_floor
    return sigma2, boundary


def _data_information(obj: Objective, theta: np.ndarray) -> np.ndarray:
    """Information of the unpenalised likelihood (observed if regular once penalised)."""
    p = obj.params(theta)
    _, _, H = obj.model.derivatives(p, "observed")
    pen = H.copy()
    for c in obj.penalized:
        sl = obj.layout.slices[f"b_{c}"]
        idx = np.arange(sl.start, sl.stop)
        pen[idx, idx] += 1.0 / p.sigma2[_SIGMA_INDEX[c]]
    if _is_regular(pen):
        return H
    _, _, F = obj.model.derivatives(p, "expected")
    if "log_psi" in obj.layout:
        sl = obj.layout.slices["log_psi"]
        idx = np.arange(sl.start, sl.stop)
        F[idx, idx] = np.maximum(np.abs(F[idx, idx]), 1e-8)
    return F


def initial_params(spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
                   opts: FitOptions) -> Params:
    R = panel.n_regions
    p = Params(n_regions=R, sigma2=np.full(3, opts.sigma2_start))
    if spec.overdispersion != "none":
        p.psi = np.full(1 if spec.overdispersion == "shared" else R, 1.0)
    if opts.init == "zeros":
        return p
    y = panel.counts[:, 1:].astype(float)
    ybar = max(float(y.mean()), 0.5)
    if spec.endemic:
        glm = replace(spec, within=False, between=False, nu_random=False,
                      overdispersion="none", weights=None)
        start = Params(n_regions=R, alpha_nu=math.log(ybar * R))
        try:
            warm = inner_maximize(start, glm, panel, cov,
                                  replace(opts, max_inner_iters=max(opts.max_inner_iters, 100)))
        except SingularInformation:
            warm = start
        shares = [spec.within, spec.between]
        p.alpha_nu = warm.alpha_nu + math.log(0.5 if any(shares) else 1.0)
        p.beta_nu_t, p.beta_nu_t2, p.beta_nu_age = warm.beta_nu_t, warm.beta_nu_t2, warm.beta_nu_age
    if spec.within:
        p.alpha_lambda = math.log(0.3)
    if spec.between:
        _, lag_s = lagged_inputs(spec, panel.counts.astype(float), cov)
        sbar = float(lag_s.mean())
        p.alpha_phi = math.log(0.2 * ybar / sbar) if sbar > 0 else 0.0
    if spec.overdispersion != "none":
        # moment estimate of psi from the warm-start mean
        mu = max(ybar, 1e-3)
        v = float(y.var())
        psi0 = min(max((v - mu) / mu ** 2, 0.05), 5.0)
        p.psi = np.full(p.psi.size, psi0)
    return p


def fit(spec: ModelSpec, panel: CountPanel, cov: RegionCovariates,
        graph: WeightMatrix | None = None, opts: FitOptions = FitOptions(),
        start: Params | None = None) -> FitResult:
    """Alternate penalised Newton maximisation and variance updates."""
    if graph is not None:
        spec = spec.with_weights(graph)
    if panel.n_days < 3:
        raise ValueError("fit needs a panel with at least 3 days")
    with threadpool_limits(limits=1):
        return _fit(spec, panel, cov, opts, start)


def _fit(spec, panel, cov, opts: FitOptions, start: Params | None) -> FitResult:
    params = start.copy() if start is not None else initial_params(spec, panel, cov, opts)
    frozen: list[str] = []
    boundary = {c: False for c in spec.random_components}
    history = []
    prev_params = None
    prev_val = None
    converged = False
    stats_ = InnerStats()
    obj = None
    outer = 0
    accel = _VarianceAccelerator()
    for outer in range(1, opts.max_outer_iters + 1):
        obj = Objective(spec, panel, cov, params, frozen, opts.sigma2_floor)
        theta, stats_ = newton_maximize(obj, obj.layout.pack(params), opts)
        params = obj.params(theta)
        val = stats_.values[-1]
        vec = _param_vector(params)
        history.append({"outer": outer, "penalized_loglik": val, "inner_iters": stats_.n_iter,
                        "grad_max": stats_.grad_max, "sigma2": params.sigma2.tolist()})
        log.info("outer %d: penalized loglik %.8f, %d inner steps, |grad| %.2e, sigma2 %s",
                 outer, val, stats_.n_iter, stats_.grad_max, np.round(params.sigma2, 5).tolist())
        if prev_params is not None:
            dpar = float(np.max(np.abs(vec - prev_params)))
            dval = abs(val - prev_val) / max(abs(prev_val), 1.0)
            if dpar < opts.tol_params and dval < opts.tol_loglik and stats_.converged:
                converged = True
                break
        if not obj.penalized:
            converged = stats_.converged
            break
        prev_params, prev_val = vec, val
        if outer == opts.max_outer_iters:
            break
        sigma2, flags = update_variances(params, spec, panel, cov, frozen, opts.sigma2_floor)
        params.sigma2 = accel.step(sigma2, flags, opts.sigma2_floor)
        for c, flag in flags.items():
            boundary[c] = boundary[c] or flag
            if flag and c not in frozen:
                log.info("sigma2_%s reached the floor; freezing its deviations at 0", c)
                frozen.append(c)
                setattr(params, f"b_{c}", np.zeros(params.n_regions))
    info = information(obj, obj.layout.pack(params))
    se = _standard_errors(obj, info)
    theta = obj.layout.pack(params)
    pl = obj.value(theta)
    ll = obj.model.loglik(params)
    aic = None
    if not spec.random_components:
        aic = -2.0 * ll + 2.0 * obj.layout.size
    return FitResult(
        params=params, spec=spec, regions=panel.regions.ids, se=se, penalized_loglik=pl,
        marginal_loglik_approx=laplace_marginal(obj, theta, info), loglik=ll,
        converged=converged, n_outer_iters=outer, grad_max=stats_.grad_max, aic_like=aic,
        boundary=boundary, history=history,
    )


class _VarianceAccelerator:
    """Aitken extrapolation of the variance sequence.

    Alternating deviations and variances converges linearly, very slowly when
    a variance drifts towards zero.  Once two successive contraction ratios of
    a component agree, jump towards the limit of the geometric sequence, at
    most by a factor ``exp(MAX_JUMP)``; the alternation then checks the jump as
    an ordinary iterate.
    """

    RATIO_AGREEMENT = 0.05
    MAX_JUMP = 2.0

    def __init__(self):
        self.seq: dict[int, list[float]] = {}
        self.ratio: dict[int, float] = {}

    def step(self, sigma2: np.ndarray, flags: dict[str, bool], floor: float) -> np.ndarray:
        out = sigma2.copy()
        for c, k in _SIGMA_INDEX.items():
            if c not in flags or flags[c]:
                self.seq.pop(k, None)
                continue
            seq = self.seq.setdefault(k, [])
            seq.append(float(sigma2[k]))
            if len(seq) < 3:
                continue
            d1, d2 = seq[-2] - seq[-3], seq[-1] - seq[-2]
            if d1 == 0.0:
                continue
            r = d2 / d1
            prev = self.ratio.get(k)
            self.ratio[k] = r
            del seq[0]
            if prev is None or not 0.0 < r < 1.0 or abs(r - prev) > self.RATIO_AGREEMENT:
                continue
            cur = seq[-1]
            target = cur + d2 * r / (1.0 - r)
            lo, hi = cur * math.exp(-self.MAX_JUMP), cur * math.exp(self.MAX_JUMP)
            out[k] = max(min(max(target, lo), hi), floor)
            self.seq[k] = []
            self.ratio.pop(k)
        return out


def _param_vector(p: Params) -> np.ndarray:
    return np.concatenate([[p.alpha_lambda, p.alpha_phi, p.alpha_nu, p.beta_phi_pop,
                            p.beta_nu_t, p.beta_nu_t2, p.beta_nu_age],
                           p.b_lambda, p.b_phi, p.b_nu, p.sigma2, np.log(np.maximum(p.psi, 1e-300))])


def _standard_errors(obj: Objective, info: np.ndarray) -> dict[str, float]:
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError:
        cov = np.full(info.shape, np.nan)
    var = np.diag(cov)
    out = {}
    L = obj.layout
    for name in L.fixed_names:
        sl = L.slices[name]
        if sl.stop - sl.start == 1:
            out[name] = float(np.sqrt(var[sl.start])) if var[sl.start] >= 0 else float("nan")
        else:
            for r, v in zip(L.regions, var[sl]):
                out[f"{name}[{r}]"] = float(np.sqrt(v)) if v >= 0 else float("nan")
    return out


# --------------------------------------------------------------------------
# reporting

_TABLE_ROWS = [
    ("exp(alpha_lambda)", "alpha_lambda", True),
    ("beta_phi_pop", "beta_phi_pop", False),
    ("exp(alpha_phi)", "alpha_phi", True),
    ("exp(beta_nu_t)", "beta_nu_t", True),
    ("exp(beta_nu_t2)", "beta_nu_t2", True),
    ("beta_nu_age", "beta_nu_age", False),
    ("exp(alpha_nu)", "alpha_nu", True),
]


def _stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def estimate_table(res: FitResult) -> str:
    """Plain-text estimate table: exp-scale point estimates for log-scale
    intercepts and rates, standard errors on the estimation (log) scale."""
    p = res.params
    lines = [f"{'Parameter':<22}{'Estimate':>14}{'SE (log scale)':>16}", "-" * 52]
    for label, name, expo in _TABLE_ROWS:
        if name not in res.se:
            continue
        est = getattr(p, name)
        se = res.se[name]
        z = est / se if se and np.isfinite(se) and se > 0 else np.nan
        pval = 2.0 * stats.norm.sf(abs(z)) if np.isfinite(z) else np.nan
        shown = math.exp(est) if expo else est
        lines.append(f"{label:<22}{f'{shown:.3f}{_stars(pval)}':>14}{se:>16.3f}")
    for c in res.spec.random_components:
        s2 = p.sigma2[_SIGMA_INDEX[c]]
        flag = " (boundary)" if res.boundary.get(c) else ""
        lines.append(f"{'sigma2_' + c:<22}{s2:>14.3f}{'--':>16}{flag}")
    if "log_psi" in res.se:
        lines.append(f"{'psi':<22}{float(p.psi[0]):>14.3f}{res.se['log_psi']:>16.3f}")
    elif any(k.startswith("log_psi[") for k in res.se):
        lines.append(f"{'psi (median region)':<22}{float(np.median(p.psi)):>14.3f}{'':>16}")
    lines.append("-" * 52)
    lines.append("*** p<0.01, ** p<0.05, * p<0.1 (Wald, log scale); "
                 "variances carry no standard error")
    lines.append(f"converged: {res.converged}  outer iterations: {res.n_outer_iters}  "
                 f"penalized loglik: {res.penalized_loglik:.4f}")
    return "\n".join(lines) + "\n"
