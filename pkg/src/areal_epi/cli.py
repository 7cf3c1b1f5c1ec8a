"""Command-line interface: ``areal-epi {fit,predict,decompose,simulate,graph-check}``.

Runs are driven by an INI config; command-line flags override it.  Exit
codes: 0 success, 1 invalid input, 2 fit did not converge, 3 simulation
exploded.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import datetime as dt
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .data import (CountPanel, RegionCovariates, ingest_counts, load_prediction_fixture,
                   read_covariates, write_counts)
from .errors import ArealEpiError, DataValidationError, ExplosionGuard, SchemaMismatch
from .estimation import FitOptions, FitResult, estimate_table, fit
from .forecast import (DEFAULT_CAP, decompose, forecast_from_params, simulate, write_decomposition,
                       write_forecast)
from .graph import RegionSet, WeightMatrix, build_adjacency, build_weights, neighbor_order, \
    order_stats, read_borders
from .model import ModelSpec, Params

log = logging.getLogger("areal_epi")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_EXPLOSION = 0, 1, 2, 3
BUNDLED = "bundled"


# --------------------------------------------------------------------------
# configuration


_MODEL_KEYS = ("within", "between", "endemic", "lambda_random", "phi_random", "phi_log_pop",
               "nu_random", "nu_t", "nu_t2", "nu_log_over65", "overdispersion",
               "between_uses_counts", "time_shift")
_FIT_KEYS = ("max_outer_iters", "max_inner_iters", "tol_params", "tol_loglik", "sigma2_floor",
             "init")


@dataclass
class RunConfig:
    """Everything a run needs.  Relative paths resolve against ``base_dir``."""

    counts: str | None = None
    covariates: str | None = None
    borders: str | None = None
    fit_json: str | None = None
    params_json: str | None = None
    observed: str | None = None
    out_dir: str = "out"
    seed: int = 0
    clip_negatives_to_zero: bool = False
    holdout_last_day: bool = False
    max_order: int = 2
    normalize_weights: bool = True
    level: float = 0.8
    replay_fixture: str | None = None
    sim_days: int = 60
    sim_y0: str = "5"
    sim_start: str = "2020-01-01"
    sim_cap: float = DEFAULT_CAP
    spec: ModelSpec = field(default_factory=ModelSpec)
    fit_options: FitOptions = field(default_factory=FitOptions)
    base_dir: str = "."

    # --- INI round trip ---------------------------------------------------

    @classmethod
    def from_ini(cls, text: str, base_dir: str = ".") -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        cfg = cls(base_dir=base_dir)
        sec = lambda name: cp[name] if cp.has_section(name) else {}  # noqa: E731
        d = sec("data")
        for key in ("counts", "covariates", "borders", "observed"):
            if key in d:
                setattr(cfg, key, d[key] or None)
        if "clip_negatives_to_zero" in d:
            cfg.clip_negatives_to_zero = cp.getboolean("data", "clip_negatives_to_zero")
        if "holdout_last_day" in d:
            cfg.holdout_last_day = cp.getboolean("data", "holdout_last_day")
        g = sec("graph")
        if "max_order" in g:
            cfg.max_order = cp.getint("graph", "max_order")
        if "normalize" in g:
            cfg.normalize_weights = cp.getboolean("graph", "normalize")
        m = sec("model")
        spec_kw = {}
        for key in _MODEL_KEYS:
            if key not in m:
                continue
            if key == "overdispersion":
                spec_kw[key] = m[key]
            elif key == "time_shift":
                spec_kw[key] = cp.getint("model", key)
            else:
                spec_kw[key] = cp.getboolean("model", key)
        cfg.spec = replace(cfg.spec, **spec_kw)
        f = sec("fit")
        fit_kw = {}
        for key in _FIT_KEYS:
            if key not in f:
                continue
            if key == "init":
                fit_kw[key] = f[key]
            elif key.startswith("max_"):
                fit_kw[key] = cp.getint("fit", key)
            else:
                fit_kw[key] = cp.getfloat("fit", key)
        cfg.fit_options = replace(cfg.fit_options, **fit_kw)
        if "fit_json" in f:
            cfg.fit_json = f["fit_json"] or None
        p = sec("predict")
        if "level" in p:
            cfg.level = cp.getfloat("predict", "level")
        if "replay_fixture" in p:
            cfg.replay_fixture = p["replay_fixture"] or None
        s = sec("simulate")
        if "params" in s:
            cfg.params_json = s["params"] or None
        if "days" in s:
            cfg.sim_days = cp.getint("simulate", "days")
        if "y0" in s:
            cfg.sim_y0 = s["y0"]
        if "start_date" in s:
            cfg.sim_start = s["start_date"]
        if "cap" in s:
            cfg.sim_cap = cp.getfloat("simulate", "cap")
        r = sec("run")
        if "out_dir" in r:
            cfg.out_dir = r["out_dir"]
        if "seed" in r:
            cfg.seed = cp.getint("run", "seed")
        return cfg

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        opt = lambda v: "" if v is None else str(v)  # noqa: E731
        cp["data"] = {"counts": opt(self.counts), "covariates": opt(self.covariates),
                      "borders": opt(self.borders), "observed": opt(self.observed),
                      "clip_negatives_to_zero": str(self.clip_negatives_to_zero).lower(),
                      "holdout_last_day": str(self.holdout_last_day).lower()}
        cp["graph"] = {"max_order": str(self.max_order),
                       "normalize": str(self.normalize_weights).lower()}
        cp["model"] = {k: (str(getattr(self.spec, k)).lower()
                           if isinstance(getattr(self.spec, k), bool) else str(getattr(self.spec, k)))
                       for k in _MODEL_KEYS}
        cp["fit"] = {k: repr(getattr(self.fit_options, k)) if isinstance(getattr(self.fit_options, k), float)
                     else str(getattr(self.fit_options, k)) for k in _FIT_KEYS}
        cp["fit"]["fit_json"] = opt(self.fit_json)
        cp["predict"] = {"level": repr(self.level), "replay_fixture": opt(self.replay_fixture)}
        cp["simulate"] = {"params": opt(self.params_json), "days": str(self.sim_days),
                          "y0": self.sim_y0, "start_date": self.sim_start,
                          "cap": repr(self.sim_cap)}
        cp["run"] = {"out_dir": self.out_dir, "seed": str(self.seed)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        return cls.from_ini(path.read_text(encoding="utf-8"), str(path.parent))

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


def bundled_example_config() -> Path:
    """Path of the shipped synthetic example's config file."""
    return Path(str(resources.files("areal_epi") / "data" / "example" / "config.ini"))


# --------------------------------------------------------------------------
# atomic output


class AtomicOutputs:
    """Stage files in the target directory and publish them together on success."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._staged: list[tuple[str, Path]] = []

    def path(self, name: str) -> str:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.out_dir)
        os.close(fd)
        self._staged.append((tmp, self.out_dir / name))
        return tmp

    def text(self, name: str, content: str) -> None:
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(content)

    def commit(self) -> None:
        for tmp, final in self._staged:
            os.replace(tmp, final)
        self._staged.clear()

    def discard(self) -> None:
        for tmp, _ in self._staged:
            with contextlib.suppress(FileNotFoundError):
                os.remove(tmp)
        self._staged.clear()


@contextlib.contextmanager
def atomic_outputs(out_dir: Path):
    out = AtomicOutputs(out_dir)
    try:
        yield out
    except BaseException:
        out.discard()
        raise
    out.discard()


# --------------------------------------------------------------------------
# loading


@dataclass
class Inputs:
    panel: CountPanel
    cov: RegionCovariates
    weights: WeightMatrix | None
    horizon: CountPanel | None = None


def _require(cfg: RunConfig, key: str) -> Path:
    p = cfg.resolve(getattr(cfg, key))
    if p is None:
        raise DataValidationError(f"config is missing the '{key}' path")
    if not p.exists():
        raise DataValidationError(f"{key} file not found: {p}")
    return p


def load_covariates(cfg: RunConfig) -> RegionCovariates:
    return read_covariates(_require(cfg, "covariates"))


def load_weights(cfg: RunConfig, regions: RegionSet) -> WeightMatrix | None:
    if not cfg.spec.between:
        return None
    borders = read_borders(_require(cfg, "borders"))
    adj = build_adjacency(regions, borders)
    return build_weights(neighbor_order(adj), cfg.max_order, cfg.normalize_weights, regions)


def load_inputs(cfg: RunConfig) -> Inputs:
    cov = load_covariates(cfg)
    panel = ingest_counts(_require(cfg, "counts"), cov.regions,
                          clip_negatives=cfg.clip_negatives_to_zero)
    horizon = None
    if cfg.holdout_last_day:
        horizon = CountPanel(panel.counts[:, -2:], panel.days[-2:], panel.regions)
        panel = panel.head(panel.n_days - 1)
    return Inputs(panel, cov, load_weights(cfg, cov.regions), horizon)


def _observed_for(cfg: RunConfig, inputs: Inputs, day: dt.date) -> np.ndarray | None:
    if inputs.horizon is not None:
        return inputs.horizon.counts[:, -1]
    path = cfg.resolve(cfg.observed)
    if path is None:
        return None
    regions = inputs.cov.regions
    obs = np.full(len(regions.regions), -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if dt.date.fromisoformat(row["date"]) == day:
                obs[regions.position(row["region_id"])] = int(row["count"])
    missing = [rid for rid, v in zip(regions.ids, obs) if v < 0]
    if missing:
        raise DataValidationError(
            f"observed file lacks {day.isoformat()} for region '{missing[0]}'")
    return obs


def load_fit(cfg: RunConfig, inputs: Inputs) -> FitResult:
    path = cfg.resolve(cfg.fit_json) or Path(cfg.out_dir) / "fit.json"
    if not path.exists():
        raise DataValidationError(f"fit file not found: {path}")
    try:
        res = FitResult.from_json(path.read_text(encoding="utf-8"), inputs.weights)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc
    if res.regions != inputs.cov.regions.ids:
        raise SchemaMismatch(f"{path} was fitted on a different region set")
    if res.spec != cfg.spec:
        raise SchemaMismatch(f"{path} was fitted with a different model specification")
    return res


# --------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig) -> int:
    inputs = load_inputs(cfg)
    res = fit(cfg.spec, inputs.panel, inputs.cov, inputs.weights, cfg.fit_options)
    with atomic_outputs(Path(cfg.out_dir)) as out:
        out.text("fit.json", res.to_json() + "\n")
        out.text("table1.txt", estimate_table(res) + "\n")
        out.commit()
    if not res.converged:
        log.error("fit did not converge after %d outer iterations", res.n_outer_iters)
        return EXIT_NOT_CONVERGED
    log.info("fit converged in %d outer iterations", res.n_outer_iters)
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    if cfg.replay_fixture:
        return _replay_fixture(cfg)
    inputs = load_inputs(cfg)
    res = load_fit(cfg, inputs)
    if not res.converged:
        log.warning("forecasting from a fit that did not converge")
    fc = forecast_from_params(res.params, res.spec, inputs.panel, inputs.cov, cfg.level)
    observed = _observed_for(cfg, inputs, fc.horizon_date)
    with atomic_outputs(Path(cfg.out_dir)) as out:
        write_forecast(fc, out.path("forecast.csv"), observed)
        out.commit()
    if observed is not None:
        print(f"predicted total {fc.total:.0f} vs observed {int(np.sum(observed))}")
    return EXIT_OK


def _replay_fixture(cfg: RunConfig) -> int:
    """Re-emit a published observed/predicted table in forecast.csv layout."""
    src = None if cfg.replay_fixture == BUNDLED else cfg.resolve(cfg.replay_fixture)
    fx = load_prediction_fixture(src)
    with atomic_outputs(Path(cfg.out_dir)) as out:
        with open(out.path("forecast.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region_id", "acronym", "observed", "predicted", "lo80", "hi80"])
            for (rid, name), o, mu in zip(fx.regions.regions, fx.observed, fx.predicted):
                w.writerow([rid, name, int(o), f"{mu:.1f}", "", ""])
            w.writerow(["TOTAL", "", int(fx.observed.sum()), f"{fx.predicted.sum():.1f}", "", ""])
        out.commit()
    print(f"predicted total {fx.predicted.sum():.0f} vs observed {int(fx.observed.sum())}")
    return EXIT_OK


def cmd_decompose(cfg: RunConfig) -> int:
    inputs = load_inputs(cfg)
    res = load_fit(cfg, inputs)
    dec = decompose(res, inputs.panel, inputs.cov)
    with atomic_outputs(Path(cfg.out_dir)) as out:
        write_decomposition(dec, out.path("decomposition.csv"))
        out.commit()
    return EXIT_OK


def _parse_y0(text: str, R: int) -> np.ndarray:
    parts = [v for v in text.replace(",", " ").split() if v]
    vals = np.array([int(v) for v in parts], dtype=np.int64)
    if vals.size == 1:
        return np.full(R, vals[0])
    if vals.size != R:
        raise DataValidationError(f"y0 lists {vals.size} counts for {R} regions")
    return vals


def cmd_simulate(cfg: RunConfig) -> int:
    cov = load_covariates(cfg)
    weights = load_weights(cfg, cov.regions)
    path = _require(cfg, "params_json")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc
    # accept either a bare parameter document or a fit.json
    params = Params.from_dict(doc.get("params", doc), len(cov.regions.regions))
    R = len(cov.regions.regions)
    panel = simulate(params, cfg.spec, weights, cov, cfg.sim_days, _parse_y0(cfg.sim_y0, R),
                     seed=cfg.seed, start_date=dt.date.fromisoformat(cfg.sim_start),
                     cap=cfg.sim_cap)
    with atomic_outputs(Path(cfg.out_dir)) as out:
        write_counts(panel, out.path("counts.csv"))
        out.commit()
    return EXIT_OK


def cmd_graph_check(cfg: RunConfig) -> int:
    cov = load_covariates(cfg)
    borders = read_borders(_require(cfg, "borders"))
    orders = neighbor_order(build_adjacency(cov.regions, borders))
    st = order_stats(orders)
    print(f"regions: {st['n_regions']}")
    print(f"connected components: {st['n_components']}")
    print(f"isolated regions: {st['isolated']}")
    print(f"degree min/mean/max: {st['min_degree']}/{st['mean_degree']:.2f}/{st['max_degree']}")
    for order, n in sorted(st["order_counts"].items()):
        print(f"pairs at order {order}: {n}")
    print(f"unreachable pairs: {st['unreachable_pairs']}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
    "graph-check": cmd_graph_check,
}


# --------------------------------------------------------------------------
# argument handling


def _common_flags(**kw) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, **kw)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("--quiet", action="store_true", help="only log errors")
    common.add_argument("--counts", help="counts CSV (date,region_id,count)")
    common.add_argument("--covariates", help="covariates CSV (region_id,pop_share,over65)")
    common.add_argument("--borders", help="border list CSV (from,to)")
    common.add_argument("--clip-negatives-to-zero", action="store_true", default=None,
                        help="replace negative counts by 0, logging each change")
    common.add_argument("--between-uses-counts", action="store_true", default=None,
                        help="neighbor term uses raw counts instead of incidence")
    common.add_argument("--holdout-last-day", action="store_true", default=None,
                        help="fit on all but the last day and predict it")
    return common


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command; the subcommand
    # copies must not overwrite values given earlier with their defaults
    common = _common_flags(argument_default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="areal-epi", parents=[_common_flags()],
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit the model; writes fit.json, table1.txt")
    p.add_argument("--max-outer-iters", type=int)
    p = sub.add_parser("predict", parents=[common], help="one-step-ahead forecast.csv")
    p.add_argument("--fit", dest="fit_json", help="fit.json to use (default OUT_DIR/fit.json)")
    p.add_argument("--observed", help="counts CSV holding the forecast day")
    p.add_argument("--level", type=float, help="interval level (default 0.8)")
    p.add_argument("--replay-fixture", nargs="?", const=BUNDLED, metavar="CSV",
                   help="re-emit a province,acronym,observed,predicted table instead of "
                        "forecasting (default: the bundled one)")
    p = sub.add_parser("decompose", parents=[common], help="component shares decomposition.csv")
    p.add_argument("--fit", dest="fit_json", help="fit.json to use (default OUT_DIR/fit.json)")
    p = sub.add_parser("simulate", parents=[common], help="simulate counts.csv from parameters")
    p.add_argument("--params", dest="params_json", help="parameter JSON (or a fit.json)")
    p.add_argument("--days", type=int)
    p.add_argument("--y0", help="initial counts: one value or one per region")
    sub.add_parser("graph-check", parents=[common], help="print neighbor-order statistics")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    direct = {"seed": "seed", "out_dir": "out_dir", "counts": "counts",
              "covariates": "covariates", "borders": "borders",
              "clip_negatives_to_zero": "clip_negatives_to_zero",
              "holdout_last_day": "holdout_last_day", "fit_json": "fit_json",
              "observed": "observed", "level": "level", "params_json": "params_json",
              "days": "sim_days", "y0": "sim_y0", "replay_fixture": "replay_fixture"}
    for arg, attr in direct.items():
        val = getattr(args, arg, None)
        if val is None:
            continue
        if attr in ("counts", "covariates", "borders", "fit_json", "observed", "params_json") \
                or (attr == "replay_fixture" and val != BUNDLED):
            val = os.path.abspath(val)
        setattr(cfg, attr, val)
    if getattr(args, "out_dir", None) is None and args.config:
        cfg.out_dir = str(cfg.resolve(cfg.out_dir))
    if getattr(args, "between_uses_counts", None):
        cfg.spec = replace(cfg.spec, between_uses_counts=True)
    if getattr(args, "max_outer_iters", None) is not None:
        cfg.fit_options = replace(cfg.fit_options, max_outer_iters=args.max_outer_iters)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ExplosionGuard as exc:
        log.error("%s", exc)
        return EXIT_EXPLOSION
    except (DataValidationError, SchemaMismatch, ArealEpiError, ValueError, OSError,
            configparser.Error) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
