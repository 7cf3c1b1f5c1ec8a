"""Regenerate the bundled synthetic example dataset (src/areal_epi/data/example)."""
import datetime as dt
import json
from pathlib import Path

import numpy as np

from areal_epi import ModelSpec, Params, RegionCovariates, RegionSet, simulate
from areal_epi.data import write_counts, write_covariates
from areal_epi.graph import build_adjacency, build_weights, neighbor_order, write_borders

OUT = Path(__file__).resolve().parents[1] / "src" / "areal_epi" / "data" / "example"
N_ROWS, N_COLS, DAYS, SEED = 4, 5, 40, 20200224

CONFIG = """\
[data]
counts = counts.csv
covariates = covariates.csv
borders = borders.csv
holdout_last_day = true

[graph]
max_order = 2
normalize = true

[model]
overdispersion = shared

[fit]
max_outer_iters = 100

[predict]
level = 0.8

[simulate]
params = params.json
days = 40
y0 = 5
start_date = 2020-02-24

[run]
out_dir = out
seed = 1
"""


def main():
    rng = np.random.default_rng(SEED)
    R = N_ROWS * N_COLS
    ids = [f"P{i:02d}" for i in range(R)]
    regions = RegionSet.from_ids(ids, [f"Province {i:02d}" for i in range(R)])
    borders = []
    for i in range(N_ROWS):
        for j in range(N_COLS):
            k = i * N_COLS + j
            if j + 1 < N_COLS:
                borders.append((ids[k], ids[k + 1]))
            if i + 1 < N_ROWS:
                borders.append((ids[k], ids[k + N_COLS]))
    weights = build_weights(neighbor_order(build_adjacency(regions, borders)), 2, True, regions)
    cov = RegionCovariates(regions, rng.dirichlet(np.full(R, 4.0)), rng.uniform(0.18, 0.28, R))
    params = Params(R, alpha_lambda=np.log(0.15), alpha_phi=np.log(0.02), alpha_nu=np.log(600.0),
                    beta_phi_pop=0.5, beta_nu_t=0.06, beta_nu_t2=-0.0006, beta_nu_age=1.0,
                    b_lambda=rng.normal(0, 0.4, R), b_phi=rng.normal(0, 0.4, R),
                    b_nu=rng.normal(0, 0.4, R), sigma2=[0.16] * 3, psi=0.05)
    panel = simulate(params, ModelSpec(weights=weights), weights, cov, DAYS, np.full(R, 5),
                     seed=rng, start_date=dt.date(2020, 2, 24))
    OUT.mkdir(parents=True, exist_ok=True)
    write_counts(panel, OUT / "counts.csv")
    write_covariates(cov, OUT / "covariates.csv")
    with open(OUT / "borders.csv", "w", newline="", encoding="utf-8") as fh:
        write_borders(borders, fh)
    (OUT / "params.json").write_text(params.to_json(ids) + "\n", encoding="utf-8")
    (OUT / "config.ini").write_text(CONFIG, encoding="utf-8")
    print(f"wrote {OUT}: {R} regions, {DAYS} days, total {panel.counts.sum()}")


if __name__ == "__main__":
    main()
