"""Gap filling: predict the high-fidelity field on a regular grid.

A swath-like gap is cut out of the high-fidelity level, the model is fitted,
and the gap is filled from the low-fidelity data through the autoregression.
The grid is written to ``gap_fill.csv`` in the working directory, and a coarse
text rendering of the predictive mean is printed.

Run with ``python3 demos/gap_filling.py``.
"""

import numpy as np

from nncgp import predict_grid, run_chain, simulate
from nncgp.io import write_predictions
from nncgp.sampler import SamplerConfig
from nncgp.synth import table1_config

# a vertical strip at level 2, like a missed orbit
cfg = table1_config(n=300, seed=7, holdouts=[((0.4, 0.0), (0.55, 1.0))])
res = simulate(cfg)
print(f"level-2 training points: {res.train[1].n}, points in the gap: {res.test.n}")

trace = run_chain(res.train, config=SamplerConfig(n_iter=1500, burn_in=500, seed=7), m=8)
grid = predict_grid(trace, ((0, 0), (1, 1)), 0.05, seed=7, max_draws=300)
write_predictions("gap_fill.csv", grid)
print(f"wrote {grid.targets.shape[0]} grid cells to gap_fill.csv")

# rows run from y=1 (top) to y=0; '#' marks cells inside the gap
side = int(round(np.sqrt(grid.targets.shape[0])))
mean = grid.mean.reshape(side, side)
levels = np.quantile(mean, [0.2, 0.4, 0.6, 0.8])
shades = " .:*@"
for r in range(side - 1, -1, -1):
    row = ""
    for c in range(side):
        x = grid.targets[r * side + c, 0]
        row += "#" if 0.4 <= x <= 0.55 and c % 2 else shades[int(np.searchsorted(levels, mean[r, c]))]
    print(row)

inside = (grid.targets[:, 0] >= 0.4) & (grid.targets[:, 0] <= 0.55)
print(f"mean predictive sd inside the gap {grid.sd[inside].mean():.3f}, outside {grid.sd[~inside].mean():.3f}")
