"""What a weight prior means in function space.

Pushes standard-normal weight priors through one-hidden-layer networks of
increasing width and watches the joint distribution of the outputs at two
probe inputs turn Gaussian — the observation that motivates comparing wide
Bayesian networks against GPs in the first place.  Scatter CSVs land in
demos/out/ for plotting.
"""

from pathlib import Path

import numpy as np

from bnnlab.experiments import write_csv
from bnnlab.gp import nn_prior_sample_outputs, normality_statistic

OUT = Path(__file__).parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    print("hidden units | joint excess kurtosis (0 for a Gaussian)")
    for h in (1, 3, 10, 100):
        draws = nn_prior_sample_outputs(h, 10_000, np.random.default_rng(42))
        stat = normality_statistic(draws)
        write_csv(OUT / f"prior_scatter_h{h}.csv", ("f_x1", "f_x2"),
                  [tuple(row) for row in draws[:2000]])
        print(f"  {h:>10} | {stat.mardia:+.3f}")
    print(f"\nscatter files written to {OUT}/prior_scatter_h*.csv")
    print("(plot f_x1 against f_x2: width 1 shows a cross-shaped density,")
    print(" width 100 an elliptical Gaussian cloud)")


if __name__ == "__main__":
    main()
