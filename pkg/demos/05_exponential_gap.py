"""Trajectory importance weights versus history weights on a long chain."""
import numpy as np

from pomdp_ope.coverage import coverage_report
from pomdp_ope.fdvf import cumulative_ratios
from pomdp_ope.fixtures import generate_fixture
from pomdp_ope.study import StudyConfig, run_convergence_study


def main():
    fx = generate_fixture("chain")
    alg = fx.algebra()
    print(f"max cumulative weight: {np.max(cumulative_ratios(alg)[0]):g}")
    print(f"belief Linf coverage:  {coverage_report(alg).max('C_Hinf'):.3f}")
    res = run_convergence_study(StudyConfig(fixture="chain", estimators=("is", "mis"), seed_count=50))
    for n in res.config.n_grid:
        print(f"n={n:>6}  IS rmse={res.row('is', n)['rmse']:.4f}  MIS rmse={res.row('mis', n)['rmse']:.4f}")


if __name__ == "__main__":
    main()
