"""RMSE of the minimax and MIS estimators as the sample size grows."""
from pomdp_ope.study import StudyConfig, run_convergence_study


def main():
    cfg = StudyConfig(fixture="random-3", fixture_params={"S": 2, "O": 2, "A": 2, "H": 3},
                      n_grid=(100, 1000, 10000), seed_count=50)
    res = run_convergence_study(cfg)
    print(f"{res.fixture}: J(pi_e) = {res.true_value:.5f}")
    for row in res.rows:
        print(f"{row['estimator']:<8} n={row['n']:>6}  rmse={row['rmse']:.5f}  slope={row['slope']:.3f}")


if __name__ == "__main__":
    main()
