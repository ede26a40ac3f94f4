"""Quick end-to-end check of the Python bindings."""

import json
import math
import os
import tempfile

import dynaclear as dc


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    assert close(dc.expected_min_k_assignment(5, 5, 5), sum(1 / k**2 for k in range(1, 6)))
    assert close(dc.basel_partial(200), sum(1 / k**2 for k in range(200, 0, -1)))
    assert close(dc.zeta(2.0), math.pi**2 / 6, 1e-10)
    assert dc.expected_arrivals_two_each() == 5.5
    assert dc.free_lunch_window(3.0)[1] is not None
    assert dc.free_lunch_window(2.0)[1] is None
    lo, hi, regime = dc.alpha_bounds("power:0.5", 10_000)
    assert regime == "critical" and lo < hi

    rows = [[4.0, 2.0], [1.0, 9.0], [3.0, 3.0]]
    pairs, total = dc.min_k_assignment(rows, 2)
    assert total == dc.brute_force_k_assignment(rows, 2)[1] == 3.0
    assert dc.min_edge(rows) == (1, 0, 1.0)

    sched = dc.ScheduleSpec("power:0.5")
    assert sched.threshold(9) == 3
    assert sched.should_clear(3, 4, 9) and not sched.should_clear(2, 4, 9)
    assert dc.RateModel("uniform:0.5:2").lambda_over == 2.0

    t = dc.run("greedy", seed=1, tape=[(1.0, "C"), (2.0, "C"), (3.0, "P")], horizon=3.0)
    assert t.wait == 3.0 and t.matches == 1
    assert t.records[0].time == 3.0

    t = dc.run("power:0.75", seed=7, matches=2000)
    assert t.matches == 2000
    assert t.cum_cost_at(2000) == t.total_cost
    again = dc.run("power:0.75", seed=7, matches=2000)
    assert again.total_cost == t.total_cost

    alpha, beta = dc.ratios("greedy", seed=3, reps=20, a_grid=[10, 100, 1000], tau_grid=[100.0, 1000.0], matches=1000)
    assert len(alpha) == 3 and len(beta) == 2
    slope, _, _, r2 = dc.fit_growth([(10, 1.0), (100, 10.0), (1000, 100.0), (10000, 1000.0)])
    assert close(slope, 1.0, 1e-12) and close(r2, 1.0, 1e-12)

    with tempfile.TemporaryDirectory() as out:
        cfg = {"schedule": "balanced", "matches": 300, "reps": 4, "seed": 11, "out": out}
        digest = dc.run_experiment(json.dumps(cfg))
        assert len(digest) == 64
        for name in ["trace.csv", "ratios_alpha.csv", "ratios_beta.csv", "fits.json", "summary.json"]:
            assert os.path.exists(os.path.join(out, name)), name

    results = dc.validate("oracles")
    assert [r[0] for r in results] == [1, 4, 14] and all(r[2] for r in results)

    print("smoke test passed")


if __name__ == "__main__":
    main()
