import numpy as np

from vasorl.benchmark import BenchmarkConfig, ordering_summary, run_benchmark, train_test_cohort


def test_exact_split_sizes():
    c = train_test_cohort(0, 30, 10)
    assert len(c.split("train")) == 30 and len(c.split("test")) == 10
    assert c.norm_stats is not None


def test_tiny_benchmark_runs_and_is_reproducible():
    cfg = BenchmarkConfig(seeds=(0, 1), n_train=40, n_test=20, epochs=2, bootstrap=10)
    a, b = run_benchmark(cfg), run_benchmark(cfg)
    s = ordering_summary(a)
    assert s["n_seeds"] == 2 and 0 <= s["bd_over_mixed"] <= 2 and 0 <= s["lstm_over_bd"] <= 2
    for ra, rb in zip(a, b):
        for name in ra.reports:
            assert np.isfinite(ra.improvement(name))
            assert ra.improvement(name) == rb.improvement(name)
