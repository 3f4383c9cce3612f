from types import SimpleNamespace

import pytest

from l96qhm.rng import RngStream
from l96qhm.study import (
    QUBIT_CHOICES,
    Policy,
    Repetition,
    TrialResult,
    TrialSpec,
    run_study,
    run_trial,
    sample_trial,
    select_best,
)


def spec(**kw):
    base = dict(family="YZCX", n_qubits=4, n_layers=2, n_smpls=10_000, chi_single_train=False,
                T_impl_min=1.0, lambda_impl=0.0, n_impl_max=0, t_conv=0.2)
    base.update(kw)
    return TrialSpec(**base)


def scripted(values):
    """Runner returning (d_resc, n_waves) per seed; None means a failed run."""
    calls = []

    def runner(s, seed):
        calls.append(seed)
        v = values[seed - 42]
        if v is None:
            return SimpleNamespace(d_resc=None, n_waves=3, failed=True)
        return SimpleNamespace(d_resc=v[0], n_waves=v[1], failed=False)

    runner.calls = calls
    return runner


def test_sample_trial_ranges():
    for i in range(200):
        t = sample_trial("NPQC", RngStream(1).derive(i))
        assert t.n_qubits in QUBIT_CHOICES and 1 <= t.n_layers <= 2 ** (t.n_qubits // 2)
        assert 0.1 <= t.T_impl_min <= 1.5 and 0 <= t.lambda_impl <= 0.5
        assert t.n_impl_max in (0, 1) and 0.1 <= t.t_conv <= 1.0
    assert all(sample_trial("Chebyshev", RngStream(2).derive(i)).chi_single_train for i in range(30))
    assert sample_trial("RBF", RngStream(3)) == sample_trial("RBF", RngStream(3))


def test_trial_spec_layer_bound():
    with pytest.raises(ValueError):
        spec(n_layers=5)


def test_first_trial_runs_to_max():
    r = scripted([(0.5, 4)] * 5)
    t = run_trial(0, spec(), r)
    assert r.calls == [42, 43, 44, 45, 46] and not t.pruned


def test_distance_pruning():
    r = scripted([(0.3, 4)] * 5)
    t = run_trial(1, spec(), r, best=0.2)
    assert t.pruned and t.prune_reason == "distance" and len(t.repetitions) == 2
    ok = run_trial(2, spec(), scripted([(0.23, 4)] * 5), best=0.2)
    assert not ok.pruned and len(ok.repetitions) == 5


def test_failure_pruning_and_means():
    t = run_trial(0, spec(), scripted([None, (0.4, 5), None, (0.1, 1), (0.1, 1)]))
    assert t.pruned and t.prune_reason == "failures" and len(t.repetitions) == 3
    t = run_trial(0, spec(), scripted([None, (0.4, 5), (0.2, 3), (0.3, 4), (0.1, 2)]))
    assert not t.pruned and t.failed_count == 1
    assert t.mean_d_resc == pytest.approx(0.25) and t.mean_n_waves == pytest.approx(3.5)


def trial(i, reps):
    return TrialResult(i, spec(), [Repetition(42 + k, d, n) for k, (d, n) in enumerate(reps)])


def test_select_best_single_and_ordering():
    t = trial(0, [(0.3, 5), (0.1, 7)])
    bt, br = select_best([t])
    assert bt is t and br.d_resc == 0.1 and br.n_waves == 7
    a, b = trial(0, [(0.2, 8)]), trial(1, [(0.2, 4)])
    assert select_best([a, b], top_k=1)[0] is b
    pruned = trial(2, [(0.01, 1)])
    pruned.pruned = True
    assert select_best([a, b, pruned])[0] is not pruned
    with pytest.raises(ValueError):
        select_best([pruned])


def test_score():
    assert trial(0, [(1.0, 15)]).score(30) == pytest.approx(0.5)


def test_study_reproducible():
    def runner(s, seed):
        d = abs(s.T_impl_min - 0.5) / 2 + 0.01 * (seed - 42)
        return SimpleNamespace(d_resc=d, n_waves=s.n_qubits, failed=False)

    a = run_study("YZCX", 6, runner, seed=3)
    b = run_study("YZCX", 6, runner, seed=3)
    assert [t.spec for t in a.trials] == [t.spec for t in b.trials]
    assert a.best_trial.index == b.best_trial.index
    assert a.best_repetition.seed == 42
    with pytest.raises(ValueError):
        run_study("YZCX", 0, runner)


def test_policy_defaults():
    p = Policy()
    assert (p.n_repeat_min, p.n_repeat_max, p.prune_tolerance, p.prune_fail_count, p.seed0) == (2, 5, 0.2, 2, 42)
