import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dataset, planted
from pnbm import evaluation, similarity
from pnbm.data import SplitSpec, center, split
from pnbm.errors import DivergenceError, EmptyDatasetError, EmptyResultError
from pnbm.evaluation import (EvalReport, attach_baseline, density_slices, density_sweep,
                             format_table, inc_percent, repeat_protocol, repeat_seeds, rmse,
                             run_once, stability)


def test_rmse_constant_mean_example():
    train = dataset([(0, 0, 2.0), (1, 0, 4.0), (0, 1, 1.0)], 3, 2)
    test = dataset([(0, 0, 2.0), (2, 0, 4.0)], 3, 2, scale=(1.0, 5.0))
    view = center(train)
    # zero similarity: every prediction is the item mean 3
    assert rmse(similarity.ConstraintMatrix(np.zeros((2, 2)), "ones"), test, view) == 1.0


def test_rmse_perfect_is_zero():
    ds = dataset([(0, 0, 3.0), (1, 0, 3.0), (0, 1, 2.0)])
    assert rmse(similarity.ones(2), dataset([(1, 0, 3.0)], 2, 2), center(ds)) == 0.0


def test_rmse_empty():
    ds = dataset([(0, 0, 3.0), (1, 0, 4.0)])
    empty = ds.subset(np.zeros(2, bool))
    with pytest.raises(EmptyDatasetError):
        rmse(similarity.ones(1), empty, center(ds))


def test_rmse_parallel_equals_serial():
    ds = planted(n_users=40, n_items=12, seed=1)
    view = center(ds)
    model = similarity.pearson(view)
    a = rmse(model, ds, view, jobs=1)
    b = rmse(model, ds, view, jobs=3)
    assert abs(a - b) <= 1e-12


def test_inc_percent():
    assert inc_percent(0.9, 0.9) == 0.0
    assert inc_percent(0.8, 1.0) == pytest.approx(20.0)


# ---- stability ------------------------------------------------------------

def test_flat_history():
    st_ = stability([0.9] * 200)
    assert (st_.epsilon, st_.zeta, st_.censored, st_.converged) == (1, 200, True, True)


def test_strictly_decreasing_history():
    h = list(np.linspace(1.0, 0.8, 200))
    st_ = stability(h)
    assert (st_.epsilon, st_.zeta, st_.censored) == (200, 1, True)
    assert not st_.converged  # open-ended plateau shorter than 10 epochs
    assert str(st_) == "*"


def test_plateau_then_rise():
    h = [1.0, 0.95, 0.92, 0.9, 0.90005, 0.9001, 0.95, 0.96]
    st_ = stability(h, budget=8)
    # 0.9001 differs from 0.9 by exactly the tolerance: still equal
    assert (st_.epsilon, st_.zeta, st_.censored, st_.converged) == (4, 3, False, True)


def test_just_outside_tolerance_breaks_plateau():
    h = [1.0, 0.9, 0.90011, 0.95]
    assert (stability(h).epsilon, stability(h).zeta) == (2, 1)


def test_minimum_is_the_reference_not_first_dip():
    # 0.90008 is within tol of the min 0.9 and comes first
    h = [1.0, 0.90008, 0.9, 0.9, 0.91]
    st_ = stability(h)
    assert (st_.epsilon, st_.zeta) == (2, 3)


def test_persistence_rule():
    short = [1.0] * 190 + [0.8] * 10
    shorter = [1.0] * 191 + [0.8] * 9
    assert stability(short).converged and stability(short).zeta == 10
    assert not stability(shorter).converged


def test_budget_truncates():
    h = [1.0, 0.9, 0.8, 0.7]
    st_ = stability(h, budget=2)
    assert (st_.epsilon, st_.zeta, st_.censored) == (2, 1, True)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.5, 1.5), min_size=1, max_size=60), st.integers(1, 80))
def test_stability_bounds_and_idempotence(h, budget):
    s = stability(h, budget=budget)
    n = min(len(h), budget)
    assert 1 <= s.epsilon <= n
    assert 1 <= s.zeta <= n - s.epsilon + 1
    assert stability(h, budget=budget) == s


# ---- protocols --------------------------------------------------------------

def test_repeat_seed_modes():
    assert repeat_seeds(10, 3, "splits") == [(10, 10), (11, 10), (12, 10)]
    assert repeat_seeds(10, 3, "seeds") == [(10, 10), (10, 11), (10, 12)]


def test_single_repeat_equals_single_run():
    ds = planted(n_users=30, n_items=10, seed=2)
    rep = repeat_protocol("mpnbm", ds, 1, base_seed=4, epochs=3)
    one = run_once("mpnbm", split(ds, SplitSpec(seed=4)), seed=4, epochs=3)
    assert rep.rmse == one.rmse and rep.per_repeat_rmse == [one.rmse]


def test_repeat_protocol_deterministic():
    ds = planted(n_users=30, n_items=10, seed=3)
    a = repeat_protocol("regsim", ds, 2, base_seed=1, epochs=3)
    b = repeat_protocol("regsim", ds, 2, base_seed=1, epochs=3)
    assert a.to_dict() == b.to_dict()
    assert a.epsilon is not None and a.mean_history is not None


def test_failed_repeats_are_counted(monkeypatch):
    ds = planted(n_users=30, n_items=10, seed=3)
    with pytest.raises(EmptyResultError):
        repeat_protocol("mpnbm", ds, 2, epochs=3, beta=1e6, reg_form="alg1")

    real = evaluation.run_once
    calls = []

    def flaky(*a, **kw):
        calls.append(1)
        if len(calls) == 1:
            raise DivergenceError("boom")
        return real(*a, **kw)

    monkeypatch.setattr(evaluation, "run_once", flaky)
    rep = repeat_protocol("regsim", ds, 3, epochs=2)
    assert rep.failed == 1 and np.isnan(rep.per_repeat_rmse[0])
    assert rep.rmse == pytest.approx(np.mean(rep.per_repeat_rmse[1:]))


def test_baseline_inc_against_itself():
    r = [EvalReport("regsim", 0.93, 1, [0.93]), EvalReport("mpnbm", 0.90, 1, [0.90])]
    attach_baseline(r, "regsim")
    assert r[0].inc_percent == 0.0
    assert r[1].inc_percent == pytest.approx(100 * 0.03 / 0.93)
    assert "regsim" in format_table(r)


def test_density_slices_ordered_by_activity():
    rng = np.random.default_rng(0)
    trip = []
    for u in range(60):
        for i in rng.choice(40, size=2 + u // 3, replace=False):
            trip.append((u, int(i), float(rng.integers(1, 6))))
    ds = dataset(trip, 60, 40)
    slices = density_slices(ds, 4)
    per_user = [len(s) / s.num_users for s in slices]
    assert per_user == sorted(per_user)
    assert sum(s.num_users for s in slices) == 60
    one = density_slices(ds, 1)[0]
    assert len(one) == len(ds) and one.num_users == 60


def test_density_sweep_skips_small_slices():
    ds = planted(n_users=60, n_items=10, seed=4)
    out = density_sweep(ds, ["pcc"], n_slices=2, min_users=50)
    assert out == []
    out = density_sweep(ds, ["pcc", "cos"], n_slices=2, min_users=20)
    assert len(out) == 2
    for sl in out:
        assert sl.density == pytest.approx(sl.ratings / (sl.users * sl.items))
        assert set(sl.reports) == {"pcc", "cos"}
