import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcos.numkit import SeedPath
from fedcos.objectives import SumObjective, two_client_quadratics
from fedcos.simulator import (
    ClientSpec,
    ConfigError,
    History,
    RoundRecord,
    SimConfig,
    displacement_metrics,
    rounds_to_target,
    run_experiment,
    sample_clients,
)
from fedcos.strategies import ClientUpdate, LocalPlan

from conftest import blobs_sim


def toy_sim(**kw):
    parts = two_client_quadratics()
    base = dict(clients=[ClientSpec(p) for p in parts], rounds=5, plan=LocalPlan(0.25, 10, 1),
                eval_objective=SumObjective(parts), x0=parts[0].start)
    base.update(kw)
    return SimConfig(**base)


@settings(max_examples=40)
@given(st.integers(1, 50), st.floats(0.01, 1.0), st.integers(0, 100), st.integers(0, 9))
def test_sample_clients(n, frac, r, seed):
    ids = sample_clients(n, frac, r, SeedPath(seed))
    assert ids == sorted(set(ids))
    assert len(ids) == max(1, min(n, int(round(frac * n))))
    assert all(0 <= i < n for i in ids)
    assert ids == sample_clients(n, frac, r, SeedPath(seed))


def test_displacement_metrics_basic():
    x_hat = np.zeros(2)
    ups = [ClientUpdate(np.array([1.0, 0.0]), 1, 0), ClientUpdate(np.array([0.0, 2.0]), 1, 1)]
    m = displacement_metrics(x_hat, ups, np.array([0.5, 1.0]), (0, 1))
    assert m.local_moves == {0: 1.0, 1: 2.0}
    assert m.pair_cosine == 0.0
    assert m.pair_model_distance == pytest.approx(math.sqrt(5))
    assert m.global_move == pytest.approx(math.sqrt(1.25))
    assert displacement_metrics(x_hat, ups[:1], ups[0].params, (0, 1)).pair_cosine is None


def test_run_is_deterministic_and_records():
    h1 = run_experiment(toy_sim())
    h2 = run_experiment(toy_sim())
    assert [r.to_dict() for r in h1.records] == [r.to_dict() for r in h2.records]
    assert [r.round for r in h1.records] == [1, 2, 3, 4, 5]
    assert all(r.participants == [0, 1] for r in h1.records)


def test_on_round_callback_and_eval_every():
    seen = []
    h = run_experiment(toy_sim(rounds=7, eval_every=3), on_round=seen.append)
    assert [r.round for r in seen] == list(range(1, 8))
    evaluated = [r.round for r in h.records if r.eval_loss is not None]
    assert evaluated == [3, 6, 7]


def test_keep_models():
    h = run_experiment(toy_sim(keep_models=True))
    assert len(h.models) == 6
    np.testing.assert_array_equal(h.models[0], [5.1, -3.1])
    assert np.array_equal(h.models[-1], h.final_model)


def test_workers_match_serial():
    a = run_experiment(blobs_sim(3, mu_cos=0.02, rounds=3))
    cfg = blobs_sim(3, mu_cos=0.02, rounds=3)
    cfg.workers = 4
    b = run_experiment(cfg)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_partial_participation_is_seeded():
    a = run_experiment(blobs_sim(1, rounds=4, participation=0.4))
    b = run_experiment(blobs_sim(1, rounds=4, participation=0.4))
    assert [r.participants for r in a.records] == [r.participants for r in b.records]
    assert all(len(r.participants) == 2 for r in a.records)


@pytest.mark.parametrize("kw, key", [
    (dict(participation=0.0), "participation"),
    (dict(participation=float("nan")), "participation"),
    (dict(rounds=0), "rounds"),
    (dict(tracked_pair=(0, 0)), "tracked_pair"),
    (dict(tracked_pair=(0, 5)), "tracked_pair"),
    (dict(eval_every=0), "eval_every"),
])
def test_config_validation(kw, key):
    with pytest.raises(ConfigError) as e:
        run_experiment(toy_sim(**kw))
    assert e.value.key == key


def test_rounds_to_target():
    h = History([RoundRecord(r, [0], 0.0, {}, None, None, a, 0.0)
                 for r, a in [(1, 0.2), (2, None), (3, 0.6), (4, 0.5)]])
    assert rounds_to_target(h, 0.5) == 3
    assert rounds_to_target(h, 0.9) is None
    assert h.best_accuracy() == 0.6 and h.last_accuracy() == 0.5
    with pytest.raises(ValueError):
        rounds_to_target(h, 1.5)


def test_blobs_scene_learns():
    acc = run_experiment(blobs_sim(0, rounds=60, scheme="iid")).accuracies()
    assert acc[0] < 0.2
    assert acc[-1] > 0.8
