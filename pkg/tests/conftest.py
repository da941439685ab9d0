import numpy as np
import pytest

from fedcos.data import PartitionSpec, gen_blobs, partition
from fedcos.numkit import SeedPath
from fedcos.objectives import SoftmaxRegression
from fedcos.penalties import PenaltyConfig
from fedcos.simulator import ClientSpec, SimConfig
from fedcos.strategies import LocalPlan, ServerRule

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(criterion, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs_sim(seed, mu_cos=0.0, mu_prox=0.0, rule=None, rounds=60, n_clients=5,
              scheme="totally_noniid", participation=1.0, K=25, per_class=100, dim=20,
              objective=None):
    """Blobs scene: 10 classes, softmax, label-disjoint split over 5 clients by default."""
    sp = SeedPath(seed)
    ds = gen_blobs(10, per_class, dim, 0.3, sp.child("data", 0))
    ev = gen_blobs(10, per_class, dim, 0.3, sp.child("data", 0), split=1)
    split = partition(ds, PartitionSpec(scheme, n_clients, sp))
    obj = objective or SoftmaxRegression(dim, 10)
    clients = [ClientSpec(obj, ds.subset(ix)) for ix in split.indices]
    plan = LocalPlan(0.01, K, 32, PenaltyConfig(mu_cos, mu_prox))
    return SimConfig(clients, rounds, plan, obj, ev, participation=participation,
                     rule=rule or ServerRule(), root_seed=seed)
