import sys

import numpy as np
import pytest

from marsrec.d2r import EMOTION_WIDTH, DonationEvent, MessageFeatures, feature_width
from marsrec.sensor import SensorConfig, SensorData, SensorModel, ViewerGraph
from marsrec.tensor import EventTensor, FactorSet


def random_events(rng, td, emb_width):
    events = []
    for (v, c, t), x in td.entries().items():
        msg = MessageFeatures(
            rng.normal(size=emb_width), float(rng.uniform(-1, 1)), rng.normal(size=EMOTION_WIDTH)
        )
        events.append(DonationEvent(v, c, t, x, msg, float(rng.uniform(0, 3))))
    return events


def random_instance(seed, dims=(6, 4, 10), alpha=2, emb_width=3, density=0.3, window=3, scale=0.5):
    """A random model and data bundle; every term of the objective is nonzero."""
    rng = np.random.default_rng(seed)
    nv, nc, nt = dims
    td = np.where(rng.random(dims) < density, rng.uniform(0.5, 3.0, dims), 0.0)
    tr = np.where(td > 0, rng.uniform(0.0, 5.0, dims), 0.0)
    td_t, tr_t = EventTensor.from_dense(td), EventTensor.from_dense(tr)
    edges = frozenset((u, v) for u in range(nv) for v in range(u + 1, nv) if rng.random() < 0.4)
    graph = ViewerGraph(nv, edges)
    w_c = np.triu(rng.choice([-1.0, 0.0, 1.0], size=(nc, nc)), 1)
    w_c = w_c + w_c.T
    events = random_events(rng, td_t, emb_width)
    data = SensorData(td_t, tr_t, graph, w_c, events, emb_width)
    factors = FactorSet(
        rng.uniform(-scale, scale, (nv, alpha)),
        rng.uniform(-scale, scale, (nc, alpha)),
        rng.uniform(-scale, scale, (nt, alpha)),
        rng.uniform(-scale, scale, (alpha,) * 3),
        rng.uniform(-scale, scale, (alpha,) * 3),
    )
    w = rng.uniform(-1, 1, (nv, nv))
    np.fill_diagonal(w, 0.0)
    theta = rng.normal(0, 0.3, feature_width(emb_width, alpha))
    m = SensorModel(factors, w, float(rng.uniform(0.1, 1.0)), theta)
    cfg = SensorConfig(alpha=alpha, window=window)
    return m, data, cfg


def make_model(V, C, W=None, n_slots=2):
    """A SENSOR model carrying only the embeddings and influence matrix CARS reads."""
    V, C = np.asarray(V, float), np.asarray(C, float)
    nv, a = V.shape
    if W is None:
        W = np.zeros((nv, nv))
    core = np.zeros((a, a, a))
    f = FactorSet(V, C, np.zeros((n_slots, a)), core, core)
    return SensorModel(f, W, 0.5, np.zeros(feature_width(0, a)))


@pytest.fixture
def small_instance():
    return random_instance(0)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
