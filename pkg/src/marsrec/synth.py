"""Synthetic live-streaming data with planted ground truth.

The generated world:

* an Erdos-Renyi friendship graph over viewers;
* a signed streamer relation matrix;
* a planted influence matrix supported on the friendships, with random
  strengths around ``planted_influence``;
* donations simulated slot by slot: each (viewer, channel) has a base rate
  from latent preferences and channel popularity, raised during channel bursts and by the decayed, influence-weighted
  donations of others in the previous ``window`` slots;
* responses that grow with the amount and shrink with the number of other
  donations the streamer is handling in the same window.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from marsrec.cars import Msp
from marsrec.d2r import (
    EMOTION_WIDTH,
    DonationEvent,
    MessageFeatures,
    read_events_jsonl,
    write_events_jsonl,
)
from marsrec.sensor import SensorData, ViewerGraph
from marsrec.tensor import EventTensor, read_tensor_jsonl, tucker_reconstruct, write_tensor_jsonl

RESPONSE_MAX = 5.0


@dataclass(frozen=True)
class SynthConfig:
    n_viewers: int = 100
    n_channels: int = 10
    n_slots: int = 200
    k: int = 3
    edge_prob: float = 0.05
    relation_prob: float = 0.3
    neg_relation_prob: float = 0.3
    planted_decay: float = 0.7
    planted_influence: float = 0.05
    base_donation_rate: float = 0.001
    preference_strength: float = 0.7
    popularity_spread: float = 0.3
    latent_dim: int = 3
    burst_rate: float = 0.01
    burst_magnitude: float = 5.0
    burst_length: int = 3
    amount_mu: float = 0.0
    amount_sigma: float = 0.6
    response_base: float = 2.0
    suppression_strength: float = 0.5
    response_noise: float = 0.0
    window: int = 5
    emb_width: int = 16
    n_groups: int = 40
    group_size: int = 4
    msps_per_group: int = 20
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("n_viewers", "n_channels", "n_slots", "k", "latent_dim", "burst_length",
                     "window", "n_groups", "group_size", "msps_per_group"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("edge_prob", "relation_prob", "neg_relation_prob", "burst_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        for name in ("planted_decay", "planted_influence",
                     "base_donation_rate", "burst_magnitude", "response_base",
                     "suppression_strength", "response_noise", "amount_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.k > self.n_channels:
            raise ValueError("k cannot exceed n_channels")
        if self.group_size > self.n_viewers:
            raise ValueError("group_size cannot exceed n_viewers")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown synth options: {sorted(unknown)}")
        defaults = cls()
        out = {}
        for key, raw in d.items():
            kind = type(getattr(defaults, key))
            out[key] = kind(raw)
        return cls(**out)


@dataclass(frozen=True, eq=False)
class SynthDataset:
    config: SynthConfig
    graph: ViewerGraph
    w_c: np.ndarray
    td: EventTensor
    tr: EventTensor
    events: list[DonationEvent]
    w_v_star: np.ndarray
    decay_star: float
    preference: np.ndarray
    bursts: np.ndarray
    msp_sets: list[list[Msp]] = field(default_factory=list)

    def sensor_data(self, n_slots: int | None = None) -> SensorData:
        """Training bundle, optionally restricted to the first ``n_slots`` slots."""
        td, tr, events = self.td, self.tr, self.events
        if n_slots is not None:
            td, tr = td.slice_slots(n_slots), tr.slice_slots(n_slots)
            events = [e for e in events if e.t < n_slots]
        return SensorData(td, tr, self.graph, self.w_c, events, self.config.emb_width)

    @property
    def train_sets(self) -> list[list[Msp]]:
        return self.msp_sets[: len(self.msp_sets) // 2]

    @property
    def test_sets(self) -> list[list[Msp]]:
        return self.msp_sets[len(self.msp_sets) // 2 :]

    def relevant_index(self, v: int, candidates: list[Msp]) -> int:
        """Candidate with the highest planted preference of ``v`` for its channels."""
        scores = [self.preference[v, list(p.channels(v))].sum() for p in candidates]
        return int(np.argmax(scores))


def _graph(rng: np.random.Generator, n: int, prob: float) -> tuple[ViewerGraph, np.ndarray]:
    upper = np.triu(rng.random((n, n)) < prob, 1)
    adj = upper | upper.T
    edges = frozenset((int(u), int(v)) for u, v in np.argwhere(upper))
    return ViewerGraph(n, edges), adj


def _streamer_relations(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    n = cfg.n_channels
    related = np.triu(rng.random((n, n)) < cfg.relation_prob, 1)
    sign = np.where(rng.random((n, n)) < cfg.neg_relation_prob, -1.0, 1.0)
    w = np.where(related, sign, 0.0)
    return w + w.T


def response_quality(amount: np.ndarray, others: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Noise-free response to a donation given how many other donations share its window."""
    base = cfg.response_base * np.log1p(amount)
    return np.clip(base / (1.0 + cfg.suppression_strength * others), 0.0, RESPONSE_MAX)


def generate(cfg: SynthConfig) -> SynthDataset:
    rng = np.random.default_rng(cfg.seed)
    nv, nc, nt, L = cfg.n_viewers, cfg.n_channels, cfg.n_slots, cfg.window

    graph, adj = _graph(rng, nv, cfg.edge_prob)
    w_c = _streamer_relations(rng, cfg)

    w_star = np.where(adj, cfg.planted_influence * rng.uniform(0.5, 1.5, (nv, nv)), 0.0)

    u_lat = rng.normal(size=(nv, cfg.latent_dim))
    c_lat = rng.normal(size=(nc, cfg.latent_dim))
    popularity = rng.normal(0.0, cfg.popularity_spread, nc)
    affinity = np.exp(cfg.preference_strength * u_lat @ c_lat.T / np.sqrt(cfg.latent_dim) + popularity)
    preference = affinity / affinity.mean()
    base_rate = cfg.base_donation_rate * preference

    bursts = np.zeros((nc, nt), dtype=bool)
    for c, t in np.argwhere(rng.random((nc, nt)) < cfg.burst_rate):
        bursts[c, t : t + cfg.burst_length] = True
    burst_mult = np.where(bursts, 1.0 + cfg.burst_magnitude, 1.0)

    decay_w = np.exp(-cfg.planted_decay * np.arange(1, L + 1))
    td = np.zeros((nv, nc, nt))
    for t in range(nt):
        excite = np.zeros((nv, nc))
        for delta in range(1, min(L, t) + 1):
            excite += decay_w[delta - 1] * td[:, :, t - delta]
        intensity = base_rate * burst_mult[None, :, t] + w_star.T @ excite
        donate = rng.random((nv, nc)) < -np.expm1(-intensity)
        amounts = np.round(np.exp(rng.normal(cfg.amount_mu, cfg.amount_sigma, (nv, nc))), 2)
        td[:, :, t] = np.where(donate, np.maximum(amounts, 0.01), 0.0)

    counts = (td > 0).sum(axis=0).astype(float)
    window_counts = np.cumsum(counts, axis=1)
    window_counts[:, L + 1 :] -= window_counts[:, : -(L + 1)].copy()
    coords = np.argwhere(td > 0)
    amounts = td[tuple(coords.T)]
    others = window_counts[coords[:, 1], coords[:, 2]] - 1.0
    resp = response_quality(amounts, others, cfg)
    if cfg.response_noise > 0:
        resp = np.clip(resp + rng.normal(0.0, cfg.response_noise, len(resp)), 0.0, RESPONSE_MAX)
    tr = np.zeros_like(td)
    tr[tuple(coords.T)] = resp

    cum = np.cumsum(td, axis=2) - td  # per-viewer donations strictly before t
    fanmin = cum.max(axis=0)
    events = []
    for (v, c, t), amount in zip(coords.tolist(), amounts.tolist()):
        msg = MessageFeatures(
            rng.normal(0.0, 1.0 / np.sqrt(cfg.emb_width), cfg.emb_width),
            float(rng.uniform(-1.0, 1.0)),
            rng.normal(0.0, 1.0, EMOTION_WIDTH),
        )
        events.append(DonationEvent(v, c, t, amount, msg, float(fanmin[c, t])))

    msp_sets = _msp_sets(rng, cfg, graph, adj)
    return SynthDataset(
        cfg, graph, w_c, EventTensor.from_dense(td), EventTensor.from_dense(tr), events,
        w_star, cfg.planted_decay, preference, bursts, msp_sets,
    )


def _msp_sets(rng: np.random.Generator, cfg: SynthConfig, graph: ViewerGraph, adj: np.ndarray) -> list[list[Msp]]:
    nv, nc = cfg.n_viewers, cfg.n_channels
    sets = []
    for _ in range(cfg.n_groups):
        seed_v = int(rng.integers(nv))
        group = [seed_v]
        frontier = [seed_v]
        while frontier and len(group) < cfg.group_size:
            u = frontier.pop(0)
            for w in rng.permutation(np.flatnonzero(adj[u])):
                if len(group) < cfg.group_size and int(w) not in group:
                    group.append(int(w))
                    frontier.append(int(w))
        while len(group) < cfg.group_size:
            w = int(rng.integers(nv))
            if w not in group:
                group.append(w)
        edges = [(u, w) for i, u in enumerate(group) for w in group[i + 1 :] if adj[u, w]]
        cands = []
        for _ in range(cfg.msps_per_group):
            assign = {v: sorted(rng.choice(nc, cfg.k, replace=False).tolist()) for v in group}
            cands.append(Msp.build(group, edges, assign))
        sets.append(cands)
    return sets


def follow_fraction(td: EventTensor, within: int = 1) -> float:
    """Share of donations preceded by another donation to the same channel in the previous ``within`` slots."""
    counts = (td.dense() > 0).sum(axis=0)
    coords = td.coords
    if len(coords) == 0:
        return 0.0
    cs = np.concatenate([np.zeros((counts.shape[0], 1)), np.cumsum(counts, axis=1)], axis=1)
    c, t = coords[:, 1], coords[:, 2]
    prior = cs[c, t] - cs[c, np.maximum(t - within, 0)]
    return float(np.mean(prior > 0))


def summary(ds: SynthDataset) -> dict:
    td = ds.td
    return {
        "viewers": td.n_viewers,
        "channels": td.n_channels,
        "slots": td.n_slots,
        "friendships": len(ds.graph.edges),
        "donations": td.nnz,
        "donation_total": round(float(td.values.sum()), 2),
        "burst_slots": int(ds.bursts.sum()),
        "follow_fraction": round(follow_fraction(td), 4),
        "msp_sets": len(ds.msp_sets),
    }


# -- dataset directory ---------------------------------------------------------------

FILES = {
    "graph": "graph.json",
    "streamers": "streamers.json",
    "donations": "donations.jsonl",
    "responses": "responses.jsonl",
    "events": "events.jsonl",
    "msps_train": "msps_train.json",
    "msps_test": "msps_test.json",
    "planted": "planted.json",
}


def write_msp_sets(sets: list[list[Msp]], path: str | Path) -> None:
    """Candidate sets as a JSON list of lists of parties."""
    Path(path).write_text(json.dumps([[p.to_json() for p in cands] for cands in sets]))


def read_msp_sets(path: str | Path) -> list[list[Msp]]:
    """Read candidate sets; a flat list of parties is treated as one set."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON list")
    if data and not isinstance(data[0], list):
        data = [data]
    return [[Msp.from_json(d) for d in cands] for cands in data]


def write_dataset(ds: SynthDataset, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    g = ds.graph
    (out / FILES["graph"]).write_text(
        json.dumps({"n_viewers": g.n_viewers, "edges": [list(e) for e in sorted(g.edges)]})
    )
    (out / FILES["streamers"]).write_text(
        json.dumps({"n_channels": len(ds.w_c), "w_c": ds.w_c.astype(int).tolist()})
    )
    write_tensor_jsonl(ds.td, out / FILES["donations"])
    write_tensor_jsonl(ds.tr, out / FILES["responses"])
    write_events_jsonl(ds.events, out / FILES["events"])
    write_msp_sets(ds.train_sets, out / FILES["msps_train"])
    write_msp_sets(ds.test_sets, out / FILES["msps_test"])
    (out / FILES["planted"]).write_text(
        json.dumps(
            {
                "config": asdict(ds.config),
                "w_v_star": ds.w_v_star.tolist(),
                "decay_star": ds.decay_star,
                "preference": ds.preference.tolist(),
                "bursts": ds.bursts.astype(int).tolist(),
            }
        )
    )


def read_dataset(path: str | Path) -> SynthDataset:
    path = Path(path)
    missing = [name for name in FILES.values() if not (path / name).exists()]
    if missing:
        raise FileNotFoundError(f"{path}: missing {', '.join(missing)}")
    g = json.loads((path / FILES["graph"]).read_text())
    graph = ViewerGraph(g["n_viewers"], frozenset(tuple(e) for e in g["edges"]))
    w_c = np.asarray(json.loads((path / FILES["streamers"]).read_text())["w_c"], dtype=np.float64)
    planted = json.loads((path / FILES["planted"]).read_text())
    cfg = SynthConfig(**planted["config"])
    td = read_tensor_jsonl(path / FILES["donations"])
    tr = read_tensor_jsonl(path / FILES["responses"])
    events = read_events_jsonl(path / FILES["events"], cfg.emb_width)
    msp_sets = read_msp_sets(path / FILES["msps_train"]) + read_msp_sets(path / FILES["msps_test"])
    return SynthDataset(
        cfg, graph, w_c, td, tr, events,
        np.asarray(planted["w_v_star"]), planted["decay_star"],
        np.asarray(planted["preference"]), np.asarray(planted["bursts"], dtype=bool), msp_sets,
    )


def planted_cofactors(
    dims: tuple[int, int, int], alpha: int, seed: int = 0, noise: float = 0.0
) -> tuple[EventTensor, EventTensor, dict[str, np.ndarray]]:
    """Donation and response tensors built from the same nonnegative V, C, T with two cores.

    Gaussian noise of scale ``noise`` is added to every cell and the result is
    clipped at zero. Returns ``(td, tr, planted)`` where planted holds the
    factors and cores.
    """
    if min(dims) < 1 or alpha < 1:
        raise ValueError("dims and alpha must be positive")
    rng = np.random.default_rng(seed)
    nv, nc, nt = dims
    V, C, T = (rng.uniform(0.0, 1.0, (n, alpha)) for n in (nv, nc, nt))
    o_d, o_r = (rng.uniform(0.0, 1.0, (alpha,) * 3) for _ in range(2))
    planted = {"V": V, "C": C, "T": T, "O_D": o_d, "O_R": o_r}
    out = []
    for core in (o_d, o_r):
        x = tucker_reconstruct(core, V, C, T) / alpha**3
        if noise > 0:
            x = x + rng.normal(0.0, noise, x.shape)
        out.append(EventTensor.from_dense(np.clip(x, 0.0, None)))
    return out[0], out[1], planted
