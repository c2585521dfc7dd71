"""CARS: channel-influence-aware ranking of multi-stream parties (MSPs).

Viewer and channel embeddings and the influence matrix come frozen from a
trained SENSOR model; only ``h``, ``b`` and the per-viewer blend weights
``tau_v`` / ``tau_c`` are learned, with a BPR loss over MSP pairs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, log_expit

from marsrec.optim import Optimizer, TrainingDivergence
from marsrec.sensor import SensorModel
from marsrec.tensor import EventTensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Msp:
    """A party: a viewer group, its friendships, and ``k`` channels per member.

    ``assignments`` is stored as a sorted tuple of ``(viewer, channels)`` so
    the object is hashable and usable in sets.
    """

    group: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    assignments: tuple[tuple[int, tuple[int, ...]], ...]
    _lookup: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        group = tuple(sorted(dict.fromkeys(int(v) for v in self.group)))
        members = set(group)
        edges = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v or u not in members or v not in members:
                raise ValueError(f"edge {(u, v)} not inside the group")
            edges.add((min(u, v), max(u, v)))
        items = self.assignments.items() if isinstance(self.assignments, Mapping) else self.assignments
        assign = {}
        for v, chans in items:
            v = int(v)
            if v not in members:
                raise ValueError(f"viewer {v} assigned channels but not in the group")
            chans = tuple(int(c) for c in chans)
            if len(set(chans)) != len(chans):
                raise ValueError(f"viewer {v} has repeated channels")
            assign[v] = chans
        if set(assign) != members:
            raise ValueError("every group member needs a channel assignment")
        sizes = {len(c) for c in assign.values()}
        if len(sizes) > 1:
            raise ValueError("all members must watch the same number k of channels")
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "edges", frozenset(edges))
        object.__setattr__(self, "assignments", tuple(sorted(assign.items())))
        self._lookup.update(assign)

    @classmethod
    def build(
        cls,
        group: Iterable[int],
        edges: Iterable[tuple[int, int]],
        assignments: Mapping[int, Sequence[int]],
    ) -> "Msp":
        return cls(tuple(group), frozenset(map(tuple, edges)), assignments)

    @property
    def k(self) -> int:
        return len(self.assignments[0][1]) if self.assignments else 0

    def channels(self, v: int) -> tuple[int, ...]:
        try:
            return self._lookup[v]
        except KeyError:
            raise KeyError(f"viewer {v} is not in this party") from None

    def friends(self, v: int) -> list[int]:
        return sorted(b if a == v else a for a, b in self.edges if v in (a, b))

    def to_json(self) -> dict:
        return {
            "group": list(self.group),
            "edges": [list(e) for e in sorted(self.edges)],
            "assignments": {str(v): list(c) for v, c in self.assignments},
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "Msp":
        return cls.build(
            d["group"],
            [tuple(e) for e in d.get("edges", [])],
            {int(v): c for v, c in d["assignments"].items()},
        )


@dataclass(frozen=True, eq=False)
class CarsParams:
    h: np.ndarray
    b: float
    tau_v: np.ndarray
    tau_c: np.ndarray
    lambda4: float = 0.1
    loss_trace: tuple[float, ...] = ()
    initial_loss: float | None = None

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        tv = np.asarray(self.tau_v, dtype=np.float64).reshape(-1)
        tc = np.asarray(self.tau_c, dtype=np.float64).reshape(-1)
        if len(h) % 2 != 1:
            raise ValueError("h must have width 2*alpha + 1")
        if tv.shape != tc.shape:
            raise ValueError("tau_v and tau_c must cover the same viewers")
        if not all(np.all(np.isfinite(a)) for a in (h, tv, tc)) or not np.isfinite(self.b):
            raise ValueError("CARS parameters must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "tau_v", tv)
        object.__setattr__(self, "tau_c", tc)
        object.__setattr__(self, "b", float(self.b))

    @property
    def alpha(self) -> int:
        return (len(self.h) - 1) // 2

    @property
    def n_viewers(self) -> int:
        return len(self.tau_v)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "h": self.h.tolist(),
            "b": self.b,
            "tau_v": self.tau_v.tolist(),
            "tau_c": self.tau_c.tolist(),
            "lambda4": self.lambda4,
            "loss_trace": list(self.loss_trace),
            "initial_loss": self.initial_loss,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "CarsParams":
        return cls(d["h"], d["b"], d["tau_v"], d["tau_c"], d.get("lambda4", 0.1),
                   tuple(d.get("loss_trace", ())), d.get("initial_loss"))


@dataclass(frozen=True)
class CarsConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    lambda4: float = 0.1
    seed: int = 0
    init_scale: float = 0.1
    tau_init: float = 0.5
    optimizer: str = "sgd"
    # Fraction of DB pairs drawn each epoch; None uses every pair.
    pair_sample: float | None = None


def _check_alpha(params: CarsParams, m: SensorModel) -> None:
    if params.alpha != m.alpha:
        raise ValueError(f"CARS alpha {params.alpha} does not match SENSOR alpha {m.alpha}")
    if params.n_viewers != m.dims[0]:
        raise ValueError("CARS viewer count does not match the SENSOR model")


def base_influence(params: CarsParams, v_emb: np.ndarray, c_emb: np.ndarray) -> float:
    """``h . sigmoid(v (+) c (+) b)`` with the sigmoid applied element-wise."""
    v_emb = np.asarray(v_emb, dtype=np.float64)
    c_emb = np.asarray(c_emb, dtype=np.float64)
    if v_emb.shape != (params.alpha,) or c_emb.shape != (params.alpha,):
        raise ValueError(f"embeddings must have width {params.alpha}")
    return float(params.h @ expit(np.concatenate([v_emb, c_emb, [params.b]])))


def channel_influence(params: CarsParams, m: SensorModel, v: int, c: int, p: Msp) -> float:
    chans = p.channels(v)
    if c not in chans:
        raise ValueError(f"channel {c} is not assigned to viewer {v}")
    V, C = m.factors.V, m.factors.C
    personal = base_influence(params, V[v], C[c])
    social = sum(
        m.w_v_hat[u, v] * base_influence(params, V[u], C[c])
        for u in p.friends(v)
        if c in p.channels(u)
    )
    relation = sum(abs(float(C[c] @ C[other])) for other in chans if other != c)
    return personal + params.tau_v[v] * social + params.tau_c[v] * relation


def msp_satisfaction(params: CarsParams, m: SensorModel, v: int, p: Msp) -> float:
    """``v . sum_c a(v, c, p) c`` over the channels ``v`` watches in ``p``."""
    if v not in p.group:
        raise KeyError(f"viewer {v} is not in the party")
    V, C = m.factors.V, m.factors.C
    total = np.zeros(m.alpha)
    for c in p.channels(v):
        total += channel_influence(params, m, v, c, p) * C[c]
    return float(V[v] @ total)


Pair = tuple[int, Msp, Msp]


def build_bpr_pairs(td: EventTensor, msps: Sequence[Msp]) -> list[Pair]:
    """Triples ``(v, p, p')`` where ``v`` donated strictly more to ``p``'s channels than to ``p'``'s.

    Only viewers in both groups are compared; ties produce no triple.
    """
    per_channel = td.dense().sum(axis=2)
    nc = td.n_channels
    by_viewer: dict[int, list[tuple[int, float]]] = {}
    for idx, p in enumerate(msps):
        for v in p.group:
            chans = p.channels(v)
            if any(not 0 <= c < nc for c in chans):
                raise IndexError(f"party {idx} references an unknown channel")
            if v < td.n_viewers:
                by_viewer.setdefault(v, []).append((idx, float(per_channel[v, list(chans)].sum())))
    pairs = []
    for v in sorted(by_viewer):
        for (i, si), (j, sj) in combinations(by_viewer[v], 2):
            if si > sj:
                pairs.append((v, msps[i], msps[j]))
            elif sj > si:
                pairs.append((v, msps[j], msps[i]))
    return pairs


# -- vectorized scoring ------------------------------------------------------------


class _Scorer:
    """Flattened (viewer, party) satisfaction terms for fast batch evaluation.

    For a slot ``s = (v, p)``:

        r_s = sum_c q(v,c) o(v,c) + tau_v[v] sum_(u,c) q(v,c) W(u,v) o(u,c) + tau_c[v] K_s

    where ``q(v,c) = v . c`` and ``K_s`` collects the co-channel relation terms.
    """

    def __init__(self, m: SensorModel, slots: Sequence[tuple[int, Msp]]):
        V, C = m.factors.V, m.factors.C
        self.V, self.C = V, C
        self.nv = V.shape[0]
        per_s, per_v, per_c, per_q = [], [], [], []
        soc_s, soc_u, soc_c, soc_q = [], [], [], []
        viewer, rel = [], []
        for s, (v, p) in enumerate(slots):
            chans = p.channels(v)
            viewer.append(v)
            k_sum = 0.0
            for c in chans:
                q = float(V[v] @ C[c])
                per_s.append(s); per_v.append(v); per_c.append(c); per_q.append(q)
                for u in p.friends(v):
                    if c in p.channels(u):
                        soc_s.append(s); soc_u.append(u); soc_c.append(c)
                        soc_q.append(q * m.w_v_hat[u, v])
                k_sum += q * sum(abs(float(C[c] @ C[o])) for o in chans if o != c)
            rel.append(k_sum)
        as_i = lambda x: np.asarray(x, dtype=np.int64)
        self.per = (as_i(per_s), as_i(per_v), as_i(per_c), np.asarray(per_q, dtype=np.float64))
        self.soc = (as_i(soc_s), as_i(soc_u), as_i(soc_c), np.asarray(soc_q, dtype=np.float64))
        self.viewer = as_i(viewer)
        self.rel = np.asarray(rel, dtype=np.float64)
        self.n = len(slots)
        self.sig_v = expit(V)
        self.sig_c = expit(C)

    def _base(self, h: np.ndarray, b: float) -> np.ndarray:
        a = self.V.shape[1]
        return (self.sig_v @ h[:a])[:, None] + (self.sig_c @ h[a : 2 * a])[None, :] + h[-1] * expit(b)

    def scores(self, h, b, tau_v, tau_c) -> np.ndarray:
        o = self._base(h, b)
        s, v, c, q = self.per
        out = np.bincount(s, q * o[v, c], minlength=self.n)
        ss, su, sc, sq = self.soc
        social = np.bincount(ss, sq * o[su, sc], minlength=self.n)
        return out + tau_v[self.viewer] * social + tau_c[self.viewer] * self.rel

    def backward(self, g: np.ndarray, h, b, tau_v, tau_c):
        """Gradients of ``sum_s g[s] * r_s`` w.r.t. ``h, b, tau_v, tau_c``."""
        o = self._base(h, b)
        do = np.zeros_like(o)
        s, v, c, q = self.per
        np.add.at(do, (v, c), g[s] * q)
        ss, su, sc, sq = self.soc
        np.add.at(do, (su, sc), g[ss] * tau_v[self.viewer[ss]] * sq)
        sb = expit(b)
        dh = np.concatenate([self.sig_v.T @ do.sum(axis=1), self.sig_c.T @ do.sum(axis=0), [sb * do.sum()]])
        db = h[-1] * sb * (1 - sb) * do.sum()
        social = np.bincount(ss, sq * o[su, sc], minlength=self.n)
        dtv = np.bincount(self.viewer, g * social, minlength=self.nv)
        dtc = np.bincount(self.viewer, g * self.rel, minlength=self.nv)
        return dh, db, dtv, dtc


def _pair_slots(pairs: Sequence[Pair]):
    slots: dict[tuple[int, Msp], int] = {}
    idx_p, idx_q = [], []
    for v, p, q in pairs:
        idx_p.append(slots.setdefault((v, p), len(slots)))
        idx_q.append(slots.setdefault((v, q), len(slots)))
    return list(slots), np.asarray(idx_p, dtype=np.int64), np.asarray(idx_q, dtype=np.int64)


def _theta_sq(params: CarsParams) -> float:
    return float(params.h @ params.h + params.b**2 + params.tau_v @ params.tau_v + params.tau_c @ params.tau_c)


def cars_loss(params: CarsParams, m: SensorModel, pairs: Sequence[Pair]) -> float:
    """BPR loss ``sum -ln sigmoid(r_vp - r_vp')`` plus ``lambda4/2 * ||Theta||^2``."""
    _check_alpha(params, m)
    reg = 0.5 * params.lambda4 * _theta_sq(params)
    if not pairs:
        return reg
    slots, ip, iq = _pair_slots(pairs)
    r = _Scorer(m, slots).scores(params.h, params.b, params.tau_v, params.tau_c)
    return float(-np.sum(log_expit(r[ip] - r[iq]))) + reg


def init_cars(m: SensorModel, cfg: CarsConfig) -> CarsParams:
    rng = np.random.default_rng(cfg.seed)
    a, nv, s = m.alpha, m.dims[0], cfg.init_scale
    return CarsParams(
        rng.uniform(-s, s, 2 * a + 1),
        float(rng.uniform(-s, s)),
        np.full(nv, cfg.tau_init),
        np.full(nv, cfg.tau_init),
        cfg.lambda4,
    )


# overflow surfaces as a non-finite loss, reported via TrainingDivergence
@np.errstate(over="ignore", invalid="ignore")
def train_cars(
    m: SensorModel,
    pairs: Sequence[Pair],
    cfg: CarsConfig,
    init: CarsParams | None = None,
) -> CarsParams:
    """Fit ``h, b, tau_v, tau_c`` by gradient descent; SENSOR outputs stay frozen."""
    if not pairs:
        raise ValueError("no preference pairs: every viewer's parties tie on donations")
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    params = init if init is not None else init_cars(m, cfg)
    _check_alpha(params, m)
    slots, ip, iq = _pair_slots(pairs)
    scorer = _Scorer(m, slots)
    rng = np.random.default_rng([cfg.seed, 1])
    lam = cfg.lambda4
    p = {"h": params.h.copy(), "b": np.array(params.b), "tau_v": params.tau_v.copy(),
         "tau_c": params.tau_c.copy()}
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)

    def full_loss() -> float:
        r = scorer.scores(p["h"], float(p["b"]), p["tau_v"], p["tau_c"])
        sq = sum(float(np.sum(x * x)) for x in p.values())
        return float(-np.sum(log_expit(r[ip] - r[iq]))) + 0.5 * lam * sq

    initial = full_loss()
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        sel = slice(None)
        if cfg.pair_sample is not None:
            sel = np.flatnonzero(rng.random(len(ip)) < cfg.pair_sample)
        r = scorer.scores(p["h"], float(p["b"]), p["tau_v"], p["tau_c"])
        diff = r[ip[sel]] - r[iq[sel]]
        coef = -expit(-diff)
        g = np.bincount(ip[sel], coef, minlength=scorer.n) - np.bincount(iq[sel], coef, minlength=scorer.n)
        dh, db, dtv, dtc = scorer.backward(g, p["h"], float(p["b"]), p["tau_v"], p["tau_c"])
        grads = {"h": dh + lam * p["h"], "b": np.array(db + lam * p["b"]),
                 "tau_v": dtv + lam * p["tau_v"], "tau_c": dtc + lam * p["tau_c"]}
        opt.step(p, grads)
        trace.append(full_loss())
        if not np.isfinite(trace[-1]):
            raise TrainingDivergence(f"CARS loss diverged at epoch {epoch}", trace)
    return replace(
        params,
        h=p["h"], b=float(p["b"]), tau_v=p["tau_v"], tau_c=p["tau_c"],
        lambda4=lam, loss_trace=tuple(trace), initial_loss=initial,
    )


def cars_gradients(params: CarsParams, m: SensorModel, pairs: Sequence[Pair]) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`cars_loss` (exposed for checking)."""
    lam = params.lambda4
    out = {"h": lam * params.h, "b": np.array(lam * params.b),
           "tau_v": lam * params.tau_v, "tau_c": lam * params.tau_c}
    if not pairs:
        return out
    slots, ip, iq = _pair_slots(pairs)
    scorer = _Scorer(m, slots)
    r = scorer.scores(params.h, params.b, params.tau_v, params.tau_c)
    coef = -expit(-(r[ip] - r[iq]))
    g = np.bincount(ip, coef, minlength=scorer.n) - np.bincount(iq, coef, minlength=scorer.n)
    dh, db, dtv, dtc = scorer.backward(g, params.h, params.b, params.tau_v, params.tau_c)
    out["h"] = out["h"] + dh
    out["b"] = out["b"] + db
    out["tau_v"] = out["tau_v"] + dtv
    out["tau_c"] = out["tau_c"] + dtc
    return out


# -- inference ----------------------------------------------------------------------


def satisfaction_matrix(params: CarsParams, m: SensorModel, candidates: Sequence[Msp]) -> dict[tuple[int, int], float]:
    """``r[v, i]`` for every member ``v`` of every candidate ``i``."""
    _check_alpha(params, m)
    slots = [(v, p) for p in candidates for v in p.group]
    keys = [(v, i) for i, p in enumerate(candidates) for v in p.group]
    r = _Scorer(m, slots).scores(params.h, params.b, params.tau_v, params.tau_c) if slots else []
    return dict(zip(keys, map(float, r)))


def rank_msps(params: CarsParams, m: SensorModel, v: int, candidates: Sequence[Msp]) -> list[tuple[Msp, float]]:
    """Candidates ordered by ``r_{v,p}`` descending; ties keep input order."""
    _check_alpha(params, m)
    for i, p in enumerate(candidates):
        if v not in p.group:
            raise KeyError(f"viewer {v} is missing from candidate {i}")
    if not candidates:
        return []
    r = _Scorer(m, [(v, p) for p in candidates]).scores(params.h, params.b, params.tau_v, params.tau_c)
    order = sorted(range(len(candidates)), key=lambda i: -r[i])
    return [(candidates[i], float(r[i])) for i in order]


def recommend_group_msp(params: CarsParams, m: SensorModel, candidates: Sequence[Msp]) -> Msp:
    """Least misery: the candidate whose least satisfied member is best off."""
    return candidates[group_choice_index(params, m, candidates)]


def group_choice_index(params: CarsParams, m: SensorModel, candidates: Sequence[Msp]) -> int:
    if not candidates:
        raise ValueError("no candidate parties")
    group = set(candidates[0].group)
    if any(set(p.group) != group for p in candidates):
        raise ValueError("candidate parties must share one viewer group")
    r = satisfaction_matrix(params, m, candidates)
    mins = [min(r[v, i] for v in p.group) for i, p in enumerate(candidates)]
    return int(np.argmax(mins))


# -- files ------------------------------------------------------------------------------


def read_msps(path: str | Path) -> list[Msp]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, Mapping):
        data = [data]
    return [Msp.from_json(d) for d in data]


def write_msps(msps: Sequence[Msp], path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in msps]))


def save_params(params: CarsParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_json()))


def load_params(path: str | Path) -> CarsParams:
    return CarsParams.from_json(json.loads(Path(path).read_text()))
