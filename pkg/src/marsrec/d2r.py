"""Donation-to-response estimation: feature vectors, linear scoring, donation targets.

A feature vector concatenates eight groups, in order:

1. donation amount
2. message sentence embedding (``emb_width`` values)
3. message sentiment
4. streamer speech emotion (4 values)
5. the viewer's cumulative donations to the channel before this donation
6. all donations to the channel over the trailing window, excluding this one
7. minimum amount needed to appear on the channel's top-fan list
8. ``v * c``, the element-wise product of viewer and channel embeddings

Groups 1-7 depend only on data ("static"); group 8 depends on the current
factors and is where the regression couples into the factorization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from marsrec.tensor import EventTensor, window_sum

if TYPE_CHECKING:
    from marsrec.sensor import SensorModel

DEFAULT_EMB_WIDTH = 16
EMOTION_WIDTH = 4


@dataclass(frozen=True, eq=False)
class MessageFeatures:
    """Precomputed text/speech features attached to one donation."""

    sentence_embedding: np.ndarray
    sentiment: float = 0.0
    streamer_emotion: np.ndarray = field(default_factory=lambda: np.zeros(EMOTION_WIDTH))

    def __post_init__(self) -> None:
        emb = np.asarray(self.sentence_embedding, dtype=np.float64).reshape(-1)
        emo = np.asarray(self.streamer_emotion, dtype=np.float64).reshape(-1)
        if emo.shape != (EMOTION_WIDTH,):
            raise ValueError(f"streamer_emotion must have width {EMOTION_WIDTH}")
        if not (np.all(np.isfinite(emb)) and np.all(np.isfinite(emo)) and np.isfinite(self.sentiment)):
            raise ValueError("message features must be finite")
        object.__setattr__(self, "sentence_embedding", emb)
        object.__setattr__(self, "streamer_emotion", emo)
        object.__setattr__(self, "sentiment", float(self.sentiment))

    @classmethod
    def zeros(cls, emb_width: int = DEFAULT_EMB_WIDTH) -> "MessageFeatures":
        return cls(np.zeros(emb_width), 0.0, np.zeros(EMOTION_WIDTH))

    @property
    def emb_width(self) -> int:
        return len(self.sentence_embedding)

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [self.sentence_embedding, [self.sentiment], self.streamer_emotion]
        )


@dataclass(frozen=True)
class DonationEvent:
    v: int
    c: int
    t: int
    amount: float
    message: MessageFeatures
    fanmin: float = 0.0


def static_width(emb_width: int) -> int:
    """Width of feature groups 1-7."""
    return 1 + emb_width + 1 + EMOTION_WIDTH + 1 + 1 + 1


def feature_width(emb_width: int, alpha: int) -> int:
    return static_width(emb_width) + alpha


def group_slices(emb_width: int, alpha: int) -> dict[int, slice]:
    """Column ranges of the eight feature groups."""
    widths = [1, emb_width, 1, EMOTION_WIDTH, 1, 1, 1, alpha]
    edges = np.concatenate([[0], np.cumsum(widths)])
    return {g + 1: slice(int(edges[g]), int(edges[g + 1])) for g in range(8)}


def _history(td: EventTensor, v: int, c: int, t: int, window: int) -> tuple[float, float]:
    dense = td.dense()
    own = dense[v, c, t]
    cumulative = float(dense[v, c, :t].sum())
    recent = float(dense[:, c, max(0, t - window) : t + 1].sum() - own)
    return cumulative, recent


def build_features(
    m: "SensorModel",
    td: EventTensor,
    v: int,
    c: int,
    t: int,
    amount: float,
    msg: MessageFeatures,
    fanlist_min: float,
    window: int,
) -> np.ndarray:
    """Feature vector for a prospective donation of ``amount`` from ``v`` to ``c`` at ``t``.

    History groups 5 and 6 never include the cell ``(v, c, t)`` itself, so a
    recorded donation and a prospective one get the same features.
    """
    if not amount > 0:
        raise ValueError("amount must be positive")
    nv, nc, nt = td.shape
    if not (0 <= v < nv and 0 <= c < nc and 0 <= t < nt):
        raise IndexError(f"cell {(v, c, t)} outside {td.shape}")
    cumulative, recent = _history(td, v, c, t, window)
    f = m.factors
    return np.concatenate(
        [
            [amount],
            msg.sentence_embedding,
            [msg.sentiment],
            msg.streamer_emotion,
            [cumulative, recent, fanlist_min],
            f.V[v] * f.C[c],
        ]
    )


def estimate_response(theta: np.ndarray, x: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if theta.shape != x.shape:
        raise ValueError(f"width mismatch: theta {theta.shape} vs x {x.shape}")
    return float(theta @ x)


def recommend_donation(
    m: "SensorModel",
    td: EventTensor,
    v: int,
    candidates: Sequence[int],
    amount: float,
    msgs: Mapping[int, MessageFeatures] | None,
    t: int,
    fanlist_mins: Mapping[int, float] | None,
    window: int,
) -> list[tuple[int, float]]:
    """Rank candidate channels by estimated reciprocal response (ties: lower index first)."""
    if len(candidates) == 0:
        raise ValueError("no candidate channels")
    msgs = msgs or {}
    fanlist_mins = fanlist_mins or {}
    emb_width = m.emb_width
    scored = []
    for c in dict.fromkeys(int(c) for c in candidates):
        msg = msgs.get(c) or MessageFeatures.zeros(emb_width)
        x = build_features(m, td, v, c, t, amount, msg, fanlist_mins.get(c, 0.0), window)
        scored.append((c, estimate_response(m.theta, x)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


# -- training-time design matrix ----------------------------------------------


@dataclass(frozen=True, eq=False)
class DonationDesign:
    """Static features for every recorded donation cell of a donation tensor.

    ``coords[i]`` is the ``(v, c, t)`` of row ``i``; ``static[i]`` holds groups 1-7.
    """

    coords: np.ndarray
    static: np.ndarray
    emb_width: int

    def __len__(self) -> int:
        return len(self.coords)

    def full(self, V: np.ndarray, C: np.ndarray) -> np.ndarray:
        """Append group 8 for the given factors."""
        v, c = self.coords[:, 0], self.coords[:, 1]
        return np.hstack([self.static, V[v] * C[c]])


def donation_design(
    td: EventTensor,
    events: Mapping[tuple[int, int, int], DonationEvent] | None,
    window: int,
    emb_width: int = DEFAULT_EMB_WIDTH,
) -> DonationDesign:
    """Static features for all nonzero cells of ``td``; missing events get zero messages."""
    events = events or {}
    dense = td.dense()
    coords = td.coords
    n = len(coords)
    static = np.zeros((n, static_width(emb_width)))
    if n:
        v, c, t = coords.T
        before = np.cumsum(dense, axis=2) - dense  # sum over slots < t
        per_channel = dense.sum(axis=0)
        recent = window_sum(per_channel, window, axis=1)
        static[:, 0] = td.values
        msg_cols = np.zeros((n, emb_width + 1 + EMOTION_WIDTH))
        fanmin = np.zeros(n)
        for i, key in enumerate(map(tuple, coords.tolist())):
            ev = events.get(key)
            if ev is None:
                continue
            if ev.message.emb_width != emb_width:
                raise ValueError(f"event {key} has embedding width {ev.message.emb_width}")
            msg_cols[i] = ev.message.as_array()
            fanmin[i] = ev.fanmin
        static[:, 1 : 1 + msg_cols.shape[1]] = msg_cols
        static[:, -3] = before[v, c, t]
        static[:, -2] = recent[c, t] - td.values
        static[:, -1] = fanmin
    coords = coords.copy()
    coords.setflags(write=False)
    static.setflags(write=False)
    return DonationDesign(coords, static, emb_width)


# -- event files ---------------------------------------------------------------


def write_events_jsonl(events: Sequence[DonationEvent], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            rec = {
                "v": ev.v,
                "c": ev.c,
                "t": ev.t,
                "amount": ev.amount,
                "emb": ev.message.sentence_embedding.tolist(),
                "sent": ev.message.sentiment,
                "emo": ev.message.streamer_emotion.tolist(),
                "fanmin": ev.fanmin,
            }
            fh.write(json.dumps(rec) + "\n")


def parse_event(rec: Mapping, emb_width: int = DEFAULT_EMB_WIDTH) -> DonationEvent:
    emb = rec.get("emb")
    emo = rec.get("emo")
    msg = MessageFeatures(
        np.zeros(emb_width) if emb is None else np.asarray(emb, dtype=np.float64),
        float(rec.get("sent", 0.0)),
        np.zeros(EMOTION_WIDTH) if emo is None else np.asarray(emo, dtype=np.float64),
    )
    return DonationEvent(
        int(rec["v"]), int(rec["c"]), int(rec["t"]), float(rec["amount"]), msg,
        float(rec.get("fanmin", 0.0)),
    )


def read_events_jsonl(path: str | Path, emb_width: int = DEFAULT_EMB_WIDTH) -> list[DonationEvent]:
    with open(path) as fh:
        return [parse_event(json.loads(line), emb_width) for line in fh if line.strip()]


def events_to_tensor(events: Sequence[DonationEvent], shape: tuple[int, int, int]) -> EventTensor:
    entries: dict[tuple[int, int, int], float] = {}
    for ev in events:
        key = (ev.v, ev.c, ev.t)
        entries[key] = entries.get(key, 0.0) + ev.amount
    return EventTensor.from_entries(shape, entries)
