"""Library-level steps behind the command-line tool.

Each function takes already-loaded objects and returns plain results, so the
CLI only does file I/O and validation around them.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from marsrec.cars import CarsConfig, CarsParams, Msp, build_bpr_pairs, rank_msps, recommend_group_msp, train_cars
from marsrec.d2r import MessageFeatures, donation_design, recommend_donation
from marsrec.metrics import hit_ratio_at_k, map_at_k, reconstruction_report, rmse
from marsrec.sensor import SensorModel
from marsrec.synth import SynthDataset
from marsrec.tensor import EventTensor

METRIC_KEYS = (
    "rmse",
    "rmse_cases",
    "hr@2",
    "hr@4",
    "map@2",
    "map@4",
    "msp_cases",
    "donation_loss",
    "response_loss",
)


def pairs_for_sets(td: EventTensor, sets: Sequence[Sequence[Msp]]) -> list:
    """BPR triples built separately inside each candidate set."""
    return [pair for cands in sets for pair in build_bpr_pairs(td, list(cands))]


def fit_cars(m: SensorModel, td: EventTensor, sets: Sequence[Sequence[Msp]], cfg: CarsConfig) -> CarsParams:
    pairs = pairs_for_sets(td, sets)
    if not pairs:
        raise ValueError(
            "no training pairs: no viewer donated different totals to two candidate parties"
        )
    return train_cars(m, pairs, cfg)


def recommend(
    m: SensorModel,
    params: CarsParams | None,
    td: EventTensor,
    request: Mapping,
    window: int,
) -> dict:
    """Answer a ``{"mode": "donation" | "msp", "payload": {...}}`` request.

    donation payload: viewer, candidates, amount, t, optional ``messages``
    (channel -> {sentence_embedding, sentiment, streamer_emotion}) and
    optional ``fanlist_mins`` (channel -> value).

    msp payload: candidates, a list of parties over one viewer group.
    """
    if not isinstance(request, Mapping):
        raise ValueError("request must be a JSON object")
    mode = request.get("mode")
    payload = request.get("payload")
    if not isinstance(payload, Mapping):
        raise ValueError("request payload must be a JSON object")
    if mode == "donation":
        try:
            v = int(payload["viewer"])
            cands = [int(c) for c in payload["candidates"]]
            amount = float(payload["amount"])
            t = int(payload["t"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed donation payload: {exc}") from exc
        msgs = {
            int(c): MessageFeatures(
                np.asarray(d.get("sentence_embedding", np.zeros(m.emb_width)), dtype=np.float64),
                float(d.get("sentiment", 0.0)),
                np.asarray(d.get("streamer_emotion", np.zeros(4)), dtype=np.float64),
            )
            for c, d in payload.get("messages", {}).items()
        }
        fan = {int(c): float(x) for c, x in payload.get("fanlist_mins", {}).items()}
        ranked = recommend_donation(m, td, v, cands, amount, msgs, t, fan, window)
        return {
            "mode": "donation",
            "viewer": v,
            "ranking": [{"channel": c, "estimated_response": s} for c, s in ranked],
        }
    if mode == "msp":
        if params is None:
            raise ValueError("msp mode needs trained CARS parameters")
        raw = payload.get("candidates")
        if not isinstance(raw, list) or not raw:
            raise ValueError("msp payload needs a non-empty candidates list")
        cands = [Msp.from_json(d) for d in raw]
        choice = recommend_group_msp(params, m, cands)
        per_viewer = {}
        for v in cands[0].group:
            per_viewer[str(v)] = [
                {"candidate": cands.index(p), "satisfaction": s} for p, s in rank_msps(params, m, v, cands)
            ]
        return {"mode": "msp", "group_choice": cands.index(choice), "rankings": per_viewer}
    raise ValueError(f"unknown mode {mode!r}; expected 'donation' or 'msp'")


def evaluate(
    m: SensorModel,
    params: CarsParams | None,
    ds: SynthDataset,
    window: int,
) -> dict[str, float]:
    """Metrics for a model trained on the first ``m.dims[2]`` slots of ``ds``.

    RMSE compares D2R estimates with recorded responses for donations after the
    training slots, or for every donation if the model saw all slots. HR and MAP
    use the dataset's test candidate sets with one relevant party per
    (viewer, set): the one matching the viewer's planted preferences best.
    Reconstruction losses are per cell over the training slots.
    """
    n_slots = m.dims[2]
    if m.dims[:2] != ds.td.shape[:2] or n_slots > ds.td.n_slots:
        raise ValueError(f"model dims {m.dims} do not fit dataset {ds.td.shape}")
    out: dict[str, float] = {}
    design = donation_design(ds.td, {(e.v, e.c, e.t): e for e in ds.events}, window, ds.config.emb_width)
    test = design.coords[:, 2] >= n_slots
    if not test.any():
        test = np.ones(len(design), dtype=bool)
    if test.any():
        pred = design.full(m.factors.V, m.factors.C)[test] @ m.theta
        actual = ds.tr.dense()[tuple(design.coords[test].T)]
        out["rmse"] = rmse(pred, actual)
    else:
        out["rmse"] = float("nan")
    out["rmse_cases"] = float(test.sum())

    ranked, relevant = [], []
    if params is not None:
        for cands in ds.test_sets:
            for v in cands[0].group:
                ranked.append([cands.index(p) for p, _ in rank_msps(params, m, v, cands)])
                relevant.append(ds.relevant_index(v, cands))
    for k in (2, 4):
        out[f"hr@{k}"] = hit_ratio_at_k(ranked, relevant, k) if ranked else float("nan")
        out[f"map@{k}"] = map_at_k(ranked, relevant, k) if ranked else float("nan")
    out["msp_cases"] = float(len(ranked))
    out.update(reconstruction_report(m, ds.td.slice_slots(n_slots), ds.tr.slice_slots(n_slots)))
    return {k: out[k] for k in METRIC_KEYS}
