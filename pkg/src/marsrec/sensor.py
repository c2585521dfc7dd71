"""SENSOR: coupled donation/response Tucker co-factorization with its regularizers.

The objective is

    ||T_D - O_D x V x C x T||^2 + ||T_R - O_R x V x C x T||^2
      + L_D2R + lam1 * R_SER + lam2 * R_STAR + lam3 * R_RIOT

with V, C, T shared between the two tensors. Everything is evaluated densely;
gradients are analytic and checked against central differences in the tests.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from marsrec.d2r import DEFAULT_EMB_WIDTH, DonationDesign, DonationEvent, donation_design, feature_width
from marsrec.optim import Optimizer, TrainingDivergence
from marsrec.tensor import (
    DimensionError,
    EventTensor,
    FactorSet,
    frob_sq_diff,
    mode_n_product,
    stack_lags,
    tucker_reconstruct,
    window_sum,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "marsrec.sensor"
CHECKPOINT_VERSION = 1
LEARNABLES = ("V", "C", "T", "O_D", "O_R", "w_v_hat", "decay", "theta")


@dataclass(frozen=True)
class ViewerGraph:
    """Undirected friendship graph over viewers ``0..n_viewers-1``."""

    n_viewers: int
    edges: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        norm = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on viewer {u}")
            if not (0 <= u < self.n_viewers and 0 <= v < self.n_viewers):
                raise IndexError(f"edge {(u, v)} outside {self.n_viewers} viewers")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_viewers, self.n_viewers), dtype=bool)
        for u, v in self.edges:
            a[u, v] = a[v, u] = True
        return a

    def neighbors(self, v: int) -> set[int]:
        return {b if a == v else a for a, b in self.edges if v in (a, b)}


def check_streamer_matrix(w_c: np.ndarray, n_channels: int | None = None) -> np.ndarray:
    w_c = np.asarray(w_c, dtype=np.float64)
    if w_c.ndim != 2 or w_c.shape[0] != w_c.shape[1]:
        raise DimensionError("W_C must be square")
    if n_channels is not None and w_c.shape[0] != n_channels:
        raise DimensionError(f"W_C is {w_c.shape[0]}x{w_c.shape[0]}, expected {n_channels}")
    if not np.all(np.isin(w_c, (-1.0, 0.0, 1.0))):
        raise ValueError("W_C entries must be -1, 0 or +1")
    return w_c


@dataclass(frozen=True)
class SensorConfig:
    alpha: int = 32
    window: int = 5
    lambdas: tuple[float, float, float] = (0.5, 0.1, 0.5)
    # Losses are sums over cells, so plain SGD needs a small step.
    learning_rate: float = 2e-5
    epochs: int = 100
    seed: int = 0
    init_scale: float = 0.1
    epsilon: float = 0.02
    init_decay: float = 0.1
    optimizer: str = "sgd"
    clip_norm: float | None = None
    # None: reconstruction over every cell; else observed cells plus this fraction of zeros.
    zero_sample_rate: float | None = None

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if len(self.lambdas) != 3 or any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be three nonnegative weights")
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))


@dataclass(frozen=True, eq=False)
class SensorModel:
    factors: FactorSet
    w_v_hat: np.ndarray
    decay: float
    theta: np.ndarray
    epsilon: float = 0.02
    loss_trace: tuple[float, ...] = ()
    initial_loss: float | None = None

    def __post_init__(self) -> None:
        nv = self.factors.dims[0]
        w = np.asarray(self.w_v_hat, dtype=np.float64)
        if w.shape != (nv, nv):
            raise DimensionError(f"w_v_hat must be {nv}x{nv}")
        if not np.all(np.isfinite(w)):
            raise ValueError("w_v_hat has non-finite entries")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if len(theta) < feature_width(0, self.factors.alpha):
            raise DimensionError("theta is shorter than the fixed feature groups")
        object.__setattr__(self, "w_v_hat", w)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "decay", float(self.decay))
        object.__setattr__(self, "loss_trace", tuple(float(x) for x in self.loss_trace))

    @property
    def alpha(self) -> int:
        return self.factors.alpha

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.factors.dims

    @property
    def emb_width(self) -> int:
        return len(self.theta) - feature_width(0, self.alpha)

    def params(self) -> dict[str, np.ndarray]:
        """Copies of every learnable, keyed by name (``decay`` as a 0-d array)."""
        f = self.factors
        return {
            "V": f.V.copy(),
            "C": f.C.copy(),
            "T": f.T.copy(),
            "O_D": f.O_D.copy(),
            "O_R": f.O_R.copy(),
            "w_v_hat": self.w_v_hat.copy(),
            "decay": np.array(self.decay),
            "theta": self.theta.copy(),
        }

    def with_params(self, p: Mapping[str, np.ndarray], **kw) -> "SensorModel":
        factors = FactorSet(p["V"], p["C"], p["T"], p["O_D"], p["O_R"])
        return replace(
            self,
            factors=factors,
            w_v_hat=np.array(p["w_v_hat"], dtype=np.float64),
            decay=float(p["decay"]),
            theta=np.array(p["theta"], dtype=np.float64),
            **kw,
        )

    @classmethod
    def zeros(
        cls, dims: tuple[int, int, int], alpha: int, emb_width: int = DEFAULT_EMB_WIDTH
    ) -> "SensorModel":
        nv, nc, nt = dims
        z = np.zeros
        factors = FactorSet(z((nv, alpha)), z((nc, alpha)), z((nt, alpha)),
                            z((alpha,) * 3), z((alpha,) * 3))
        return cls(factors, z((nv, nv)), 0.0, z(feature_width(emb_width, alpha)))


@dataclass(frozen=True, eq=False)
class SensorData:
    """Everything SENSOR trains on."""

    td: EventTensor
    tr: EventTensor
    graph: ViewerGraph
    w_c: np.ndarray
    events: Mapping[tuple[int, int, int], DonationEvent] | None = None
    emb_width: int = DEFAULT_EMB_WIDTH
    # Optional boolean (V, C, T) array: cells outside it are held out of the
    # reconstruction and D2R terms.
    cell_mask: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.td.shape != self.tr.shape:
            raise DimensionError(f"T_D {self.td.shape} and T_R {self.tr.shape} differ")
        if self.cell_mask is not None:
            mask = np.asarray(self.cell_mask, dtype=bool)
            if mask.shape != self.td.shape:
                raise DimensionError(f"cell mask {mask.shape} vs tensors {self.td.shape}")
            object.__setattr__(self, "cell_mask", mask)
        if self.graph.n_viewers != self.td.n_viewers:
            raise DimensionError("graph size does not match the viewer dimension")
        object.__setattr__(self, "w_c", check_streamer_matrix(self.w_c, self.td.n_channels))
        if self.events is not None and not isinstance(self.events, Mapping):
            object.__setattr__(self, "events", {(e.v, e.c, e.t): e for e in self.events})

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.td.shape

    def design(self, window: int) -> DonationDesign:
        key = ("design", window)
        if key not in self._cache:
            d = donation_design(self.td, self.events, window, self.emb_width)
            if self.cell_mask is not None:
                keep = self.cell_mask[tuple(d.coords.T)]
                d = DonationDesign(d.coords[keep], d.static[keep], d.emb_width)
            self._cache[key] = d
        return self._cache[key]

    def lags(self, window: int) -> np.ndarray:
        key = ("lags", window)
        if key not in self._cache:
            self._cache[key] = stack_lags(self.td.dense(), window)
        return self._cache[key]

    def riot_weights(self, window: int) -> np.ndarray:
        key = ("riot", window)
        if key not in self._cache:
            self._cache[key] = riot_slot_weights(self.td, window)
        return self._cache[key]

    def recon_mask(self, cfg: SensorConfig) -> np.ndarray | None:
        if cfg.zero_sample_rate is None:
            return self.cell_mask
        key = ("mask", cfg.zero_sample_rate, cfg.seed)
        if key not in self._cache:
            rng = np.random.default_rng([cfg.seed, 7])
            observed = (self.td.dense() > 0) | (self.tr.dense() > 0)
            mask = observed | (rng.random(self.shape) < cfg.zero_sample_rate)
            if self.cell_mask is not None:
                mask &= self.cell_mask
            self._cache[key] = mask
        return self._cache[key]


# -- individual terms --------------------------------------------------------


def loss_reconstruction(m: SensorModel, td: EventTensor, tr: EventTensor) -> float:
    if td.shape != m.dims or tr.shape != m.dims:
        raise DimensionError(f"tensors {td.shape}/{tr.shape} vs model {m.dims}")
    f = m.factors
    return frob_sq_diff(td, f.reconstruct_donations()) + frob_sq_diff(tr, f.reconstruct_responses())


def loss_ser(c_factor: np.ndarray, w_c: np.ndarray) -> float:
    """``sum_ij (W_C[i, j] - c_i . c_j)^2``, diagonal included."""
    c_factor = np.asarray(c_factor, dtype=np.float64)
    w_c = check_streamer_matrix(w_c, c_factor.shape[0])
    r = w_c - c_factor @ c_factor.T
    return float(np.sum(r * r))


def _offdiag(w: np.ndarray) -> np.ndarray:
    w = np.array(w, dtype=np.float64)
    np.fill_diagonal(w, 0.0)
    return w


def _decay_weights(decay: float, window: int) -> np.ndarray:
    return np.exp(-decay * np.arange(1, window + 1))


def star_estimate(m: SensorModel, td: EventTensor, v: int, c: int, t: int, window: int) -> float:
    """Influence-weighted, exponentially decayed donations by others in the ``window`` slots before ``t``."""
    nv, nc, nt = td.shape
    if not (0 <= v < nv and 0 <= c < nc and 0 <= t < nt):
        raise IndexError(f"cell {(v, c, t)} outside {td.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    dense = td.dense()
    w = m.w_v_hat[:, v].copy()
    w[v] = 0.0
    total = 0.0
    for delta in range(1, min(window, t) + 1):
        total += math.exp(-m.decay * delta) * float(w @ dense[:, c, t - delta])
    return total


def star_tensor(w_v_hat: np.ndarray, decay: float, lags: np.ndarray) -> np.ndarray:
    """All STAR estimates at once; ``lags`` from :func:`stack_lags`."""
    h = np.tensordot(_decay_weights(decay, lags.shape[0]), lags, axes=1)
    return np.tensordot(_offdiag(w_v_hat), h, axes=(0, 0))


def loss_star(m: SensorModel, td: EventTensor, cfg: SensorConfig) -> float:
    if td.shape != m.dims:
        raise DimensionError(f"tensor {td.shape} vs model {m.dims}")
    est = star_tensor(m.w_v_hat, m.decay, stack_lags(td.dense(), cfg.window))
    r = m.factors.reconstruct_donations() - est
    return float(np.sum(r * r))


def donation_entropy(td: EventTensor, c: int, t: int, window: int) -> float:
    """Entropy of the joint (viewer, slot) donation distribution of channel ``c`` over ``[t-L, t]``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    block = td.dense()[:, c, max(0, t - window) : t + 1]
    z = block.sum()
    if z <= 0:
        return 0.0
    p = block[block > 0] / z
    return float(-np.sum(p * np.log(p)))


def burst_trend(td: EventTensor, c: int, t: int, window: int) -> float:
    """Donations at ``t`` minus the per-slot mean over ``[max(0, t-L), t]``.

    Near slot 0 the mean is over the truncated window, so steady donations
    have zero trend everywhere.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    per_slot = td.dense()[:, c, :].sum(axis=0)
    lo = max(0, t - window)
    return float(per_slot[t] - per_slot[lo : t + 1].sum() / (t + 1 - lo))


def riot_statistics(td: EventTensor, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trend and entropy for every (channel, slot), each shaped ``(n_channels, n_slots)``."""
    dense = td.dense()
    totals = dense.sum(axis=0)
    z = window_sum(totals, window, axis=1)
    xlogx = np.where(dense > 0, dense * np.log(np.where(dense > 0, dense, 1.0)), 0.0).sum(axis=0)
    a = window_sum(xlogx, window, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy = np.where(z > 0, np.log(np.where(z > 0, z, 1.0)) - a / np.where(z > 0, z, 1.0), 0.0)
    entropy = np.maximum(entropy, 0.0)
    width = np.minimum(np.arange(totals.shape[1]), window) + 1
    trend = totals - z / width
    return trend, entropy


def riot_slot_weights(td: EventTensor, window: int) -> np.ndarray:
    """Coefficient of ``sum_v T_R_hat[v, c, t']`` in R_RIOT, shaped ``(n_channels, n_slots)``.

    Slot ``t'`` is inside the window of every ``t`` in ``[t', t' + L]``, so its weight is
    the forward window sum of trend * entropy.
    """
    trend, entropy = riot_statistics(td, window)
    coef = trend * entropy
    return window_sum(coef[:, ::-1], window, axis=1)[:, ::-1]


def loss_riot(m: SensorModel, td: EventTensor, cfg: SensorConfig) -> float:
    if td.shape != m.dims:
        raise DimensionError(f"tensor {td.shape} vs model {m.dims}")
    w = riot_slot_weights(td, cfg.window)
    return float(np.sum(w * m.factors.reconstruct_responses().sum(axis=0)))


def loss_d2r(m: SensorModel, design: DonationDesign) -> float:
    if len(design) == 0:
        return 0.0
    f = m.factors
    pred = design.full(f.V, f.C) @ m.theta
    v, c, t = design.coords.T
    target = f.reconstruct_responses()[v, c, t]
    r = target - pred
    return float(r @ r)


# -- joint objective -----------------------------------------------------------


def _tucker_grads(g: np.ndarray, core, V, C, T):
    """Gradients of ``sum(g * tucker(core, V, C, T))`` w.r.t. core and factors."""
    dcore = mode_n_product(mode_n_product(mode_n_product(g, V.T, 1), C.T, 2), T.T, 3)
    p1 = mode_n_product(mode_n_product(core, C, 2), T, 3)  # a x nc x nt
    dV = np.einsum("ijt,ajt->ia", g, p1, optimize=True)
    p2 = mode_n_product(mode_n_product(core, V, 1), T, 3)  # nv x b x nt
    dC = np.einsum("ijt,ibt->jb", g, p2, optimize=True)
    p3 = mode_n_product(mode_n_product(core, V, 1), C, 2)  # nv x nc x c
    dT = np.einsum("ijt,ijc->tc", g, p3, optimize=True)
    return dcore, dV, dC, dT


def _objective(p: Mapping[str, np.ndarray], data: SensorData, cfg: SensorConfig, grad: bool):
    lam1, lam2, lam3 = cfg.lambdas
    V, C, T, O_D, O_R = p["V"], p["C"], p["T"], p["O_D"], p["O_R"]
    decay = float(p["decay"])
    td, tr = data.td.dense(), data.tr.dense()
    mask = data.recon_mask(cfg)

    rd = tucker_reconstruct(O_D, V, C, T)
    rr = tucker_reconstruct(O_R, V, C, T)
    ed, er = rd - td, rr - tr
    if mask is not None:
        ed, er = ed * mask, er * mask
    comp = {"recon_donation": float(np.sum(ed * ed)), "recon_response": float(np.sum(er * er))}

    design = data.design(cfg.window)
    x = design.full(V, C)
    dv, dc, dt = design.coords.T
    e_d2r = rr[dv, dc, dt] - x @ p["theta"]
    comp["d2r"] = float(e_d2r @ e_d2r)

    gram_res = data.w_c - C @ C.T
    comp["ser"] = float(np.sum(gram_res * gram_res))

    lags = data.lags(cfg.window)
    dw = _decay_weights(decay, cfg.window)
    h = np.tensordot(dw, lags, axes=1)
    w_off = _offdiag(p["w_v_hat"])
    e_star = rd - np.tensordot(w_off, h, axes=(0, 0))
    comp["star"] = float(np.sum(e_star * e_star))

    riot_w = data.riot_weights(cfg.window)
    comp["riot"] = float(np.sum(riot_w * rr.sum(axis=0)))

    total = (comp["recon_donation"] + comp["recon_response"] + comp["d2r"]
             + lam1 * comp["ser"] + lam2 * comp["star"] + lam3 * comp["riot"])
    if not grad:
        return total, comp, None

    gd = 2.0 * ed + lam2 * 2.0 * e_star
    gr = 2.0 * er + lam3 * riot_w[None, :, :]
    np.add.at(gr, (dv, dc, dt), 2.0 * e_d2r)

    dO_D, dV, dC, dT = _tucker_grads(gd, O_D, V, C, T)
    dO_R, dV2, dC2, dT2 = _tucker_grads(gr, O_R, V, C, T)
    dV += dV2
    dC += dC2
    dT += dT2

    alpha = V.shape[1]
    theta8 = p["theta"][-alpha:]
    coef = -2.0 * e_d2r
    np.add.at(dV, dv, coef[:, None] * theta8[None, :] * C[dc])
    np.add.at(dC, dc, coef[:, None] * theta8[None, :] * V[dv])
    dtheta = coef @ x if len(x) else np.zeros_like(p["theta"])

    m_ser = -2.0 * gram_res
    dC += lam1 * (m_ser + m_ser.T) @ C

    dW = lam2 * -2.0 * np.tensordot(h, e_star, axes=([1, 2], [1, 2]))
    np.fill_diagonal(dW, 0.0)
    h1 = np.tensordot(np.arange(1, cfg.window + 1) * dw, lags, axes=1)
    ddecay = lam2 * 2.0 * float(np.sum(e_star * np.tensordot(w_off, h1, axes=(0, 0))))

    grads = {
        "V": dV, "C": dC, "T": dT, "O_D": dO_D, "O_R": dO_R,
        "w_v_hat": dW, "decay": np.array(ddecay), "theta": dtheta,
    }
    return total, comp, grads


def loss_components(m: SensorModel, data: SensorData, cfg: SensorConfig) -> dict[str, float]:
    """Unweighted value of each term of the objective."""
    _check_model(m, data)
    return _objective(m.params(), data, cfg, grad=False)[1]


def total_loss(m: SensorModel, data: SensorData, cfg: SensorConfig) -> float:
    _check_model(m, data)
    return _objective(m.params(), data, cfg, grad=False)[0]


def gradients(m: SensorModel, data: SensorData, cfg: SensorConfig) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`total_loss` for every learnable.

    Trend and entropy inside R_RIOT are constants; the diagonal of ``w_v_hat``
    gets zero gradient because it never enters the objective.
    """
    _check_model(m, data)
    loss, _, grads = _objective(m.params(), data, cfg, grad=True)
    if not np.isfinite(loss):
        raise TrainingDivergence("objective is not finite", [loss])
    return grads


def _check_model(m: SensorModel, data: SensorData) -> None:
    if m.dims != data.shape:
        raise DimensionError(f"model dims {m.dims} vs data {data.shape}")
    if m.emb_width != data.emb_width:
        raise DimensionError(f"theta expects embedding width {m.emb_width}, data has {data.emb_width}")


# -- training --------------------------------------------------------------------


def init_influence(graph: ViewerGraph, epsilon: float) -> np.ndarray:
    """1 on friendships, ``epsilon`` elsewhere, 0 on the (unused) diagonal."""
    w = np.where(graph.adjacency(), 1.0, epsilon)
    np.fill_diagonal(w, 0.0)
    return w


def init_model(data: SensorData, cfg: SensorConfig) -> SensorModel:
    nv, nc, nt = data.shape
    a, s = cfg.alpha, cfg.init_scale
    rng = np.random.default_rng(cfg.seed)
    factors = FactorSet(
        rng.uniform(-s, s, (nv, a)),
        rng.uniform(-s, s, (nc, a)),
        rng.uniform(-s, s, (nt, a)),
        rng.uniform(-s, s, (a, a, a)),
        rng.uniform(-s, s, (a, a, a)),
    )
    return SensorModel(
        factors,
        init_influence(data.graph, cfg.epsilon),
        cfg.init_decay,
        np.zeros(feature_width(data.emb_width, a)),
        cfg.epsilon,
    )


# overflow surfaces as a non-finite loss, reported via TrainingDivergence
@np.errstate(over="ignore", invalid="ignore")
def train_sensor(
    data: SensorData, cfg: SensorConfig, init: SensorModel | None = None
) -> SensorModel:
    """Gradient descent on the full objective, one step per epoch.

    The returned model's ``loss_trace[i]`` is the objective after epoch ``i``;
    ``initial_loss`` is the objective at initialization.
    """
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    model = init if init is not None else init_model(data, cfg)
    _check_model(model, data)
    p = model.params()
    opt = Optimizer(cfg.optimizer, cfg.learning_rate, clip_norm=cfg.clip_norm)
    loss, _, grads = _objective(p, data, cfg, grad=True)
    initial = loss
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        opt.step(p, grads)
        p["decay"] = np.maximum(p["decay"], 0.0)
        np.fill_diagonal(p["w_v_hat"], 0.0)
        loss, _, grads = _objective(p, data, cfg, grad=True)
        trace.append(loss)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDivergence(f"objective diverged at epoch {epoch}", trace)
        if epoch % 100 == 0:
            log.debug("sensor epoch %d loss %.6g", epoch, loss)
    return model.with_params(p, loss_trace=tuple(trace), initial_loss=initial)


# overflow surfaces as a non-finite loss, reported via TrainingDivergence
@np.errstate(over="ignore", invalid="ignore")
def fit_tucker(
    tensor: EventTensor,
    alpha: int,
    epochs: int,
    learning_rate: float,
    seed: int = 0,
    init_scale: float = 0.1,
    optimizer: str = "sgd",
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray], list[float]]:
    """Plain single-tensor Tucker fit by gradient descent (baseline for co-factorization).

    Only cells where ``mask`` is true are fitted. Returns ``(core, (V, C, T), trace)``.
    """
    rng = np.random.default_rng(seed)
    nv, nc, nt = tensor.shape
    s = init_scale
    p = {
        "V": rng.uniform(-s, s, (nv, alpha)),
        "C": rng.uniform(-s, s, (nc, alpha)),
        "T": rng.uniform(-s, s, (nt, alpha)),
        "O": rng.uniform(-s, s, (alpha, alpha, alpha)),
    }
    target = tensor.dense()
    weight = np.ones(tensor.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if weight.shape != tensor.shape:
        raise DimensionError(f"mask {weight.shape} vs tensor {tensor.shape}")
    opt = Optimizer(optimizer, learning_rate)
    trace = []
    for _ in range(epochs):
        e = (tucker_reconstruct(p["O"], p["V"], p["C"], p["T"]) - target) * weight
        dO, dV, dC, dT = _tucker_grads(2.0 * e, p["O"], p["V"], p["C"], p["T"])
        opt.step(p, {"O": dO, "V": dV, "C": dC, "T": dT})
        e = (tucker_reconstruct(p["O"], p["V"], p["C"], p["T"]) - target) * weight
        trace.append(float(np.sum(e * e)))
        if not np.isfinite(trace[-1]):
            raise TrainingDivergence("tucker fit diverged", trace)
    return p["O"], (p["V"], p["C"], p["T"]), trace


def param_count(dims: Sequence[int], alpha: int, variant: str = "shared") -> int:
    """Number of factorization parameters for the shared, separate and 4-way layouts."""
    nv, nc, nt = (int(d) for d in dims)
    if min(nv, nc, nt, alpha) < 1:
        raise ValueError("dimensions and alpha must be positive")
    n = nv + nc + nt
    if variant == "shared":
        return n * alpha + 2 * alpha**3
    if variant == "separate":
        return 2 * n * alpha + 2 * alpha**3
    if variant == "four_dim":
        return (n + 2) * alpha + alpha**4
    raise ValueError(f"unknown variant {variant!r}")


def factor_param_count(m: SensorModel) -> int:
    """Count of the factor and core entries actually held by ``m``."""
    f = m.factors
    return sum(a.size for a in (f.V, f.C, f.T, f.O_D, f.O_R))


# -- checkpoints -----------------------------------------------------------------


def model_to_dict(m: SensorModel) -> dict:
    f = m.factors
    nv, nc, nt = m.dims
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": [nv, nc, nt],
        "alpha": m.alpha,
        "emb_width": m.emb_width,
        "V": f.V.ravel().tolist(),
        "C": f.C.ravel().tolist(),
        "T": f.T.ravel().tolist(),
        "O_D": f.O_D.ravel().tolist(),
        "O_R": f.O_R.ravel().tolist(),
        "w_v_hat": m.w_v_hat.ravel().tolist(),
        "decay": m.decay,
        "epsilon": m.epsilon,
        "theta": m.theta.tolist(),
        "loss_trace": list(m.loss_trace),
        "initial_loss": m.initial_loss,
    }


def model_from_dict(d: Mapping) -> SensorModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a SENSOR checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    nv, nc, nt = d["dims"]
    a = d["alpha"]

    def arr(key: str, shape: Iterable[int]) -> np.ndarray:
        return np.asarray(d[key], dtype=np.float64).reshape(tuple(shape))

    factors = FactorSet(
        arr("V", (nv, a)), arr("C", (nc, a)), arr("T", (nt, a)),
        arr("O_D", (a, a, a)), arr("O_R", (a, a, a)),
    )
    theta = np.asarray(d["theta"], dtype=np.float64)
    if len(theta) != feature_width(d["emb_width"], a):
        raise DimensionError("theta width inconsistent with emb_width and alpha")
    return SensorModel(
        factors, arr("w_v_hat", (nv, nv)), d["decay"], theta, d["epsilon"],
        tuple(d.get("loss_trace", ())), d.get("initial_loss"),
    )


def save_checkpoint(m: SensorModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m)))


def load_checkpoint(path: str | Path) -> SensorModel:
    return model_from_dict(json.loads(Path(path).read_text()))
