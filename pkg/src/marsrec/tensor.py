"""Three-way tensors: sparse event storage, mode-n products and Tucker reconstruction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

Shape = tuple[int, int, int]


class DimensionError(ValueError):
    """Raised when tensor or matrix dimensions do not line up."""


@dataclass(frozen=True, eq=False)
class EventTensor:
    """Sparse nonnegative viewer x channel x slot tensor.

    Only nonzero cells are stored; absent cells are exactly zero. Coordinates
    are kept sorted in row-major order so two tensors with the same content
    compare (and serialize) identically.
    """

    shape: Shape
    coords: np.ndarray
    values: np.ndarray
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or any(s < 0 for s in shape):
            raise DimensionError(f"invalid shape {self.shape!r}")
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(coords) != len(values):
            raise DimensionError("coords and values differ in length")
        if len(values):
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ValueError("event values must be finite and nonnegative")
            if np.any(coords < 0) or np.any(coords >= np.array(shape)):
                raise IndexError("event index outside declared dimensions")
        keep = values > 0
        coords, values = coords[keep], values[keep]
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        coords, values = coords[order], values[order]
        if len(coords) > 1 and np.any(np.all(coords[1:] == coords[:-1], axis=1)):
            raise ValueError("duplicate coordinates")
        coords.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_entries(
        cls, shape: Shape, entries: Mapping[tuple[int, int, int], float]
    ) -> "EventTensor":
        if entries:
            coords = np.array(list(entries.keys()), dtype=np.int64)
            values = np.array(list(entries.values()), dtype=np.float64)
        else:
            coords = np.zeros((0, 3), dtype=np.int64)
            values = np.zeros(0)
        return cls(shape, coords, values)

    @classmethod
    def from_dense(cls, array: np.ndarray) -> "EventTensor":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise DimensionError("dense array must be 3-way")
        coords = np.argwhere(array != 0)
        return cls(array.shape, coords, array[tuple(coords.T)])

    @classmethod
    def empty(cls, shape: Shape) -> "EventTensor":
        return cls.from_entries(shape, {})

    @property
    def n_viewers(self) -> int:
        return self.shape[0]

    @property
    def n_channels(self) -> int:
        return self.shape[1]

    @property
    def n_slots(self) -> int:
        return self.shape[2]

    @property
    def nnz(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self) -> int:
        return hash((self.shape, self.coords.tobytes(), self.values.tobytes()))

    def dense(self) -> np.ndarray:
        """Dense float64 copy (cached, read-only)."""
        if self._dense is None:
            out = np.zeros(self.shape)
            if self.nnz:
                out[tuple(self.coords.T)] = self.values
            out.setflags(write=False)
            object.__setattr__(self, "_dense", out)
        return self._dense

    def get(self, v: int, c: int, t: int) -> float:
        if not (0 <= v < self.shape[0] and 0 <= c < self.shape[1] and 0 <= t < self.shape[2]):
            raise IndexError(f"cell {(v, c, t)} outside {self.shape}")
        return float(self.dense()[v, c, t])

    def entries(self) -> dict[tuple[int, int, int], float]:
        return {
            (int(v), int(c), int(t)): float(x)
            for (v, c, t), x in zip(self.coords, self.values)
        }

    def slice_slots(self, stop: int) -> "EventTensor":
        """Restrict to slots ``[0, stop)``."""
        keep = self.coords[:, 2] < stop
        return EventTensor(
            (self.shape[0], self.shape[1], stop), self.coords[keep], self.values[keep]
        )


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Shared viewer/channel/slot factors plus the donation and response cores."""

    V: np.ndarray
    C: np.ndarray
    T: np.ndarray
    O_D: np.ndarray
    O_R: np.ndarray

    def __post_init__(self) -> None:
        alpha = np.shape(self.V)[1] if np.ndim(self.V) == 2 else -1
        for name in ("V", "C", "T"):
            m = getattr(self, name)
            if np.ndim(m) != 2 or np.shape(m)[1] != alpha:
                raise DimensionError(f"factor {name} must be (n, {alpha})")
        for name in ("O_D", "O_R"):
            if np.shape(getattr(self, name)) != (alpha, alpha, alpha):
                raise DimensionError(f"core {name} must be {alpha}^3")
        for name in ("V", "C", "T", "O_D", "O_R"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def alpha(self) -> int:
        return self.V.shape[1]

    @property
    def dims(self) -> Shape:
        return (self.V.shape[0], self.C.shape[0], self.T.shape[0])

    def reconstruct_donations(self) -> np.ndarray:
        return tucker_reconstruct(self.O_D, self.V, self.C, self.T)

    def reconstruct_responses(self) -> np.ndarray:
        return tucker_reconstruct(self.O_R, self.V, self.C, self.T)


def mode_n_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Multiply a 3-way tensor by a matrix along ``mode`` (1, 2 or 3).

    ``out[..., i, ...] = sum_j m[i, j] * t[..., j, ...]``
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if t.ndim != 3:
        raise DimensionError("tensor must be 3-way")
    if mode not in (1, 2, 3):
        raise DimensionError(f"mode must be 1, 2 or 3, got {mode}")
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise DimensionError(
            f"matrix {m.shape} does not match tensor size {t.shape[mode - 1]} on mode {mode}"
        )
    out = np.tensordot(m, t, axes=(1, mode - 1))
    return np.moveaxis(out, 0, mode - 1)


def tucker_reconstruct(
    core: np.ndarray, V: np.ndarray, C: np.ndarray, T: np.ndarray
) -> np.ndarray:
    """``core x_1 V x_2 C x_3 T`` as a dense array."""
    core = np.asarray(core, dtype=np.float64)
    if core.ndim != 3:
        raise DimensionError("core must be 3-way")
    out = mode_n_product(core, V, 1)
    out = mode_n_product(out, C, 2)
    return mode_n_product(out, T, 3)


def frob_sq_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Frobenius distance between two equally shaped tensors."""
    a = a.dense() if isinstance(a, EventTensor) else np.asarray(a, dtype=np.float64)
    b = b.dense() if isinstance(b, EventTensor) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = (a - b).ravel()
    return float(diff @ diff)


# -- JSONL storage -----------------------------------------------------------


def write_tensor_jsonl(tensor: EventTensor, path: str | Path) -> None:
    nv, nc, nt = tensor.shape
    with open(path, "w") as fh:
        fh.write(json.dumps({"n_viewers": nv, "n_channels": nc, "n_slots": nt}) + "\n")
        for (v, c, t), x in zip(tensor.coords.tolist(), tensor.values.tolist()):
            fh.write(json.dumps({"v": v, "c": c, "t": t, "x": x}) + "\n")


def read_tensor_jsonl(path: str | Path) -> EventTensor:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: missing header record")
    header = json.loads(lines[0])
    try:
        shape = (header["n_viewers"], header["n_channels"], header["n_slots"])
    except KeyError as exc:
        raise ValueError(f"{path}: header lacks {exc}") from None
    entries: dict[tuple[int, int, int], float] = {}
    for line in lines[1:]:
        rec = json.loads(line)
        key = (int(rec["v"]), int(rec["c"]), int(rec["t"]))
        entries[key] = entries.get(key, 0.0) + float(rec["x"])
    return EventTensor.from_entries(shape, entries)


def stack_lags(dense: np.ndarray, window: int) -> np.ndarray:
    """``out[k-1, :, :, t] = dense[:, :, t - k]`` for k = 1..window (zero before slot 0)."""
    nv, nc, nt = dense.shape
    out = np.zeros((window, nv, nc, nt))
    for k in range(1, window + 1):
        if k < nt:
            out[k - 1, :, :, k:] = dense[:, :, : nt - k]
    return out


def window_sum(x: np.ndarray, window: int, axis: int = -1) -> np.ndarray:
    """Trailing sum over ``[max(0, t - window), t]`` along ``axis``."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    cs = np.cumsum(x, axis=-1)
    out = cs.copy()
    out[..., window + 1 :] -= cs[..., : -(window + 1)]
    return np.moveaxis(out, -1, axis)

