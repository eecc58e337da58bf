"""Flat parameter storage with named, shaped views."""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np


class ModelParams:
    """All trainable tensors of a model laid out in one contiguous float vector.

    ``params["dec.emb"]`` is a writable view into ``params.flat``, so optimizers
    and finite-difference checks can work on the flat vector directly.
    """

    def __init__(self, shapes: Mapping[str, tuple[int, ...]], flat: np.ndarray | None = None):
        self.shapes = {k: tuple(int(d) for d in v) for k, v in shapes.items()}
        self.offsets = {}
        off = 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape)) if shape else 1
            self.offsets[name] = (off, off + n)
            off += n
        self.size = off
        if flat is None:
            flat = np.zeros(off)
        flat = np.asarray(flat)
        if flat.dtype not in (np.float64, np.longdouble):
            flat = flat.astype(np.float64)
        if flat.shape != (off,):
            raise ValueError(f"flat vector has {flat.size} entries, layout needs {off}")
        self.flat = flat
        self._views = {
            name: self.flat[a:b].reshape(self.shapes[name]) for name, (a, b) in self.offsets.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __setitem__(self, name: str, value) -> None:
        view = self._views[name]
        if value is not view:
            view[...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def __iter__(self) -> Iterator[str]:
        return iter(self.shapes)

    def names(self) -> list[str]:
        return list(self.shapes)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.shapes, np.zeros(self.size, self.flat.dtype))

    def copy(self) -> "ModelParams":
        return ModelParams(self.shapes, self.flat.copy())

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    def unflatten(self, vec: np.ndarray) -> "ModelParams":
        return ModelParams(self.shapes, np.array(vec, dtype=np.float64))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.shapes, self.flat.astype(dtype))

    def locate(self, index: int) -> tuple[str, tuple[int, ...]]:
        """Map a flat index back to (tensor name, element index)."""
        for name, (a, b) in self.offsets.items():
            if a <= index < b:
                return name, tuple(int(i) for i in np.unravel_index(index - a, self.shapes[name] or (1,)))
        raise IndexError(index)

    def init_uniform(self, rng: np.random.Generator, scale: float = 0.1) -> "ModelParams":
        self.flat[:] = rng.uniform(-scale, scale, self.size)
        return self
