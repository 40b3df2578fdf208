"""Dense tensor carrier used at the library API boundaries.

Internally the layers work on raw numpy arrays; ``Tensor`` is the value
type exchanged with datasets, checkpoints and the forward/backward API.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Tensor:
    """A dense n-d array plus an optional gradient buffer of the same shape."""

    __slots__ = ("values", "grad")

    def __init__(self, values, grad=None):
        self.values = np.asarray(values)
        if grad is not None:
            grad = np.asarray(grad)
            if grad.shape != self.values.shape:
                raise ShapeError(
                    f"grad shape {grad.shape} != value shape {self.values.shape}"
                )
        self.grad = grad

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def check_finite(self, context=""):
        if not np.all(np.isfinite(self.values)):
            raise ShapeError(f"non-finite values in tensor {context}".strip())

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype})"


class Param:
    """A trainable array with its gradient and an optional static binary mask.

    The mask, when set, is a {0,1} array congruent to ``value``; pruned
    positions stay at exactly zero and receive zero gradient.
    """

    __slots__ = ("name", "value", "grad", "mask")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.mask = None

    @property
    def shape(self):
        return self.value.shape

    def set_mask(self, mask):
        mask = np.asarray(mask, dtype=self.value.dtype)
        if mask.shape != self.value.shape:
            raise ShapeError(
                f"mask shape {mask.shape} != param {self.name} shape {self.value.shape}"
            )
        self.mask = mask
        self.value *= mask

    def density(self):
        """Fraction of weights kept by the mask (1.0 when unmasked)."""
        if self.mask is None:
            return 1.0
        return float(self.mask.sum()) / self.mask.size
