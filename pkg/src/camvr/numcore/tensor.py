"""Dense float64 tensor, the value carrier for every array in the stack."""

import numpy as np


class Tensor:
    """A dense n-dimensional float64 array, row-major, optionally trainable.

    ``data`` is always C-contiguous float64; ops treat tensors as immutable
    (each op allocates its output). ``requires_grad`` marks leaf parameters
    whose gradients the tape should report.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=np.float64), requires_grad=requires_grad)
