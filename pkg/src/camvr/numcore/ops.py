"""Differentiable op set.

Forward results on oracle-checked paths (matmul, conv2d, softmax, attention)
accumulate in a fixed ascending-index order so tests can assert exact
equality against brute-force references; see ``.._kernels``. Backward passes
only need to satisfy finite-difference checks at 1e-4 and use plain BLAS.

Nonlinearities are evaluated with numpy ufuncs on arrays in both the ops and
the test oracles; libm scalar calls can differ in the last ulp.
"""

import numpy as np

from .. import _kernels as kernels
from ..errors import ContractError, ShapeError
from .tape import active_tape
from .tensor import Tensor


def _record(out, inputs, backward):
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _ordered_sum(arr, axis):
    """Sum with strictly ascending accumulation order along ``axis``."""
    return np.take(np.cumsum(arr, axis=axis), -1, axis=axis)


# derivative helpers kept as module functions so tests can corrupt them
# as a negative control for the gradient checker
def _sigmoid_grad(y):
    return y * (1.0 - y)


def _tanh_grad(y):
    return 1.0 - y * y


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(kernels.matmul(a.data, b.data))

    def backward(g):
        return np.matmul(g, b.data.T), np.matmul(a.data.T, g)

    return _record(out, (a, b), backward)


def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose: need 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T)

    def backward(g):
        return (g.T,)

    return _record(out, (a,), backward)


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward(g):
        return g, g

    return _record(out, (a, b), backward)


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def backward(g):
        return g, -g

    return _record(out, (a, b), backward)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward(g):
        return g * b.data, g * a.data

    return _record(out, (a, b), backward)


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)

    def backward(g):
        return (g * c,)

    return _record(out, (a,), backward)


def add_rowvec(a, v):
    """a[m,n] + v[n] broadcast over rows (bias add)."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {a.shape} and {v.shape}")
    out = Tensor(a.data + v.data[None, :])

    def backward(g):
        return g, g.sum(axis=0)

    return _record(out, (a, v), backward)


def add_chanvec(x, b):
    """x[H,W,C] + b[C] broadcast over the grid (conv bias add)."""
    if x.ndim != 3 or b.ndim != 1 or x.shape[2] != b.shape[0]:
        raise ShapeError(f"add_chanvec: shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data)

    def backward(g):
        return g, g.sum(axis=(0, 1))

    return _record(out, (x, b), backward)


def sigmoid(a):
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)

    def backward(g):
        return (_sigmoid_grad(out.data) * g,)

    return _record(out, (a,), backward)


def tanh(a):
    out = Tensor(np.tanh(a.data))

    def backward(g):
        return (_tanh_grad(out.data) * g,)

    return _record(out, (a,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: no tensors")
    nd = tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ShapeError(
                f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        for ax in range(nd):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(
                    f"concat: shapes {tensors[0].shape} and {t.shape} "
                    f"differ off axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), backward)


def mean_rows(a):
    """Column means of a[m,n], returned as a 1 x n row."""
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"mean_rows: need nonempty 2-D tensor, got {a.shape}")
    m = a.shape[0]
    out = Tensor((_ordered_sum(a.data, axis=0) / m)[None, :])

    def backward(g):
        return (np.broadcast_to(g / m, a.shape).copy(),)

    return _record(out, (a,), backward)


def broadcast_rows(v, m):
    """Repeat a 1 x n row vector into an m x n matrix."""
    if v.ndim != 2 or v.shape[0] != 1:
        raise ShapeError(f"broadcast_rows: need 1 x n tensor, got {v.shape}")
    out = Tensor(np.broadcast_to(v.data, (m, v.shape[1])).copy())

    def backward(g):
        return (g.sum(axis=0, keepdims=True),)

    return _record(out, (v,), backward)


def broadcast_grid(v, h, w):
    """Tile a 1 x d row into an h x w x d grid."""
    if v.ndim != 2 or v.shape[0] != 1:
        raise ShapeError(f"broadcast_grid: need 1 x d tensor, got {v.shape}")
    out = Tensor(np.broadcast_to(v.data[0], (h, w, v.shape[1])).copy())

    def backward(g):
        return (g.sum(axis=(0, 1))[None, :],)

    return _record(out, (v,), backward)


def softmax_rows(a):
    """Row-wise softmax with per-row max subtraction for stability."""
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows: need 2-D tensor, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = _ordered_sum(e, axis=1)[:, None]
    out = Tensor(e / denom)

    def backward(g):
        y = out.data
        inner = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - inner),)

    return _record(out, (a,), backward)


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    orig = a.shape

    def backward(g):
        return (g.reshape(orig),)

    return _record(out, (a,), backward)


def clone(a):
    out = Tensor(a.data.copy())

    def backward(g):
        return (g,)

    return _record(out, (a,), backward)


def sum_all(a):
    out = Tensor(_ordered_sum(a.data.reshape(-1), axis=0).reshape(()))

    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), backward)


def _im2col(padded, h, w, kh, kw):
    """Patch matrix (h*w, kh*kw*cin); column order (dy, dx, cin) ascending."""
    cin = padded.shape[2]
    cols = np.empty((h, w, kh, kw, cin), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, dy, dx, :] = padded[dy:dy + h, dx:dx + w, :]
    return cols.reshape(h * w, kh * kw * cin)


def conv2d(x, k):
    """Same-padded 2-D convolution: x[H,W,Cin] * k[kh,kw,Cin,Cout].

    Zero padding keeps the spatial extents; kernel extents must be odd.
    Computed as im2col + matmul, accumulating over (dy, dx, cin) in
    ascending order to match the sliding-window oracle exactly.
    """
    if x.ndim != 3 or k.ndim != 4:
        raise ShapeError(f"conv2d: need x[H,W,Cin], k[kh,kw,Cin,Cout]; "
                         f"got {x.shape} and {k.shape}")
    h, w, cin = x.shape
    kh, kw, kcin, cout = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if kcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} vs kernel {kcin}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(padded, h, w, kh, kw)
    kmat = k.data.reshape(kh * kw * cin, cout)
    out = Tensor(kernels.matmul(cols, kmat).reshape(h, w, cout))

    def backward(g):
        gmat = g.reshape(h * w, cout)
        dk = np.matmul(cols.T, gmat).reshape(k.shape)
        dcols = np.matmul(gmat, kmat.T).reshape(h, w, kh, kw, cin)
        dpadded = np.zeros_like(padded)
        for dy in range(kh):
            for dx in range(kw):
                dpadded[dy:dy + h, dx:dx + w, :] += dcols[:, :, dy, dx, :]
        return dpadded[ph:ph + h, pw:pw + w, :], dk

    return _record(out, (x, k), backward)


def avg_pool2x2(x):
    """Mean over non-overlapping 2x2 blocks; extents must be even."""
    if x.ndim != 3 or x.shape[0] % 2 or x.shape[1] % 2:
        raise ShapeError(f"avg_pool2x2: need even H,W, got {x.shape}")
    h2, w2, c = x.shape[0] // 2, x.shape[1] // 2, x.shape[2]
    blocks = x.data.reshape(h2, 2, w2, 2, c)
    out = Tensor(blocks.mean(axis=(1, 3)))

    def backward(g):
        spread = np.broadcast_to(g[:, None, :, None, :] / 4.0,
                                 (h2, 2, w2, 2, c))
        return (spread.reshape(x.shape).copy(),)

    return _record(out, (x,), backward)


def upsample_nearest(a, hw):
    """Nearest-neighbor upsample of a[h,w,c]; target extents must be multiples."""
    h, w, c = a.shape
    big_h, big_w = hw
    if big_h % h or big_w % w:
        raise ShapeError(f"upsample_nearest: {(h, w)} does not divide {hw}")
    fh, fw = big_h // h, big_w // w
    out = Tensor(np.repeat(np.repeat(a.data, fh, axis=0), fw, axis=1))

    def backward(g):
        return (g.reshape(h, fh, w, fw, c).sum(axis=(1, 3)),)

    return _record(out, (a,), backward)


def mul_spatial(x, a):
    """x[H,W,C] scaled per cell by a[H,W,1]."""
    if x.ndim != 3 or a.ndim != 3 or a.shape[2] != 1 or x.shape[:2] != a.shape[:2]:
        raise ShapeError(f"mul_spatial: shapes {x.shape} and {a.shape}")
    out = Tensor(x.data * a.data)

    def backward(g):
        return g * a.data, (g * x.data).sum(axis=2, keepdims=True)

    return _record(out, (x, a), backward)


def cross_entropy(logits, target):
    """-log softmax(logits)[target] for a 1-D logits vector."""
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: need 1-D logits, got {logits.shape}")
    n = logits.shape[0]
    target = int(target)
    if not 0 <= target < n:
        raise ContractError(f"cross_entropy: target {target} outside [0, {n})")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    denom = _ordered_sum(e, axis=0)
    out = Tensor(np.log(denom) - z[target])
    probs = e / denom

    def backward(g):
        d = probs.copy()
        d[target] -= 1.0
        return (d * g,)

    return _record(out, (logits,), backward)
