"""Conv/transposed-conv/ELU/concat primitives with explicit reverse-mode
gradients.

Activations are laid out as (batch, lateral, axial, channels) so that axial
kernel windows gather as long contiguous runs (the axial axis is the strided
one). Weights are (k_axial, k_lateral, c_in, c_out). Convolutions are
correlations (no kernel flip) with zero padding; a transposed convolution is
the exact adjoint of the matching strided convolution, so stride-2 layers
invert each other's shape arithmetic by construction.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as_pair(p):
    return p if isinstance(p, tuple) else (p, p)


def im2col(x, ka, kl, sa, sl, pad_a, pad_l):
    """Gather padded sliding windows into a (B*Lo*Ao, kl*ka*C) matrix.

    pad_a and pad_l may be ints or (before, after) tuples.
    """
    pa, pl = _as_pair(pad_a), _as_pair(pad_l)
    if pa != (0, 0) or pl != (0, 0):
        x = np.pad(x, ((0, 0), pl, pa, (0, 0)))
    win = sliding_window_view(x, (kl, ka), axis=(1, 2))[:, ::sl, ::sa]
    b, lo, ao = win.shape[:3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b * lo * ao, kl * ka * x.shape[3]), (lo, ao)


def conv2d(x, w, bias=None, stride=(1, 1), pad=None, return_cols=False):
    """Strided 2D correlation of (B, L, A, C) input with (ka, kl, ci, co)
    weights. stride/pad are (axial, lateral); pad defaults to 'same' geometry
    ((k-1)//2 per axis) and accepts (before, after) tuples per axis."""
    ka, kl, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ValueError(f"input has {x.shape[3]} channels, weight expects {cin}")
    sa, sl = stride
    pad_a, pad_l = ((ka - 1) // 2, (kl - 1) // 2) if pad is None else pad
    if ka == kl == 1 and sa == sl == 1:
        cols, (lo, ao) = x.reshape(-1, cin), x.shape[1:3]
    else:
        cols, (lo, ao) = im2col(x, ka, kl, sa, sl, pad_a, pad_l)
    w2 = w.transpose(1, 0, 2, 3).reshape(kl * ka * cin, cout)
    y = cols @ w2
    y = y.reshape(x.shape[0], lo, ao, cout)
    if bias is not None:
        y += bias
    return (y, cols) if return_cols else y


def conv2d_adjoint(t, w, stride, out_al, pad=None):
    """Adjoint of conv2d: maps conv outputs t back to an input-shaped tensor
    (B, out_al[1], out_al[0], c_in). out_al is (axial, lateral).

    Lateral stride must be 1 (all networks here stride axially only); the
    axial-stride-2 case runs as two polyphase sub-correlations interleaved
    into the output rows, which avoids materializing zero-stuffed tensors.
    """
    ka, kl, cin, cout = w.shape
    sa, sl = stride
    pa, pl = ((ka - 1) // 2, (kl - 1) // 2) if pad is None else pad
    a_out, l_out = out_al
    if sl != 1 or sa not in (1, 2):
        raise NotImplementedError("adjoint supports lateral stride 1, axial stride 1 or 2")
    pad_l_adj = kl - 1 - pl
    if sa == 1:
        w_adj = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        return conv2d(t, w_adj, stride=(1, 1), pad=(ka - 1 - pa, pad_l_adj))
    phases = []
    for phi in (0, 1):
        taps = [k for k in range(ka - 1, -1, -1) if (k - (phi + pa)) % 2 == 0]
        n_out = a_out // 2 + (a_out % 2 if phi == 0 else 0)
        if not taps:
            phases.append(
                np.zeros((t.shape[0], t.shape[1], n_out, cin), dtype=t.dtype)
            )
            continue
        p_top = (taps[0] - phi - pa) // 2
        p_bot = len(taps) - 1 - p_top
        if p_top < 0 or p_bot < 0:
            raise ValueError("unsupported pad/kernel combination for polyphase adjoint")
        sub = np.ascontiguousarray(w[taps][:, ::-1].transpose(0, 1, 3, 2))
        y = conv2d(t, sub, stride=(1, 1), pad=((p_top, p_bot), pad_l_adj))
        phases.append(y[:, :, :n_out])
    b, l = phases[0].shape[:2]
    out = np.zeros((b, l, a_out, cin), dtype=t.dtype)
    out[:, :, 0::2] = phases[0]
    out[:, :, 1::2] = phases[1]
    return out


def conv2d_weight_grad(cols, gy, w_shape):
    """Weight gradient from cached im2col patches and the output gradient."""
    ka, kl, cin, cout = w_shape
    gw = cols.T @ gy.reshape(-1, cout)
    return gw.reshape(kl, ka, cin, cout).transpose(1, 0, 2, 3)


class ConvLayer:
    """Strided correlation plus bias. kernel/stride are (axial, lateral)."""

    def __init__(self, name, c_in, c_out, kernel=(7, 3), stride=(1, 1)):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride

    def init_params(self, rng, dtype=np.float32):
        ka, kl = self.kernel
        fan_in = ka * kl * self.c_in
        a = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-a, a, size=(ka, kl, self.c_in, self.c_out))
        return {
            f"{self.name}.w": w.astype(dtype),
            f"{self.name}.b": np.zeros(self.c_out, dtype=dtype),
        }

    def forward(self, params, x, cache=None):
        w = params[f"{self.name}.w"]
        b = params[f"{self.name}.b"]
        y = conv2d(x, w, b, self.stride)
        if cache is not None:
            cache[self.name] = x
        return y

    def backward(self, params, cache, gy, grads):
        # the patch matrix is regathered here rather than kept from the
        # forward pass; on bandwidth-starved hosts the regather from a
        # cache-resident activation is cheaper than spilling the columns
        w = params[f"{self.name}.w"]
        x = cache[self.name]
        ka, kl, _, _ = w.shape
        sa, sl = self.stride
        cols, _ = im2col(x, ka, kl, sa, sl, (ka - 1) // 2, (kl - 1) // 2)
        grads[f"{self.name}.w"] = conv2d_weight_grad(cols, gy, w.shape)
        grads[f"{self.name}.b"] = gy.sum(axis=(0, 1, 2))
        return conv2d_adjoint(gy, w, self.stride, (x.shape[2], x.shape[1]))


class ConvTransposeLayer:
    """Adjoint of a strided correlation; upsamples the axial axis."""

    def __init__(self, name, c_in, c_out, kernel=(7, 3), stride=(1, 1)):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride

    def init_params(self, rng, dtype=np.float32):
        ka, kl = self.kernel
        fan_in = ka * kl * self.c_in
        a = 1.0 / np.sqrt(fan_in)
        # stored in the associated downsampling convolution's layout
        w = rng.uniform(-a, a, size=(ka, kl, self.c_out, self.c_in))
        return {
            f"{self.name}.w": w.astype(dtype),
            f"{self.name}.b": np.zeros(self.c_out, dtype=dtype),
        }

    def forward(self, params, x, cache=None):
        w = params[f"{self.name}.w"]
        b = params[f"{self.name}.b"]
        if cache is not None:
            cache[self.name] = x
        sa, sl = self.stride
        out_al = (x.shape[2] * sa, x.shape[1] * sl)
        return conv2d_adjoint(x, w, self.stride, out_al) + b

    def backward(self, params, cache, gy, grads):
        w = params[f"{self.name}.w"]
        x = cache[self.name]
        g_in, cols = conv2d(gy, w, stride=self.stride, return_cols=True)
        grads[f"{self.name}.w"] = conv2d_weight_grad(cols, x, w.shape)
        grads[f"{self.name}.b"] = gy.sum(axis=(0, 1, 2))
        return g_in


class EluLayer:
    def __init__(self, name):
        self.name = name

    def init_params(self, rng, dtype=np.float32):
        return {}

    def forward(self, params, x, cache=None):
        y = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
        if cache is not None:
            cache[self.name] = (x > 0, y)
        return y

    def backward(self, params, cache, gy, grads):
        positive, y = cache[self.name]
        return gy * np.where(positive, gy.dtype.type(1.0), y + gy.dtype.type(1.0))


class ConcatLayer:
    """Channel concatenation of the main path with a named skip tensor."""

    def __init__(self, name, skip_from):
        self.name = name
        self.skip_from = skip_from

    def init_params(self, rng, dtype=np.float32):
        return {}

    def forward(self, params, x, skip, cache=None):
        if cache is not None:
            cache[self.name] = x.shape[3]
        return np.concatenate([x, skip], axis=3)

    def backward(self, params, cache, gy, grads):
        c = cache[self.name]
        return gy[..., :c], gy[..., c:]
