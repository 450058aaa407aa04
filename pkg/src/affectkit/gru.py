"""Gated recurrent unit cell built on the autodiff tensor ops.

Convention: z and r are sigmoid gates, the candidate state applies the reset
gate to the previous hidden state inside the tanh, and the update is the
convex combination h = (1 - z) * h_prev + z * h_tilde. With all-zero
parameters a step therefore halves the state (z = 0.5, h_tilde = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError, add, matmul, mul, sigmoid, sub, tanh


@dataclass
class GruParams:
    """One cell's weights: fused input projection plus recurrent matrices.

    wx: [n, 3m] input weights for (z, r, candidate); b: [3m] bias;
    u_zr: [m, 2m] recurrent weights for (z, r); u_c: [m, m] for the candidate.
    """
    wx: Tensor
    b: Tensor
    u_zr: Tensor
    u_c: Tensor

    @property
    def width(self):
        return self.u_c.data.shape[0]

    def check(self, n):
        m = self.width
        expect = {"wx": (n, 3 * m), "b": (3 * m,), "u_zr": (m, 2 * m), "u_c": (m, m)}
        for field, shape in expect.items():
            got = getattr(self, field).data.shape
            if got != shape:
                raise ShapeError(f"gru param {field}: expected {shape}, got {got}")


def gru_params(params, prefix, n, m, store=None):
    """Create (or fetch) the four named tensors for one cell in `params`."""
    names = {"wx": (n, 3 * m), "b": (3 * m,), "u_zr": (m, 2 * m), "u_c": (m, m)}
    tensors = {}
    for field, shape in names.items():
        key = f"{prefix}.{field}"
        if key not in params:
            params[key] = Tensor(np.zeros(shape), requires_grad=True, name=key)
        tensors[field] = params[key]
    return GruParams(**tensors)


def gru_step(x, h_prev, p: GruParams):
    """One GRU update for a [B, n] input and [B, m] state."""
    m = p.width
    if x.data.shape[-1] != p.wx.data.shape[0]:
        raise ShapeError(f"gru_step: input width {x.data.shape[-1]} != "
                         f"wx rows {p.wx.data.shape[0]}")
    p.check(x.data.shape[-1])
    gx = add(matmul(x, p.wx), p.b)
    hzr = matmul(h_prev, p.u_zr)
    z = sigmoid(add(gx[..., 0:m], hzr[..., 0:m]))
    r = sigmoid(add(gx[..., m:2 * m], hzr[..., m:2 * m]))
    cand = tanh(add(gx[..., 2 * m:3 * m], matmul(mul(r, h_prev), p.u_c)))
    return add(mul(sub(Tensor(1.0), z), h_prev), mul(z, cand))
