"""Invertible transforms with exact log-determinant Jacobians.

Every transform maps latent codes to data space (``forward``) and back
(``inverse``). Density estimation runs the inverse direction, so that is the
differentiable path: ``inverse_nodes`` consumes and produces graph nodes from
:mod:`flowlda.diffcore` together with the per-sample
``log|det d(inverse)/dx|`` term. ``forward`` is a plain numpy evaluation used
for sampling and round-trip checks.

Log-scales everywhere are squashed as ``cap_eff * tanh(raw)`` with
``cap_eff = 5 * tanh(cap / 5)`` for a learned scalar ``cap``, which keeps them
inside (-5, 5) regardless of what training does to ``cap``.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError, NumericError

SCALE_BOUND = 5.0


def default_width(dim):
    """Conditioner hidden width: 64 for small problems, 2*dim capped at 512."""
    return 64 if dim <= 8 else min(2 * dim, 512)


def _rng_of(rng, seed):
    if rng is not None:
        return rng
    return np.random.default_rng(0 if seed is None else seed)


def _check_finite_input(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what} input")


class FlowTransform:
    """Base class: an invertible map of fixed dimension with parameters."""

    dim: int

    def parameters(self):
        """Trainable leaves in declaration order."""
        return []

    def descriptor(self):
        raise NotImplementedError

    def forward(self, z):
        """Map latent to data space; accepts (d,) or (n, d) arrays."""
        raise NotImplementedError

    def inverse_nodes(self, x):
        """Differentiable inverse: (n, d) node -> (z node (n, d), logdet node (n, 1))."""
        raise NotImplementedError

    def inverse_with_logdet(self, x):
        """Numpy inverse; returns (z, logdet) matching the input's batching."""
        x = np.asarray(x, dtype=np.float64)
        _check_finite_input(x, "inverse")
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.dim:
            raise DimensionError(f"expected dim {self.dim}, got {xb.shape[1]}")
        z, ld = self.inverse_nodes(dc.constant(xb))
        zv, lv = z.value, ld.value[:, 0]
        if single:
            return zv[0], float(lv[0])
        return zv, lv

    def _forward_batch(self, z):
        raise NotImplementedError

    def _run_forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        _check_finite_input(z, "forward")
        single = z.ndim <= 1
        zb = np.atleast_2d(np.atleast_1d(z))
        if zb.shape[1] != self.dim:
            raise DimensionError(f"expected dim {self.dim}, got {zb.shape[1]}")
        x = self._forward_batch(zb)
        return x[0] if single else x


class Reverse(FlowTransform):
    """Fixed coordinate reversal; volume preserving."""

    def __init__(self, dim):
        self.dim = int(dim)

    def descriptor(self):
        return {"type": "reverse", "dim": self.dim}

    def forward(self, z):
        return self._run_forward(z)

    def _forward_batch(self, z):
        return z[:, ::-1].copy()

    def inverse_nodes(self, x):
        z = x[:, ::-1]
        return z, dc.constant(np.zeros((x.value.shape[0], 1)))


class LinearFlow(FlowTransform):
    """Invertible affine block, parameterized in the normalizing direction:
    ``z = x @ W.T + b`` with ``log|det J| = log|det W|``."""

    def __init__(self, dim, weight=None, bias=None, rng=None, init="identity", init_scale=0.5):
        self.dim = int(dim)
        if weight is None:
            if init == "identity":
                weight = np.eye(self.dim)
            else:
                rng = _rng_of(rng, None)
                weight = np.eye(self.dim) + rng.normal(0.0, init_scale, (self.dim, self.dim))
        if bias is None:
            bias = np.zeros((1, self.dim))
        self.weight = dc.parameter(np.asarray(weight, dtype=np.float64).reshape(self.dim, self.dim))
        self.bias = dc.parameter(np.asarray(bias, dtype=np.float64).reshape(1, self.dim))

    def parameters(self):
        return [self.weight, self.bias]

    def descriptor(self):
        return {"type": "linear", "dim": self.dim}

    def forward(self, z):
        return self._run_forward(z)

    def _forward_batch(self, z):
        return np.linalg.solve(self.weight.value, (z - self.bias.value).T).T

    def inverse_nodes(self, x):
        n = x.value.shape[0]
        z = dc.matmul(x, dc.transpose(self.weight)) + self.bias
        ld = dc.logdet(self.weight) * dc.constant(np.ones((n, 1)))
        return z, ld


def _bounded_scale(raw, cap):
    """Squash a raw log-scale through tanh and a softly clamped learned cap."""
    cap_eff = SCALE_BOUND * dc.tanh(cap * (1.0 / SCALE_BOUND))
    return cap_eff * dc.tanh(raw)


def _bounded_scale_np(raw, cap):
    cap_eff = SCALE_BOUND * np.tanh(cap / SCALE_BOUND)
    return cap_eff * np.tanh(raw)


def _init_mlp(rng, fan_in, width, fan_out, init, init_scale):
    """Weights for one 2-layer tanh perceptron. Identity init zeroes the final
    layer so the owning block starts as the identity map."""
    w1 = rng.normal(0.0, 1.0 / np.sqrt(max(fan_in, 1)), (fan_in, width))
    b1 = np.zeros((1, width))
    if init == "identity":
        w2 = np.zeros((width, fan_out))
        b2 = np.zeros((1, fan_out))
    elif init == "random":
        w1 = rng.normal(0.0, init_scale, (fan_in, width))
        b1 = rng.normal(0.0, init_scale, (1, width))
        w2 = rng.normal(0.0, init_scale, (width, fan_out))
        b2 = rng.normal(0.0, init_scale, (1, fan_out))
    else:
        raise ContractError(f"unknown init {init!r}")
    return w1, b1, w2, b2


class AffineCoupling(FlowTransform):
    """RealNVP-style half-split coupling block.

    Coordinates below ``split`` pass through unchanged and drive two separate
    2-layer tanh perceptrons producing the log-scale and shift applied to the
    remaining coordinates. The inverse Jacobian is triangular, so its
    log-determinant is the negated sum of the log-scale outputs.
    """

    def __init__(self, dim, width=None, split=None, rng=None, init="identity", init_scale=0.5):
        self.dim = int(dim)
        if self.dim < 2:
            raise ContractError("coupling blocks need dim >= 2")
        self.split = int(split) if split is not None else self.dim // 2
        if not 1 <= self.split < self.dim:
            raise ContractError(f"split must be in [1, dim), got {self.split}")
        self.width = int(width) if width is not None else default_width(self.dim)
        rng = _rng_of(rng, None)
        k, m = self.split, self.dim - self.split
        sw1, sb1, sw2, sb2 = _init_mlp(rng, k, self.width, m, init, init_scale)
        tw1, tb1, tw2, tb2 = _init_mlp(rng, k, self.width, m, init, init_scale)
        cap = 1.0 if init == "identity" else rng.normal(0.0, init_scale)
        self._params = [dc.parameter(p) for p in (sw1, sb1, sw2, sb2, tw1, tb1, tw2, tb2)]
        self._params.append(dc.parameter(np.full((1, 1), cap)))

    def parameters(self):
        return list(self._params)

    def descriptor(self):
        return {"type": "coupling", "dim": self.dim, "width": self.width, "split": self.split}

    def _nets_np(self, passive):
        sw1, sb1, sw2, sb2, tw1, tb1, tw2, tb2, cap = [p.value for p in self._params]
        raw_s = np.tanh(passive @ sw1 + sb1) @ sw2 + sb2
        shift = np.tanh(passive @ tw1 + tb1) @ tw2 + tb2
        return _bounded_scale_np(raw_s, cap), shift

    def forward(self, z):
        return self._run_forward(z)

    def _forward_batch(self, z):
        k = self.split
        s, t = self._nets_np(z[:, :k])
        x = z.copy()
        x[:, k:] = z[:, k:] * np.exp(s) + t
        return x

    def inverse_nodes(self, x):
        k = self.split
        sw1, sb1, sw2, sb2, tw1, tb1, tw2, tb2, cap = self._params
        passive = x[:, :k]
        raw_s = dc.matmul(dc.tanh(dc.matmul(passive, sw1) + sb1), sw2) + sb2
        s = _bounded_scale(raw_s, cap)
        t = dc.matmul(dc.tanh(dc.matmul(passive, tw1) + tb1), tw2) + tb2
        z_active = (x[:, k:] - t) * dc.exp(-s)
        z = dc.concat_cols([passive, z_active])
        ld = -s.sum(axis=1, keepdims=True)
        return z, ld


def _made_masks(dim, width, order):
    """Input and output masks for a one-hidden-layer autoregressive net.

    ``order[k]`` is the coordinate visited k-th; the net's outputs for a
    coordinate may depend only on strictly earlier coordinates.
    """
    in_deg = np.empty(dim, dtype=int)
    in_deg[order] = np.arange(1, dim + 1)
    hid_deg = (np.arange(width) % max(dim - 1, 1)) + 1
    m1 = (hid_deg[None, :] >= in_deg[:, None]).astype(np.float64)
    out_deg = np.concatenate([in_deg, in_deg])  # (shift, log-scale) per coordinate
    m2 = (out_deg[None, :] > hid_deg[:, None]).astype(np.float64)
    return m1, m2


class MafBlock(FlowTransform):
    """Masked autoregressive block.

    The normalizing direction is the fast one: a single masked 2-layer
    perceptron reads the data vector and emits a shift and log-scale per
    coordinate, each depending only on strictly preceding coordinates under
    the block's ordering, so ``z_i = (x_i - shift_i) * exp(-scale_i)`` is
    computed in one pass and the inverse Jacobian is triangular. Sampling
    (``forward``) rebuilds coordinates sequentially.
    """

    def __init__(self, dim, width=None, ordering="natural", rng=None, init="identity", init_scale=0.5):
        self.dim = int(dim)
        self.width = int(width) if width is not None else default_width(self.dim)
        if ordering == "natural":
            self.order = np.arange(self.dim)
        elif ordering == "reversed":
            self.order = np.arange(self.dim)[::-1].copy()
        else:
            raise ContractError(f"unknown ordering {ordering!r}")
        self.ordering = ordering
        rng = _rng_of(rng, None)
        m1, m2 = _made_masks(self.dim, self.width, self.order)
        self._m1, self._m2 = m1, m2
        w1, b1, w2, b2 = _init_mlp(rng, self.dim, self.width, 2 * self.dim, init, init_scale)
        cap = 1.0 if init == "identity" else rng.normal(0.0, init_scale)
        self._params = [dc.parameter(p) for p in (w1, b1, w2, b2)]
        self._params.append(dc.parameter(np.full((1, 1), cap)))

    def parameters(self):
        return list(self._params)

    def descriptor(self):
        return {"type": "maf", "dim": self.dim, "width": self.width, "ordering": self.ordering}

    def _conditioner_np(self, x):
        w1, b1, w2, b2, cap = [p.value for p in self._params]
        h = np.tanh(x @ (w1 * self._m1) + b1)
        out = h @ (w2 * self._m2) + b2
        return out[:, : self.dim], _bounded_scale_np(out[:, self.dim :], cap)

    def forward(self, z):
        return self._run_forward(z)

    def _forward_batch(self, z):
        x = np.zeros_like(z)
        for k in range(self.dim):
            i = self.order[k]
            shift, scale = self._conditioner_np(x)
            x[:, i] = z[:, i] * np.exp(scale[:, i]) + shift[:, i]
        return x

    def inverse_nodes(self, x):
        w1, b1, w2, b2, cap = self._params
        m1, m2 = dc.constant(self._m1), dc.constant(self._m2)
        h = dc.tanh(dc.matmul(x, w1 * m1) + b1)
        out = dc.matmul(h, w2 * m2) + b2
        shift = out[:, : self.dim]
        scale = _bounded_scale(out[:, self.dim :], cap)
        z = (x - shift) * dc.exp(-scale)
        ld = -scale.sum(axis=1, keepdims=True)
        return z, ld


class FlowStack(FlowTransform):
    """Composition of transforms; log-determinants add across members."""

    def __init__(self, blocks, dim=None):
        blocks = list(blocks)
        if not blocks and dim is None:
            raise ContractError("an empty stack needs an explicit dim")
        self.dim = int(dim) if dim is not None else blocks[0].dim
        for b in blocks:
            if b.dim != self.dim:
                raise DimensionError(f"block dim {b.dim} != stack dim {self.dim}")
        self.blocks = blocks

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def descriptor(self):
        return {"type": "stack", "dim": self.dim, "blocks": [b.descriptor() for b in self.blocks]}

    def forward(self, z):
        return self._run_forward(z)

    def _forward_batch(self, z):
        x = z
        for i, block in enumerate(self.blocks):
            x = block._forward_batch(x)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite output of block {i}", block=i)
        return x

    def inverse_nodes(self, x):
        n = x.value.shape[0]
        total = dc.constant(np.zeros((n, 1)))
        z = x
        for i in reversed(range(len(self.blocks))):
            z, ld = self.blocks[i].inverse_nodes(z)
            if not np.all(np.isfinite(z.value)) or not np.all(np.isfinite(ld.value)):
                raise NumericError(f"non-finite inverse at block {i}", block=i)
            total = total + ld
        return z, total


def compose(blocks, dim=None):
    """Build a stack, inserting a fixed reversal between consecutive learned
    blocks so conditioning coverage alternates across the stack."""
    blocks = list(blocks)
    out = []
    for b in blocks:
        if out and out[-1].parameters() and b.parameters():
            out.append(Reverse(b.dim))
        out.append(b)
    return FlowStack(out, dim=dim)


def maf_stack(dim, num_blocks=10, width=None, seed=None, rng=None, init="identity", init_scale=0.5):
    """Stack of masked autoregressive blocks with interleaved reversals."""
    rng = _rng_of(rng, seed)
    blocks = [
        MafBlock(dim, width=width, rng=rng, init=init, init_scale=init_scale)
        for _ in range(num_blocks)
    ]
    return compose(blocks, dim=dim)


def coupling_stack(dim, num_blocks=20, width=None, seed=None, rng=None, init="identity", init_scale=0.5):
    """Stack of affine coupling blocks with interleaved reversals."""
    rng = _rng_of(rng, seed)
    blocks = [
        AffineCoupling(dim, width=width, rng=rng, init=init, init_scale=init_scale)
        for _ in range(num_blocks)
    ]
    return compose(blocks, dim=dim)
