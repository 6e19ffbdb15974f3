"""Uniform quantization arithmetic for every point of the elastic space.

Codes are ``clip(round(w / s) + z, -2**(b-1), 2**(b-1) - 1)`` and the
de-quantized value is ``s * (code - z)``. Rounding is half-to-even. The
zero-point is kept as a real number for training and rounded when used.

Per-channel parameters always index axis 0 of the tensor (output channels
for weights).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError, InvalidSpecError, ShapeError


class Symmetry(str, enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


class Granularity(str, enum.Enum):
    PER_TENSOR = "per_tensor"
    PER_CHANNEL = "per_channel"


_SYMMETRY_ALIASES = {
    "symmetric": Symmetry.SYMMETRIC,
    "sym": Symmetry.SYMMETRIC,
    "asymmetric": Symmetry.ASYMMETRIC,
    "asym": Symmetry.ASYMMETRIC,
}
_GRANULARITY_ALIASES = {
    "per_tensor": Granularity.PER_TENSOR,
    "tensor": Granularity.PER_TENSOR,
    "pt": Granularity.PER_TENSOR,
    "per_channel": Granularity.PER_CHANNEL,
    "channel": Granularity.PER_CHANNEL,
    "pc": Granularity.PER_CHANNEL,
}


def parse_symmetry(value) -> Symmetry:
    if isinstance(value, Symmetry):
        return value
    try:
        return _SYMMETRY_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidSpecError(f"unknown symmetry {value!r}") from None


def parse_granularity(value) -> Granularity:
    if isinstance(value, Granularity):
        return value
    try:
        return _GRANULARITY_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidSpecError(f"unknown granularity {value!r}") from None


@dataclass(frozen=True, order=True)
class QuantSpec:
    """One point of the elastic space for a single tensor."""

    bits: int
    symmetry: Symmetry = Symmetry.SYMMETRIC
    granularity: Granularity = Granularity.PER_TENSOR

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or isinstance(self.bits, bool):
            raise InvalidSpecError(f"bits must be an integer, got {self.bits!r}")
        if self.bits < 2:
            raise InvalidSpecError(f"bits must be >= 2, got {self.bits}")
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "symmetry", parse_symmetry(self.symmetry))
        object.__setattr__(self, "granularity", parse_granularity(self.granularity))

    @property
    def symmetric(self) -> bool:
        return self.symmetry is Symmetry.SYMMETRIC

    @property
    def per_channel(self) -> bool:
        return self.granularity is Granularity.PER_CHANNEL

    @property
    def bounds(self) -> tuple[int, int]:
        return clip_bounds(self.bits)

    def __str__(self):
        sym = "sym" if self.symmetric else "asym"
        return f"{self.bits},{sym},{self.granularity.value}"


@dataclass
class QuantParams:
    """Step size(s) and zero-point(s) for one (layer, spec) pair.

    ``step`` and ``zero_point`` are float arrays of shape ``()`` for
    per-tensor or ``(C,)`` for per-channel quantization.
    """

    step: np.ndarray
    zero_point: np.ndarray

    def __post_init__(self):
        self.step = np.array(self.step, dtype=np.float64)
        self.zero_point = np.array(self.zero_point, dtype=np.float64)
        if self.step.shape != self.zero_point.shape:
            raise ShapeError(
                f"step shape {self.step.shape} != zero_point shape {self.zero_point.shape}"
            )
        if self.step.ndim > 1:
            raise ShapeError("step must be a scalar or a vector")

    @property
    def channels(self) -> int | None:
        return None if self.step.ndim == 0 else self.step.shape[0]

    def int_zero_point(self) -> np.ndarray:
        return np.rint(self.zero_point)

    def check(self, spec: QuantSpec, channels: int | None = None) -> None:
        """Raise if these parameters cannot be used with ``spec``."""
        if np.any(~(self.step > 0)):
            raise InvalidSpecError("step sizes must be positive")
        if spec.per_channel:
            if self.step.ndim != 1:
                raise ShapeError("per-channel spec needs vector parameters")
            if channels is not None and self.step.shape[0] != channels:
                raise ShapeError(
                    f"{self.step.shape[0]} channel parameters for a tensor with {channels} channels"
                )
        elif self.step.ndim != 0:
            raise ShapeError("per-tensor spec needs scalar parameters")
        if spec.symmetric and np.any(self.zero_point != 0):
            raise InvalidSpecError("symmetric quantization requires zero_point == 0")

    def copy(self) -> "QuantParams":
        return QuantParams(self.step.copy(), self.zero_point.copy())


@dataclass
class IntCodeTensor:
    codes: np.ndarray
    spec: QuantSpec


def clip_bounds(bits: int) -> tuple[int, int]:
    if bits < 2:
        raise InvalidSpecError(f"bits must be >= 2, got {bits}")
    return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


def _rows(w: np.ndarray, p: QuantParams, q: QuantSpec):
    """View ``w`` as (C, M) rows matching the parameter layout."""
    w = np.asarray(w, dtype=np.float64)
    if q.per_channel:
        if w.ndim == 0:
            raise ShapeError("per-channel quantization needs at least one axis")
        p.check(q, w.shape[0])
        return w.reshape(w.shape[0], -1), p.step, p.int_zero_point()
    p.check(q)
    return w.reshape(1, -1), p.step.reshape(1), p.int_zero_point().reshape(1)


def quantize(w, p: QuantParams, q: QuantSpec) -> IntCodeTensor:
    """Map real values to integer codes."""
    w = np.asarray(w, dtype=np.float64)
    rows, s, z = _rows(w, p, q)
    qmin, qmax = q.bounds
    codes = np.clip(np.rint(rows / s[:, None]) + z[:, None], qmin, qmax)
    return IntCodeTensor(codes.astype(np.int64).reshape(w.shape), q)


def dequantize(c: IntCodeTensor, p: QuantParams) -> np.ndarray:
    codes = np.asarray(c.codes)
    s = p.step
    z = p.int_zero_point()
    if s.ndim == 1:
        if codes.ndim == 0 or codes.shape[0] != s.shape[0]:
            raise ShapeError("per-channel parameters do not match code tensor")
        bshape = (-1,) + (1,) * (codes.ndim - 1)
        s = s.reshape(bshape)
        z = z.reshape(bshape)
    return (codes - z) * s


def fake_quantize(w, p: QuantParams, q: QuantSpec) -> np.ndarray:
    """``dequantize(quantize(w))`` computed in one pass."""
    w = np.asarray(w, dtype=np.float64)
    out, _, _ = fake_quantize_with_grads(w, p, q)
    return out


def fake_quantize_with_grads(w, p: QuantParams, q: QuantSpec):
    """Forward pass plus the per-element pieces the backward pass needs.

    Returns ``(out, dstep, inside)`` shaped like ``w``.
    """
    w = np.asarray(w, dtype=np.float64)
    rows, s, z = _rows(w, p, q)
    qmin, qmax = q.bounds
    out, dstep, inside = kernels.fake_quant_forward(
        np.ascontiguousarray(rows), np.ascontiguousarray(s), np.ascontiguousarray(z),
        float(qmin), float(qmax),
    )
    return out.reshape(w.shape), dstep.reshape(w.shape), inside.reshape(w.shape)


def lsq_grad_scale(numel: int, bits: int) -> float:
    """Step-gradient scale 1/sqrt(N * qmax); N counts elements per step entry."""
    return 1.0 / np.sqrt(numel * clip_bounds(bits)[1])


def reduce_param_grads(q: QuantSpec, p: QuantParams, upstream, dstep, inside, grad_scale=None):
    """Reduce per-element gradient pieces to step and zero-point gradients."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if q.per_channel:
        c = upstream.shape[0]
        g_rows = upstream.reshape(c, -1)
        gs = np.einsum("ij,ij->i", g_rows, dstep.reshape(c, -1))
        outside = np.einsum("ij,ij->i", g_rows, (~inside).reshape(c, -1).astype(np.float64))
        numel = g_rows.shape[1]
    else:
        gs = np.array(np.vdot(upstream.ravel(), dstep.ravel()))
        outside = np.array(upstream[~inside].sum())
        numel = upstream.size
    if grad_scale is None:
        grad_scale = lsq_grad_scale(numel, q.bits)
    gs = gs * grad_scale
    if q.symmetric:
        gz = np.zeros_like(p.zero_point)
    else:
        gz = -p.step * outside
    return gs, gz


def quantizer_gradients(w, p: QuantParams, q: QuantSpec, upstream, grad_scale=None):
    """Straight-through / learned-step-size gradients of ``fake_quantize``.

    ``grad_scale=None`` applies the 1/sqrt(N * qmax) step-gradient scale;
    pass ``1.0`` for the raw derivative.
    """
    w = np.asarray(w, dtype=np.float64)
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), w.shape)
    _, dstep, inside = fake_quantize_with_grads(w, p, q)
    grad_w = np.where(inside, upstream, 0.0)
    grad_s, grad_z = reduce_param_grads(q, p, upstream, dstep, inside, grad_scale)
    return grad_w, grad_s, grad_z


def init_params(w, q: QuantSpec) -> QuantParams:
    """Data-driven initial parameters.

    step = 2 * mean|w| / sqrt(qmax) (per channel or over the tensor); the
    asymmetric zero-point maps the minimum onto qmin.
    """
    w = np.asarray(w, dtype=np.float64)
    qmin, qmax = q.bounds
    if q.per_channel:
        rows = w.reshape(w.shape[0], -1)
    else:
        rows = w.reshape(1, -1)
    mean_abs = np.abs(rows).mean(axis=1)
    step = 2.0 * mean_abs / np.sqrt(qmax)
    step = np.where(step > 0, step, 1e-8)
    if q.symmetric:
        zero = np.zeros_like(step)
    else:
        zero = np.clip(qmin - np.rint(rows.min(axis=1) / step), qmin, qmax)
    if not q.per_channel:
        step, zero = step[0], zero[0]
    return QuantParams(step, zero)


def heuristic_per_tensor(per_channel_steps, mode: str = "max") -> float:
    steps = np.asarray(per_channel_steps, dtype=np.float64).ravel()
    if steps.size == 0:
        raise InputError("per-channel step vector is empty")
    if np.any(~(steps > 0)):
        raise InputError("per-channel steps must be positive")
    try:
        reduce = {"min": np.min, "mean": np.mean, "max": np.max}[mode]
    except KeyError:
        raise InputError(f"unknown heuristic mode {mode!r}") from None
    return float(reduce(steps))


def integer_product(wc: IntCodeTensor, xc: IntCodeTensor, pw: QuantParams, px: QuantParams) -> np.ndarray:
    """Matrix product computed from integer codes.

    ``o_ij = s_w s_x sum_c (w_ic x_cj - z_w x_cj - z_x w_ic + z_w z_x)``.
    Per-channel weight parameters are applied per output row.
    """
    w = np.asarray(wc.codes, dtype=np.int64)
    x = np.asarray(xc.codes, dtype=np.int64)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply codes of shape {w.shape} and {x.shape}")
    if px.step.ndim != 0:
        raise ShapeError("activation parameters must be per-tensor")
    zw = pw.int_zero_point().astype(np.int64)
    zx = int(px.int_zero_point())
    sw = pw.step
    if sw.ndim == 1:
        if sw.shape[0] != w.shape[0]:
            raise ShapeError("per-channel weight parameters do not match rows")
        zw = zw[:, None]
        sw = sw[:, None]
    n_inner = w.shape[1]
    acc = (
        w @ x
        - zw * x.sum(axis=0, keepdims=True)
        - zx * w.sum(axis=1, keepdims=True)
        + n_inner * zw * zx
    )
    return sw * px.step * acc.astype(np.float64)
