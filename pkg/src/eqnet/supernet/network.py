"""Elastic layers and the weight-sharing supernet."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from ..errors import BuildError, ContractError
from ..quantizer import QuantParams, QuantSpec, clip_bounds, heuristic_per_tensor, init_params
from .space import ElasticSpace, LayerConfig, SubnetSpec

PER_TENSOR_MODES = ("learned", "min", "mean", "max")


@dataclass
class ForwardContext:
    """Per-call state threaded through the modules.

    ``mode`` is ``train`` (batch statistics, running averages updated),
    ``eval`` (running or supplied statistics) or ``calibrate`` (batch
    statistics, recorded into ``collected``).
    """

    mode: str = "train"
    stats: list | None = None
    collected: list = field(default_factory=list)
    bn_index: int = 0
    quant_index: int = 0
    capture: list | None = None


class ElasticLayer:
    """Linear or conv layer with one shared weight tensor and a table of
    quantization parameters per reachable spec."""

    def __init__(self, kind, weight, bias, stride=1, padding=0, quantized=True, name=""):
        self.kind = kind
        self.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")
        self.stride = stride
        self.padding = padding
        self.quantized = quantized
        self.name = name
        self.weight_qparams: dict[QuantSpec, tuple[Tensor, Tensor]] = {}
        self.act_qparams: dict[QuantSpec, tuple[Tensor, Tensor]] = {}
        self.per_tensor_mode = "learned"

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def n_params(self):
        return self.weight.size

    @staticmethod
    def _param_pair(p: QuantParams, spec: QuantSpec, name: str):
        step = Tensor(p.step, requires_grad=True, name=f"{name}.step")
        zero = Tensor(p.zero_point, requires_grad=not spec.symmetric, name=f"{name}.zero")
        return step, zero

    def populate(self, space: ElasticSpace, act_sample=None):
        """Create one independent (step, zero-point) pair per reachable spec."""
        if not self.quantized:
            return
        for spec in space.weight_specs():
            self.weight_qparams[spec] = self._param_pair(
                init_params(self.weight.data, spec), spec, f"{self.name}.w[{spec}]"
            )
        if act_sample is None:
            # nominal unit-normal activations until data-driven init runs
            act_sample = np.array([-2.0, -0.5, 0.0, 0.5, 2.0]) * np.sqrt(2 / np.pi)
        for spec in space.act_specs():
            self.act_qparams[spec] = self._param_pair(
                init_params(act_sample, spec), spec, f"{self.name}.a[{spec}]"
            )

    def init_act_params(self, x: np.ndarray):
        for spec, (step, zero) in self.act_qparams.items():
            p = init_params(x, spec)
            step.data = p.step.copy()
            zero.data = p.zero_point.copy()

    def weight_params_for(self, spec: QuantSpec):
        try:
            step, zero = self.weight_qparams[spec]
        except KeyError:
            from ..errors import LookupSpecError

            raise LookupSpecError(f"{self.name}: no weight parameters for {spec}") from None
        if spec.per_channel or self.per_tensor_mode == "learned":
            return step, zero
        # per-tensor step derived from the per-channel entry of the same bits/symmetry
        pc = QuantSpec(spec.bits, spec.symmetry, "per_channel")
        if pc not in self.weight_qparams:
            raise ContractError(f"heuristic per-tensor mode needs per-channel entry {pc}")
        s = heuristic_per_tensor(self.weight_qparams[pc][0].data, self.per_tensor_mode)
        if spec.symmetric:
            z = 0.0
        else:
            qmin, qmax = clip_bounds(spec.bits)
            z = float(np.clip(qmin - np.rint(self.weight.data.min() / s), qmin, qmax))
        return Tensor(np.asarray(s)), Tensor(np.asarray(z))

    def act_params_for(self, spec: QuantSpec):
        try:
            return self.act_qparams[spec]
        except KeyError:
            from ..errors import LookupSpecError

            raise LookupSpecError(f"{self.name}: no activation parameters for {spec}") from None

    def forward(self, x: Tensor, cfg: LayerConfig | None, ctx: ForwardContext):
        w = self.weight
        if self.quantized:
            if ctx.capture is not None:
                ctx.capture.append(x.data)
            if cfg is not None:
                astep, azero = self.act_params_for(cfg.act)
                x = dc.fake_quant(x, astep, azero, cfg.act)
                wstep, wzero = self.weight_params_for(cfg.weight)
                w = dc.fake_quant(w, wstep, wzero, cfg.weight)
            ctx.quant_index += 1
        if self.kind == "linear":
            return dc.linear(x, w, self.bias)
        return dc.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self):
        yield self.weight
        yield self.bias
        for table in (self.weight_qparams, self.act_qparams):
            for spec in sorted(table):
                step, zero = table[spec]
                yield step
                if zero.requires_grad:
                    yield zero

    def qparam_tensors(self):
        for _, spec, pair in self.tagged_qparams():
            yield spec, pair

    def tagged_qparams(self):
        """Yield ``("w"|"a", spec, (step, zero))``; the same spec can key both tables."""
        for kind, table in (("w", self.weight_qparams), ("a", self.act_qparams)):
            for spec in sorted(table):
                yield kind, spec, table[spec]


class BatchNorm:
    def __init__(self, channels, momentum=0.1, eps=1e-5, name=""):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def forward(self, x, ctx: ForwardContext):
        idx = ctx.bn_index
        ctx.bn_index += 1
        if ctx.mode == "eval":
            if ctx.stats is not None:
                mean, var = ctx.stats[idx]
            else:
                mean, var = self.running_mean, self.running_var
            y, _, _ = dc.batchnorm(x, self.gamma, self.beta, mean, var, self.eps)
            return y
        y, mu, v = dc.batchnorm(x, self.gamma, self.beta, eps=self.eps)
        if ctx.mode == "train":
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * v
        else:
            ctx.collected.append((idx, mu, v))
        return y

    def parameters(self):
        yield self.gamma
        yield self.beta


class Activation:
    def __init__(self, kind):
        if kind not in ("relu", "swish"):
            raise BuildError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x, ctx):
        return dc.relu(x) if self.kind == "relu" else dc.swish(x)

    def parameters(self):
        return iter(())


class Reshape:
    def __init__(self, kind):
        self.kind = kind

    def forward(self, x, ctx):
        return dc.flatten(x) if self.kind == "flatten" else dc.global_avg_pool(x)

    def parameters(self):
        return iter(())


class ResBlock:
    """conv-bn-act-conv-bn plus identity or 1x1-conv shortcut, then act."""

    def __init__(self, conv1, bn1, conv2, bn2, shortcut=None, shortcut_bn=None, act="relu"):
        self.conv1, self.bn1, self.conv2, self.bn2 = conv1, bn1, conv2, bn2
        self.shortcut, self.shortcut_bn = shortcut, shortcut_bn
        self.act = Activation(act)

    def elastic_layers(self):
        out = [self.conv1, self.conv2]
        if self.shortcut is not None:
            out.append(self.shortcut)
        return out

    def batchnorms(self):
        out = [self.bn1, self.bn2]
        if self.shortcut_bn is not None:
            out.append(self.shortcut_bn)
        return out

    def forward(self, x, ctx, cfgs):
        h = self.conv1.forward(x, cfgs[0], ctx)
        h = self.bn1.forward(h, ctx)
        h = self.act.forward(h, ctx)
        h = self.conv2.forward(h, cfgs[1], ctx)
        h = self.bn2.forward(h, ctx)
        if self.shortcut is not None:
            s = self.shortcut.forward(x, cfgs[2], ctx)
            s = self.shortcut_bn.forward(s, ctx)
        else:
            s = x
        return self.act.forward(h + s, ctx)

    def parameters(self):
        for m in self.elastic_layers() + self.batchnorms():
            yield from m.parameters()


ARCHITECTURES = {
    "toy_mlp": {
        "input_shape": (64,),
        "layers": [
            "linear:64:64", "bn", "relu",
            "linear:64:64", "bn", "relu",
            "linear:64:32", "bn", "relu",
            "linear:32:10",
        ],
    },
    "toy_resnet": {
        "input_shape": (1, 8, 8),
        "layers": [
            "conv:1:8:3:1:1", "bn", "relu",
            "resblock:8:8:1",
            "resblock:8:16:2",
            "gap",
            "linear:16:10",
        ],
    },
}


def _ints(parts, name, n_min, n_max):
    if not n_min <= len(parts) <= n_max:
        raise BuildError(f"layer {name!r} expects {n_min}-{n_max} integer arguments")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise BuildError(f"layer {name!r} has non-integer arguments") from None


class Supernet:
    """Weight-sharing elastic quantization network.

    ``layers`` is a list of textual layer descriptions, e.g.
    ``linear:64:32``, ``conv:3:16:3:1:1`` (cin, cout, kernel, stride, pad),
    ``bn``, ``relu``, ``swish``, ``flatten``, ``gap``, ``resblock:8:16:2``.
    """

    def __init__(self, layers, input_shape, space: ElasticSpace, rng=None,
                 quantize_first_last=True, per_tensor_mode="learned"):
        if per_tensor_mode not in PER_TENSOR_MODES:
            raise BuildError(f"per_tensor_mode must be one of {PER_TENSOR_MODES}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.description = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.space = space
        self.quantize_first_last = quantize_first_last
        self.per_tensor_mode = per_tensor_mode
        self.modules = []
        self.elastic: list[ElasticLayer] = []
        self.batchnorms: list[BatchNorm] = []
        self._build(rng)
        if not self.elastic:
            raise BuildError("architecture has no quantizable layers")
        if not quantize_first_last and len(self.elastic) > 2:
            self.elastic[0].quantized = False
            self.elastic[-1].quantized = False
        for layer in self.elastic:
            layer.per_tensor_mode = per_tensor_mode
            layer.populate(space)
        self.quantized_layers = [l for l in self.elastic if l.quantized]

    # -- construction ----------------------------------------------------
    def _elastic(self, kind, cin, cout, k, stride, pad, rng):
        i = len(self.elastic)
        if kind == "linear":
            w = rng.normal(0.0, np.sqrt(2.0 / cin), size=(cout, cin))
        else:
            fan_in = cin * k * k
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
        layer = ElasticLayer(kind, w, np.zeros(cout), stride, pad, name=f"layer{i}")
        self.elastic.append(layer)
        return layer

    def _bn(self, channels):
        bn = BatchNorm(channels, name=f"bn{len(self.batchnorms)}")
        self.batchnorms.append(bn)
        return bn

    def _build(self, rng):
        channels = self.input_shape[0]
        for desc in self.description:
            head, *args = desc.strip().split(":")
            head = head.lower()
            if head == "linear":
                cin, cout = _ints(args, desc, 2, 2)
                if cin != channels:
                    raise BuildError(f"{desc}: expected {channels} input features")
                self.modules.append(self._elastic("linear", cin, cout, 1, 1, 0, rng))
                channels = cout
            elif head == "conv":
                vals = _ints(args, desc, 3, 5)
                cin, cout, k = vals[:3]
                stride = vals[3] if len(vals) > 3 else 1
                pad = vals[4] if len(vals) > 4 else k // 2
                if cin != channels:
                    raise BuildError(f"{desc}: expected {channels} input channels")
                self.modules.append(self._elastic("conv", cin, cout, k, stride, pad, rng))
                channels = cout
            elif head == "bn":
                self.modules.append(self._bn(channels))
            elif head in ("relu", "swish"):
                self.modules.append(Activation(head))
            elif head in ("flatten", "gap"):
                self.modules.append(Reshape(head))
            elif head == "resblock":
                vals = _ints(args, desc, 2, 3)
                cin, cout = vals[:2]
                stride = vals[2] if len(vals) > 2 else 1
                if cin != channels:
                    raise BuildError(f"{desc}: expected {channels} input channels")
                c1 = self._elastic("conv", cin, cout, 3, stride, 1, rng)
                b1 = self._bn(cout)
                c2 = self._elastic("conv", cout, cout, 3, 1, 1, rng)
                b2 = self._bn(cout)
                sc = sb = None
                if stride != 1 or cin != cout:
                    sc = self._elastic("conv", cin, cout, 1, stride, 0, rng)
                    sb = self._bn(cout)
                self.modules.append(ResBlock(c1, b1, c2, b2, sc, sb))
                channels = cout
            else:
                raise BuildError(f"unsupported layer kind {head!r}")

    # -- structure -----------------------------------------------------------
    @property
    def n_layers(self) -> int:
        """Number of quantized layers (the length of a SubnetSpec)."""
        return len(self.quantized_layers)

    def parameters(self):
        seen = set()
        for m in self.modules:
            for p in m.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    yield p

    def weight_tensors(self):
        return [l.weight for l in self.quantized_layers]

    def arch_hash(self) -> str:
        blob = json.dumps(
            {
                "layers": self.description,
                "input_shape": list(self.input_shape),
                "space": self.space.describe(),
                "quantize_first_last": self.quantize_first_last,
                "per_tensor_mode": self.per_tensor_mode,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- forward ---------------------------------------------------------------
    def _cfg_iter(self, spec):
        if spec is None:
            return None
        spec.check(self.space, self.n_layers)
        return iter(spec.layers)

    def forward(self, x, spec: SubnetSpec | None = None, ctx: ForwardContext | None = None) -> Tensor:
        """Run the subnet ``spec`` (``None`` runs the float network)."""
        ctx = ForwardContext() if ctx is None else ctx
        cfgs = self._cfg_iter(spec)
        h = x if isinstance(x, Tensor) else Tensor(x)
        for m in self.modules:
            if isinstance(m, ElasticLayer):
                cfg = next(cfgs) if (cfgs is not None and m.quantized) else None
                h = m.forward(h, cfg, ctx)
            elif isinstance(m, ResBlock):
                layer_cfgs = []
                for l in m.elastic_layers():
                    layer_cfgs.append(next(cfgs) if (cfgs is not None and l.quantized) else None)
                h = m.forward(h, ctx, layer_cfgs)
            else:
                h = m.forward(h, ctx)
        return h

    def init_activation_params(self, x):
        """Data-driven init of every activation (step, zero-point) pair."""
        ctx = ForwardContext(mode="calibrate", capture=[])
        with dc.no_grad():
            self.forward(x, None, ctx)
        for layer, xin in zip(self.quantized_layers, ctx.capture):
            layer.init_act_params(xin)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(weight count, input activation count per sample) per quantized layer."""
        ctx = ForwardContext(mode="eval", capture=[])
        with dc.no_grad():
            self.forward(np.zeros((1,) + self.input_shape), None, ctx)
        return [(l.n_params, int(a.size)) for l, a in zip(self.quantized_layers, ctx.capture)]

    # -- state -------------------------------------------------------------------
    def bn_stats(self):
        return [(bn.running_mean.copy(), bn.running_var.copy()) for bn in self.batchnorms]

    def set_bn_stats(self, stats):
        for bn, (m, v) in zip(self.batchnorms, stats):
            bn.running_mean = np.array(m, dtype=np.float64)
            bn.running_var = np.array(v, dtype=np.float64)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array map of everything needed to reproduce the net."""
        out = {}
        for layer in self.elastic:
            out[f"{layer.name}.weight"] = layer.weight.data
            out[f"{layer.name}.bias"] = layer.bias.data
            for kind, spec, (step, zero) in layer.tagged_qparams():
                out[f"{layer.name}.{kind}[{spec}].step"] = step.data
                out[f"{layer.name}.{kind}[{spec}].zero"] = zero.data
        for bn in self.batchnorms:
            out[f"{bn.name}.gamma"] = bn.gamma.data
            out[f"{bn.name}.beta"] = bn.beta.data
            out[f"{bn.name}.running_mean"] = bn.running_mean
            out[f"{bn.name}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        current = self.state_arrays()
        missing = set(current) - set(arrays)
        extra = set(arrays) - set(current)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for layer in self.elastic:
            layer.weight.data = np.array(arrays[f"{layer.name}.weight"])
            layer.bias.data = np.array(arrays[f"{layer.name}.bias"])
            for kind, spec, (step, zero) in layer.tagged_qparams():
                step.data = np.array(arrays[f"{layer.name}.{kind}[{spec}].step"])
                zero.data = np.array(arrays[f"{layer.name}.{kind}[{spec}].zero"])
        for bn in self.batchnorms:
            bn.gamma.data = np.array(arrays[f"{bn.name}.gamma"])
            bn.beta.data = np.array(arrays[f"{bn.name}.beta"])
            bn.running_mean = np.array(arrays[f"{bn.name}.running_mean"])
            bn.running_var = np.array(arrays[f"{bn.name}.running_var"])

    def project_qparams(self):
        """Keep steps positive and zero-points inside the code range."""
        for layer in self.quantized_layers:
            for spec, (step, zero) in layer.qparam_tensors():
                step.data = np.maximum(step.data, 1e-8)
                if not spec.symmetric:
                    qmin, qmax = spec.bounds
                    zero.data = np.clip(zero.data, qmin, qmax)


def build_supernet(arch, space: ElasticSpace, rng=None, quantize_first_last=True,
                   per_tensor_mode="learned", input_shape=None) -> Supernet:
    """Build from a registered architecture name or an explicit layer list."""
    if isinstance(arch, str):
        if arch not in ARCHITECTURES:
            raise BuildError(f"unknown architecture {arch!r}")
        desc = ARCHITECTURES[arch]
        layers = desc["layers"]
        input_shape = desc["input_shape"] if input_shape is None else input_shape
    else:
        layers = list(arch)
        if input_shape is None:
            raise BuildError("explicit layer lists need an input_shape")
    return Supernet(layers, input_shape, space, rng, quantize_first_last, per_tensor_mode)


def forward_subnet(net: Supernet, spec: SubnetSpec, x, mode="train", stats=None) -> Tensor:
    return net.forward(x, spec, ForwardContext(mode=mode, stats=stats))
