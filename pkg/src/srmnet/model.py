"""The selective-residual M-Net: blocks, assembly, loss, initialization.

Structure for ``scales`` S and ``base_channels`` C0:

  gatepost   g_i = shared 3x3 conv of the input bilinearly downsampled 2^i
  encoder    e_0 = SRB(g_0); e_i = SRB(concat(down(e_{i-1}), g_i))
             with down = pixel_unshuffle + 1x1 conv (channel-preserving),
             so scale i carries (i+1) * C0 channels
  decoder    f_{S-1} = e_{S-1}; f_i = SRB(SKFF([up(f_{i+1}), e_i]))
             with up = 1x1 conv + pixel_shuffle
  fusion     SKFF over {f_0, upsampled 1x1-projected f_i} -> 3x3 tail conv
  output     input + tail (global residual), so the all-zero-parameter
             model is exactly the identity map
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import ops
from .errors import BranchCountMismatch, ConfigInvalid, IndivisibleSize, ShapeMismatch
from .graph import GraphNode, Shape4
from .tensor import Tensor, no_grad, sqrt


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 96
    scales: int = 4
    blocks_per_srb: int = 3
    skff_reduction: int = 8
    epsilon: float = 1e-3
    global_residual: bool = True

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigInvalid(f"base_channels must be positive, got {self.base_channels}")
        if not 2 <= self.scales <= 4:
            raise ConfigInvalid(f"scales must be in 2..4, got {self.scales}")
        if self.blocks_per_srb < 1:
            raise ConfigInvalid(f"blocks_per_srb must be positive, got {self.blocks_per_srb}")
        if self.skff_reduction < 1:
            raise ConfigInvalid(f"skff_reduction must be positive, got {self.skff_reduction}")
        if not self.epsilon > 0:
            raise ConfigInvalid(f"epsilon must be positive, got {self.epsilon}")

    @property
    def divisor(self) -> int:
        return 2 ** (self.scales - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def bottleneck_width(channels: int, reduction: int) -> int:
    return max(channels // reduction, 4)


class Conv2d:
    """Same-padding conv with owned weight/bias tensors."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel: int, dtype=np.float32):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.weight = Tensor.zeros((out_channels, in_channels, kernel, kernel),
                                   requires_grad=True, dtype=dtype)
        self.bias = Tensor.zeros((1, out_channels, 1, 1), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)

    def named_params(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def init(self, rng: np.random.Generator) -> None:
        fan_in = self.in_channels * self.kernel * self.kernel
        bound = (1.0 / fan_in) ** 0.5
        self.weight.data = rng.uniform(-bound, bound, self.weight.shape).astype(
            self.weight.data.dtype)
        self.bias.data = np.zeros_like(self.bias.data)

    def profile(self, in_shape: Shape4, nodes: list[GraphNode],
                count_params: bool = True) -> Shape4:
        b, _, h, w = in_shape
        macs = b * self.out_channels * self.in_channels * self.kernel ** 2 * h * w
        params = (self.weight.data.size + self.bias.data.size) if count_params else 0
        nodes.append(GraphNode(self.name, f"conv{self.kernel}x{self.kernel}",
                               (b, self.out_channels, h, w), macs=macs,
                               extra_ops=b * self.out_channels * h * w, params=params))
        return (b, self.out_channels, h, w)


class Skff:
    """Selective feature fusion: softmax channel weights over L branches.

    Channel statistics of the branch sum pass through a bottleneck
    transform; per-branch transforms produce logits whose softmax weights
    the branches.  Branch transforms are initialized identically so the
    initial weights are exactly 1/L.
    """

    def __init__(self, name: str, channels: int, branches: int,
                 reduction: int, dtype=np.float32):
        if branches < 2:
            raise BranchCountMismatch(f"SKFF needs >= 2 branches, got {branches}")
        self.name = name
        self.channels = channels
        self.branches = branches
        m = bottleneck_width(channels, reduction)
        self.reduce = Conv2d(f"{name}.reduce", channels, m, 1, dtype=dtype)
        self.transforms = [Conv2d(f"{name}.branch{i}", m, channels, 1, dtype=dtype)
                           for i in range(branches)]

    def branch_weights(self, inputs: list[Tensor]) -> list[Tensor]:
        """Per-branch (B,C,1,1) weights; positive, summing to one per channel."""
        if len(inputs) != self.branches:
            raise BranchCountMismatch(
                f"{self.name}: expected {self.branches} branches, got {len(inputs)}")
        shape = inputs[0].shape
        if shape[1] != self.channels:
            raise ShapeMismatch(f"{self.name}: expected {self.channels} channels, got {shape[1]}")
        for t in inputs[1:]:
            if t.shape != shape:
                raise ShapeMismatch(f"{self.name}: branch shapes differ: {shape} vs {t.shape}")
        total = inputs[0]
        for t in inputs[1:]:
            total = total + t
        z = ops.leaky_relu(self.reduce(ops.global_avg_pool(total)))
        return ops.branch_softmax([tr(z) for tr in self.transforms])

    def __call__(self, inputs: list[Tensor]) -> Tensor:
        weights = self.branch_weights(inputs)
        out = inputs[0] * weights[0]
        for t, v in zip(inputs[1:], weights[1:]):
            out = out + t * v
        return out

    def named_params(self):
        yield from self.reduce.named_params()
        for tr in self.transforms:
            yield from tr.named_params()

    def init(self, rng: np.random.Generator) -> None:
        self.reduce.init(rng)
        # one draw shared across branches -> symmetric logits -> weights 1/L
        first = self.transforms[0]
        first.init(rng)
        for tr in self.transforms[1:]:
            tr.weight.data = first.weight.data.copy()
            tr.bias.data = np.zeros_like(tr.bias.data)

    def profile(self, in_shape: Shape4, nodes: list[GraphNode]) -> Shape4:
        b, c, h, w = in_shape
        ln = self.branches
        area = b * c * h * w
        nodes.append(GraphNode(f"{self.name}.sum", "add", in_shape,
                               extra_ops=(ln - 1) * area))
        nodes.append(GraphNode(f"{self.name}.gap", "gap", (b, c, 1, 1), extra_ops=area))
        s = self.reduce.profile((b, c, 1, 1), nodes)
        nodes.append(GraphNode(f"{self.name}.act", "activation", s, extra_ops=b * s[1]))
        for tr in self.transforms:
            tr.profile(s, nodes)
        nodes.append(GraphNode(f"{self.name}.softmax", "softmax", (b, c, 1, 1),
                               extra_ops=ln * b * c))
        nodes.append(GraphNode(f"{self.name}.fuse", "weighted_sum", in_shape,
                               extra_ops=(2 * ln - 1) * area))
        return in_shape


class Srb:
    """Stack of residual blocks fused by SKFF, closed by a 3x3 conv and
    a 1x1-conv long skip."""

    def __init__(self, name: str, channels: int, num_blocks: int,
                 reduction: int, dtype=np.float32):
        self.name = name
        self.channels = channels
        self.blocks = []
        for k in range(num_blocks):
            self.blocks.append((
                Conv2d(f"{name}.block{k}.conv1", channels, channels, 3, dtype=dtype),
                Conv2d(f"{name}.block{k}.conv2", channels, channels, 3, dtype=dtype),
                Skff(f"{name}.block{k}.skff", channels, 2, reduction, dtype=dtype),
            ))
        self.tail = Conv2d(f"{name}.tail", channels, channels, 3, dtype=dtype)
        self.skip = Conv2d(f"{name}.skip", channels, channels, 1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        h = x
        for conv1, conv2, skff in self.blocks:
            main = conv2(ops.leaky_relu(conv1(h)))
            h = skff([h, main])
        return self.tail(h) + self.skip(x)

    def named_params(self):
        for conv1, conv2, skff in self.blocks:
            yield from conv1.named_params()
            yield from conv2.named_params()
            yield from skff.named_params()
        yield from self.tail.named_params()
        yield from self.skip.named_params()

    def init(self, rng: np.random.Generator) -> None:
        for conv1, conv2, skff in self.blocks:
            conv1.init(rng)
            conv2.init(rng)
            skff.init(rng)
        self.tail.init(rng)
        self.skip.init(rng)

    def profile(self, in_shape: Shape4, nodes: list[GraphNode]) -> Shape4:
        b, c, h, w = in_shape
        for conv1, conv2, skff in self.blocks:
            s = conv1.profile(in_shape, nodes)
            nodes.append(GraphNode(f"{conv1.name}.act", "activation", s,
                                   extra_ops=b * c * h * w))
            conv2.profile(s, nodes)
            skff.profile(in_shape, nodes)
        self.tail.profile(in_shape, nodes)
        self.skip.profile(in_shape, nodes)
        nodes.append(GraphNode(f"{self.name}.add", "add", in_shape,
                               extra_ops=b * c * h * w))
        return in_shape


class SrmNet:
    """Full network; built with all-zero parameters, randomized via init()."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        c0, s, n, r = (config.base_channels, config.scales,
                       config.blocks_per_srb, config.skff_reduction)
        self.gate = Conv2d("gate", 3, c0, 3, dtype=dtype)
        self.encoders = [Srb(f"enc{i}", (i + 1) * c0, n, r, dtype=dtype) for i in range(s)]
        self.downs = [Conv2d(f"down{i}.conv", 4 * (i + 1) * c0, (i + 1) * c0, 1, dtype=dtype)
                      for i in range(s - 1)]
        self.ups = [Conv2d(f"up{i}.conv", (i + 2) * c0, 4 * (i + 1) * c0, 1, dtype=dtype)
                    for i in range(s - 1)]
        self.dec_fuses = [Skff(f"dec{i}.fuse", (i + 1) * c0, 2, r, dtype=dtype)
                          for i in range(s - 1)]
        self.decoders = [Srb(f"dec{i}.srb", (i + 1) * c0, n, r, dtype=dtype)
                         for i in range(s - 1)]
        self.projections = [Conv2d(f"fuse.proj{i}", (i + 1) * c0, c0, 1, dtype=dtype)
                            for i in range(1, s)]
        self.fuse = Skff("fuse.skff", c0, s, r, dtype=dtype)
        self.tail = Conv2d("tail", c0, 3, 3, dtype=dtype)

    # --- parameter registry ---

    def _modules(self):
        yield self.gate
        for i, enc in enumerate(self.encoders):
            yield enc
            if i < len(self.downs):
                yield self.downs[i]
        for i in reversed(range(len(self.decoders))):
            yield self.ups[i]
            yield self.dec_fuses[i]
            yield self.decoders[i]
        yield from self.projections
        yield self.fuse
        yield self.tail

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for m in self._modules():
            out.extend(m.named_params())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def init(self, seed: int) -> "SrmNet":
        rng = np.random.default_rng(seed)
        for m in self._modules():
            m.init(rng)
        return self

    def astype(self, dtype) -> "SrmNet":
        other = SrmNet(self.config, dtype=dtype)
        for (_, src), (_, dst) in zip(self.named_params(), other.named_params()):
            dst.data = src.data.astype(dtype)
        return other

    # --- forward ---

    def _check_input(self, y: Tensor) -> None:
        b, c, h, w = y.shape
        if c != 3:
            raise ShapeMismatch(f"expected 3 input channels, got {c}")
        d = self.config.divisor
        if h % d or w % d:
            raise IndivisibleSize(f"input {h}x{w} must be divisible by {d}")

    def forward(self, y: Tensor) -> Tensor:
        self._check_input(y)
        s = self.config.scales

        gates = []
        for i in range(s):
            src = y if i == 0 else ops.bilinear_resize(y, 2 ** i, "down")
            gates.append(self.gate(src))

        encs = [self.encoders[0](gates[0])]
        for i in range(1, s):
            d = self.downs[i - 1](ops.pixel_unshuffle(encs[-1]))
            encs.append(self.encoders[i](ops.concat_channels([d, gates[i]])))

        feats = {s - 1: encs[-1]}
        for i in range(s - 2, -1, -1):
            up = ops.pixel_shuffle(self.ups[i](feats[i + 1]))
            feats[i] = self.decoders[i](self.dec_fuses[i]([up, encs[i]]))

        branches = [feats[0]]
        for i in range(1, s):
            branches.append(ops.bilinear_resize(self.projections[i - 1](feats[i]), 2 ** i, "up"))
        out = self.tail(self.fuse(branches))
        return y + out if self.config.global_residual else out

    __call__ = forward

    # --- cost model (mirrors forward node for node) ---

    def profile(self, in_shape: Shape4, nodes: list[GraphNode]) -> Shape4:
        b, c, h, w = in_shape
        if c != 3:
            raise ShapeMismatch(f"expected 3 input channels, got {c}")
        d = self.config.divisor
        if h % d or w % d:
            raise IndivisibleSize(f"input {h}x{w} must be divisible by {d}")
        s = self.config.scales
        c0 = self.config.base_channels

        gate_shapes = []
        for i in range(s):
            hi, wi = h // 2 ** i, w // 2 ** i
            if i > 0:
                nodes.append(GraphNode(f"gate.down{i}", "bilinear", (b, 3, hi, wi),
                                       extra_ops=8 * b * 3 * hi * wi))
            gate_shapes.append(self.gate.profile((b, 3, hi, wi), nodes, count_params=(i == 0)))

        enc_shapes = [self.encoders[0].profile(gate_shapes[0], nodes)]
        for i in range(1, s):
            pb, pc, ph, pw = enc_shapes[-1]
            un = (pb, 4 * pc, ph // 2, pw // 2)
            nodes.append(GraphNode(f"down{i - 1}.unshuffle", "pixel_unshuffle", un))
            ds = self.downs[i - 1].profile(un, nodes)
            cat = (ds[0], ds[1] + c0, ds[2], ds[3])
            nodes.append(GraphNode(f"enc{i}.concat", "concat", cat))
            enc_shapes.append(self.encoders[i].profile(cat, nodes))

        feat_shapes = {s - 1: enc_shapes[-1]}
        for i in range(s - 2, -1, -1):
            us = self.ups[i].profile(feat_shapes[i + 1], nodes)
            sh = (us[0], us[1] // 4, us[2] * 2, us[3] * 2)
            nodes.append(GraphNode(f"up{i}.shuffle", "pixel_shuffle", sh))
            self.dec_fuses[i].profile(sh, nodes)
            feat_shapes[i] = self.decoders[i].profile(sh, nodes)

        for i in range(1, s):
            ps = self.projections[i - 1].profile(feat_shapes[i], nodes)
            up = (ps[0], ps[1], ps[2] * 2 ** i, ps[3] * 2 ** i)
            nodes.append(GraphNode(f"fuse.up{i}", "bilinear", up,
                                   extra_ops=8 * up[0] * up[1] * up[2] * up[3]))
        self.fuse.profile((b, c0, h, w), nodes)
        out = self.tail.profile((b, c0, h, w), nodes)
        if self.config.global_residual:
            nodes.append(GraphNode("residual", "add", out, extra_ops=b * 3 * h * w))
        return out


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> SrmNet:
    """Build the network with deterministic fan-in-scaled uniform weights."""
    return SrmNet(config, dtype=dtype).init(seed)


def charbonnier_loss(pred: Tensor, target: Tensor, epsilon: float = 1e-3,
                     variant: str = "literal") -> Tensor:
    """Charbonnier penalty sqrt(d^2 + eps^2).

    ``literal`` applies the square root to the global sum of squares (one
    eps^2 for the whole batch, so identical inputs give exactly eps);
    ``per_element`` averages elementwise sqrt((d_i)^2 + eps^2).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"loss operands differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    sq = diff * diff
    if variant == "literal":
        return sqrt(sq.sum() + epsilon * epsilon)
    if variant == "per_element":
        return sqrt(sq + epsilon * epsilon).mean()
    raise ConfigInvalid(f"unknown loss variant {variant!r}")


def denoise_array(model: SrmNet, image: np.ndarray) -> np.ndarray:
    """Run inference on a (1,3,H,W) array, reflect-padding H and W to the
    divisibility the scale count requires and cropping back afterwards."""
    _, _, h, w = image.shape
    d = model.config.divisor
    ph, pw = (-h) % d, (-w) % d
    if ph or pw:
        image = np.pad(image, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    with no_grad():
        out = model.forward(Tensor(image.astype(model.dtype, copy=False))).data
    return out[:, :, :h, :w]
