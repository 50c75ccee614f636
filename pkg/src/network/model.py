"""
Joint segmentation + image-level classification network.

A U-Net style encoder/decoder whose second-to-last layer feeds one
classification branch (binary) or one branch per tumor subclass (multiclass).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from src.engine import ops
from src.engine.ops import ConvSpec, RunningStats
from src.engine.tensor import Tensor, no_grad
from src.errors import ModelConfigError, TensorError
from src.network.config import ModelConfig


Mode = Literal["train", "infer"]


@dataclass
class ForwardOutput:
    """Both heads of one forward pass."""
    seg_logits: Tensor
    class_logits: list[Tensor]


@dataclass
class LayerRow:
    """One row of the describe() report."""
    section: str
    name: str
    kind: str
    output_shape: tuple[int, ...]
    params: int


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvLayer:
    """2D convolution; bias only when no batch norm follows."""

    def __init__(self, name: str, spec: ConvSpec, rng: np.random.Generator, dtype, bias: bool):
        self.name = name
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        self.weight = Tensor(_he_uniform(rng, shape, fan_in, dtype), requires_grad=True,
                             name=f"{name}.weight")
        self.bias = (
            Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True, name=f"{name}.bias")
            if bias else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class BatchNormLayer:
    def __init__(self, name: str, channels: int, dtype, eps: float, momentum: float):
        self.name = name
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True, name=f"{name}.beta")
        self.stats = RunningStats.initial(channels, dtype=dtype)
        self.eps, self.momentum = eps, momentum

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, mode, self.stats, self.eps, self.momentum)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


class ConvBlock:
    """conv (no bias) -> batch norm -> ReLU."""

    def __init__(self, name: str, spec: ConvSpec, rng, dtype, config: ModelConfig):
        self.name = name
        self.conv = ConvLayer(f"{name}.conv", spec, rng, dtype, bias=False)
        self.bn = BatchNormLayer(f"{name}.bn", spec.out_channels, dtype,
                                 config.bn_eps, config.bn_momentum)

    def __call__(self, x: Tensor, mode: Mode) -> Tensor:
        return ops.relu(self.bn(self.conv(x), mode))

    def parameters(self) -> list[Tensor]:
        return self.conv.parameters() + self.bn.parameters()


class DenseLayer:
    def __init__(self, name: str, in_width: int, out_width: int, rng, dtype):
        self.name = name
        self.weight = Tensor(_he_uniform(rng, (in_width, out_width), in_width, dtype),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_width, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.fully_connected(x, self.weight, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class ClassificationBranch:
    """Mean-pool -> 3x3 conv block -> 7 FC layers with one skip concatenation."""

    def __init__(self, name: str, config: ModelConfig, in_channels: int, rng, dtype):
        self.name = name
        self.config = config.branch
        branch = config.branch
        self.conv = ConvBlock(
            f"{name}.conv",
            ConvSpec(in_channels=in_channels, out_channels=branch.branch_conv_out,
                     kernel_h=3, kernel_w=3, padding="same"),
            rng, dtype, config,
        )
        fh, fw = config.branch_feature_size()
        self.flat_width = branch.branch_conv_out * fh * fw
        in_widths = branch.fc_input_widths(self.flat_width)
        self.fcs = [
            DenseLayer(f"{name}.fc{i + 1}", in_widths[i], branch.fc_widths[i], rng, dtype)
            for i in range(len(branch.fc_widths))
        ]

    def __call__(self, tap: Tensor, mode: Mode) -> Tensor:
        branch = self.config
        x = ops.mean_pool2d(tap, branch.pool_kernel, branch.pool_stride)
        x = self.conv(x, mode)
        x = ops.reshape(x, (x.shape[0], -1))
        outputs: list[Tensor] = []
        last = len(self.fcs) - 1
        for i, fc in enumerate(self.fcs):
            if i == branch.skip_to:
                x = ops.concat(outputs[branch.skip_to - 1], outputs[branch.skip_from - 1], axis=1)
            x = fc(x)
            if i != last:
                x = ops.relu(x)
            outputs.append(x)
        return x

    def parameters(self) -> list[Tensor]:
        params = self.conv.parameters()
        for fc in self.fcs:
            params += fc.parameters()
        return params


class Model:
    """
    U-Net with image-level classification branch(es).

    Build with build_model(); parameters() gives an ordered name -> Tensor map.
    """

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        pad = config.padding_mode
        widths = config.widths()

        def conv_spec(cin: int, cout: int, k: int) -> ConvSpec:
            return ConvSpec(in_channels=cin, out_channels=cout, kernel_h=k, kernel_w=k, padding=pad)

        self.encoder: list[tuple[ConvBlock, ConvBlock]] = []
        cin = config.input_channels
        for level in range(config.depth):
            w = widths[level]
            self.encoder.append((
                ConvBlock(f"enc{level}.a", conv_spec(cin, w, 3), rng, self.dtype, config),
                ConvBlock(f"enc{level}.b", conv_spec(w, w, 3), rng, self.dtype, config),
            ))
            cin = w

        wb = widths[config.depth]
        self.bottleneck = (
            ConvBlock("bottleneck.a", conv_spec(cin, wb, 3), rng, self.dtype, config),
            ConvBlock("bottleneck.b", conv_spec(wb, wb, 3), rng, self.dtype, config),
        )

        self.decoder: list[tuple[ConvBlock, ConvBlock, ConvBlock]] = []
        cin = wb
        for level in reversed(range(config.depth)):
            w = widths[level]
            self.decoder.append((
                ConvBlock(f"dec{level}.up", conv_spec(cin, w, 2), rng, self.dtype, config),
                ConvBlock(f"dec{level}.a", conv_spec(2 * w, w, 3), rng, self.dtype, config),
                ConvBlock(f"dec{level}.b", conv_spec(w, w, 3), rng, self.dtype, config),
            ))
            cin = w

        self.seg_head = ConvLayer("seg_head", conv_spec(widths[0], config.num_classes, 1),
                                  rng, self.dtype, bias=True)
        self.branches = [
            ClassificationBranch(f"branch{b}", config, widths[0], rng, self.dtype)
            for b in range(config.num_branches)
        ]

    # -- parameters -------------------------------------------------------

    def _blocks(self) -> list[ConvBlock]:
        blocks = [b for pair in self.encoder for b in pair]
        blocks += list(self.bottleneck)
        blocks += [b for triple in self.decoder for b in triple]
        return blocks

    def parameters(self) -> dict[str, Tensor]:
        params: list[Tensor] = []
        for block in self._blocks():
            params += block.parameters()
        params += self.seg_head.parameters()
        for branch in self.branches:
            params += branch.parameters()
        return {p.name: p for p in params}

    def batch_norms(self) -> dict[str, BatchNormLayer]:
        layers = [block.bn for block in self._blocks()]
        layers += [branch.conv.bn for branch in self.branches]
        return {layer.name: layer for layer in layers}

    def running_stats(self) -> dict[str, RunningStats]:
        return {name: layer.stats for name, layer in self.batch_norms().items()}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- forward ----------------------------------------------------------

    def forward(self, images: Tensor, mode: Mode = "train") -> ForwardOutput:
        """
        Run both heads on a batch.

        Args:
            images: [N, C, H, W] batch matching the configured channels and size
            mode: "train" uses batch statistics (and records on the active tape);
                "infer" uses running statistics and records nothing

        Raises:
            TensorError: If the batch dimensions do not match the configuration
        """
        cfg = self.config
        expected = (cfg.input_channels, *cfg.input_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise TensorError(f"expected images of shape [N, {expected}], got {images.shape}")
        if mode == "infer":
            with no_grad():
                return self._forward(images, mode)
        return self._forward(images, mode)

    def _forward(self, x: Tensor, mode: Mode) -> ForwardOutput:
        skips: list[Tensor] = []
        for block_a, block_b in self.encoder:
            x = block_b(block_a(x, mode), mode)
            skips.append(x)
            x = ops.max_pool2d(x, (2, 2), (2, 2))

        x = self.bottleneck[1](self.bottleneck[0](x, mode), mode)

        for (up, block_a, block_b), skip in zip(self.decoder, reversed(skips)):
            x = up(ops.upsample2d(x, 2), mode)
            skip = ops.center_crop2d(skip, x.shape[2], x.shape[3])
            x = ops.concat(skip, x, axis=1)
            x = block_b(block_a(x, mode), mode)

        tap = x
        seg_logits = self.seg_head(tap)
        class_logits = [branch(tap, mode) for branch in self.branches]
        return ForwardOutput(seg_logits=seg_logits, class_logits=class_logits)

    def predict_mask(self, image: np.ndarray | Tensor) -> np.ndarray:
        """
        Per-pixel argmax label map; ties resolve to the lower class index.

        Args:
            image: [C, H, W] or [N, C, H, W]

        Returns:
            Integer label map [H', W'] or [N, H', W']
        """
        data = image.data if isinstance(image, Tensor) else np.asarray(image)
        single = data.ndim == 3
        batch = Tensor(data[None] if single else data, dtype=self.dtype)
        logits = self.forward(batch, mode="infer").seg_logits.data
        labels = logits_to_mask(logits)
        return labels[0] if single else labels

    # -- description ------------------------------------------------------

    def describe(self) -> list[LayerRow]:
        """Layer-by-layer output shapes and parameter counts (no forward pass)."""
        cfg = self.config
        skips, bottleneck, decoder = cfg.level_sizes()
        rows: list[LayerRow] = []

        def block_rows(section: str, block: ConvBlock, size: tuple[int, int]) -> None:
            shape = (block.conv.spec.out_channels, *size)
            rows.append(LayerRow(section, block.conv.name, "conv+bn+relu", shape,
                                 sum(p.size for p in block.parameters())))

        size = tuple(cfg.input_size)
        for level, (a, b) in enumerate(self.encoder):
            a_size = size if cfg.padding_mode == "same" else (size[0] - 2, size[1] - 2)
            block_rows("encoder", a, a_size)
            block_rows("encoder", b, skips[level])
            size = (skips[level][0] // 2, skips[level][1] // 2)
            rows.append(LayerRow("encoder", f"enc{level}.pool", "max_pool 2x2/2",
                                 (b.conv.spec.out_channels, *size), 0))

        a_size = size if cfg.padding_mode == "same" else (size[0] - 2, size[1] - 2)
        block_rows("bottleneck", self.bottleneck[0], a_size)
        block_rows("bottleneck", self.bottleneck[1], bottleneck)

        size = bottleneck
        for (up, a, b), out_size in zip(self.decoder, decoder):
            up_size = (size[0] * 2, size[1] * 2)
            if cfg.padding_mode == "valid":
                up_size = (up_size[0] - 1, up_size[1] - 1)
            block_rows("decoder", up, up_size)
            a_size = up_size if cfg.padding_mode == "same" else (up_size[0] - 2, up_size[1] - 2)
            block_rows("decoder", a, a_size)
            block_rows("decoder", b, out_size)
            size = out_size

        rows.append(LayerRow("head", "seg_head", "conv 1x1", (cfg.num_classes, *size),
                             sum(p.size for p in self.seg_head.parameters())))

        fh, fw = cfg.branch_feature_size()
        for branch in self.branches:
            section = branch.name
            in_ch = branch.conv.conv.spec.in_channels
            k, s = cfg.branch.pool_kernel, cfg.branch.pool_stride
            rows.append(LayerRow(section, f"{branch.name}.pool",
                                 f"mean_pool {k[0]}x{k[1]}/{s[0]}x{s[1]}", (in_ch, fh, fw), 0))
            block_rows(section, branch.conv, (fh, fw))
            for fc in branch.fcs:
                rows.append(LayerRow(section, fc.name, "fully_connected", (fc.weight.shape[1],),
                                     sum(p.size for p in fc.parameters())))
        return rows

    def describe_text(self) -> str:
        rows = self.describe()
        header = f"{'section':<12} {'layer':<22} {'kind':<18} {'output':<18} {'params':>10}"
        lines = [header, "-" * len(header)]
        for r in rows:
            shape = "x".join(str(d) for d in r.output_shape)
            lines.append(f"{r.section:<12} {r.name:<22} {r.kind:<18} {shape:<18} {r.params:>10}")
        lines.append("-" * len(header))
        lines.append(f"{'total':<12} {'':<22} {'':<18} {'':<18} {sum(r.params for r in rows):>10}")
        return "\n".join(lines)


def logits_to_mask(logits: np.ndarray) -> np.ndarray:
    """argmax over the class axis (axis 1); np.argmax keeps the first maximum."""
    return np.argmax(logits, axis=1).astype(np.int64)


def build_model(config: ModelConfig, seed: int) -> Model:
    """
    Build a model with deterministic parameter initialization.

    Raises:
        ModelConfigError: If the configuration cannot be realized
    """
    if not isinstance(config, ModelConfig):
        raise ModelConfigError(f"expected ModelConfig, got {type(config).__name__}")
    return Model(config, seed)


def forward(model: Model, batch_images: Tensor, mode: Mode = "train") -> ForwardOutput:
    return model.forward(batch_images, mode)


def predict_mask(model: Model, image: np.ndarray | Tensor) -> np.ndarray:
    return model.predict_mask(image)


def describe(model: Model) -> str:
    return model.describe_text()
