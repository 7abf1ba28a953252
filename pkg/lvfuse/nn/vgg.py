"""VGG-style volume regressor: conv blocks with optional BN, three FC layers, dropout and a ReLU FC-1 head."""

from __future__ import annotations

import logging
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from nn.layers import (
    BatchNormSpec,
    ConvSpec,
    DenseSpec,
    DropoutSpec,
    FlattenSpec,
    LayerSpec,
    MaxPoolSpec,
    Network,
    NetworkSpec,
    ReLUSpec,
)

log = logging.getLogger(__name__)

BLOCK_CHANNELS = (64, 128, 256, 512, 512)
FC_WIDTHS = (4096, 4096, 1000)

# convolutions per block, keyed by total weight-layer count
BLOCK_DEPTHS: dict[int, tuple[int, ...]] = {
    14: (2, 2, 2, 2, 2),
    17: (2, 2, 3, 3, 3),
    20: (2, 2, 4, 4, 4),
}


class VGGConfig(BaseModel):
    input_channels: int = Field(default=3, ge=1, le=16)
    first_kernel_size: int = Field(default=19, ge=1, le=31)
    channel_scale: float = Field(default=1.0, gt=0.0, le=1.0)
    input_hw: int = Field(default=224, ge=32, le=512)
    depth: Literal[14, 17, 20] = 20
    batch_norm: bool = True
    dropout: float = Field(default=0.25, ge=0.0, lt=1.0)
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("first_kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("first_kernel_size must be odd")
        return v

    @model_validator(mode="after")
    def _divisible(self) -> VGGConfig:
        if self.input_hw % 32:
            raise ValueError(f"input_hw must be divisible by 32, got {self.input_hw}")
        return self


def scaled_width(width: int, scale: float) -> int:
    return max(1, int(width * scale + 0.5))


def vgg_spec(config: VGGConfig) -> NetworkSpec:
    layers: list[LayerSpec] = []
    in_ch = config.input_channels
    first = True
    for width, count in zip(BLOCK_CHANNELS, BLOCK_DEPTHS[config.depth], strict=True):
        out_ch = scaled_width(width, config.channel_scale)
        for _ in range(count):
            kernel = config.first_kernel_size if first else 3
            first = False
            layers.append(ConvSpec(in_channels=in_ch, out_channels=out_ch, kernel_size=kernel))
            if config.batch_norm:
                layers.append(BatchNormSpec(channels=out_ch))
            layers.append(ReLUSpec())
            in_ch = out_ch
        layers.append(MaxPoolSpec())
    layers.append(FlattenSpec())
    side = config.input_hw // 2 ** len(BLOCK_CHANNELS)
    features = in_ch * side * side
    for width in FC_WIDTHS:
        out = scaled_width(width, config.channel_scale)
        layers += [DenseSpec(in_features=features, out_features=out), ReLUSpec()]
        features = out
    layers += [DropoutSpec(rate=config.dropout), DenseSpec(in_features=features, out_features=1), ReLUSpec()]
    return NetworkSpec(
        input_shape=(config.input_channels, config.input_hw, config.input_hw),
        layers=layers,
        dtype=config.dtype,
    )


def build_vgg(config: VGGConfig | None = None, seed: int = 0) -> Network:
    cfg = config or VGGConfig()
    net = Network(vgg_spec(cfg), seed=seed)
    log.debug(
        "vgg: built depth=%d bn=%s kernel=%d scale=%.4f input=%dx%dx%d",
        cfg.depth,
        cfg.batch_norm,
        cfg.first_kernel_size,
        cfg.channel_scale,
        cfg.input_channels,
        cfg.input_hw,
        cfg.input_hw,
    )
    return net


def build_vgg20bn(config: VGGConfig | None = None, seed: int = 0) -> Network:
    cfg = (config or VGGConfig()).model_copy(update={"depth": 20, "batch_norm": True})
    return build_vgg(cfg, seed)


def desk_config(input_channels: int = 3, **overrides: object) -> VGGConfig:
    """Small network for CPU runs: 1/16 channel widths on 64x64 inputs."""
    values: dict[str, object] = {"input_channels": input_channels, "channel_scale": 1 / 16, "input_hw": 64}
    values.update(overrides)
    return VGGConfig.model_validate(values)
