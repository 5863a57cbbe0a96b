"""Super-resolution network builders with feature taps.

Two residual architectures are provided: a plain residual network
(``edsr``) and a grouped residual-attention network (``rcan``). Both
expose three intermediate feature taps at thirds of the trunk depth so
a distillation loss can match them between a teacher and a student.

Builders are pure functions of (config, seed): weights come from an
explicitly seeded generator, so the same call always yields the same
parameters. State-dict keys are stable, human-readable names
(``body.block07.conv1.weight``) and double as the on-disk checkpoint
key set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

VALID_SCALES = (2, 3, 4)


def default_res_scaling(channels: int) -> float:
    """Residual scaling convention: wide trunks train with 0.1, narrow with 1."""
    return 0.1 if channels >= 256 else 1.0


@dataclass(frozen=True)
class EdsrConfig:
    channels: int
    blocks: int
    scale: int
    res_scaling: float = 1.0

    def validate(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.scale not in VALID_SCALES:
            raise ConfigError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        if not (0.0 <= self.res_scaling <= 1.0):
            raise ConfigError(f"res_scaling must be in [0, 1], got {self.res_scaling}")


@dataclass(frozen=True)
class RcanConfig:
    channels: int
    groups: int
    blocks_per_group: int
    reduction: int
    scale: int
    res_scaling: float = 1.0

    def validate(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.blocks_per_group < 1:
            raise ConfigError(
                f"blocks_per_group must be >= 1, got {self.blocks_per_group}")
        if self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(
                f"reduction must divide channels ({self.channels}), got {self.reduction}")
        if self.scale not in VALID_SCALES:
            raise ConfigError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        if not (0.0 <= self.res_scaling <= 1.0):
            raise ConfigError(f"res_scaling must be in [0, 1], got {self.res_scaling}")


def tap_indices(n_units: int) -> tuple[int, int, int]:
    """1-based trunk positions of the three feature taps: floor(j*n/3)."""
    return tuple(max(1, (j * n_units) // 3) for j in (1, 2, 3))


class _Head(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(3, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(x)


class _Tail(nn.Module):
    """Sub-pixel upsampler plus the final RGB projection.

    Scale 4 is two x2 stages; scales 2 and 3 are a single stage.
    """

    def __init__(self, channels: int, scale: int):
        super().__init__()
        if scale == 4:
            self.upconv1 = nn.Conv2d(channels, channels * 4, 3, padding=1)
            self.upconv2 = nn.Conv2d(channels, channels * 4, 3, padding=1)
            self._factors = (2, 2)
        else:
            self.upconv1 = nn.Conv2d(channels, channels * scale * scale, 3, padding=1)
            self._factors = (scale,)
        self.conv = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, x):
        x = F.pixel_shuffle(self.upconv1(x), self._factors[0])
        if len(self._factors) == 2:
            x = F.pixel_shuffle(self.upconv2(x), self._factors[1])
        return self.conv(x)


class ResBlock(nn.Module):
    def __init__(self, channels: int, res_scaling: float):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.res_scaling = float(res_scaling)

    def forward(self, x):
        r = self.conv2(F.relu(self.conv1(x)))
        return x + r * self.res_scaling


class ChannelAttention(nn.Module):
    """Squeeze (global average pool) -> bottleneck -> sigmoid channel gate."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        self.down = nn.Conv2d(channels, channels // reduction, 1)
        self.up = nn.Conv2d(channels // reduction, channels, 1)

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        s = torch.sigmoid(self.up(F.relu(self.down(s))))
        return x * s


class RCAB(nn.Module):
    def __init__(self, channels: int, reduction: int, res_scaling: float):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.att = ChannelAttention(channels, reduction)
        self.res_scaling = float(res_scaling)

    def forward(self, x):
        r = self.att(self.conv2(F.relu(self.conv1(x))))
        return x + r * self.res_scaling


class ResidualGroup(nn.Module):
    def __init__(self, channels: int, blocks: int, reduction: int, res_scaling: float):
        super().__init__()
        for i in range(1, blocks + 1):
            self.add_module(f"block{i:02d}", RCAB(channels, reduction, res_scaling))
        self.endconv = nn.Conv2d(channels, channels, 3, padding=1)
        self.n_blocks = blocks

    def forward(self, x):
        r = x
        for i in range(1, self.n_blocks + 1):
            r = getattr(self, f"block{i:02d}")(r)
        return x + self.endconv(r)


class _EdsrBody(nn.Module):
    def __init__(self, channels: int, blocks: int, res_scaling: float):
        super().__init__()
        for i in range(1, blocks + 1):
            self.add_module(f"block{i:02d}", ResBlock(channels, res_scaling))
        self.endconv = nn.Conv2d(channels, channels, 3, padding=1)
        self.n_blocks = blocks

    def unit(self, i: int) -> nn.Module:
        return getattr(self, f"block{i:02d}")


class _RcanBody(nn.Module):
    def __init__(self, channels: int, groups: int, blocks_per_group: int,
                 reduction: int, res_scaling: float):
        super().__init__()
        for i in range(1, groups + 1):
            self.add_module(f"group{i:02d}",
                            ResidualGroup(channels, blocks_per_group, reduction,
                                          res_scaling))
        self.endconv = nn.Conv2d(channels, channels, 3, padding=1)
        self.n_blocks = groups

    def unit(self, i: int) -> nn.Module:
        return getattr(self, f"group{i:02d}")


def _check_input(x):
    if not torch.is_tensor(x):
        raise ShapeError(f"model input must be a tensor, got {type(x).__name__}")
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"model input must be [N,3,h,w], got shape {tuple(x.shape)}")


class SRNetwork(nn.Module):
    """Common trunk: head conv, residual body with long skip, sub-pixel tail.

    ``forward_with_taps`` additionally returns the three intermediate
    features at thirds of the trunk. The SR output is computed by the
    same code path either way, so requesting taps cannot perturb it.
    """

    arch = "base"

    def __init__(self, cfg, body: nn.Module):
        super().__init__()
        self.cfg = cfg
        self.scale = cfg.scale
        self.head = _Head(cfg.channels)
        self.body = body
        self.tail = _Tail(cfg.channels, cfg.scale)
        self.tap_positions = tap_indices(body.n_blocks)

    def _run(self, x, want_taps: bool):
        _check_input(x)
        h = self.head(x)
        f = h
        taps = []
        for i in range(1, self.body.n_blocks + 1):
            f = self.body.unit(i)(f)
            if want_taps and i in self.tap_positions:
                for _ in range(self.tap_positions.count(i)):
                    taps.append(f)
        f = self.body.endconv(f) + h
        return self.tail(f), tuple(taps)

    def forward(self, x):
        return self._run(x, want_taps=False)[0]

    def forward_with_taps(self, x):
        return self._run(x, want_taps=True)


class EDSR(SRNetwork):
    arch = "edsr"

    def __init__(self, cfg: EdsrConfig):
        cfg.validate()
        super().__init__(cfg, _EdsrBody(cfg.channels, cfg.blocks, cfg.res_scaling))


class RCAN(SRNetwork):
    arch = "rcan"

    def __init__(self, cfg: RcanConfig):
        cfg.validate()
        super().__init__(cfg, _RcanBody(cfg.channels, cfg.groups,
                                        cfg.blocks_per_group, cfg.reduction,
                                        cfg.res_scaling))


class Regressor(nn.Module):
    """Five pointwise (1x1) convs with a learnable PReLU between each pair.

    Maps a c_in-channel student tap into the teacher's c_out-channel
    feature space without touching spatial structure.
    """

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        if c_in < 1 or c_out < 1:
            raise ConfigError(f"regressor channels must be >= 1, got ({c_in}, {c_out})")
        self.c_in, self.c_out = c_in, c_out
        self.conv1 = nn.Conv2d(c_in, c_out, 1)
        self.act1 = nn.PReLU(num_parameters=1, init=0.25)
        self.conv2 = nn.Conv2d(c_out, c_out, 1)
        self.act2 = nn.PReLU(num_parameters=1, init=0.25)
        self.conv3 = nn.Conv2d(c_out, c_out, 1)
        self.act3 = nn.PReLU(num_parameters=1, init=0.25)
        self.conv4 = nn.Conv2d(c_out, c_out, 1)
        self.act4 = nn.PReLU(num_parameters=1, init=0.25)
        self.conv5 = nn.Conv2d(c_out, c_out, 1)

    def forward(self, x):
        if not torch.is_tensor(x) or x.ndim != 4 or x.shape[1] != self.c_in:
            got = tuple(x.shape) if torch.is_tensor(x) else type(x).__name__
            raise ShapeError(f"regressor expects [N,{self.c_in},h,w], got {got}")
        x = self.act1(self.conv1(x))
        x = self.act2(self.conv2(x))
        x = self.act3(self.conv3(x))
        x = self.act4(self.conv4(x))
        return self.conv5(x)


def init_weights_(model: nn.Module, seed: int) -> nn.Module:
    """Seeded in-place init: conv weights and biases ~ U(+-1/sqrt(fan_in)),
    PReLU slopes 0.25. Iteration follows registration order, so the result
    is a pure function of (architecture, seed)."""
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for _, m in model.named_modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(m, nn.PReLU):
                m.weight.fill_(0.25)
    return model


def init_identity_(reg: Regressor) -> Regressor:
    """Make a square regressor the exact identity map (for tests/diagnostics):
    eye 1x1 kernels, zero bias, PReLU slope 1."""
    if reg.c_in != reg.c_out:
        raise ConfigError(
            f"identity init needs c_in == c_out, got ({reg.c_in}, {reg.c_out})")
    with torch.no_grad():
        for m in reg.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.zero_()
                for c in range(m.out_channels):
                    m.weight[c, c, 0, 0] = 1.0
                m.bias.zero_()
            elif isinstance(m, nn.PReLU):
                m.weight.fill_(1.0)
    return reg


def build_edsr(cfg: EdsrConfig, seed: int = 0) -> EDSR:
    return init_weights_(EDSR(cfg), seed)


def build_rcan(cfg: RcanConfig, seed: int = 0) -> RCAN:
    return init_weights_(RCAN(cfg), seed)


def build_model(arch: str, cfg, seed: int = 0) -> SRNetwork:
    if arch == "edsr":
        if not isinstance(cfg, EdsrConfig):
            raise ConfigError(f"arch 'edsr' needs an EdsrConfig, got {type(cfg).__name__}")
        return build_edsr(cfg, seed)
    if arch == "rcan":
        if not isinstance(cfg, RcanConfig):
            raise ConfigError(f"arch 'rcan' needs an RcanConfig, got {type(cfg).__name__}")
        return build_rcan(cfg, seed)
    raise ConfigError(f"unknown arch {arch!r} (expected 'edsr' or 'rcan')")


def build_regressor(c_in: int, c_out: int, seed: int = 0,
                    identity: bool = False) -> Regressor:
    reg = Regressor(c_in, c_out)
    if identity:
        return init_identity_(reg)
    return init_weights_(reg, seed)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(arch: str, d: dict):
    if arch == "edsr":
        return EdsrConfig(**d)
    if arch == "rcan":
        return RcanConfig(**d)
    raise ConfigError(f"unknown arch {arch!r}")


def forward_with_taps(model: SRNetwork, lr_batch: torch.Tensor):
    """Run the network and return (sr, (tap1, tap2, tap3))."""
    return model.forward_with_taps(lr_batch)
