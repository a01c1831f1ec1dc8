"""Generator and discriminator networks plus the adversarial loss terms.

The generator is a fully-convolutional resnet translator (9 residual blocks
between two stride-2 downsamples and their mirrored upsamples) mapping the
4-channel condition stack to a single intensity channel in [0, 1]. The
discriminator is a patch classifier over the 3-channel (map, snippet, image)
stack, emitting a grid of real/fake logits. Stochasticity is injected as
dropout inside the residual blocks and can be driven by an explicit RNG so
tile generation is reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError, ShapeError, ValidationError


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 4
    out_channels: int = 1
    base_width: int = 64
    n_resnet_blocks: int = 9
    n_downsamples: int = 2
    noise_mode: bool = True   # dropout-based stochasticity inside resnet blocks
    dropout_p: float = 0.5
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.in_channels != 4 or self.out_channels != 1:
            raise ValidationError("generator channel contract is fixed at 4 -> 1")
        if min(self.base_width, self.n_resnet_blocks, self.n_downsamples) < 1:
            raise ValidationError("generator config fields must be positive")
        if self.output_activation != "sigmoid":
            raise ValidationError("only sigmoid output squashing is supported")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    base_width: int = 64
    n_layers: int = 3

    def __post_init__(self):
        if self.in_channels != 3:
            raise ValidationError("discriminator channel contract is fixed at 3")
        if self.base_width < 1 or self.n_layers < 1:
            raise ValidationError("discriminator config fields must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class SeededDropout(nn.Module):
    """Dropout whose mask can come from an explicit torch.Generator.

    With no generator the global RNG is used (reproducible after
    torch.manual_seed). Disabled entirely when the module is inactive.
    """

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: torch.Tensor, rng: Optional[torch.Generator] = None,
                active: bool = True) -> torch.Tensor:
        if not active or self.p <= 0.0:
            return x
        keep = torch.rand(x.shape, generator=rng, device=x.device, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


class ResnetBlock(nn.Module):
    def __init__(self, width: int, dropout_p: float):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3)
        self.norm1 = nn.InstanceNorm2d(width)
        self.drop = SeededDropout(dropout_p)
        self.conv2 = nn.Conv2d(width, width, 3)
        self.norm2 = nn.InstanceNorm2d(width)

    def forward(self, x, rng=None, stochastic=False):
        h = F.relu(self.norm1(self.conv1(F.pad(x, (1, 1, 1, 1), mode="reflect"))))
        h = self.drop(h, rng=rng, active=stochastic)
        h = self.norm2(self.conv2(F.pad(h, (1, 1, 1, 1), mode="reflect")))
        return x + h


class SonarGenerator(nn.Module):
    """Condition stack (B, 4, H, W) -> intensity (B, 1, H, W) in [0, 1].

    Fully convolutional: any H, W divisible by 2**n_downsamples works
    without rebuilding.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.head = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, w, 7),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
        )
        downs = []
        for i in range(cfg.n_downsamples):
            downs.append(nn.Sequential(
                nn.Conv2d(w * 2 ** i, w * 2 ** (i + 1), 3, stride=2, padding=1),
                nn.InstanceNorm2d(w * 2 ** (i + 1)),
                nn.ReLU(inplace=True),
            ))
        self.downs = nn.ModuleList(downs)
        inner = w * 2 ** cfg.n_downsamples
        self.blocks = nn.ModuleList(
            [ResnetBlock(inner, cfg.dropout_p) for _ in range(cfg.n_resnet_blocks)])
        ups = []
        for i in reversed(range(cfg.n_downsamples)):
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(w * 2 ** (i + 1), w * 2 ** i, 3, stride=2,
                                   padding=1, output_padding=1),
                nn.InstanceNorm2d(w * 2 ** i),
                nn.ReLU(inplace=True),
            ))
        self.ups = nn.ModuleList(ups)
        self.tail = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(w, cfg.out_channels, 7),
        )

    def forward(self, x: torch.Tensor, rng: Optional[torch.Generator] = None,
                stochastic: Optional[bool] = None) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (B, {self.cfg.in_channels}, H, W) input")
        div = 2 ** self.cfg.n_downsamples
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(
                f"spatial dims {tuple(x.shape[2:])} not divisible by {div}")
        if stochastic is None:
            stochastic = self.cfg.noise_mode and self.training
        h = self.head(x)
        for down in self.downs:
            h = down(h)
        for block in self.blocks:
            h = block(h, rng=rng, stochastic=stochastic)
        for up in self.ups:
            h = up(h)
        return torch.sigmoid(self.tail(h))


class PatchDiscriminator(nn.Module):
    """(B, 3, H, W) -> (B, 1, ~H/2^n_layers, ~W/2^n_layers) patch logits.

    Three stride-2 convolutions give each logit a receptive field of roughly
    70x70 input pixels at the default depth. The grid is exactly H/2^n by
    W/2^n when the input dims divide evenly.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [nn.Conv2d(cfg.in_channels, w, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        ch = w
        for i in range(1, cfg.n_layers):
            layers += [nn.Conv2d(ch, min(w * 2 ** i, w * 8), 4, stride=2, padding=1),
                       nn.InstanceNorm2d(min(w * 2 ** i, w * 8)),
                       nn.LeakyReLU(0.2, inplace=True)]
            ch = min(w * 2 ** i, w * 8)
        layers += [nn.Conv2d(ch, min(w * 2 ** cfg.n_layers, w * 8), 3, padding=1),
                   nn.InstanceNorm2d(min(w * 2 ** cfg.n_layers, w * 8)),
                   nn.LeakyReLU(0.2, inplace=True),
                   nn.Conv2d(min(w * 2 ** cfg.n_layers, w * 8), 1, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (B, {self.cfg.in_channels}, H, W) input")
        out = self.net(x)
        if out.shape[2] < 1 or out.shape[3] < 1:
            raise ShapeError("input too small for the patch grid")
        return out


def _init_normal(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_generator(cfg: GeneratorConfig = GeneratorConfig(),
                    seed: Optional[int] = None) -> SonarGenerator:
    net = _seeded_build(lambda: SonarGenerator(cfg), seed)
    return net


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(),
                        seed: Optional[int] = None) -> PatchDiscriminator:
    return _seeded_build(lambda: PatchDiscriminator(cfg), seed)


def _seeded_build(factory: Callable[[], nn.Module], seed: Optional[int]) -> nn.Module:
    if seed is None:
        net = factory()
        _init_normal(net)
        return net
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = factory()
        _init_normal(net)
    return net


def discriminator_stack(x_map: torch.Tensor, snippet: torch.Tensor,
                        image: torch.Tensor) -> torch.Tensor:
    """Concatenate (B,1,H,W) map, snippet plane, and image into the 3-channel
    discriminator input. Yaw never enters here."""
    if not (x_map.shape == snippet.shape == image.shape):
        raise ShapeError("map, snippet, and image must share a (B,1,H,W) shape")
    return torch.cat([x_map, snippet, image], dim=1)


def _check_finite(value: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite {what}")
    return value


def d_loss(disc: nn.Module, x_map: torch.Tensor, snippet: torch.Tensor,
           y_real: torch.Tensor, y_fake: torch.Tensor) -> torch.Tensor:
    """-E[log D(real)] - E[log(1 - D(fake))], means over patches and batch."""
    logits_real = disc(discriminator_stack(x_map, snippet, y_real))
    logits_fake = disc(discriminator_stack(x_map, snippet, y_fake))
    loss = (F.binary_cross_entropy_with_logits(logits_real, torch.ones_like(logits_real))
            + F.binary_cross_entropy_with_logits(logits_fake, torch.zeros_like(logits_fake)))
    return _check_finite(loss, "discriminator loss")


def g_loss(disc: nn.Module, x_map: torch.Tensor, snippet: torch.Tensor,
           y_fake: torch.Tensor, y_real: torch.Tensor,
           l1_weight: float = 100.0) -> torch.Tensor:
    """Non-saturating adversarial term plus weighted L1 against the target."""
    logits_fake = disc(discriminator_stack(x_map, snippet, y_fake))
    adv = F.binary_cross_entropy_with_logits(logits_fake, torch.ones_like(logits_fake))
    l1 = torch.mean(torch.abs(y_real - y_fake))
    return _check_finite(adv + l1_weight * l1, "generator loss")


def patch_accuracy(logits: torch.Tensor, real: bool) -> float:
    """Fraction of patch logits on the correct side of the decision boundary."""
    if real:
        return float((logits > 0).float().mean())
    return float((logits < 0).float().mean())


def grad_check(loss_fn: Callable[[], torch.Tensor],
               params: Sequence[torch.Tensor],
               epsilon: float = 1e-3,
               max_nonsmooth_fraction: float = 0.10) -> float:
    """Compare autograd gradients against central finite differences.

    loss_fn must be deterministic; params are the leaf tensors to perturb
    (keep the total under ~1e4 entries; use double precision). Returns the
    maximum relative error, each coordinate normalized by
    max(|analytic|, |numeric|, 1e-3 * largest gradient).

    The step must be small relative to the parameter scale: with the 0.02
    init convention, rescale the weights to O(1) first or the surface is
    far from linear across the window. Losses with absolute-value or ReLU
    terms are only piecewise smooth, and a central difference straddling a
    kink says nothing about the gradient; each coordinate is therefore
    probed at four points and coordinates whose three sub-interval slopes
    disagree are excluded as locally non-smooth. More than
    ``max_nonsmooth_fraction`` of them raises, since the check would then
    be meaningless.
    """
    params = list(params)
    analytic = torch.autograd.grad(loss_fn(), params)
    gmax = max(float(g.abs().max()) for g in analytic)
    floor = max(1e-3 * gmax, 1e-12)

    def f_at(p_flat, i, orig, offset):
        p_flat[i] = orig + offset
        value = float(loss_fn().detach())
        p_flat[i] = orig
        return value

    worst = 0.0
    skipped = total = 0
    half = epsilon / 2.0
    for p, g in zip(params, analytic):
        flat = p.data.view(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            total += 1
            orig = flat[i].item()
            f_m2 = f_at(flat, i, orig, -epsilon)
            f_m1 = f_at(flat, i, orig, -half)
            f_p1 = f_at(flat, i, orig, +half)
            f_p2 = f_at(flat, i, orig, +epsilon)
            # Slopes over the three sub-intervals: a kink anywhere inside
            # (-eps, eps) makes them disagree by a fraction of its jump.
            s_left = (f_m1 - f_m2) / half
            s_mid = (f_p1 - f_m1) / epsilon
            s_right = (f_p2 - f_p1) / half
            spread = max(s_left, s_mid, s_right) - min(s_left, s_mid, s_right)
            if spread > 0.02 * max(abs(s_left), abs(s_mid), abs(s_right), floor):
                skipped += 1
                continue
            a = float(gflat[i])
            err = abs(a - s_mid) / max(abs(a), abs(s_mid), floor)
            worst = max(worst, err)
    if skipped > max_nonsmooth_fraction * total:
        raise NumericError(
            f"{skipped}/{total} coordinates sit on non-smooth points; "
            "choose a different test point")
    return worst
