"""Encoder / decoder / discriminator builders driven by a declarative ``ArchSpec``.

Families:

* ``resnet29``        -- full ResNet-29 backbone, 3x32xW -> 512x1xW'
* ``resnet29_block3`` -- the same backbone cut after Block3, 3x32xW -> 512x4xW'
* ``vgg_style``       -- VGG-like encoder for the generative tasks, 3x64x64 -> 512x8x8
* ``toy_conv``        -- small configurable conv stack for desk-scale runs

Every network keeps its layers in ``net.stages`` (an ordered ``ModuleDict``) so
parameter names are stage-qualified, e.g. ``Block2.1.conv1.weight``.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

FAMILIES = ("resnet29", "resnet29_block3", "vgg_style", "toy_conv")
STAGE_ORDER = ("stem", "Block1", "Block2", "Block3", "Block4")


@dataclass(frozen=True)
class ArchSpec:
    family: str = "toy_conv"
    input_height: int = 32
    # toy_conv only: one entry per stage (stem first), pooling applied at the start of each Block
    widths: tuple[int, ...] = (16, 32, 64, 64, 64)
    strides: tuple[tuple[int, int], ...] = ((1, 1), (2, 2), (2, 2), (1, 1), (1, 1))
    disc_widths: tuple[int, ...] = (64, 128, 256, 512)
    encoder_rnn_layers: int = 0
    rnn_hidden: int = 256
    output_nonlinearity: str = "tanh"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "toy_conv":
            if len(self.widths) != len(self.strides) or not 2 <= len(self.widths) <= 5:
                raise ValueError("toy_conv needs 2..5 stages with one stride per width")
            if any(w <= 0 for w in self.widths):
                raise ValueError("widths must be positive")
        if len(self.disc_widths) != 4:
            raise ValueError("disc_widths needs four entries (Conv1..Conv4)")
        if self.encoder_rnn_layers and self.family not in ("resnet29",):
            raise ValueError("the recurrent encoder variant is only defined on the height-1 resnet29 output")

    @property
    def stage_names(self) -> tuple[str, ...]:
        if self.family == "toy_conv":
            return STAGE_ORDER[: len(self.widths)]
        if self.family == "resnet29_block3":
            return STAGE_ORDER[:4]
        if self.family == "vgg_style":
            return ("stem", "Block1", "Block2", "Block3")
        return STAGE_ORDER

    @property
    def out_channels(self) -> int:
        return self.widths[-1] if self.family == "toy_conv" else 512

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        for key in ("widths", "disc_widths"):
            if key in d:
                d[key] = tuple(d[key])
        if "strides" in d:
            d["strides"] = tuple(tuple(s) for s in d["strides"])
        return cls(**d)

    def encoder_output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        """Declared C x H' x W' for an input of the given size (shape-propagation contract)."""
        if self.family == "toy_conv":
            sh = sw = 1
            for a, b in self.strides:
                sh, sw = sh * a, sw * b
            return self.out_channels, height // sh, width // sw
        if self.family == "vgg_style":
            return 512, height // 8, width // 8
        w = width // 4 + 1  # Pool3 pads one column
        if self.family == "resnet29_block3":
            return 512, 4, w
        return 512, 1, w


# ---------------------------------------------------------------------- blocks

def conv_bn_relu(cin, cout, k=3, s=1, p=1):
    return nn.Sequential(nn.Conv2d(cin, cout, k, s, p, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class BasicBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, 1, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if cin != cout:
            self.downsample = nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        residual = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + residual)


def res_layer(cin, cout, n):
    return [BasicBlock(cin if i == 0 else cout, cout) for i in range(n)]


class StagedNet(nn.Module):
    """Sequential network whose children are grouped into named stages."""

    def __init__(self, spec: ArchSpec, stages: "OrderedDict[str, nn.Module]"):
        super().__init__()
        self.spec = spec
        self.stages = nn.ModuleDict(stages)

    @property
    def stage_names(self) -> list[str]:
        return list(self.stages.keys())

    def forward(self, x):
        for stage in self.stages.values():
            x = stage(x)
        return x


class Encoder(StagedNet):
    def __init__(self, spec: ArchSpec, stages):
        super().__init__(spec, stages)
        self.flat_output = spec.family == "resnet29"
        self.rnn = None
        if spec.encoder_rnn_layers:
            self.rnn = nn.LSTM(512, spec.rnn_hidden, num_layers=spec.encoder_rnn_layers,
                               bidirectional=True, batch_first=True)
            self.rnn_proj = nn.Linear(2 * spec.rnn_hidden, 512)

    def check_input(self, x):
        spec = self.spec
        h, w = x.shape[-2:]
        if x.shape[-3] != 3:
            raise ValueError(f"encoder expects RGB input, got {x.shape[-3]} channels")
        if spec.family in ("resnet29", "resnet29_block3"):
            if h != 32 or w < 8:
                raise ValueError(f"{spec.family} needs 32-pixel-high inputs at least 8 wide, got {h}x{w}")
        elif spec.family == "vgg_style":
            if h % 8 or w % 8 or h < 8:
                raise ValueError(f"vgg_style needs sides divisible by 8, got {h}x{w}")
        else:
            _, ho, wo = spec.encoder_output_shape(h, w)
            sh, sw = h // ho if ho else 0, w // wo if wo else 0
            if ho < 1 or wo < 1 or ho * sh != h or wo * sw != w:
                raise ValueError(f"toy_conv input {h}x{w} is not divisible by the stride product")

    def forward(self, x):
        self.check_input(x)
        x = super().forward(x)
        if self.rnn is not None:
            seq = x.squeeze(2).transpose(1, 2)
            seq, _ = self.rnn(seq)
            x = self.rnn_proj(seq).transpose(1, 2).unsqueeze(2)
        return x


# ---------------------------------------------------------------------- builders

def _resnet29_stages(spec: ArchSpec, upto: int):
    stages = OrderedDict()
    stages["stem"] = nn.Sequential(conv_bn_relu(3, 32), conv_bn_relu(32, 64))
    stages["Block1"] = nn.Sequential(nn.MaxPool2d(2, 2), *res_layer(64, 128, 1), conv_bn_relu(128, 128))
    stages["Block2"] = nn.Sequential(nn.MaxPool2d(2, 2), *res_layer(128, 256, 2), conv_bn_relu(256, 256))
    stages["Block3"] = nn.Sequential(nn.MaxPool2d(2, (2, 1), (0, 1)), *res_layer(256, 512, 5), conv_bn_relu(512, 512))
    if upto >= 4:
        stages["Block4"] = nn.Sequential(
            *res_layer(512, 512, 3),
            conv_bn_relu(512, 512, 2, (2, 1), (0, 1)),
            conv_bn_relu(512, 512, 2, 1, 0),
        )
    return stages


def _vgg_stages():
    def c(cin, cout, relu=True):
        layers = [nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3)]
        if relu:
            layers.append(nn.ReLU(inplace=True))
        return layers

    stages = OrderedDict()
    stages["stem"] = nn.Sequential(nn.Conv2d(3, 3, 1), *c(3, 64), *c(64, 64))
    stages["Block1"] = nn.Sequential(nn.MaxPool2d(2, 2), *c(64, 128), *c(128, 128))
    stages["Block2"] = nn.Sequential(nn.MaxPool2d(2, 2), *c(128, 256), *c(256, 256), *c(256, 256), *c(256, 256))
    stages["Block3"] = nn.Sequential(nn.MaxPool2d(2, 2), *c(256, 512))
    return stages


def _toy_stages(spec: ArchSpec):
    stages = OrderedDict()
    prev = 3
    for name, width, stride in zip(spec.stage_names, spec.widths, spec.strides):
        layers = []
        if tuple(stride) != (1, 1):
            layers.append(nn.MaxPool2d(tuple(stride), tuple(stride)))
        layers += [conv_bn_relu(prev, width), conv_bn_relu(width, width)] if name != "stem" else [conv_bn_relu(prev, width)]
        stages[name] = nn.Sequential(*layers)
        prev = width
    return stages


def init_weights(net: nn.Module) -> None:
    """He-uniform for convolutions, orthogonal for recurrent weights."""
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.LSTM, nn.GRU, nn.GRUCell)):
            for name, p in m.named_parameters():
                if "weight" in name:
                    nn.init.orthogonal_(p)
                else:
                    nn.init.zeros_(p)


def build_encoder(spec: ArchSpec) -> Encoder:
    if spec.family == "resnet29":
        stages = _resnet29_stages(spec, 4)
    elif spec.family == "resnet29_block3":
        stages = _resnet29_stages(spec, 3)
    elif spec.family == "vgg_style":
        stages = _vgg_stages()
    else:
        stages = _toy_stages(spec)
    net = Encoder(spec, stages)
    init_weights(net)
    return net


def _deconv_relu(cin, cout, stride, output_padding=0):
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 2, stride, 0, output_padding=output_padding), nn.ReLU(inplace=True))


def _conv(cin, cout, p, bn=True):
    layers = [nn.Conv2d(cin, cout, 3, 1, p, bias=not bn)]
    if bn:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


def _upper_decoder_tail():
    # shared 8x8 -> 32x32 tail of both ResNet decoders
    return [
        nn.Upsample(scale_factor=2, mode="nearest"),
        _conv(160, 128, 1, bn=False),
        _conv(128, 128, 1),
        nn.Upsample(scale_factor=2, mode="nearest"),
        _conv(128, 64, 1, bn=False),
        _conv(64, 64, 1),
        nn.Conv2d(64, 3, 3, 1, 1),
        nn.Tanh(),
    ]


class Decoder(StagedNet):
    pass


def build_decoder(spec: ArchSpec) -> Decoder:
    """Decoder mirroring ``build_encoder(spec)`` back to a 3-channel image in [-1, 1]."""
    stages = OrderedDict()
    if spec.family == "resnet29":
        stages["up"] = nn.Sequential(
            _deconv_relu(512, 256, 1), _conv(256, 256, 1),
            _deconv_relu(256, 192, (2, 1)), _conv(192, 192, (1, 0)),
            _deconv_relu(192, 160, (2, 1)), _conv(160, 160, (1, 0)),
        )
        stages["tail"] = nn.Sequential(*_upper_decoder_tail())
    elif spec.family == "resnet29_block3":
        stages["up"] = nn.Sequential(
            _deconv_relu(512, 256, 1), _conv(256, 256, 1),
            _deconv_relu(256, 192, (2, 1), output_padding=(1, 0)), _conv(192, 192, 0),
            _deconv_relu(192, 160, 1), _conv(160, 160, 0),
        )
        stages["tail"] = nn.Sequential(*_upper_decoder_tail())
    elif spec.family == "vgg_style":
        def c(cin, cout, relu=True):
            layers = [nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3)]
            return layers + [nn.ReLU(inplace=True)] if relu else layers

        up = lambda: nn.Upsample(scale_factor=2, mode="nearest")
        stages["up"] = nn.Sequential(*c(512, 256), up(), *c(256, 256), *c(256, 256), *c(256, 256), *c(256, 128),
                                     up(), *c(128, 128), *c(128, 64), up(), *c(64, 64))
        stages["tail"] = nn.Sequential(*c(64, 3, relu=False), nn.Tanh())
    else:
        layers = []
        widths = list(spec.widths)
        for i in range(len(widths) - 1, 0, -1):
            stride = tuple(spec.strides[i])
            if stride != (1, 1):
                layers.append(nn.Upsample(scale_factor=stride, mode="nearest"))
            layers.append(conv_bn_relu(widths[i], widths[i - 1]))
        if tuple(spec.strides[0]) != (1, 1):
            layers.append(nn.Upsample(scale_factor=tuple(spec.strides[0]), mode="nearest"))
        stages["up"] = nn.Sequential(*layers)
        stages["tail"] = nn.Sequential(nn.Conv2d(widths[0], 3, 3, 1, 1), nn.Tanh())
    net = Decoder(spec, stages)
    init_weights(net)
    return net


class Discriminator(StagedNet):
    def forward(self, x):
        h, w = x.shape[-2:]
        oh, ow = discriminator_output_size(h, w)
        if oh < 1 or ow < 1:
            raise ValueError(f"input {h}x{w} is smaller than the discriminator's receptive field")
        return super().forward(x)


def discriminator_output_size(h: int, w: int) -> tuple[int, int]:
    for s in (2, 2, 2, 1, 1):
        h = (h + 2 - 4) // s + 1
        w = (w + 2 - 4) // s + 1
    return h, w


def build_discriminator(spec: ArchSpec) -> Discriminator:
    """Patch discriminator: four k4 convs (strides 2,2,2,1) with PReLU, then a k4 conv to one score map."""
    w = spec.disc_widths
    stages = OrderedDict()
    prev = 3
    for i, (cout, s) in enumerate(zip(w, (2, 2, 2, 1)), 1):
        stages[f"conv{i}"] = nn.Sequential(nn.Conv2d(prev, cout, 4, s, 1), nn.PReLU(cout))
        prev = cout
    stages["conv5"] = nn.Conv2d(prev, 1, 4, 1, 1)
    net = Discriminator(spec, stages)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, a=0.25)
            nn.init.zeros_(m.bias)
    return net


# ---------------------------------------------------------------------- stages

def stage_parameters(net: StagedNet, depth: str = "full") -> "OrderedDict[str, nn.Parameter]":
    """Parameters from the input stem through stage ``depth`` inclusive.

    ``full`` returns every parameter of the network (including any recurrent head).
    """
    if depth == "full":
        return OrderedDict(net.named_parameters())
    names = net.stage_names
    if depth not in names:
        raise KeyError(f"unknown stage {depth!r}; this network has {names + ['full']}")
    keep = names[: names.index(depth) + 1]
    return OrderedDict(
        (n, p) for n, p in net.named_parameters() if n.startswith("stages.") and n.split(".")[1] in keep
    )


def stage_state(net: StagedNet, depth: str = "full") -> "OrderedDict[str, torch.Tensor]":
    """Like :func:`stage_parameters` but over the full state dict (parameters and BN buffers)."""
    sd = net.state_dict()
    if depth == "full":
        return sd
    names = net.stage_names
    if depth not in names:
        raise KeyError(f"unknown stage {depth!r}; this network has {names + ['full']}")
    keep = names[: names.index(depth) + 1]
    return OrderedDict((n, t) for n, t in sd.items() if n.startswith("stages.") and n.split(".")[1] in keep)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
