"""RGANet-n: cascaded inference blocks, VU decoder, decision unit.

Wiring for n scales (IB outputs e_1..e_n, e_i at 1/2**i resolution)::

    trunk = e_n
    for i = n .. 1:
        trunk = ESS-3(trunk)                    # only for i <= 2, if enabled
        trunk = VU_i(trunk, e_i)                # e_i omitted for i = n or blocked
    out = GAM_softmax(head(concat(trunk, image)))   # decision unit

VU_1 returns to full resolution, so the decision unit sees the raw image
at native size. Highways are e_1..e_{n-1}.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .blocks import ESS, VU, EssConfig
from .engine import ops
from .engine.nn import BatchNorm2d, Conv2d, Module
from .engine.serialize import entry_to_text, read_container, text_to_entry, write_container
from .gam import GAM

CONFIG_ENTRY = "__config__"


class ConfigError(ValueError):
    pass


def blocked_preset(m, scales=5):
    """Highways blocked by the "B<m>" preset: the deepest m of them."""
    if not 0 <= m <= scales - 1:
        raise ConfigError(f"preset B{m} needs 0 <= m <= {scales - 1}")
    return frozenset(range(scales - m, scales))


@dataclass(frozen=True)
class ModelConfig:
    scales: int = 5
    k: int = 15
    ess_sizes: tuple = (3, 3, 6, 12, 24)
    blocked_highways: frozenset = field(default_factory=frozenset)
    with_du: bool = True
    num_classes: int = 3
    input_size: tuple = (480, 640)
    vu_mode: str = "nearest"
    expansion: int = 8
    decoder_ess: bool = True
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "ess_sizes", tuple(int(v) for v in self.ess_sizes))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "blocked_highways", frozenset(int(v) for v in self.blocked_highways))
        problems = []
        if self.scales < 1:
            problems.append(f"scales must be >= 1 (got {self.scales})")
        if self.k < 1:
            problems.append(f"k must be >= 1 (got {self.k})")
        if len(self.ess_sizes) != self.scales:
            problems.append(f"ess_sizes has {len(self.ess_sizes)} entries, scales is {self.scales}")
        if any(n < 0 for n in self.ess_sizes):
            problems.append("ess_sizes must be non-negative")
        bad = sorted(b for b in self.blocked_highways if not 1 <= b <= self.scales - 1)
        if bad:
            problems.append(f"blocked_highways {bad} outside 1..{self.scales - 1}")
        if len(self.input_size) != 2:
            problems.append("input_size must be (H, W)")
        else:
            div = 2 ** self.scales
            H, W = self.input_size
            if H <= 0 or W <= 0 or H % div or W % div:
                problems.append(f"input_size {H}x{W} must be positive and divisible by 2**scales={div}")
        if self.num_classes < 1:
            problems.append("num_classes must be >= 1")
        if self.vu_mode not in ("nearest", "deconv"):
            problems.append(f"vu_mode must be nearest|deconv (got {self.vu_mode!r})")
        if self.expansion < 1:
            problems.append("expansion must be >= 1")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, frozenset):
                v = ",".join(str(x) for x in sorted(v))
            elif isinstance(v, tuple):
                v = ",".join(map(str, v))
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw):
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown model key {key!r}")
            kwargs[key] = _parse_field(key, value)
        preset = kwargs.get("blocked_highways")
        if isinstance(preset, str):
            scales = kwargs.get("scales", cls.scales)
            kwargs["blocked_highways"] = blocked_preset(int(preset[1:]), scales)
        return cls(**kwargs)


def _ints(value, sep=","):
    value = str(value).strip()
    return tuple(int(v) for v in value.replace("x", sep).split(sep) if v.strip())


def _parse_field(key, value):
    if not isinstance(value, str):
        return value
    if key in ("ess_sizes", "input_size"):
        return _ints(value)
    if key == "blocked_highways":
        value = value.strip()
        if value.upper().startswith("B"):
            return value.upper()  # resolved by caller with scales known
        return frozenset(_ints(value))
    if key in ("with_du", "decoder_ess"):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key == "vu_mode":
        return value.strip()
    return int(value)


class InferenceBlock(Module):
    """Stride-2 3x3 conv to k -> BN -> swish -> ESS -> (1+lam) GAM residual -> 1x1 squeeze to k."""

    def __init__(self, c_in, k, n_ess, s, h, w, rng):
        super().__init__()
        self.h, self.w = h, w
        self.stem = Conv2d(c_in, k, 3, stride=2, padding=1, bias=False, rng=rng)
        self.bn = BatchNorm2d(k)
        self.ess = ESS(EssConfig(n_ess, k, s), rng=rng)
        c = self.ess.cfg.out_channels
        self.gam = GAM(c, h, w, "sigmoid", rng=rng)
        self.squeeze = Conv2d(c, k, 1, bias=True, rng=rng)

    def forward(self, x):
        y = ops.swish(self.bn(self.stem(x)))
        e = self.ess(y)
        _, f_out = self.gam(e)
        return self.squeeze(ops.add(e, f_out))

    def flops(self):
        h, w = self.h, self.w
        k, c = self.stem.out_channels, self.gam.c
        return (
            self.stem.flops(2 * h, 2 * w) + self.bn.flops(h, w) + 4 * k * h * w
            + self.ess.flops(h, w) + self.gam.flops() + c * h * w
            + self.squeeze.flops(h, w)
        )


class DecisionUnit(Module):
    """concat(features, image) -> 1x1 head to classes -> GAM with softmax output."""

    def __init__(self, k, in_channels, num_classes, h, w, rng):
        super().__init__()
        self.h, self.w = h, w
        self.head = Conv2d(k + in_channels, num_classes, 1, bias=True, rng=rng)
        self.gam = GAM(num_classes, h, w, "softmax_channels", rng=rng)

    def forward(self, feats, image):
        z = self.head(ops.concat([feats, image], axis=1))
        return self.gam.weights(z)

    def flops(self):
        # GAM.flops includes lam * x, which the decision unit never computes
        c = self.gam.c
        return self.head.flops(self.h, self.w) + self.gam.flops() - c * self.h * self.w


class PlainHead(Module):
    """1x1 conv to classes + channel softmax (model built without a decision unit)."""

    def __init__(self, k, num_classes, h, w, rng):
        super().__init__()
        self.h, self.w = h, w
        self.conv = Conv2d(k, num_classes, 1, bias=True, rng=rng)

    def forward(self, feats, image):
        return ops.softmax_channels(self.conv(feats))

    def flops(self):
        return self.conv.flops(self.h, self.w) + 3 * self.conv.out_channels * self.h * self.w


class RGANet(Module):
    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        H, W = cfg.input_size
        k, s = cfg.k, cfg.expansion
        self.ibs = []
        c_in = cfg.in_channels
        for i in range(1, cfg.scales + 1):
            ib = InferenceBlock(c_in, k, cfg.ess_sizes[i - 1], s, H >> i, W >> i, rng)
            setattr(self, f"ib{i}", ib)
            self.ibs.append(ib)
            c_in = k
        self.vus = {}
        self.dec_ess = {}
        for i in range(cfg.scales, 0, -1):
            c_deep = k
            if cfg.decoder_ess and i <= 2:
                dec = ESS(EssConfig(3, k, s), rng=rng)
                setattr(self, f"dec{i}", dec)
                self.dec_ess[i] = dec
                c_deep = dec.cfg.out_channels
            c_high = k if self._highway_open(i) else 0
            vu = VU(c_deep, c_high, k, cfg.vu_mode, rng=rng)
            setattr(self, f"vu{i}", vu)
            self.vus[i] = vu
        if cfg.with_du:
            self.du = DecisionUnit(k, cfg.in_channels, cfg.num_classes, H, W, rng)
        else:
            self.du = PlainHead(k, cfg.num_classes, H, W, rng)

    def _highway_open(self, i):
        return i < self.cfg.scales and i not in self.cfg.blocked_highways

    def forward(self, image):
        """Per-pixel class probabilities, (N, num_classes, H, W)."""
        expected = (self.cfg.in_channels, *self.cfg.input_size)
        if image.ndim != 4 or image.shape[1:] != expected:
            raise ops.ShapeError(
                f"model expects input (N, {expected[0]}, {expected[1]}, {expected[2]}), got {image.shape}"
            )
        feats = []
        x = image
        for ib in self.ibs:
            x = ib(x)
            feats.append(x)
        trunk = feats[-1]
        for i in range(self.cfg.scales, 0, -1):
            if i in self.dec_ess:
                trunk = self.dec_ess[i](trunk)
            highway = feats[i - 1] if self._highway_open(i) else None
            trunk = self.vus[i](trunk, highway)
        return self.du(trunk, image)

    def predict(self, image):
        """Argmax class mask, (N, H, W) uint8."""
        probs = self.forward(image)
        return probs.data.argmax(axis=1).astype(np.uint8)

    def breakdown(self):
        """[(module name, params, flops)] for every top-level block."""
        H, W = self.cfg.input_size
        rows = []
        for i, ib in enumerate(self.ibs, 1):
            rows.append((f"ib{i}", ib.num_params(), ib.flops()))
        for i in range(self.cfg.scales, 0, -1):
            h, w = H >> i, W >> i
            if i in self.dec_ess:
                dec = self.dec_ess[i]
                rows.append((f"dec{i}", dec.num_params(), dec.flops(h, w)))
            vu = self.vus[i]
            rows.append((f"vu{i}", vu.num_params(), vu.flops(h, w)))
        rows.append(("du", self.du.num_params(), self.du.flops()))
        return rows


def build_model(cfg, seed=0):
    return RGANet(cfg, seed)


def count_params_flops(model):
    """(exact trainable scalar count, FLOPs of one forward pass at the config size)."""
    rows = model.breakdown()
    return sum(r[1] for r in rows), sum(r[2] for r in rows)


def save_checkpoint(model, path):
    entries = {CONFIG_ENTRY: text_to_entry(model.cfg.to_text())}
    entries.update(model.state_dict())
    write_container(path, entries)


def load_checkpoint(path):
    entries = read_container(path)
    if CONFIG_ENTRY not in entries:
        raise ValueError(f"{path}: checkpoint has no {CONFIG_ENTRY} entry")
    cfg = ModelConfig.from_text(entry_to_text(entries.pop(CONFIG_ENTRY)))
    model = RGANet(cfg)
    model.load_state_dict(entries)
    return model
