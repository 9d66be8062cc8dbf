"""Training configuration and loop."""

import configparser
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AUGMENTATIONS, SUCTION, SynthSpec, load_dataset, parse_label_map, synth_dataset, augment
from .engine.tensor import Tape, Tensor
from .metrics import classic_metrics, confusion, Confusion
from .model import ConfigError, ModelConfig, RGANet, save_checkpoint
from .optim import AdamW, LossConfig, loss_fn

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Loss or gradients became non-finite."""


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1.5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    augment: tuple = ()
    checkpoint_every: int = 0
    train_dir: Path | None = None
    synth: SynthSpec | None = None
    synth_seed: int = 0
    label_map: dict | None = None
    out_dir: Path = Path("runs/train")

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        bad = [a for a in self.augment if a not in AUGMENTATIONS]
        if bad:
            raise ConfigError(f"unknown augmentations {bad}; choose from {AUGMENTATIONS}")
        if self.train_dir is None and self.synth is None:
            raise ConfigError("config needs data.train_dir or data.synth.* entries")


def _floats(v):
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _words(v):
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def parse_train_config(text, base_dir=Path(".")):
    """Parse ``key = value`` lines (``#`` comments, dotted keys) into a TrainConfig."""
    cp = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
        delimiters=("=",),
    )
    cp.optionxform = str
    try:
        cp.read_string("[root]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    raw = dict(cp["root"])

    groups = {}
    for key, value in raw.items():
        head, _, rest = key.partition(".")
        if not rest:
            raise ConfigError(f"config key {key!r} needs a section prefix (model., loss., ...)")
        groups.setdefault(head, {})[rest] = value
    unknown = set(groups) - {"model", "loss", "optim", "train", "data", "output"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    kw = {}
    kw["model"] = ModelConfig.from_mapping(groups.get("model", {}))
    loss = groups.get("loss", {})
    try:
        kw["loss"] = LossConfig(
            kind=loss.get("kind", "focal"),
            gamma=float(loss.get("gamma", 1.3)),
            alphas=_floats(loss.get("alphas", "0.25,0.25,0.5")),
        )
    except ValueError as e:
        raise ConfigError(f"invalid loss config: {e}") from e

    opt = groups.get("optim", {})
    known_opt = {"lr", "betas", "eps", "weight_decay"}
    if set(opt) - known_opt:
        raise ConfigError(f"unknown optim keys {sorted(set(opt) - known_opt)}")
    kw["lr"] = float(opt.get("lr", 1.5e-4))
    kw["betas"] = _floats(opt.get("betas", "0.9,0.999"))
    kw["eps"] = float(opt.get("eps", 1e-8))
    kw["weight_decay"] = float(opt.get("weight_decay", 0.0))

    tr = groups.get("train", {})
    kw["epochs"] = int(tr.get("epochs", 10))
    kw["batch_size"] = int(tr.get("batch_size", 1))
    kw["seed"] = int(tr.get("seed", 0))
    kw["augment"] = _words(tr.get("augment", ""))
    kw["checkpoint_every"] = int(tr.get("checkpoint_every", 0))

    data = groups.get("data", {})
    if "train_dir" in data:
        kw["train_dir"] = (base_dir / data["train_dir"]).resolve()
    synth = {k[len("synth."):]: v for k, v in data.items() if k.startswith("synth.")}
    if synth:
        H, W = kw["model"].input_size
        kw["synth_seed"] = int(synth.pop("seed", 0))
        kw["synth"] = SynthSpec(
            count=int(synth.pop("count", 4)),
            height=int(synth.pop("height", H)),
            width=int(synth.pop("width", W)),
            min_objects=int(synth.pop("min_objects", 1)),
            max_objects=int(synth.pop("max_objects", 3)),
            border=int(synth.pop("border", 2)),
            fraction=_floats(synth.pop("fraction", "0.1,0.3")),
        )
        if synth:
            raise ConfigError(f"unknown data.synth keys {sorted(synth)}")
    kw["label_map"] = parse_label_map(data.get("label_map"))

    out = groups.get("output", {})
    kw["out_dir"] = (base_dir / out.get("dir", "runs/train")).resolve()
    return TrainConfig(**kw)


def load_train_config(path):
    path = Path(path)
    return parse_train_config(path.read_text(encoding="utf-8"), path.parent)


def load_samples(cfg):
    if cfg.train_dir is not None:
        return load_dataset(cfg.train_dir, cfg.label_map)
    return synth_dataset(cfg.synth, cfg.synth_seed)


LOG_COLUMNS = ("epoch", "loss", "jaccard", "precision", "recall")


def train(cfg, samples=None, on_epoch=None):
    """Run the training loop; returns ``(model, history)``.

    ``history`` holds one dict per epoch with the mean loss and online
    jaccard/precision/recall of the suction class over that epoch's
    training-mode predictions.
    """
    samples = load_samples(cfg) if samples is None else samples
    H, W = cfg.model.input_size
    for name, image, mask in samples:
        if image.shape[1:] != (H, W):
            raise ConfigError(f"{name}: image is {image.shape[1]}x{image.shape[2]}, model expects {H}x{W}")
    model = RGANet(cfg.model, seed=cfg.seed)
    model.train()
    opt = AdamW(model.parameters(), cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    criterion = loss_fn(cfg.loss)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(samples))
        losses, weights = [], []
        tp = fp = fn = tn = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            pairs = [augment(img, msk, rng, cfg.augment) for _, img, msk in batch]
            x = Tensor(np.stack([p[0] for p in pairs]))
            y = np.stack([p[1] for p in pairs])
            opt.zero_grad()
            with Tape() as tape:
                probs = model(x)
                loss = criterion(probs, y, cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            tape.backward(loss, opt.params)
            for p in opt.params:
                if not np.all(np.isfinite(p.grad)):
                    raise NumericalError(f"non-finite gradient for {p.name or 'a parameter'} at epoch {epoch}")
            opt.step()
            losses.append(value)
            weights.append(len(batch))
            c = confusion(probs.data.argmax(axis=1), y, SUCTION)
            tp, fp, fn, tn = tp + c.tp, fp + c.fp, fn + c.fn, tn + c.tn
        scores = classic_metrics(Confusion(tp, fp, fn, tn))
        row = {
            "epoch": epoch,
            "loss": float(np.average(losses, weights=weights)),
            "jaccard": scores["jaccard"],
            "precision": scores["precision"],
            "recall": scores["recall"],
        }
        history.append(row)
        log.info("epoch %d loss %.5f jaccard %.4f", epoch, row["loss"], row["jaccard"])
        if on_epoch is not None:
            on_epoch(model, row)
    return model, history


def run_training(cfg):
    """Train and write ``model.rgan``, periodic checkpoints and ``train_log.csv`` under cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()

        def on_epoch(model, row):
            writer.writerow(row)
            fh.flush()
            if cfg.checkpoint_every and row["epoch"] % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"epoch_{row['epoch']:04d}.rgan")

        model, history = train(cfg, on_epoch=on_epoch)
    save_checkpoint(model, out / "model.rgan")
    return model, history
