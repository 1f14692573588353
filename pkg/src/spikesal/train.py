"""Training loop, checkpointing, and evaluation plumbing.

Every source of randomness is a counter-derived generator
(default_rng([seed, epoch]) and friends), so a resumed run replays the
exact batch order of an uninterrupted one and checkpoints are
byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from . import metrics
from . import spikeio as sio
from .grad.store import save_tensors, load_tensors
from .objective import LossConfig, map_loss, multi_step_loss, vanilla_loss
from .optim import AdamW, linear_lr
from .rst import RSTConfig, RSTModel

REPR_SCALE = 1.0 / sio.DEFAULT_FULL_SCALE

MODES = ("multi", "single")
LOSS_MODES = ("multi", "vanilla")


@dataclass
class RunConfig:
    manifest: str = ""
    model: RSTConfig = field(default_factory=RSTConfig)
    lr_start: float = 2e-5
    lr_end: float = 2e-6
    epochs: int = 20
    batch_size: int = 4
    weight_decay: float = 1e-2
    window: int = 400
    seed: int = 0
    mode: str = "multi"
    loss_mode: str = "multi"
    deterministic: bool = True

    def __post_init__(self):
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.epochs < 1 or self.batch_size < 1 or self.window < 1:
            raise ValueError("epochs, batch_size, window must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")

    def to_json_dict(self) -> dict:
        return {"manifest": self.manifest,
                "model": self.model.to_json_dict(),
                "optimizer": {"kind": "adamw", "lr_start": self.lr_start,
                              "lr_end": self.lr_end, "epochs": self.epochs,
                              "batch_size": self.batch_size,
                              "weight_decay": self.weight_decay},
                "window": self.window, "seed": self.seed, "mode": self.mode,
                "loss_mode": self.loss_mode,
                "deterministic": self.deterministic}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        opt = dict(doc.pop("optimizer", {}))
        kind = opt.pop("kind", "adamw")
        if kind != "adamw":
            raise ValueError(f"unsupported optimizer kind {kind!r}")
        model = RSTConfig.from_json_dict(doc.pop("model", {}))
        known = {"manifest", "window", "seed", "mode", "loss_mode",
                 "deterministic"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown run config keys: {sorted(extra)}")
        return cls(model=model, **doc, **opt)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


# -- data ------------------------------------------------------------------------


@dataclass
class Sample:
    repr: np.ndarray     # (1, H, W) float in [0, 1]
    mask: np.ndarray     # (H, W) float {0, 1}
    seq: str
    index: int           # chronological window index within the sequence


def window_repr(stream: sio.SpikeStream, start: int, window: int) -> np.ndarray:
    """Timing representation for the window [start, start+window), decoded
    at the window centre and scaled to [0, 1]."""
    stop = min(start + window, stream.bits.shape[0])
    piece = stream.slice(start, stop)
    at = min(window // 2, piece.bits.shape[0] - 1)
    return sio.isi_repr(piece, at).values[None] * REPR_SCALE


def load_samples(manifest_path, window: int) -> dict:
    """Decode every labelled window up front; toy-scale sets fit in memory."""
    manifest = sio.load_manifest(manifest_path)
    out = {"train": [], "val": []}
    for entry in manifest.streams:
        stream = sio.read_stream(manifest.root / entry.path)
        seq = Path(entry.path).stem
        for idx, ref in enumerate(entry.masks):
            mask = sio.read_mask(manifest.root / ref.path, ref.frame)
            rep = window_repr(stream, ref.frame, window)
            out[entry.split].append(Sample(
                rep, mask.values.astype(np.float64), seq, idx))
    return out


def _group_by_sequence(samples):
    groups: dict = {}
    for s in samples:
        groups.setdefault(s.seq, []).append(s)
    for seq in groups:
        groups[seq].sort(key=lambda s: s.index)
    return dict(sorted(groups.items()))


def _stack(samples):
    x = np.stack([s.repr for s in samples])
    y = np.stack([s.mask[None] for s in samples])
    return x, y


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model: RSTModel, opt: AdamW, cfg: RunConfig,
                    epoch: int, history: list):
    arrays = {}
    for name, p in model.named_parameters():
        arrays["param." + name] = p.data
    for name, b in model.named_buffers():
        arrays["buf." + name] = b.data if isinstance(b, G.Tensor) else b
    arrays.update(opt.state_arrays())
    meta = {"kind": "checkpoint", "epoch": epoch,
            "config": cfg.to_json_dict(), "config_hash": cfg.config_hash(),
            "rng": {"scheme": "counter", "seed": cfg.seed,
                    "next_epoch": epoch + 1},
            "history": history}
    save_tensors(path, arrays, meta)


def load_checkpoint(path):
    return load_tensors(path)


def model_from_checkpoint(path, soft: bool = False):
    """Rebuild the model (and its RunConfig) from a checkpoint file."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError("not a training checkpoint")
    cfg = RunConfig.from_json_dict(meta["config"])
    model = RSTModel(cfg.model, np.random.default_rng(0), soft=soft)
    state = {}
    for key, arr in arrays.items():
        if key.startswith("param."):
            state[key[len("param."):]] = arr
        elif key.startswith("buf."):
            state[key[len("buf."):]] = arr
    model.load_state_dict(state)
    return model, cfg, meta


def _restore_optimizer(opt: AdamW, arrays: dict):
    opt.load_state_arrays(arrays)


# -- evaluation ---------------------------------------------------------------------


def evaluate_model(model: RSTModel, samples, mode: str = "multi") -> metrics.EvalReport:
    """Saliency metrics over samples; the prediction is the rate readout
    (mean map over steps) in multi mode, the per-window map in stateful
    single mode."""
    was_training = model.training
    model.eval()
    pairs = []
    with G.no_grad():
        if mode == "multi":
            for s in samples:
                maps = model.forward_full(s.repr[None], "multi")
                pred = np.mean([m.data[0, 0] for m in maps], axis=0)
                pairs.append((pred, s.mask, s.seq))
        else:
            for seq, chron in _group_by_sequence(samples).items():
                model.reset_state()
                for s in chron:
                    m = model.forward_full(s.repr[None], "single")[0]
                    pairs.append((m.data[0, 0], s.mask, seq))
            model.reset_state()
    if was_training:
        model.train()
    return metrics.evaluate(pairs)


# -- training loop --------------------------------------------------------------------


def _write_log(out_dir: Path, history: list):
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "val_mae", "val_mean_f"])
        for h in history:
            w.writerow([h["epoch"], f"{h['loss']:.12g}",
                        f"{h['val_mae']:.12g}", f"{h['val_mean_f']:.12g}"])


def _epoch_multi(model, opt, samples, cfg, rng) -> float:
    loss_cfg = LossConfig(steps=cfg.model.steps)
    order = rng.permutation(len(samples))
    losses = []
    for lo in range(0, len(order), cfg.batch_size):
        batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
        x, y = _stack(batch)
        maps = model.forward_full(x, "multi")
        if cfg.loss_mode == "multi":
            loss = multi_step_loss(maps, G.Tensor(y), loss_cfg)
        else:
            loss = vanilla_loss(maps, G.Tensor(y), loss_cfg)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return float(np.mean(losses))


def _epoch_single(model, opt, samples, cfg, rng) -> float:
    # sequences stay chronological; only their order shuffles. Loss and
    # update happen per window, membrane state carried and then detached
    # so the graph never spans windows.
    loss_cfg = LossConfig(steps=1)
    groups = list(_group_by_sequence(samples).values())
    losses = []
    for gi in rng.permutation(len(groups)):
        chron = groups[gi]
        model.reset_state()
        for s in chron:
            x, y = _stack([s])
            maps = model.forward_full(x, "single")
            loss = map_loss(maps[0], G.Tensor(y), loss_cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.detach_state()
            losses.append(loss.item())
        model.reset_state()
    return float(np.mean(losses))


def train_model(cfg: RunConfig, out_dir, resume=None, log=None) -> list:
    """Run (or resume) training; returns the per-epoch history."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_samples(cfg.manifest, cfg.window)
    if not data["train"]:
        raise ValueError("manifest has no training sequences")

    model = RSTModel(cfg.model, np.random.default_rng([cfg.seed, 0xA11CE]))
    opt = AdamW(model.named_parameters(), lr=cfg.lr_start,
                weight_decay=cfg.weight_decay)
    history: list = []
    start_epoch = 0
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        if meta.get("config_hash") != cfg.config_hash():
            raise ValueError("checkpoint was produced by a different config")
        state = {k.split(".", 1)[1]: v for k, v in arrays.items()
                 if k.startswith(("param.", "buf."))}
        model.load_state_dict(state)
        _restore_optimizer(opt, arrays)
        history = list(meta["history"])
        start_epoch = meta["epoch"] + 1

    for epoch in range(start_epoch, cfg.epochs):
        opt.lr = linear_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        rng = np.random.default_rng([cfg.seed, epoch])
        model.train()
        if cfg.mode == "multi":
            loss = _epoch_multi(model, opt, data["train"], cfg, rng)
        else:
            loss = _epoch_single(model, opt, data["train"], cfg, rng)
        val_samples = data["val"] or data["train"]
        report = evaluate_model(model, val_samples, mode=cfg.mode)
        entry = {"epoch": epoch, "loss": loss, "val_mae": report.mae,
                 "val_mean_f": report.mean_f_beta, "lr": opt.lr}
        history.append(entry)
        save_checkpoint(out / f"epoch_{epoch:03d}.salt", model, opt, cfg,
                        epoch, history)
        save_checkpoint(out / "last.salt", model, opt, cfg, epoch, history)
        _write_log(out, history)
        if log:
            log(f"epoch {epoch:3d}  lr {opt.lr:.2e}  loss {loss:.4f}  "
                f"val mae {report.mae:.4f}  val mF {report.mean_f_beta:.4f}")
    return history
