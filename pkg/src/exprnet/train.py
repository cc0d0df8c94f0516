"""SGD with momentum, the step learning-rate schedule, the epoch loop,
checkpoints, and the eight-experiment runner."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentConfig
from .data import Dataset, batch_iter
from .errors import ConfigError, DivergenceError, FormatError
from .metrics import ConfusionMatrix, Summary, report_table, summarize
from .model import ExpressionNet, ModelConfig, build_model, experiment_configs
from .nn import softmax_xent

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "train_acc", "val_acc")
MAGIC = b"KEXP"
VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 40
    initial_lr: float = 0.02
    lr_decay: float = 0.1
    decay_period_epochs: int = 15
    momentum: float = 0.9
    workers: int = 10
    seed: int = 0
    clip_grad_norm: Optional[float] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if self.initial_lr <= 0:
            raise ConfigError("initial_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.decay_period_epochs < 1:
            raise ConfigError("epochs, batch_size and decay_period_epochs must be >= 1")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["model"] = self.model.to_dict()
        d["augment"] = None if self.augment is None else self.augment.to_dict()
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for zero-based ``epoch``: step decay every period."""
    return cfg.initial_lr * cfg.lr_decay ** (epoch // cfg.decay_period_epochs)


class SGD:
    """Classical momentum: ``v <- mu*v + g``; ``p <- p - lr*v``."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, named_params, lr: float):
        named_params = list(named_params)
        for name, _, g in named_params:
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in {name}")
        for name, p, g in named_params:
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            v *= p.dtype.type(self.momentum)
            v += g
            p -= p.dtype.type(lr) * v


def sgd_step(params, grads, velocity, lr, momentum=0.9):
    """Functional form over parallel lists; updates ``params`` and
    ``velocity`` in place and returns ``params``."""
    opt = SGD(momentum)
    names = [str(i) for i in range(len(params))]
    opt.velocity = dict(zip(names, velocity))
    opt.step(zip(names, params, grads), lr)
    return params


def clip_gradients(net: ExpressionNet, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for _, _, g in net.parameters()))
    if norm > max_norm:
        for _, _, g in net.parameters():
            g *= g.dtype.type(max_norm / norm)
    return norm


def evaluate(net: ExpressionNet, ds: Dataset, batch_size: int = 64):
    """Eval-mode mean loss and confusion matrix over ``ds``."""
    cm = ConfusionMatrix()
    total = 0.0
    for x, y in batch_iter(ds, batch_size, shuffle=False, dtype=net.dtype):
        logits = net.forward(x)
        loss, _ = softmax_xent(logits, y)
        total += loss * len(y)
        cm.update_batch(y, logits.argmax(axis=1))
    return total / max(1, len(ds)), cm


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    config: dict
    epoch: int
    tensors: dict
    rng: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    best: dict = field(default_factory=dict)


def model_tensors(net: ExpressionNet, opt: Optional[SGD] = None) -> dict:
    out = {f"param/{n}": p for n, p, _ in net.parameters()}
    out.update({f"buffer/{n}": b for n, b in net.buffers()})
    if opt is not None:
        out.update({f"velocity/{n}": v for n, v in opt.velocity.items()})
    return out


def save_checkpoint(path, net: ExpressionNet, opt: Optional[SGD], cfg: TrainConfig, epoch: int,
                    log_records=(), best=None) -> None:
    tensors = model_tensors(net, opt)
    manifest, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        code = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=code).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": code})
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    header = {
        "config": cfg.to_dict(),
        "epoch": epoch,
        "rng": net.rng_states(),
        "log": list(log_records),
        "best": best or {},
        "tensors": manifest,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    data = MAGIC + struct.pack("<II", VERSION, len(head)) + head + payload
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < 12 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        manifest = header["tensors"]
        payload = data[12 + hlen:]
        expected = header["payload_bytes"]
        crc = header["payload_crc32"]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: corrupt header ({e})") from None
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload checksum mismatch")
    tensors = {}
    try:
        for entry in manifest:
            dt = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype=dt, count=count, offset=entry["offset"])
            tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: bad tensor manifest ({e})") from None
    return Checkpoint(header["config"], header["epoch"], tensors, header.get("rng", {}),
                      header.get("log", []), header.get("best", {}))


def restore(ckpt: Checkpoint):
    """Rebuild ``(net, optimizer, train config)`` from a checkpoint."""
    cfg = TrainConfig(**ckpt.config)
    net = build_model(cfg.model)
    load_tensors(net, ckpt.tensors)
    opt = SGD(cfg.momentum)
    opt.velocity = {k[len("velocity/"):]: v.copy() for k, v in ckpt.tensors.items()
                    if k.startswith("velocity/")}
    if ckpt.rng:
        net.set_rng_states(ckpt.rng)
    return net, opt, cfg


def load_tensors(net: ExpressionNet, tensors: dict) -> None:
    targets = {f"param/{n}": p for n, p, _ in net.parameters()}
    targets.update({f"buffer/{n}": b for n, b in net.buffers()})
    for name, dst in targets.items():
        if name not in tensors:
            raise FormatError(f"checkpoint lacks tensor {name}")
        src = tensors[name]
        if src.shape != dst.shape:
            raise FormatError(f"{name}: shape {src.shape} does not match model {dst.shape}")
        dst[...] = src


# -- training loop -----------------------------------------------------------

@dataclass
class TrainResult:
    net: ExpressionNet
    log: list
    best_epoch: int
    best_state: Optional[dict]
    best_cm: Optional[ConfusionMatrix]
    final_cm: ConfusionMatrix

    def best_net(self) -> ExpressionNet:
        if self.best_state is None:
            return self.net
        net = build_model(self.net.config)
        load_tensors(net, self.best_state)
        return net


def _better(acc, loss, best):
    if not best:
        return True
    return acc > best["val_acc"] or (acc == best["val_acc"] and loss < best["val_loss"])


def write_log(path, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])


def train_run(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, out_dir=None,
              resume=None, stop_after: Optional[int] = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, validating after each one.

    Each epoch appends ``{epoch, lr, train_loss, val_loss, train_acc,
    val_acc}`` to the log. With ``out_dir`` the log is written to
    ``log.csv`` and ``final.ckpt``/``best.ckpt`` are kept up to date, so a
    divergence leaves the last good epoch on disk. ``resume`` continues
    from a checkpoint path; ``stop_after`` ends early after that epoch.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        net, opt, _ = restore(ckpt)
        start, records, best = ckpt.epoch, list(ckpt.log), dict(ckpt.best)
        best_path = Path(resume).with_name("best.ckpt")
        best_state = (load_checkpoint(best_path).tensors if best and best_path.exists()
                      else None)
        best_cm = ConfusionMatrix(np.array(best["cm"])) if best else None
    else:
        net, opt = build_model(cfg.model), SGD(cfg.momentum)
        start, records, best, best_state, best_cm = 0, [], {}, None, None
    final_cm = ConfusionMatrix()
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    for epoch in range(start, last):
        lr = lr_at(epoch, cfg)
        seen, loss_sum, correct = 0, 0.0, 0
        for x, y in batch_iter(train_ds, cfg.batch_size, epoch, cfg.seed, cfg.augment,
                               cfg.workers, dtype=net.dtype):
            net.zero_grad()
            logits = net.forward(x, train=True)
            loss, dlogits = softmax_xent(logits, y)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            net.backward(dlogits)
            if cfg.clip_grad_norm is not None:
                clip_gradients(net, cfg.clip_grad_norm)
            opt.step(net.parameters(), lr)
            seen += len(y)
            loss_sum += loss * len(y)
            correct += int((logits.argmax(axis=1) == y).sum())
        val_loss, final_cm = evaluate(net, val_ds) if len(val_ds) else (float("nan"), ConfusionMatrix())
        val_acc = final_cm.counts.trace() / final_cm.total if final_cm.total else float("nan")
        record = {"epoch": epoch + 1, "lr": lr, "train_loss": loss_sum / seen,
                  "val_loss": val_loss, "train_acc": correct / seen, "val_acc": val_acc}
        records.append(record)
        log.info("epoch %d lr %.4g train_loss %.4f val_loss %.4f train_acc %.4f val_acc %.4f",
                 *(record[k] for k in LOG_COLUMNS))
        if final_cm.total and _better(val_acc, val_loss, best):
            best = {"epoch": epoch + 1, "val_acc": val_acc, "val_loss": val_loss,
                    "cm": final_cm.counts.tolist()}
            best_state = {k: v.copy() for k, v in model_tensors(net).items()}
            best_cm = ConfusionMatrix(final_cm.counts.copy())
            if out is not None:
                save_checkpoint(out / "best.ckpt", net, opt, cfg, epoch + 1, records, best)
        if out is not None:
            write_log(out / "log.csv", records)
            save_checkpoint(out / "final.ckpt", net, opt, cfg, epoch + 1, records, best)

    return TrainResult(net, records, best.get("epoch", 0), best_state, best_cm, final_cm)


# -- experiment matrix -------------------------------------------------------

@dataclass
class ExperimentResult:
    name: str
    config: ModelConfig
    result: Optional[TrainResult] = None
    error: Optional[str] = None

    def summaries(self, which="best"):
        nan = Summary(*(float("nan"),) * 4)
        if self.result is None:
            return nan, nan
        cm = self.result.best_cm if which == "best" else self.result.final_cm
        if cm is None or cm.total == 0:
            return nan, nan
        return summarize(cm, 0), summarize(cm, 1)


def run_experiments(base: TrainConfig, train_ds: Dataset, val_ds: Dataset, out_dir=None):
    """Train all eight configurations on one fixed split.

    Returns ``(results, report text, report csv)``; the report uses each
    run's best-validation epoch. A failing experiment is recorded and the
    rest still run.
    """
    out = Path(out_dir) if out_dir is not None else None
    results = []
    for i, (name, mcfg) in enumerate(experiment_configs(base.model), start=1):
        cfg = base.replace(model=mcfg)
        sub = out / f"exp{i}" if out is not None else None
        try:
            res = train_run(cfg, train_ds, val_ds, sub)
            results.append(ExperimentResult(name, mcfg, res))
        except Exception as e:  # noqa: BLE001 - one failed run must not stop the matrix
            log.exception("%s failed", name)
            results.append(ExperimentResult(name, mcfg, error=f"{type(e).__name__}: {e}"))
    rows = [(r.name, *r.summaries("best")) for r in results]
    text, csv_text = report_table(rows)
    final_text, final_csv = report_table([(r.name, *r.summaries("final")) for r in results])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "report.csv").write_text(csv_text)
        (out / "report_final.txt").write_text(final_text)
        (out / "report_final.csv").write_text(final_csv)
    return results, text, csv_text
