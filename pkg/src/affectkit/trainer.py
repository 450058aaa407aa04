"""End-to-end training loop: data in, CCC loss, optimizer step, checkpoints.

Logs are line-oriented UTF-8 (`step=<n> loss=<v>` per update and
`epoch=<n> ccc_v=<v> ccc_a=<v>` per validation pass). The best-validation
checkpoint (by summed valence + arousal CCC) is kept alongside the last.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, data as data_mod, models, postproc
from .objective import Aggregator, ccc_loss_joint
from .tensor import ShapeError


class NumericalFailure(RuntimeError):
    """NaN/Inf loss encountered; carries the offending step index."""

    def __init__(self, step, message):
        super().__init__(message)
        self.step = step


@dataclass
class TrainConfig:
    arch: models.ArchitectureSpec
    aggregator: Aggregator = Aggregator("mean")
    learning_rate: float = 0.001
    optimizer: str = "adam"
    batch_size: int = 4
    seq_len: int = 80
    epochs: int = 10
    seed: int = 0
    checkpoint_dir: str = "."
    init_mode: str = "fresh"        # fresh | load-whole | load-components
    init_checkpoint: str = ""
    init_checkpoint_b: str = ""
    clip_norm: float = 5.0
    target_train_ccc: float | None = None   # stop early once train CCC reaches this

    def __post_init__(self):
        if not 0.0 < self.learning_rate < 1.0:
            raise ValueError(f"learning_rate must be in (0,1), got {self.learning_rate}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init_mode not in ("fresh", "load-whole", "load-components"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)        # (step, loss)
    epochs: list = field(default_factory=list)       # (epoch, ccc_v, ccc_a)
    lines: list = field(default_factory=list)        # chronological log lines
    wall_time: float = 0.0

    def add_step(self, step, loss):
        self.steps.append((step, loss))
        self.lines.append(f"step={step} loss={loss:.6f}")
        return self.lines[-1]

    def add_epoch(self, epoch, ccc_v, ccc_a):
        self.epochs.append((epoch, ccc_v, ccc_a))
        self.lines.append(f"epoch={epoch} ccc_v={ccc_v:.6f} ccc_a={ccc_a:.6f}")
        return self.lines[-1]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for line in self.lines:
                f.write(line + "\n")


def _fan_in(name, shape):
    if name.endswith(".w") and len(shape) == 4:       # conv [k,k,cin,cout]
        return shape[0] * shape[1] * shape[2]
    if len(shape) == 2:                                # dense / gru matrices
        return shape[0]
    return max(shape[0], 1)


def init_parameters(net, seed):
    """Fan-in-scaled uniform weights, zero biases; deterministic under seed.

    Conv/dense weights use He-style uniform (variance 2/fan_in) so activation
    magnitudes stay O(1) through the deep relu trunk; recurrent matrices use
    the smaller variance 1/fan_in to keep gates moderate.
    """
    rng = np.random.default_rng(seed)
    for name in sorted(net.params):
        t = net.params[name]
        if name.endswith(".b"):
            t.data = np.zeros(t.data.shape)
        else:
            fan = _fan_in(name, t.data.shape)
            gain = 3.0 if (".gru" in name or name.startswith("gru")) else 6.0
            lim = np.sqrt(gain / fan)
            t.data = rng.uniform(-lim, lim, t.data.shape)
    return net


def init_fusion(net, checkpoint_a, checkpoint_b, seed=0):
    """Load standalone branch checkpoints into a fusion network.

    Branch tensors live under `fusion.a.*` / `fusion.b.*`; the fusion head is
    freshly initialized. Each loaded tensor is shape-checked by name.
    """
    init_parameters(net, seed)
    entries_a = checkpoint.load(checkpoint_a)
    entries_b = checkpoint.load(checkpoint_b)
    for name, t in net.params.items():
        if name.startswith("fusion.a."):
            src, key = entries_a, name[len("fusion.a."):]
        elif name.startswith("fusion.b."):
            src, key = entries_b, name[len("fusion.b."):]
        else:
            continue
        if key not in src:
            raise ShapeError(f"branch checkpoint missing tensor {key!r} for {name!r}")
        if src[key].shape != t.data.shape:
            raise ShapeError(f"tensor {name!r}: checkpoint shape {src[key].shape} "
                             f"!= expected {t.data.shape}")
        t.data = np.array(src[key])
    return net


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params):
        for t in params.values():
            if t.grad is not None:
                t.data = t.data - self.lr * t.grad


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, t in params.items():
            if t.grad is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(t.data))
            v = self.v.setdefault(name, np.zeros_like(t.data))
            m[...] = b1 * m + (1 - b1) * t.grad
            v[...] = b2 * v + (1 - b2) * t.grad * t.grad
            mh = m / (1 - b1 ** self.t)
            vh = v / (1 - b2 ** self.t)
            t.data = t.data - self.lr * mh / (np.sqrt(vh) + self.eps)


def make_optimizer(cfg):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else Sgd(cfg.learning_rate)


def clip_global_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def predict_tracks(net, utterances, cache, seq_len, batch_size=4):
    """Eval-mode per-frame predictions stitched back into full-length tracks."""
    all_seqs = []
    for u in utterances:
        all_seqs.extend(data_mod.make_sequences(u, seq_len))
    buffers = {u.id: np.zeros((u.n_frames, 2)) for u in utterances}
    for i in range(0, len(all_seqs), batch_size):
        chunk = all_seqs[i:i + batch_size]
        batch = data_mod.assemble_batch(chunk, cache)
        out = net.forward(batch.frames, mode="eval").data
        for j, seq in enumerate(chunk):
            keep = ~seq.pad_mask
            buffers[seq.utterance_id][seq.frame_idx[keep]] = out[j][keep]
    return [postproc.FrameTrack(u.id, buffers[u.id], np.zeros(u.n_frames, bool))
            for u in utterances]


def _validate(net, utterances, cache, cfg):
    tracks = predict_tracks(net, utterances, cache, cfg.seq_len, cfg.batch_size)
    preds = [postproc.utterance_score(t, cfg.aggregator) for t in tracks]
    report = postproc.evaluate(preds, utterances)
    return report["ccc_valence"], report["ccc_arousal"]


def train(cfg, train_manifest, val_manifest, out_dir, log_stream=None):
    """Run the full loop; returns (TrainLog, best_ckpt_path, last_ckpt_path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_utts = data_mod.load_manifest(train_manifest)
    val_utts = data_mod.load_manifest(val_manifest)
    if not train_utts:
        raise ValueError("empty training set")

    net = models.build(cfg.arch)
    if cfg.init_mode == "fresh":
        init_parameters(net, cfg.seed)
    elif cfg.init_mode == "load-whole":
        init_parameters(net, cfg.seed)
        net.load_state_dict(checkpoint.load(cfg.init_checkpoint))
    else:
        init_fusion(net, cfg.init_checkpoint, cfg.init_checkpoint_b, cfg.seed)

    cache = data_mod.FrameCache(train_utts + val_utts, cfg.arch.input_side)
    sequences = []
    for u in train_utts:
        sequences.extend(data_mod.make_sequences(u, cfg.seq_len))

    opt = make_optimizer(cfg)
    drop_rng = np.random.default_rng(cfg.seed + 1)
    log = TrainLog()
    best = -np.inf
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    started = time.monotonic()
    step = 0

    def emit(line):
        if log_stream is not None:
            log_stream.write(line + "\n")

    for epoch in range(1, cfg.epochs + 1):
        batches = data_mod.make_batches(sequences, cfg.batch_size,
                                        cfg.seed + epoch, mode="train")
        for chunk in batches:
            batch = data_mod.assemble_batch(chunk, cache)
            step += 1
            out = models.forward_sequence(net, batch, mode="train", rng=drop_rng)
            loss = ccc_loss_joint(out, batch.labels, cfg.aggregator,
                                  mask=batch.pad_mask)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalFailure(step, f"non-finite loss at step {step}")
            net.zero_grads()
            loss.backward()
            clip_global_norm(net.params, cfg.clip_norm)
            opt.step(net.params)
            emit(log.add_step(step, value))

        ccc_v, ccc_a = _validate(net, val_utts, cache, cfg)
        emit(log.add_epoch(epoch, ccc_v, ccc_a))
        checkpoint.save(last_path, net.state_dict())
        if ccc_v + ccc_a > best:
            best = ccc_v + ccc_a
            checkpoint.save(best_path, net.state_dict())
        if (cfg.target_train_ccc is not None
                and ccc_v >= cfg.target_train_ccc
                and ccc_a >= cfg.target_train_ccc):
            break

    log.wall_time = time.monotonic() - started
    log.write(out_dir / "train.log")
    return log, best_path, last_path
