"""Declarative builders for the CNN-RNN valence/arousal architecture family.

Variants over a VGG-16-style backbone: plain CNN, basic CNN-RNN, and the
1/2/3-RNN extensions that tap intermediate features (last or penultimate conv
layer, last pooling layer, first FC layer) into separate recurrent heads.
A ResNet-style bottleneck backbone supports RNN and FC-RNN heads, and a fusion
network concatenates the recurrent outputs of one VGG branch and one ResNet
branch. Every variant can be built at a reduced channel scale for desk-size
training; recurrent width (128) and the 2-unit output are never scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .gru import gru_params, gru_step
from .tensor import ShapeError, Tensor

VGG_BLOCKS = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
VGG_FC = [4096, 2048]
RESNET_STAGE_WIDTHS = [64, 128, 256, 512]
RESNET_EXPANSION = 4
GRU_LAYERS = 2
FC_DROPOUT = 0.5
GRU_DROPOUT = 0.2

VGG_VARIANTS = ("cnn-only", "basic", "1rnn", "2rnn", "2rnn-fc", "3rnn", "3rnn-fc")
RESNET_VARIANTS = ("basic", "fc-rnn")


@dataclass(frozen=True)
class ArchitectureSpec:
    backbone: str = "vgg"
    variant: str = "basic"
    conv_tap: str = "last"          # 3rnn variants only: last | penultimate
    fusion_fc: bool = False
    scale: float = 1.0
    input_side: int = 96
    rnn_width: int = 128
    fusion_fc_width: int = 64

    def __post_init__(self):
        if self.backbone not in ("vgg", "resnet"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.backbone == "vgg" and self.variant not in VGG_VARIANTS:
            raise ValueError(f"unknown vgg variant {self.variant!r}")
        if self.backbone == "resnet" and self.variant not in RESNET_VARIANTS:
            raise ValueError(f"unknown resnet variant {self.variant!r}")
        if self.conv_tap not in ("last", "penultimate"):
            raise ValueError(f"unknown conv_tap {self.conv_tap!r}")
        if not 0 < self.scale <= 1:
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")
        if self.backbone == "vgg" and self.input_side % 32 != 0:
            raise ValueError(f"vgg input_side must be divisible by 32 "
                             f"(five stride-2 pools), got {self.input_side}")
        if self.input_side < 32:
            raise ValueError(f"input_side too small: {self.input_side}")

    def scaled(self, width):
        return max(1, round(self.scale * width))


class Network:
    """A built variant: named parameters plus a forward over frame batches."""

    def __init__(self, spec, params, forward_fn, taps, rnn_inputs):
        self.spec = spec
        self.params = params            # name -> Tensor, insertion-ordered
        self._forward_fn = forward_fn
        self.taps = taps                # tap name -> flattened feature width
        self.rnn_inputs = rnn_inputs    # per recurrent head: tuple of tap names

    def forward(self, frames, mode="eval", rng=None):
        """Run on [B,T,H,W,C] frames; returns a Tensor[B,T,2]."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 5:
            raise ShapeError(f"expected [B,T,H,W,C] frames, got {frames.shape}")
        if frames.shape[2] != self.spec.input_side or frames.shape[3] != self.spec.input_side:
            raise ShapeError(f"frames are {frames.shape[2]}x{frames.shape[3]}, "
                             f"network expects {self.spec.input_side}x{self.spec.input_side}")
        if mode == "train" and rng is None:
            rng = np.random.default_rng(0)
        return self._forward_fn(self.params, frames, mode, rng)

    def param_count(self):
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, entries, prefix=""):
        for name, t in self.params.items():
            key = prefix + name
            if key not in entries:
                raise ShapeError(f"checkpoint missing tensor {key!r}")
            if entries[key].shape != t.data.shape:
                raise ShapeError(f"checkpoint tensor {key!r} has shape "
                                 f"{entries[key].shape}, expected {t.data.shape}")
            t.data = np.array(entries[key], dtype=np.float64)


def _param(params, name, shape):
    t = Tensor(np.zeros(shape), requires_grad=True, name=name)
    params[name] = t
    return t


def _conv_params(params, name, k, cin, cout):
    return (_param(params, f"{name}.w", (k, k, cin, cout)),
            _param(params, f"{name}.b", (cout,)))


def _dense_params(params, name, n, m):
    return (_param(params, f"{name}.w", (n, m)),
            _param(params, f"{name}.b", (m,)))


def _flatten_frames(x):
    n = x.data.shape[0]
    return T.reshape(x, (n, int(np.prod(x.data.shape[1:]))))


# -- VGG backbone -------------------------------------------------------------

def _build_vgg_trunk(params, spec, prefix=""):
    """Register conv/pool parameters; returns per-tap flattened widths."""
    cin = 3
    side = spec.input_side
    for bi, (reps, width) in enumerate(VGG_BLOCKS, start=1):
        cout = spec.scaled(width)
        for r in range(1, reps + 1):
            _conv_params(params, f"{prefix}conv{bi}_{r}", 3, cin, cout)
            cin = cout
        side //= 2
    conv_side = spec.input_side // 16          # block 5 runs pre-final-pool
    c5 = spec.scaled(VGG_BLOCKS[-1][1])
    return {
        "conv_last": conv_side * conv_side * c5,
        "conv_penultimate": conv_side * conv_side * c5,
        "pool_last": side * side * c5,
    }


def _vgg_trunk_forward(params, spec, x, prefix=""):
    """x: Tensor[N,H,W,3] -> taps {conv_last, conv_penultimate, pool_last}."""
    taps = {}
    h = x
    n_blocks = len(VGG_BLOCKS)
    for bi, (reps, _) in enumerate(VGG_BLOCKS, start=1):
        for r in range(1, reps + 1):
            w = params[f"{prefix}conv{bi}_{r}.w"]
            b = params[f"{prefix}conv{bi}_{r}.b"]
            h = T.relu(T.add(T.conv2d(h, w, 1, "same"), b))
            if bi == n_blocks and r == reps - 1:
                taps["conv_penultimate"] = _flatten_frames(h)
            if bi == n_blocks and r == reps:
                taps["conv_last"] = _flatten_frames(h)
        h = T.maxpool2d(h, 2, 2)
    taps["pool_last"] = _flatten_frames(h)
    return taps


def _build_gru_stack(params, spec, prefix, input_width):
    gru_params(params, f"{prefix}gru1", input_width, spec.rnn_width, None)
    gru_params(params, f"{prefix}gru2", spec.rnn_width, spec.rnn_width, None)


def _run_gru_stack(params, spec, prefix, x_seq, mode, rng):
    """Unroll the 2-layer GRU over a Tensor[B,T,n]; returns Tensor[B,T,m]."""
    b, t, n = x_seq.data.shape
    m = spec.rnn_width
    p1 = gru_params(params, f"{prefix}gru1", n, m)
    p2 = gru_params(params, f"{prefix}gru2", m, m)
    h1 = Tensor(np.zeros((b, m)))
    h2 = Tensor(np.zeros((b, m)))
    outs = []
    for step in range(t):
        xt = x_seq[:, step, :]
        h1 = gru_step(xt, h1, p1)
        h2 = gru_step(T.dropout(h1, GRU_DROPOUT, mode, rng), h2, p2)
        outs.append(h2)
    return T.stack(outs, axis=1)


def _per_frame_dense(params, name, x_seq, act=None, mode=None, rng=None,
                     drop=0.0):
    """Apply a dense layer to every (b, t) position of a Tensor[B,T,n]."""
    b, t, n = x_seq.data.shape
    flat = T.reshape(x_seq, (b * t, n))
    w, bias = params[f"{name}.w"], params[f"{name}.b"]
    y = T.dense(flat, w, bias)
    if act:
        y = T.activation(y, act)
    if drop:
        y = T.dropout(y, drop, mode, rng)
    return T.reshape(y, (b, t, w.data.shape[1]))


def build_vgg_cnn(spec):
    """Plain VGG-style CNN: conv/pool blocks, two hidden FCs, 2-unit output."""
    if spec.variant != "cnn-only":
        raise ValueError("build_vgg_cnn expects variant=cnn-only")
    params = {}
    taps = _build_vgg_trunk(params, spec)
    fc1_w, fc2_w = (spec.scaled(w) for w in VGG_FC)
    _dense_params(params, "fc1", taps["pool_last"], fc1_w)
    _dense_params(params, "fc2", fc1_w, fc2_w)
    _dense_params(params, "out", fc2_w, 2)
    taps = dict(taps, fc1=fc1_w, fc2=fc2_w)

    def forward(p, frames, mode, rng):
        bsz, tlen = frames.shape[:2]
        x = Tensor(frames.reshape((bsz * tlen,) + frames.shape[2:]))
        trunk = _vgg_trunk_forward(p, spec, x)
        h = T.dropout(T.relu(T.dense(trunk["pool_last"], p["fc1.w"], p["fc1.b"])),
                      FC_DROPOUT, mode, rng)
        h = T.dropout(T.relu(T.dense(h, p["fc2.w"], p["fc2.b"])),
                      FC_DROPOUT, mode, rng)
        y = T.dense(h, p["out.w"], p["out.b"])
        return T.reshape(y, (bsz, tlen, 2))

    return Network(spec, params, forward, taps, rnn_inputs=())


def _build_vgg_rnn_common(spec, prefix=""):
    """Shared conv trunk + FC1 registration for all VGG RNN variants."""
    params = {}
    taps = _build_vgg_trunk(params, spec, prefix)
    fc1_w = spec.scaled(VGG_FC[0])
    _dense_params(params, f"{prefix}fc1", taps["pool_last"], fc1_w)
    taps = dict(taps, fc1=fc1_w)
    return params, taps


def _vgg_features(params, spec, frames, mode, rng, prefix=""):
    """Per-frame trunk taps reshaped to [B,T,width] sequences."""
    bsz, tlen = frames.shape[:2]
    x = Tensor(frames.reshape((bsz * tlen,) + frames.shape[2:]))
    trunk = _vgg_trunk_forward(params, spec, x, prefix)
    fc1 = T.dropout(
        T.relu(T.dense(trunk["pool_last"], params[f"{prefix}fc1.w"],
                       params[f"{prefix}fc1.b"])),
        FC_DROPOUT, mode, rng)
    feats = dict(trunk, fc1=fc1)
    return {k: T.reshape(v, (bsz, tlen, v.data.shape[1])) for k, v in feats.items()}


def build_basic_cnn_rnn(spec):
    """VGG trunk -> FC (dropout 0.5) -> 2-layer GRU (dropout 0.2 between) -> 2."""
    if spec.variant != "basic":
        raise ValueError("build_basic_cnn_rnn expects variant=basic")
    params, taps = _build_vgg_rnn_common(spec)
    _build_gru_stack(params, spec, "", taps["fc1"])
    _dense_params(params, "out", spec.rnn_width, 2)
    rnn_inputs = (("fc1",),)

    def forward(p, frames, mode, rng):
        feats = _vgg_features(p, spec, frames, mode, rng)
        h = _run_gru_stack(p, spec, "", feats["fc1"], mode, rng)
        return _per_frame_dense(p, "out", h)

    return Network(spec, params, forward, taps, rnn_inputs)


def build_multi_rnn(spec):
    """The 1/2/3-RNN extensions over the VGG trunk's feature taps."""
    if spec.variant not in ("1rnn", "2rnn", "2rnn-fc", "3rnn", "3rnn-fc"):
        raise ValueError(f"build_multi_rnn got variant {spec.variant!r}")
    params, taps = _build_vgg_rnn_common(spec)
    conv_tap = "conv_last" if spec.conv_tap == "last" else "conv_penultimate"
    if spec.variant == "1rnn":
        rnn_inputs = ((conv_tap, "pool_last", "fc1"),)
    elif spec.variant in ("2rnn", "2rnn-fc"):
        rnn_inputs = (("pool_last",), ("fc1",))
    else:
        rnn_inputs = ((conv_tap,), ("pool_last",), ("fc1",))
    for i, group in enumerate(rnn_inputs, start=1):
        width = sum(taps[name] for name in group)
        _build_gru_stack(params, spec, f"head{i}.", width)
    concat_width = len(rnn_inputs) * spec.rnn_width
    head_fc = spec.variant.endswith("-fc")
    pre_out = concat_width
    if head_fc:
        fcw = spec.scaled(64)
        _dense_params(params, "headfc", concat_width, fcw)
        pre_out = fcw
    _dense_params(params, "out", pre_out, 2)

    def forward(p, frames, mode, rng):
        feats = _vgg_features(p, spec, frames, mode, rng)
        heads = []
        for i, group in enumerate(rnn_inputs, start=1):
            xin = (feats[group[0]] if len(group) == 1
                   else T.concat_features([feats[g] for g in group], axis=-1))
            heads.append(_run_gru_stack(p, spec, f"head{i}.", xin, mode, rng))
        h = heads[0] if len(heads) == 1 else T.concat_features(heads, axis=-1)
        if head_fc:
            h = _per_frame_dense(p, "headfc", h, act="relu")
        return _per_frame_dense(p, "out", h)

    return Network(spec, params, forward, taps, rnn_inputs)


# -- ResNet backbone -----------------------------------------------------------

def _build_resnet_trunk(params, spec, prefix=""):
    c1 = spec.scaled(64)
    _conv_params(params, f"{prefix}rconv1", 7, 3, c1)
    cin = c1
    for si, width in enumerate(RESNET_STAGE_WIDTHS, start=1):
        mid = spec.scaled(width)
        cout = mid * RESNET_EXPANSION
        base = f"{prefix}stage{si}"
        _conv_params(params, f"{base}.a", 1, cin, mid)
        _conv_params(params, f"{base}.b", 3, mid, mid)
        _conv_params(params, f"{base}.c", 1, mid, cout)
        _conv_params(params, f"{base}.proj", 1, cin, cout)
        cin = cout
    return cin


def bottleneck_block(x, convs, stride, projection=None):
    """1x1 / 3x3 / 1x1 bottleneck with an additive shortcut.

    `convs` is ((wa, ba), (wb, bb), (wc, bc)). When the block changes width or
    stride, a 1x1 `projection` (w, b) is required; without one the shortcut
    shapes cannot add and the block is rejected.
    """
    (wa, ba), (wb, bb), (wc, bc) = convs
    h = T.relu(T.add(T.conv2d(x, wa, stride, "same"), ba))
    h = T.relu(T.add(T.conv2d(h, wb, 1, "same"), bb))
    h = T.add(T.conv2d(h, wc, 1, "same"), bc)
    if h.data.shape == x.data.shape:
        shortcut = x
    elif projection is None:
        raise ShapeError(f"bottleneck shortcut mismatch: input {x.data.shape} vs "
                         f"output {h.data.shape} and no projection enabled")
    else:
        pw, pb = projection
        shortcut = T.add(T.conv2d(x, pw, stride, "same"), pb)
    return T.relu(T.add(h, shortcut))


def _resnet_trunk_forward(params, spec, x, prefix=""):
    h = T.relu(T.add(T.conv2d(x, params[f"{prefix}rconv1.w"], 2, "same"),
                     params[f"{prefix}rconv1.b"]))
    h = T.maxpool2d(h, 3, 2)
    for si in range(1, len(RESNET_STAGE_WIDTHS) + 1):
        base = f"{prefix}stage{si}"
        convs = tuple((params[f"{base}.{k}.w"], params[f"{base}.{k}.b"])
                      for k in ("a", "b", "c"))
        proj = (params[f"{base}.proj.w"], params[f"{base}.proj.b"])
        h = bottleneck_block(h, convs, stride=1 if si == 1 else 2, projection=proj)
    # global average pool over the spatial grid
    n, hh, ww, c = h.data.shape
    return T.tmean(T.reshape(h, (n, hh * ww, c)), axis=1)


def build_resnet_rnn(spec):
    """ResNet bottleneck trunk -> [optional FC] -> 2-layer GRU -> 2 outputs."""
    if spec.backbone != "resnet":
        raise ValueError("build_resnet_rnn expects backbone=resnet")
    params = {}
    feat_width = _build_resnet_trunk(params, spec)
    taps = {"gap": feat_width}
    with_fc = spec.variant == "fc-rnn"
    rnn_in = feat_width
    if with_fc:
        fcw = spec.scaled(VGG_FC[0])
        _dense_params(params, "fc1", feat_width, fcw)
        taps["fc1"] = fcw
        rnn_in = fcw
    _build_gru_stack(params, spec, "", rnn_in)
    _dense_params(params, "out", spec.rnn_width, 2)
    rnn_inputs = (("fc1",) if with_fc else ("gap",),)

    def forward(p, frames, mode, rng):
        bsz, tlen = frames.shape[:2]
        x = Tensor(frames.reshape((bsz * tlen,) + frames.shape[2:]))
        feat = _resnet_trunk_forward(p, spec, x)
        if with_fc:
            feat = T.dropout(T.relu(T.dense(feat, p["fc1.w"], p["fc1.b"])),
                             FC_DROPOUT, mode, rng)
        seq = T.reshape(feat, (bsz, tlen, feat.data.shape[1]))
        h = _run_gru_stack(p, spec, "", seq, mode, rng)
        return _per_frame_dense(p, "out", h)

    return Network(spec, params, forward, taps, rnn_inputs)


# -- fusion ---------------------------------------------------------------------

class FusionNetwork(Network):
    """Two-branch network with namespaced parameters for component loading."""

    def __init__(self, spec_a, spec_b, fusion_fc, params, forward_fn, taps,
                 rnn_inputs):
        super().__init__(spec_a, params, forward_fn, taps, rnn_inputs)
        self.spec_a = spec_a
        self.spec_b = spec_b
        self.fusion_fc = fusion_fc


def build_fusion(spec_a, spec_b, fusion_fc=False):
    """Concatenate the GRU outputs of a VGG branch and a ResNet branch."""
    if spec_a.backbone != "vgg" or spec_a.variant != "basic":
        raise ValueError("fusion branch A must be the VGG CNN-FC-RNN (variant=basic)")
    if spec_b.backbone != "resnet":
        raise ValueError("fusion branch B must be ResNet-based")
    if spec_a.input_side != spec_b.input_side:
        raise ValueError("fusion branches must share input_side")
    params = {}
    # branch A: vgg trunk + fc1 + gru stack
    taps_a = _build_vgg_trunk(params, spec_a, "fusion.a.")
    fc1_w = spec_a.scaled(VGG_FC[0])
    _dense_params(params, "fusion.a.fc1", taps_a["pool_last"], fc1_w)
    _build_gru_stack(params, spec_a, "fusion.a.", fc1_w)
    # branch B: resnet trunk (+fc) + gru stack
    feat_b = _build_resnet_trunk(params, spec_b, "fusion.b.")
    b_with_fc = spec_b.variant == "fc-rnn"
    rnn_in_b = feat_b
    if b_with_fc:
        fcw = spec_b.scaled(VGG_FC[0])
        _dense_params(params, "fusion.b.fc1", feat_b, fcw)
        rnn_in_b = fcw
    _build_gru_stack(params, spec_b, "fusion.b.", rnn_in_b)
    # fusion head
    concat_width = spec_a.rnn_width + spec_b.rnn_width
    pre_out = concat_width
    if fusion_fc:
        _dense_params(params, "fusion.head.fc", concat_width, spec_a.fusion_fc_width)
        pre_out = spec_a.fusion_fc_width
    _dense_params(params, "fusion.head.out", pre_out, 2)
    taps = {"a.fc1": fc1_w, "b.gap": feat_b}
    rnn_inputs = (("a.fc1",), ("b.fc1",) if b_with_fc else ("b.gap",))

    def forward(p, frames, mode, rng):
        bsz, tlen = frames.shape[:2]
        feats_a = _vgg_features(p, spec_a, frames, mode, rng, "fusion.a.")
        ha = _run_gru_stack(p, spec_a, "fusion.a.", feats_a["fc1"], mode, rng)
        x = Tensor(frames.reshape((bsz * tlen,) + frames.shape[2:]))
        feat = _resnet_trunk_forward(p, spec_b, x, "fusion.b.")
        if b_with_fc:
            feat = T.dropout(T.relu(T.dense(feat, p["fusion.b.fc1.w"],
                                            p["fusion.b.fc1.b"])),
                             FC_DROPOUT, mode, rng)
        seq = T.reshape(feat, (bsz, tlen, feat.data.shape[1]))
        hb = _run_gru_stack(p, spec_b, "fusion.b.", seq, mode, rng)
        h = T.concat_features([ha, hb], axis=-1)
        if fusion_fc:
            h = _per_frame_dense(p, "fusion.head.fc", h, act="relu")
        return _per_frame_dense(p, "fusion.head.out", h)

    return FusionNetwork(spec_a, spec_b, fusion_fc, params, forward, taps,
                         rnn_inputs)


def build(spec):
    """Dispatch to the right builder for a single-backbone spec."""
    if spec.backbone == "resnet":
        return build_resnet_rnn(spec)
    if spec.variant == "cnn-only":
        return build_vgg_cnn(spec)
    if spec.variant == "basic":
        return build_basic_cnn_rnn(spec)
    return build_multi_rnn(spec)


def forward_sequence(net, batch, mode="eval", rng=None):
    """Evaluate a network on a SequenceBatch (or raw [B,T,H,W,C] array)."""
    frames = batch.frames if hasattr(batch, "frames") else batch
    return net.forward(frames, mode=mode, rng=rng)


def all_variant_specs(scale=1.0, input_side=96):
    """The nine single-backbone builds used by the structural conformance audit."""
    mk = lambda **kw: ArchitectureSpec(scale=scale, input_side=input_side, **kw)
    return {
        "vgg-cnn-only": mk(backbone="vgg", variant="cnn-only"),
        "vgg-basic": mk(backbone="vgg", variant="basic"),
        "vgg-1rnn": mk(backbone="vgg", variant="1rnn"),
        "vgg-2rnn": mk(backbone="vgg", variant="2rnn"),
        "vgg-2rnn-fc": mk(backbone="vgg", variant="2rnn-fc"),
        "vgg-3rnn-last": mk(backbone="vgg", variant="3rnn", conv_tap="last"),
        "vgg-3rnn-penultimate": mk(backbone="vgg", variant="3rnn", conv_tap="penultimate"),
        "vgg-3rnn-fc": mk(backbone="vgg", variant="3rnn-fc"),
        "resnet-basic": mk(backbone="resnet", variant="basic"),
        "resnet-fc-rnn": mk(backbone="resnet", variant="fc-rnn"),
    }
