"""Three-module localization network.

Pipeline per observation: a shared MLP encoder embeds the observation and
every node descriptor; a pair network turns (observation, node) embedding
pairs into per-node features; a graph-convolutional LSTM (gates built from
GIN aggregations of the current features and the previous cell output,
with peephole terms) carries per-node recurrent state; a skip FC forwards
self-node features around the recurrent layer; an identification head maps
each node's concatenated features to a likelihood, softmaxed over nodes.

Variants: "no_gclstm" replaces the recurrent layer with a stateless
per-node FC stack, "no_skip" drops the skip path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, BatchNorm, concat, softmax_rows
from .topo_graph import TopoMap

VARIANTS = ("full", "no_gclstm", "no_skip")


@dataclass
class LocalizerConfig:
    d_obs: int = 16
    d_emb: int = 16
    d_x: int = 16
    d_h: int = 32
    d_skip: int = 16
    enc_hidden: int = 16
    gin_hidden: int = 32
    head_hidden: int = 32
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def to_dict(self):
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d):
        return LocalizerConfig(**d)


def _linear_init(rng, fan_in, fan_out, name):
    w = rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
    # small random bias keeps pre-activations off the exact ReLU kink even
    # when an input block is identically zero (e.g. the initial cell output)
    b = 0.01 * rng.normal(size=fan_out)
    return Tensor.param(w, name=f"{name}.W"), Tensor.param(b, name=f"{name}.b")


@dataclass
class EncoderParams:
    layers: list  # [(W, b), ...], ReLU between layers

    @staticmethod
    def init(cfg, rng):
        dims = [cfg.d_obs, cfg.enc_hidden, cfg.enc_hidden, cfg.d_emb]
        return EncoderParams([
            _linear_init(rng, dims[i], dims[i + 1], f"encoder.{i}") for i in range(3)
        ])


@dataclass
class PairNetParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def init(cfg, rng):
        w1, b1 = _linear_init(rng, 2 * cfg.d_emb, cfg.d_x, "pair.0")
        w2, b2 = _linear_init(rng, cfg.d_x, cfg.d_x, "pair.1")
        return PairNetParams(w1, b1, w2, b2)


@dataclass
class GINParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    eps: Tensor  # learnable scalar

    @staticmethod
    def init(d_in, hidden, d_out, rng, name):
        w1, b1 = _linear_init(rng, d_in, hidden, f"{name}.mlp0")
        w2, b2 = _linear_init(rng, hidden, d_out, f"{name}.mlp1")
        return GINParams(w1, b1, w2, b2, Tensor.param(0.0, name=f"{name}.eps"))


@dataclass
class GCLSTMParams:
    gins: list  # G_1..G_8; odd slots consume x_t, even slots consume h_{t-1}
    w_ci: Tensor
    w_cf: Tensor
    w_co: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    @staticmethod
    def init(cfg, rng):
        gins = []
        for k in range(1, 9):
            d_in = cfg.d_x if k % 2 == 1 else cfg.d_h
            gins.append(GINParams.init(d_in, cfg.gin_hidden, cfg.d_h, rng, f"gclstm.gin{k}"))
        d = cfg.d_h
        return GCLSTMParams(
            gins,
            Tensor.param(0.1 * rng.normal(size=d), name="gclstm.w_ci"),
            Tensor.param(0.1 * rng.normal(size=d), name="gclstm.w_cf"),
            Tensor.param(0.1 * rng.normal(size=d), name="gclstm.w_co"),
            Tensor.param(np.zeros(d), name="gclstm.b_i"),
            Tensor.param(np.ones(d), name="gclstm.b_f"),  # forget bias 1: retain memory early
            Tensor.param(np.zeros(d), name="gclstm.b_c"),
            Tensor.param(np.zeros(d), name="gclstm.b_o"),
        )


@dataclass
class GCLSTMState:
    h: Tensor
    c: Tensor


@dataclass
class FrameNetParams:
    """Per-node FC stack standing in for the recurrent layer (w/o GCLSTM)."""
    w1: Tensor
    b1: Tensor
    bn1: BatchNorm
    w2: Tensor
    b2: Tensor
    bn2: BatchNorm

    @staticmethod
    def init(cfg, rng):
        w1, b1 = _linear_init(rng, cfg.d_x, cfg.d_h, "frame.0")
        w2, b2 = _linear_init(rng, cfg.d_h, cfg.d_h, "frame.1")
        bn1 = BatchNorm(cfg.d_h, name="frame.bn0", track_running_stats=False)
        bn2 = BatchNorm(cfg.d_h, name="frame.bn1", track_running_stats=False)
        return FrameNetParams(w1, b1, bn1, w2, b2, bn2)


@dataclass
class SkipParams:
    w: Tensor
    b: Tensor

    @staticmethod
    def init(cfg, rng):
        w, b = _linear_init(rng, cfg.d_x, cfg.d_skip, "skip")
        return SkipParams(w, b)


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    bn: BatchNorm
    w2: Tensor
    b2: Tensor

    @staticmethod
    def init(cfg, rng, d_in):
        w1, b1 = _linear_init(rng, d_in, cfg.head_hidden, "head.0")
        w2, b2 = _linear_init(rng, cfg.head_hidden, 1, "head.1")
        bn = BatchNorm(cfg.head_hidden, name="head.bn", track_running_stats=False)
        return HeadParams(w1, b1, bn, w2, b2)


# -- forward operations ------------------------------------------------------


def encode(params: EncoderParams, x: Tensor) -> Tensor:
    out = x
    for i, (w, b) in enumerate(params.layers):
        out = out @ w + b
        if i < len(params.layers) - 1:
            out = out.relu()
    return out


def pair_features(params: PairNetParams, current_emb: Tensor, node_embs: Tensor) -> Tensor:
    n = node_embs.shape[0]
    tiled = Tensor.const(np.ones((n, 1))) @ current_emb  # broadcast the query row
    z = concat([tiled, node_embs], axis=1)
    a = (z @ params.w1 + params.b1).relu()
    return a @ params.w2 + params.b2


def _as_adjacency(x_rows, edges):
    if isinstance(edges, Tensor):
        return edges
    a = np.zeros((x_rows, x_rows))
    for s, t in edges:
        if not (0 <= s < x_rows and 0 <= t < x_rows) or s == t:
            raise ValueError(f"invalid edge ({s}, {t}) for {x_rows} nodes")
        a[s, t] = 1.0
        a[t, s] = 1.0
    return Tensor.const(a)


def gin_aggregate(params: GINParams, x: Tensor, edges) -> Tensor:
    adj = _as_adjacency(x.shape[0], edges)
    agg = x * (params.eps + 1.0) + adj @ x
    h = (agg @ params.w1 + params.b1).relu()
    return h @ params.w2 + params.b2


def gclstm_step(params: GCLSTMParams, x: Tensor, edges, state: GCLSTMState):
    adj = _as_adjacency(x.shape[0], edges)
    g = params.gins
    h_prev, c_prev = state.h, state.c
    i = (gin_aggregate(g[0], x, adj) + gin_aggregate(g[1], h_prev, adj)
         + params.w_ci * c_prev + params.b_i).sigmoid()
    f = (gin_aggregate(g[2], x, adj) + gin_aggregate(g[3], h_prev, adj)
         + params.w_cf * c_prev + params.b_f).sigmoid()
    c = f * c_prev + i * (gin_aggregate(g[4], x, adj)
                          + gin_aggregate(g[5], h_prev, adj) + params.b_c).tanh()
    o = (gin_aggregate(g[6], x, adj) + gin_aggregate(g[7], h_prev, adj)
         + params.w_co * c + params.b_o).sigmoid()
    h = o * c.tanh()
    return h, GCLSTMState(h, c)


def frame_forward(params: FrameNetParams, x: Tensor, training: bool) -> Tensor:
    a = params.bn1(x @ params.w1 + params.b1, training).relu()
    return params.bn2(a @ params.w2 + params.b2, training).relu()


def skip_path(params: SkipParams, x: Tensor) -> Tensor:
    return x @ params.w + params.b


def identify_logits(params: HeadParams, h: Tensor, skip: Tensor | None, training: bool) -> Tensor:
    z = concat([h, skip], axis=1) if skip is not None else h
    a = params.bn(z @ params.w1 + params.b1, training).relu()
    return (a @ params.w2 + params.b2).reshape((h.shape[0],))


def identify(params: HeadParams, h: Tensor, skip: Tensor | None, training: bool) -> Tensor:
    return softmax_rows(identify_logits(params, h, skip, training))


def reset_state(n: int, d_h: int) -> GCLSTMState:
    if n <= 0 or d_h <= 0:
        raise ValueError("state dimensions must be positive")
    return GCLSTMState(Tensor.zeros((n, d_h)), Tensor.zeros((n, d_h)))


# -- model container ---------------------------------------------------------


@dataclass
class MapContext:
    node_embs: Tensor
    adj: Tensor


class Localizer:
    def __init__(self, cfg: LocalizerConfig, seed=0):
        self.cfg = cfg
        self.training = True
        rng = np.random.default_rng(seed)
        self.encoder = EncoderParams.init(cfg, rng)
        self.pair = PairNetParams.init(cfg, rng)
        if cfg.variant == "no_gclstm":
            self.gclstm = None
            self.frame = FrameNetParams.init(cfg, rng)
        else:
            self.gclstm = GCLSTMParams.init(cfg, rng)
            self.frame = None
        if cfg.variant == "no_skip":
            self.skip = None
            head_in = cfg.d_h
        else:
            self.skip = SkipParams.init(cfg, rng)
            head_in = cfg.d_h + cfg.d_skip
        self.head = HeadParams.init(cfg, rng, head_in)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- parameter bookkeeping ----------------------------------------------

    def encoder_params(self):
        return [t for pair in self.encoder.layers for t in pair]

    def other_params(self):
        out = [self.pair.w1, self.pair.b1, self.pair.w2, self.pair.b2]
        if self.gclstm is not None:
            for g in self.gclstm.gins:
                out += [g.w1, g.b1, g.w2, g.b2, g.eps]
            out += [self.gclstm.w_ci, self.gclstm.w_cf, self.gclstm.w_co,
                    self.gclstm.b_i, self.gclstm.b_f, self.gclstm.b_c, self.gclstm.b_o]
        if self.frame is not None:
            out += [self.frame.w1, self.frame.b1, self.frame.w2, self.frame.b2]
            out += list(self.frame.bn1.params().values())
            out += list(self.frame.bn2.params().values())
        if self.skip is not None:
            out += [self.skip.w, self.skip.b]
        out += [self.head.w1, self.head.b1, self.head.w2, self.head.b2]
        out += list(self.head.bn.params().values())
        return out

    def parameters(self):
        return self.encoder_params() + self.other_params()

    def named_params(self):
        return {p.name: p for p in self.parameters()}

    def _batchnorms(self):
        bns = [self.head.bn]
        if self.frame is not None:
            bns += [self.frame.bn1, self.frame.bn2]
        return bns

    def buffers(self):
        out = {}
        for bn in self._batchnorms():
            out.update(bn.buffers())
        return out

    def num_params(self):
        return sum(p.data.size for p in self.parameters())

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        T.save_checkpoint(path, self.named_params(), self.buffers(),
                          manifest=self.cfg.to_dict())

    def load_state(self, params, buffers):
        own = self.named_params()
        for name, data in params.items():
            if name not in own:
                raise KeyError(f"unknown parameter {name!r} in checkpoint")
            if tuple(own[name].data.shape) != tuple(data.shape):
                raise ValueError(f"shape mismatch for {name!r}")
            own[name].data = data.copy()
        for bn in self._batchnorms():
            bn.load_buffers(buffers)

    @staticmethod
    def from_checkpoint(path):
        params, buffers, manifest = T.load_checkpoint(path)
        model = Localizer(LocalizerConfig.from_dict(manifest))
        model.load_state(params, buffers)
        return model

    def state_snapshot(self):
        return ({k: p.data.copy() for k, p in self.named_params().items()},
                {k: np.array(v) for k, v in self.buffers().items()})


def make_context(model: Localizer, topo: TopoMap) -> MapContext:
    node_embs = encode(model.encoder, Tensor.const(topo.descriptors))
    return MapContext(node_embs, Tensor.const(topo.undirected_adjacency_matrix()))


def localize_step(model: Localizer, state: GCLSTMState, observation, topo: TopoMap,
                  ctx: MapContext | None = None, return_logits=False):
    """One observation in: per-node probabilities, argmax node, next state out."""
    obs = np.asarray(observation, dtype=np.float64)
    if obs.shape != (model.cfg.d_obs,):
        raise ValueError(f"observation shape {obs.shape} does not match d_obs={model.cfg.d_obs}")
    if topo.descriptors.shape[1] != model.cfg.d_obs:
        raise ValueError("map descriptor dimension does not match model")
    if ctx is None:
        ctx = make_context(model, topo)
    cur_emb = encode(model.encoder, Tensor.const(obs.reshape(1, -1)))
    x = pair_features(model.pair, cur_emb, ctx.node_embs)
    if model.cfg.variant == "no_gclstm":
        h = frame_forward(model.frame, x, model.training)
        new_state = state
    else:
        h, new_state = gclstm_step(model.gclstm, x, ctx.adj, state)
    skip = skip_path(model.skip, x) if model.skip is not None else None
    logits = identify_logits(model.head, h, skip, model.training)
    probs = softmax_rows(logits)
    if not model.training and model.cfg.variant != "no_gclstm":
        new_state = GCLSTMState(new_state.h.detach(), new_state.c.detach())
    pred = int(np.argmax(probs.data))
    if return_logits:
        return probs, pred, new_state, logits
    return probs, pred, new_state
