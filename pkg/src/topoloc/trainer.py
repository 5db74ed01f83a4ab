"""Sequence training with submap sampling and sim/real-like domain mixing.

A training sample is a window of observations, the map, and the ground
truth node per step.  Each draw resamples a bounded submap containing all
targets (augmentation), unrolls the network over the window, and averages
the per-step cross-entropy.  Mini-batches mix simulator samples (targets
from poses) and real-like samples (targets from the stride rule) at a
configurable ratio; early stopping follows the validation loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import localizer as L
from .map_sampler import sample_submap
from .tensor import Adam, Tensor, cross_entropy
from .topo_graph import MapConfig, TopoMap, build_map_real, nearest_node

SIM = "sim"
REAL_LIKE = "real_like"


@dataclass
class Sample:
    observations: np.ndarray  # (steps, d_obs)
    poses: list | None        # Pose2D per step, None for real-like samples
    topo: TopoMap
    targets: list             # ground-truth NodeId per step
    domain: str = SIM

    def __post_init__(self):
        if len(self.targets) != self.observations.shape[0]:
            raise ValueError("targets must match observations in length")
        for y in self.targets:
            if not 0 <= y < self.topo.n:
                raise ValueError(f"target {y} not in map")


@dataclass
class TrainConfig:
    tau: int = 30
    n_prime: int = 40
    lr_main: float = 1e-3
    lr_encoder: float = 1e-5
    patience_iters: int = 300
    mix_ratio: float = 0.0
    jitter: float = 0.0
    batch_size: int = 4
    max_iters: int = 1000
    val_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")
        if self.patience_iters < 1:
            raise ValueError("patience_iters must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d):
        return TrainConfig(**d)


def make_sim_sample(trajectory, topo: TopoMap, cfg: MapConfig) -> Sample:
    """Targets via the pose metric; trajectory is a list of (descriptor, Pose2D)."""
    if not topo.has_poses:
        raise ValueError("simulator samples need a map with poses")
    observations = np.stack([np.asarray(d, dtype=np.float64) for d, _ in trajectory])
    poses = [p for _, p in trajectory]
    targets = [nearest_node(topo, p, cfg.omega_m) for p in poses]
    return Sample(observations, poses, topo, targets, SIM)


def stride_target(t: int, m_stride: int, n_nodes: int) -> int:
    """Node whose stride index is nearest to step t; ties go to the lower node."""
    best, best_d = 0, abs(t)
    for k in range(1, n_nodes):
        d = abs(t - k * m_stride)
        if d < best_d:
            best, best_d = k, d
    return best


def make_real_like_sample(sequence, m_stride: int) -> Sample:
    """Map and observations from one sequence; targets from the stride rule."""
    observations = np.asarray(sequence, dtype=np.float64)
    if observations.ndim != 2 or observations.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (steps, d_obs) array")
    topo = build_map_real(observations, m_stride)
    targets = [stride_target(t, m_stride, topo.n) for t in range(observations.shape[0])]
    return Sample(observations, None, topo, targets, REAL_LIKE)


def window(sample: Sample, start: int, tau: int) -> Sample:
    """Slice a tau+1 step window out of a longer sample."""
    stop = start + tau + 1
    if stop > sample.observations.shape[0]:
        raise ValueError("window exceeds sample length")
    return Sample(
        sample.observations[start:stop],
        sample.poses[start:stop] if sample.poses is not None else None,
        sample.topo,
        sample.targets[start:stop],
        sample.domain,
    )


def sequence_loss(model: L.Localizer, sample: Sample, cfg: TrainConfig, rng) -> Tensor:
    """Mean cross-entropy over the window, on a freshly sampled submap."""
    sub = sample_submap(sample.topo, sample.targets, cfg.n_prime,
                        int(rng.integers(2 ** 63)))
    targets = [sub.node_mapping[y] for y in sample.targets]
    obs = sample.observations
    if cfg.jitter > 0:
        obs = obs + cfg.jitter * rng.normal(size=obs.shape)
    ctx = L.make_context(model, sub.submap)
    state = L.reset_state(sub.submap.n, model.cfg.d_h)
    steps = obs.shape[0]
    total = Tensor.const(0.0)
    for t in range(steps):
        _, _, state, logits = L.localize_step(model, state, obs[t], sub.submap, ctx,
                                              return_logits=True)
        total = total + cross_entropy(logits, targets[t])
    return total * (1.0 / steps)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (iteration, train_loss, val_loss)
    best_val: float = float("inf")
    best_iter: int = -1

    def to_csv(self, path, meta=""):
        with open(path, "w") as fh:
            if meta:
                fh.write(f"# {meta}\n")
            fh.write("iteration,train_loss,val_loss\n")
            for it, tr, vl in self.rows:
                fh.write(f"{it},{tr!r},{vl!r}\n")


def _draw_window(sample: Sample, tau: int, rng) -> Sample:
    length = sample.observations.shape[0]
    span = min(tau + 1, length)
    start = int(rng.integers(length - span + 1))
    return window(sample, start, span - 1)


def validation_loss(model, val_samples, cfg, seed=12345):
    rng = np.random.default_rng(seed)
    losses = [sequence_loss(model, s, cfg, rng).item() for s in val_samples]
    return float(np.mean(losses))


def train(model: L.Localizer, sim_set, real_set, val_set, cfg: TrainConfig):
    """Optimize until the validation loss stops improving; keep the best."""
    if len(sim_set) == 0 and cfg.mix_ratio < 1.0:
        raise ValueError("empty simulator training set")
    if len(real_set) == 0 and cfg.mix_ratio > 0.0:
        raise ValueError("empty real-like training set with mix_ratio > 0")
    if len(val_set) == 0:
        raise ValueError("empty validation set")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam([(model.encoder_params(), cfg.lr_encoder),
                (model.other_params(), cfg.lr_main)])
    history = TrainHistory()
    best_snapshot = model.state_snapshot()
    model.train()
    val = validation_loss(model, val_set, cfg)
    since_best = 0
    for it in range(1, cfg.max_iters + 1):
        batch = []
        for _ in range(cfg.batch_size):
            use_real = rng.random() < cfg.mix_ratio
            pool = real_set if use_real else sim_set
            batch.append(pool[int(rng.integers(len(pool)))])
        opt.zero_grad()
        loss = Tensor.const(0.0)
        for sample in batch:
            loss = loss + sequence_loss(model, _draw_window(sample, cfg.tau, rng), cfg, rng)
        loss = loss * (1.0 / len(batch))
        loss.backward()
        opt.step()
        if it % cfg.val_every == 0 or it == cfg.max_iters:
            val = validation_loss(model, val_set, cfg)
        history.rows.append((it, loss.item(), val))
        if val < history.best_val - 1e-12:
            history.best_val = val
            history.best_iter = it
            best_snapshot = model.state_snapshot()
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience_iters:
            break
    model.load_state(*best_snapshot)
    return history
