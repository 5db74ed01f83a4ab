"""Bounded partial-map sampling for memory-bounded training.

The sampler copies all ground-truth nodes into an empty submap, then grows
it by repeatedly adding a uniformly random graph neighbor of the current
submap until the node budget (or the reachable closure) is exhausted.
Different seeds produce structurally different submaps, which doubles as
data augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topo_graph import TopoMap


@dataclass
class SubmapResult:
    submap: TopoMap
    node_mapping: dict  # original NodeId -> submap NodeId


def sample_submap(topo: TopoMap, targets, n_prime: int, seed) -> SubmapResult:
    core = sorted(set(int(y) for y in targets))
    if not core:
        raise ValueError("targets must be non-empty")
    for y in core:
        if not 0 <= y < topo.n:
            raise ValueError(f"target node {y} not in map")
    if n_prime < len(core):
        raise ValueError(f"n_prime={n_prime} smaller than {len(core)} distinct targets")

    rng = np.random.default_rng(seed)
    selected = list(core)
    in_sub = set(core)
    frontier = set()
    for y in core:
        frontier.update(v for v in topo.neighbors(y) if v not in in_sub)
    while len(selected) < n_prime and frontier:
        candidates = sorted(frontier)
        pick = int(candidates[rng.integers(len(candidates))])
        frontier.discard(pick)
        selected.append(pick)
        in_sub.add(pick)
        frontier.update(v for v in topo.neighbors(pick) if v not in in_sub)

    mapping = {orig: i for i, orig in enumerate(selected)}
    descriptors = topo.descriptors[selected]
    poses = [topo.poses[i] for i in selected] if topo.has_poses else None
    edges = [(mapping[s], mapping[t]) for s, t in topo.edges
             if s in in_sub and t in in_sub]
    return SubmapResult(TopoMap(descriptors, poses, edges, topo.config), mapping)
