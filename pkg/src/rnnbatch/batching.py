"""Batch schedules for the four training strategies and hidden-state handoff."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BatchPlan:
    """One epoch of batches over segment ids.

    ``state_edges`` lists ``(a, b)`` pairs: the final hidden state of segment
    ``a`` (detached) initializes segment ``b``. Segments without an incoming
    edge start from zeros.
    """

    kind: str
    batches: tuple[tuple[int, ...], ...]
    state_edges: tuple[tuple[int, int], ...] = ()
    reshuffle_each_epoch: bool = False
    sequential: bool = False

    @property
    def segment_ids(self) -> list[int]:
        return [i for b in self.batches for i in b]

    def incoming(self) -> dict[int, int]:
        return {b: a for a, b in self.state_edges}


def _chunks(order, bs):
    return tuple(tuple(int(i) for i in order[k:k + bs]) for k in range(0, len(order), bs))


def _check_bs(bs: int) -> None:
    if bs < 1:
        raise ConfigError(f"batch size must be >= 1, got {bs}")


def plan_rmb(n_segments: int, bs: int, rng: np.random.Generator) -> BatchPlan:
    _check_bs(bs)
    order = rng.permutation(n_segments)
    return BatchPlan("RMB", _chunks(order, bs), (), reshuffle_each_epoch=True)


def plan_cmb(n_segments: int, bs: int, rng: np.random.Generator, *, augmented: bool) -> BatchPlan:
    """Same shuffled layout as RMB; only valid on initial-value-augmented inputs."""
    if not augmented:
        raise ConfigError("CMB needs inputs augmented with each segment's initial target value")
    plan = plan_rmb(n_segments, bs, rng)
    return BatchPlan("CMB", plan.batches, (), reshuffle_each_epoch=True)


def plan_smb(n_segments: int, bs: int) -> BatchPlan:
    """``bs`` contiguous streams; batch k holds the k-th segment of every stream.

    The segment count is truncated to a multiple of ``bs``.
    """
    _check_bs(bs)
    if n_segments < bs:
        raise ConfigError(f"SMB needs at least bs={bs} segments, got {n_segments}")
    L = n_segments // bs
    batches = tuple(tuple(j * L + k for j in range(bs)) for k in range(L))
    edges = tuple((j * L + k, j * L + k + 1) for k in range(L - 1) for j in range(bs))
    return BatchPlan("SMB", batches, edges)


def plan_ssmb(n_segments: int, bs: int) -> BatchPlan:
    """Temporally ordered chunks; every consecutive pair is an edge, across batches too."""
    _check_bs(bs)
    batches = _chunks(np.arange(n_segments), bs)
    edges = tuple((i, i + 1) for i in range(n_segments - 1))
    return BatchPlan("SSMB", batches, edges, sequential=True)


def make_plan(kind: str, n_segments: int, bs: int, rng: np.random.Generator | None = None,
              *, augmented: bool = False) -> BatchPlan:
    if kind in ("RMB", "TF"):
        return plan_rmb(n_segments, bs, rng)
    if kind == "CMB":
        return plan_cmb(n_segments, bs, rng, augmented=augmented)
    if kind == "SMB":
        return plan_smb(n_segments, bs)
    if kind == "SSMB":
        return plan_ssmb(n_segments, bs)
    raise ConfigError(f"unknown strategy {kind!r}")


@dataclass
class HiddenStateRegistry:
    """Detached hidden states keyed by segment id (or stream position)."""

    hidden_size: int
    _store: dict = field(default_factory=dict)

    def put(self, key, h: np.ndarray) -> None:
        h = np.array(h, dtype=np.float64, copy=True)
        if h.shape != (self.hidden_size,):
            raise ConfigError(f"hidden state has shape {h.shape}, expected ({self.hidden_size},)")
        self._store[key] = h

    def take(self, key) -> np.ndarray:
        h = self._store.get(key)
        return np.zeros(self.hidden_size) if h is None else h.copy()

    def reset_all(self) -> None:
        self._store.clear()

    def __len__(self) -> int:
        return len(self._store)


def check_plan(plan: BatchPlan, n_segments: int, starts=None, T: int | None = None) -> None:
    """Raise ConfigError if ``plan`` breaks coverage or state-edge contiguity.

    SMB plans only have to cover the leading multiple of their batch size.
    ``starts`` and ``T`` (both optional) enable the time-contiguity check
    ``start(b) == start(a) + T`` on every edge.
    """
    ids = plan.segment_ids
    if plan.kind == "SMB":
        bs = len(plan.batches[0]) if plan.batches else 1
        expected = list(range(n_segments - n_segments % bs))
        if any(len(b) != bs for b in plan.batches):
            raise ConfigError("SMB batches must be rectangular")
    else:
        expected = list(range(n_segments))
    if sorted(ids) != expected:
        raise ConfigError(f"{plan.kind} plan does not visit each segment exactly once")
    position = {i: k for k, b in enumerate(plan.batches) for i in b}
    seen_targets = set()
    for a, b in plan.state_edges:
        if b in seen_targets:
            raise ConfigError(f"segment {b} has more than one incoming state")
        seen_targets.add(b)
        if b != a + 1:
            raise ConfigError(f"state edge {a}->{b} skips segments")
        if position[a] > position[b] or (position[a] == position[b] and not plan.sequential):
            raise ConfigError(f"state edge {a}->{b} points backwards in the schedule")
        if starts is not None and T is not None and starts[b] != starts[a] + T:
            raise ConfigError(f"state edge {a}->{b} joins segments that are not adjacent in time")
