"""Discrete-event race between an original transaction and its malleated copy.

Nodes relay only the first version they see (first-seen rule).  A single
uniformly drawn miner decides which version confirms.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

ORIGINAL = 0
MODIFIED = 1
_UNSEEN = -1
_ATTACKER = -1


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    node_count: int = 1000
    degree: float = 8
    latency_ms: tuple[float, float] = (20.0, 200.0)
    attacker_connections: int = 200
    attacker_delay_ms: float = 50.0
    trials: int = 1000
    seed: int = 0
    # None: the victim is a random node of the graph.  An integer makes it an
    # outside client with that many random peers.
    victim_connections: int | None = None
    # "react": inject after first hearing the original.  "simultaneous":
    # inject at t = attacker_delay_ms regardless.
    attacker_mode: str = "react"

    def __post_init__(self):
        object.__setattr__(self, "latency_ms", tuple(float(x) for x in self.latency_ms))

    def validate(self) -> None:
        n = self.node_count
        if not 2 <= self.degree < n:
            raise InfeasibleConfig(f"degree must satisfy 2 <= degree < node_count ({n})")
        if not 0 <= self.attacker_connections <= n:
            raise InfeasibleConfig("attacker_connections must lie in [0, node_count]")
        if self.victim_connections is not None and not 1 <= self.victim_connections <= n:
            raise InfeasibleConfig("victim_connections must lie in [1, node_count]")
        if self.trials < 1:
            raise InfeasibleConfig("trials must be >= 1")
        lo, hi = self.latency_ms
        if not 0 < lo <= hi:
            raise InfeasibleConfig("latency_ms needs 0 < min <= max")
        if self.attacker_delay_ms < 0:
            raise InfeasibleConfig("attacker_delay_ms must be non-negative")
        if self.attacker_mode not in ("react", "simultaneous"):
            raise InfeasibleConfig(f"unknown attacker_mode {self.attacker_mode!r}")
        if _edge_target(self) > n * (n - 1) // 2:
            raise InfeasibleConfig("too many edges for node_count")

    @classmethod
    def from_mapping(cls, raw: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InfeasibleConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise InfeasibleConfig(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        text = Path(path).read_text()
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_mapping(raw or {})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latency_ms"] = list(self.latency_ms)
        return d


def _edge_target(config: SimConfig) -> int:
    return int(round(config.node_count * config.degree / 2))


@dataclass
class Network:
    node_count: int
    edges: np.ndarray  # (m, 2) int, u < v

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def adjacency(self, latencies: np.ndarray) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.node_count)]
        for (u, v), lat in zip(self.edges.tolist(), latencies.tolist()):
            adj[u].append((v, lat))
            adj[v].append((u, lat))
        return adj

    def is_connected(self) -> bool:
        adj = self.adjacency(np.zeros(self.edge_count))
        seen = {0}
        stack = [0]
        while stack:
            for v, _ in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.node_count


def build_network(config: SimConfig, rng: np.random.Generator | None = None) -> Network:
    """Random connected graph with ``round(n * degree / 2)`` edges.

    A random spanning tree guarantees connectivity; the remaining edges are
    drawn uniformly among the missing pairs.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.node_count
    m = _edge_target(config)
    if m < n - 1:
        raise InfeasibleConfig("too few edges to connect the graph")

    order = rng.permutation(n)
    attach = (rng.random(n - 1) * np.arange(1, n)).astype(np.int64)
    u, v = order[1:], order[attach]
    keys = set((np.minimum(u, v) * n + np.maximum(u, v)).tolist())

    max_edges = n * (n - 1) // 2
    if m - len(keys) > (max_edges - len(keys)) // 2:
        # dense: pick from the explicit complement
        iu, ju = np.triu_indices(n, 1)
        all_keys = iu * n + ju
        missing = np.setdiff1d(all_keys, np.fromiter(keys, np.int64, len(keys)))
        keys.update(rng.choice(missing, m - len(keys), replace=False).tolist())
    else:
        while len(keys) < m:
            need = m - len(keys)
            a = rng.integers(0, n, 2 * need)
            b = rng.integers(0, n, 2 * need)
            for x, y in zip(a.tolist(), b.tolist()):
                if x == y:
                    continue
                keys.add(min(x, y) * n + max(x, y))
                if len(keys) == m:
                    break
    flat = np.array(sorted(keys), dtype=np.int64)
    return Network(n, np.stack([flat // n, flat % n], axis=1))


@dataclass(frozen=True)
class TrialResult:
    winner: int
    miner_node: int
    first_seen_original_fraction: float
    # per-node version first seen (and so the only version relayed)
    node_versions: tuple[int, ...] = field(default=(), repr=False, compare=False)

    @property
    def modified_won(self) -> bool:
        return self.winner == MODIFIED


def run_trial(network: Network, config: SimConfig, rng: np.random.Generator,
              *, victim: int | None = None, attacker_peers=None, miner: int | None = None,
              latencies: np.ndarray | None = None) -> TrialResult:
    """Flood both versions through ``network`` and report the miner's pick.

    Random draws happen in a fixed order whatever the attacker's size, so
    trials that share a generator state are directly comparable across a
    parameter sweep.  Keyword overrides pin a particular geometry.
    """
    n = network.node_count
    lo, hi = config.latency_ms
    drawn_lat = rng.uniform(lo, hi, network.edge_count)
    drawn_victim = int(rng.integers(n))
    victim_order = rng.permutation(n)
    victim_lat = rng.uniform(lo, hi, n)
    attacker_order = rng.permutation(n)
    attacker_lat = rng.uniform(lo, hi, n)
    drawn_miner = int(rng.integers(n))

    adj = network.adjacency(drawn_lat if latencies is None else latencies)
    miner = drawn_miner if miner is None else miner
    if attacker_peers is None:
        attacker_peers = attacker_order[:config.attacker_connections].tolist()
        link = dict(zip(attacker_peers, attacker_lat[:config.attacker_connections].tolist()))
    else:
        attacker_peers = list(attacker_peers)
        link = dict(zip(attacker_peers, attacker_lat[:len(attacker_peers)].tolist()))

    queue: list[tuple[float, int, int, int]] = []
    seq = 0

    def push(t: float, node: int, version: int) -> None:
        nonlocal seq
        heapq.heappush(queue, (t, seq, node, version))
        seq += 1

    if config.victim_connections is None:
        push(0.0, drawn_victim if victim is None else victim, ORIGINAL)
    else:
        k = config.victim_connections
        for p, lat in zip(victim_order[:k].tolist(), victim_lat[:k].tolist()):
            push(lat, p, ORIGINAL)

    def inject(t: float) -> None:
        for p in attacker_peers:
            push(t + link[p], p, MODIFIED)

    if attacker_peers and config.attacker_mode == "simultaneous":
        inject(config.attacker_delay_ms)
    attacker_heard = not attacker_peers or config.attacker_mode == "simultaneous"

    seen = [_UNSEEN] * n
    while queue:
        t, _, node, version = heapq.heappop(queue)
        if node == _ATTACKER:
            if not attacker_heard:
                attacker_heard = True
                inject(t + config.attacker_delay_ms)
            continue
        if seen[node] != _UNSEEN:
            continue
        seen[node] = version
        for nbr, lat in adj[node]:
            if seen[nbr] == _UNSEEN:
                push(t + lat, nbr, version)
        if not attacker_heard and version == ORIGINAL and node in link:
            push(t + link[node], _ATTACKER, ORIGINAL)

    reached = [v for v in seen if v != _UNSEEN]
    fraction = sum(v == ORIGINAL for v in reached) / len(reached) if reached else 0.0
    return TrialResult(seen[miner], miner, fraction, tuple(seen))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054
                    ) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the bounds are exact at the edges; float cancellation would leave crumbs
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class Estimate:
    probability: float
    interval: tuple[float, float]
    successes: int
    trials: int
    mean_original_fraction: float

    def to_dict(self) -> dict:
        return {
            "probability": self.probability,
            "ci95_low": self.interval[0],
            "ci95_high": self.interval[1],
            "successes": self.successes,
            "trials": self.trials,
            "mean_first_seen_original_fraction": self.mean_original_fraction,
        }


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def estimate_success(config: SimConfig) -> Estimate:
    """Monte-Carlo success probability of the modified version, fresh network per trial."""
    config.validate()
    wins = 0
    fractions = 0.0
    for i in range(config.trials):
        rng = trial_rng(config.seed, i)
        result = run_trial(build_network(config, rng), config, rng)
        wins += result.modified_won
        fractions += result.first_seen_original_fraction
    return Estimate(wins / config.trials, wilson_interval(wins, config.trials), wins,
                    config.trials, fractions / config.trials)


def sweep(config: SimConfig, parameter: str, values) -> list[tuple[object, Estimate]]:
    """Estimate success for each value of one config field, sorted by value."""
    if parameter not in {f.name for f in fields(SimConfig)}:
        raise InfeasibleConfig(f"cannot sweep unknown parameter {parameter!r}")
    return [(v, estimate_success(replace(config, **{parameter: v}))) for v in sorted(values)]
