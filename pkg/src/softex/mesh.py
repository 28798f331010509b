"""Monte Carlo contention model for an n x n mesh of compute clusters
running a tiled transformer workload.

Assumptions: conflicts are independent; each hop (mesh link) adds a uniform
[0, 0.5] cycle delay per transaction; the execution's added delay per chunk
window is the maximum cumulative delay over all monotone (right/down)
lattice paths from the top-left to the bottom-right tile, which is the
systolic dataflow's dependency cone.  The per-trial maximum is computed by
dynamic programming, which is exact over the path set for the drawn delays
(the enumeration oracle below checks that).

Units: delays are cycles per transaction, where a transaction is one 64-byte
link beat.  Per chunk window every router moves four 32 KiB packets (two
inbound and two outbound streams); the contended traffic that serialises
behind a given link grows with the mesh because edge-fed DRAM streams
transit inner links, modelled as `transit_beats_per_column * (n - 1)` beats.
The transit constant (72 beats, i.e. 4.5 KiB per transited column) is
calibrated once against the published 17.4% slowdown of the 8x8 mesh;
smaller meshes then come out effectively free, matching the reference
behaviour.

Chunk timing: moving four 32 KiB packets over a 64 B/cycle link takes 2048
cycles, which the reference workload reports as 16.9% of a chunk's compute
window, hence 12118 cycles per window.  Per-cluster throughput scales by
(1 - slowdown); DRAM bandwidth is a two-point calibrated stream model
(a fixed packet per window plus 3/4 packet per mesh column).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class MeshConfig:
    n: int = 8
    trials: int = 1 << 16
    hop_delay_lo: float = 0.0
    hop_delay_hi: float = 0.5
    chunk_elems: int = 16384          # 32 KiB of BF16
    elem_bytes: int = 2
    link_bytes_per_cycle: int = 64    # 512-bit wide channel
    packets_per_window: int = 4       # two inbound + two outbound streams
    comm_fraction: float = 0.169      # transfer share of a chunk window
    transit_beats_per_column: int = 72  # calibrated against the 8x8 slowdown
    cluster_peak_gops: float = 430.0
    utilization: float = 0.80
    clk_hz: float = 1.12e9
    dram_base_packets: float = 1.0    # writeback per window
    dram_packets_per_column: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need n >= 1")
        if self.trials < 1:
            raise ValueError("need trials >= 1")

    @property
    def packet_bytes(self) -> int:
        return self.chunk_elems * self.elem_bytes

    @property
    def comm_cycles(self) -> int:
        return self.packets_per_window * self.packet_bytes // self.link_bytes_per_cycle

    @property
    def chunk_cycles(self) -> int:
        return round(self.comm_cycles / self.comm_fraction)

    def to_json(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "MeshConfig":
        return cls(**doc)


@dataclass(frozen=True)
class WorkloadSpec:
    """Layer dimensions of the modelled network (defaults: GPT-2 XL) and the
    per-cluster chunk compute window derived from the utilization figure."""

    seq_len: int = 1024
    embed: int = 1600
    heads: int = 25
    ffn: int = 6400

    def __post_init__(self):
        for name in ("seq_len", "embed", "heads", "ffn"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def chunk_cycles(self, cfg: MeshConfig) -> int:
        return cfg.chunk_cycles


@dataclass(frozen=True)
class MeshReport:
    n: int
    aggregate_gops: float
    per_cluster_gops: float
    noc_slowdown_fraction: float
    required_dram_bandwidth_gbps: float

    def __post_init__(self):
        if not 0.0 <= self.noc_slowdown_fraction < 1.0:
            raise ValueError("slowdown outside [0, 1)")


def _edge_delays(cfg: MeshConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial delays for right edges (n, n-1) and down edges (n-1, n)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
    right = rng.uniform(cfg.hop_delay_lo, cfg.hop_delay_hi,
                        size=(cfg.trials, n, max(n - 1, 1)))
    down = rng.uniform(cfg.hop_delay_lo, cfg.hop_delay_hi,
                       size=(cfg.trials, max(n - 1, 1), n))
    return right, down


def max_path_delays(cfg: MeshConfig, n: int | None = None) -> np.ndarray:
    """Per-trial maximum cumulative delay over all monotone corner-to-corner
    paths (dynamic programming, exact for the drawn delays)."""
    n = cfg.n if n is None else n
    if n == 1:
        return np.zeros(cfg.trials)
    right, down = _edge_delays(cfg, n)
    m = np.full((cfg.trials, n, n), -np.inf)
    m[:, 0, 0] = 0.0
    for i in range(n):
        for j in range(n):
            if i == 0 and j == 0:
                continue
            best = np.full(cfg.trials, -np.inf)
            if i > 0:
                best = np.maximum(best, m[:, i - 1, j] + down[:, i - 1, j])
            if j > 0:
                best = np.maximum(best, m[:, i, j - 1] + right[:, i, j - 1])
            m[:, i, j] = best
    return m[:, -1, -1]


def simulate_mesh(cfg: MeshConfig, w: WorkloadSpec = WorkloadSpec()) -> MeshReport:
    n = cfg.n
    chunk = w.chunk_cycles(cfg)
    transit = cfg.transit_beats_per_column * (n - 1)
    added = float(np.mean(max_path_delays(cfg))) * transit
    slowdown = added / (chunk + added)
    per_cluster = cfg.cluster_peak_gops * cfg.utilization * (1.0 - slowdown)
    aggregate = per_cluster * n * n
    traffic_bytes = (cfg.dram_base_packets + cfg.dram_packets_per_column * n) \
        * cfg.packet_bytes
    bandwidth = traffic_bytes * cfg.clk_hz / (chunk + added) / 1e9
    return MeshReport(
        n=n,
        aggregate_gops=aggregate,
        per_cluster_gops=per_cluster,
        noc_slowdown_fraction=slowdown,
        required_dram_bandwidth_gbps=bandwidth,
    )


def mesh_sweep(n_list, cfg: MeshConfig = MeshConfig(),
               w: WorkloadSpec = WorkloadSpec()) -> list[dict]:
    """One report row per mesh side; deterministic for a given seed (each n
    draws from its own counter-derived stream)."""
    rows = []
    for n in n_list:
        sub = MeshConfig(**{**cfg.__dict__, "n": int(n)})
        r = simulate_mesh(sub, w)
        rows.append({
            "n": r.n,
            "aggregate_gops": r.aggregate_gops,
            "per_cluster_gops": r.per_cluster_gops,
            "slowdown": r.noc_slowdown_fraction,
            "bandwidth_gbps": r.required_dram_bandwidth_gbps,
        })
    return rows


def path_delay_oracle(cfg: MeshConfig, n: int | None = None) -> dict:
    """Exhaustive-path check for small meshes (n <= 4).

    Enumerates every monotone corner-to-corner path and takes the maximum
    path sum per trial with the same draws as the estimator; the dynamic
    program must match exactly, and the returned statistics let callers
    verify the Monte Carlo mean against closed forms.
    """
    n = cfg.n if n is None else n
    if n > 4:
        raise ValueError("oracle enumerates paths only up to n = 4")
    if n == 1:
        zero = np.zeros(cfg.trials)
        return {"per_trial_max": zero, "mean": 0.0, "std": 0.0,
                "n_paths": 1, "matches_dp": True}
    right, down = _edge_delays(cfg, n)
    moves = [0] * (n - 1) + [1] * (n - 1)  # 0 = right, 1 = down
    best = np.full(cfg.trials, -np.inf)
    n_paths = 0
    for path in sorted(set(permutations(moves))):
        n_paths += 1
        i = j = 0
        total = np.zeros(cfg.trials)
        for mv in path:
            if mv == 0:
                total += right[:, i, j]
                j += 1
            else:
                total += down[:, i, j]
                i += 1
        best = np.maximum(best, total)
    dp = max_path_delays(cfg, n)
    return {
        "per_trial_max": best,
        "mean": float(best.mean()),
        "std": float(best.std(ddof=1)),
        "n_paths": n_paths,
        "matches_dp": bool(np.array_equal(best, dp)),
    }


def max_of_two_triangular_mean(lo: float = 0.0, hi: float = 0.5) -> float:
    """E[max(X, Y)] for independent X, Y, each a sum of two U(lo, hi): the
    2x2 mesh's two paths are edge-disjoint.  For U(0, 0.5) this is 37/60
    (integrate 1 - F(t)^2 with the triangular CDF)."""
    return 2 * lo + (hi - lo) * (37.0 / 30.0)
