"""Synthetic multi-city data with known structure.

Traffic: every city mixes a small set of shared daily motifs (a sinusoid
plus rush-hour bumps) with city-specific weights, diffuses the mixture over
its sensor graph, and adds a slow city-specific component and noise.

Trajectories: agents move with piecewise-constant velocity through a
crossing, turning at random times with scene-specific turn preferences.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..backbones.graph import Adjacency
from ..errors import ConfigError
from .series import CitySeries


@dataclass(frozen=True)
class SyntheticSpec:
    num_cities: int = 2
    nodes: int | tuple[int, ...] = 20
    steps: int = 2000
    num_motifs: int = 3
    period: int = 96
    motif_amplitude: float = 10.0
    city_amplitude: float = 3.0
    noise_std: float = 0.5
    diffusion: float = 0.5
    node_jitter: float = 0.3
    base_level: float = 0.0
    shared_weights: bool = False
    graph_threshold: float = 0.1
    city_concentration: float = 1.0
    motif_phase_spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_cities < 1 or self.num_motifs < 1:
            raise ConfigError("num_cities and num_motifs must be positive")
        if self.steps < 2 or self.period < 2:
            raise ConfigError("steps and period must be >= 2")
        if self.city_concentration <= 0 or not 0.0 <= self.motif_phase_spread <= 1.0:
            raise ConfigError("city_concentration must be > 0 and motif_phase_spread in [0, 1]")
        if self.noise_std < 0 or not 0.0 <= self.diffusion <= 1.0:
            raise ConfigError("noise_std must be >= 0 and diffusion in [0, 1]")
        nodes = self.nodes_per_city()
        if len(nodes) != self.num_cities or min(nodes) < 1:
            raise ConfigError(f"nodes must be a positive int or one per city, got {self.nodes}")

    def nodes_per_city(self) -> tuple[int, ...]:
        if isinstance(self.nodes, int):
            return (self.nodes,) * self.num_cities
        return tuple(int(n) for n in self.nodes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(self.nodes, int):
            d["nodes"] = list(self.nodes)
        return d


def _circular_bump(phase: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs(phase - center)
    d = np.minimum(d, 1.0 - d)
    return np.exp(-0.5 * (d / width) ** 2)


def motif_profiles(spec: SyntheticSpec) -> np.ndarray:
    """``(S, period)`` daily profiles with max |value| = motif_amplitude."""
    rng = np.random.default_rng([spec.seed, 100])
    phase = np.arange(spec.period) / spec.period
    profiles = []
    for s in range(spec.num_motifs):
        shift = rng.uniform(0.0, 1.0) * spec.motif_phase_spread
        prof = 0.5 * np.sin(2 * np.pi * (phase + shift))
        centers = (s / spec.num_motifs + rng.uniform(0.15, 0.35, size=2) * np.array([1.0, 2.2])) % 1.0
        for center in centers:
            prof = prof - rng.uniform(0.8, 1.5) * _circular_bump(phase, center, rng.uniform(0.025, 0.06))
        profiles.append(spec.motif_amplitude * prof / np.max(np.abs(prof)))
    return np.array(profiles)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[CitySeries], dict]:
    """Return the cities and a ground-truth record (motifs, weights, graph)."""
    profiles = motif_profiles(spec)
    t = np.arange(spec.steps)
    motifs = profiles[:, t % spec.period]
    cities, truth = [], {"spec": spec.to_dict(), "motifs": profiles.tolist(), "cities": []}
    for c, N in enumerate(spec.nodes_per_city()):
        struct_rng = np.random.default_rng([spec.seed, 200, 0 if spec.shared_weights else c])
        noise_rng = np.random.default_rng([spec.seed, 300, c])
        coords = struct_rng.uniform(0.0, 1.0, size=(N, 2))
        adjacency = Adjacency.from_coordinates(coords, threshold=spec.graph_threshold)
        pref = struct_rng.dirichlet(np.full(spec.num_motifs, spec.city_concentration))
        gain = np.exp(spec.node_jitter * struct_rng.standard_normal((N, spec.num_motifs)))
        w = pref[None, :] * gain
        w = w / w.sum(axis=1, keepdims=True)
        signal = w @ motifs  # (N, T)
        if spec.diffusion > 0:
            signal = (1.0 - spec.diffusion) * signal + spec.diffusion * (adjacency.propagation @ signal)
        values = signal.T
        slow_period = struct_rng.uniform(2.0, 5.0) * spec.period
        slow_phase = struct_rng.uniform(0.0, 2 * np.pi)
        node_gain = struct_rng.uniform(0.5, 1.5, size=N)
        if spec.city_amplitude != 0:
            slow = spec.city_amplitude * np.sin(2 * np.pi * t / slow_period + slow_phase)
            values = values + slow[:, None] * node_gain[None, :]
        if spec.noise_std > 0:
            values = values + spec.noise_std * noise_rng.standard_normal(values.shape)
        if spec.base_level != 0:
            values = values + spec.base_level
        cities.append(CitySeries(city_id=c, name=f"city{c}", values=values[:, :, None], adjacency=adjacency,
                                 coords=coords, meta={"period": spec.period}))
        truth["cities"].append({
            "name": f"city{c}", "weights": w.tolist(), "preference": pref.tolist(),
            "coords": coords.tolist(), "slow_period": float(slow_period), "slow_phase": float(slow_phase),
            "slow_node_gain": node_gain.tolist(),
        })
    return cities, truth


@dataclass(frozen=True)
class TrajectorySpec:
    num_scenes: int = 2
    agents: int = 16
    steps: int = 600
    dt: float = 0.4
    speed_range: tuple[tuple[float, float], ...] = ((1.0, 2.0), (2.0, 3.5))
    turn_rate: tuple[float, ...] = (0.04, 0.04)
    left_turn_prob: tuple[float, ...] = (0.2, 0.8)
    region: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.num_scenes < 1 or self.agents < 1 or self.steps < 2:
            raise ConfigError("num_scenes, agents and steps must be positive")
        for name in ("speed_range", "turn_rate", "left_turn_prob"):
            if len(getattr(self, name)) != self.num_scenes:
                raise ConfigError(f"{name} needs one entry per scene")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("speed_range", "turn_rate", "left_turn_prob"):
            d[k] = [list(v) if isinstance(v, tuple) else v for v in d[k]]
        return d


def _agent_track(rng: np.random.Generator, spec: TrajectorySpec, scene: int) -> np.ndarray:
    lo, hi = spec.speed_range[scene]
    speed = rng.uniform(lo, hi)
    approach = rng.integers(4)
    heading = approach * np.pi / 2
    start = -spec.region * np.array([np.cos(heading), np.sin(heading)]) + rng.normal(0.0, 1.0, size=2)
    track = np.empty((spec.steps, 2))
    seg_start, seg_t0 = start, 0
    vel = speed * np.array([np.cos(heading), np.sin(heading)])
    for t in range(spec.steps):
        if t > seg_t0 and rng.uniform() < spec.turn_rate[scene]:
            seg_start = seg_start + (t - seg_t0) * vel * spec.dt
            seg_t0 = t
            heading += np.pi / 2 if rng.uniform() < spec.left_turn_prob[scene] else -np.pi / 2
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
        track[t] = seg_start + (t - seg_t0) * vel * spec.dt
    return track


def generate_synthetic_trajectories(spec: TrajectorySpec) -> list[CitySeries]:
    scenes = []
    for c in range(spec.num_scenes):
        rng = np.random.default_rng([spec.seed, 400, c])
        tracks = np.stack([_agent_track(rng, spec, c) for _ in range(spec.agents)], axis=1)
        scenes.append(CitySeries(city_id=c, name=f"scene{c}", values=tracks, mode="trajectory",
                                 node_ids=tuple(f"a{j}" for j in range(spec.agents)),
                                 meta={"dt": spec.dt}))
    return scenes
