"""1-D heightfields with a difficulty ladder."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from ..nn import ConfigurationError

MAX_LEVEL = 9
RESOLUTION = 0.05  # m between heightfield samples
HALF_LENGTH = 30.0  # heightfield spans [-HALF_LENGTH, HALF_LENGTH]


class TerrainKind(str, enum.Enum):
    FLAT = "flat"
    SLOPE = "slope"
    ROUGH_SLOPE = "rough_slope"
    STAIRS = "stairs"
    DISCRETE_OBSTACLES = "discrete_obstacles"

    @classmethod
    def parse(cls, value) -> "TerrainKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown terrain kind {value!r}") from None


CURRICULUM_KINDS = (
    TerrainKind.SLOPE,
    TerrainKind.ROUGH_SLOPE,
    TerrainKind.STAIRS,
    TerrainKind.DISCRETE_OBSTACLES,
)


def _frac(level: int, max_level: int) -> float:
    return level / max_level if max_level > 0 else 0.0


def slope_gradient(level: int, max_level: int = MAX_LEVEL) -> float:
    return 0.05 + 0.30 * _frac(level, max_level)


def stair_rise(level: int, max_level: int = MAX_LEVEL) -> float:
    return 0.01 + 0.05 * _frac(level, max_level)


STAIR_RUN = 0.30


def rough_amplitude(level: int, max_level: int = MAX_LEVEL) -> float:
    return 0.005 + 0.02 * _frac(level, max_level)


def obstacle_height(level: int, max_level: int = MAX_LEVEL) -> float:
    return 0.01 + 0.05 * _frac(level, max_level)


@dataclass
class TerrainProfile:
    kind: TerrainKind
    difficulty_level: int
    heightfield: np.ndarray
    x0: float = -HALF_LENGTH
    resolution: float = RESOLUTION
    friction: float = 1.0
    restitution: float = 0.5

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.resolution * np.arange(self.heightfield.size)

    def height(self, x):
        return interp_height(self.heightfield[None, :], self.x0, self.resolution,
                             np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :])[0].reshape(np.shape(x))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "height"])
            for x, h in zip(self.xs, self.heightfield):
                w.writerow([f"{x:.6f}", f"{h:.6f}"])


def interp_height(fields: np.ndarray, x0: float, resolution: float, x: np.ndarray) -> np.ndarray:
    """Piecewise-linear lookup; ``fields`` is (N, S), ``x`` is (N, K). Clamped at the ends."""
    n_samples = fields.shape[1]
    u = (x - x0) / resolution
    u = np.clip(u, 0.0, n_samples - 1.0)
    i = np.minimum(np.floor(u).astype(np.int64), n_samples - 2)
    frac = u - i
    rows = np.arange(fields.shape[0])[:, None]
    h0 = fields[rows, i]
    h1 = fields[rows, i + 1]
    return h0 + frac * (h1 - h0)


def interp_slope(fields: np.ndarray, x0: float, resolution: float, x: np.ndarray) -> np.ndarray:
    n_samples = fields.shape[1]
    u = np.clip((x - x0) / resolution, 0.0, n_samples - 1.0)
    i = np.minimum(np.floor(u).astype(np.int64), n_samples - 2)
    rows = np.arange(fields.shape[0])[:, None]
    return (fields[rows, i + 1] - fields[rows, i]) / resolution


def generate_terrain(kind, difficulty_level: int, seed: int, max_level: int = MAX_LEVEL,
                     friction: float = 1.0, restitution: float = 0.5) -> TerrainProfile:
    """Deterministic in (kind, difficulty_level, seed)."""
    kind = TerrainKind.parse(kind)
    if not 0 <= difficulty_level <= max_level:
        raise ConfigurationError(f"difficulty_level {difficulty_level} outside [0, {max_level}]")
    # level is not part of the stream: harder levels rescale the same layout
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, list(TerrainKind).index(kind)])
    n = int(round(2 * HALF_LENGTH / RESOLUTION)) + 1
    xs = -HALF_LENGTH + RESOLUTION * np.arange(n)
    sign = 1.0 if rng.random() < 0.5 else -1.0

    if kind is TerrainKind.FLAT:
        h = np.zeros(n)
    elif kind is TerrainKind.SLOPE:
        h = sign * slope_gradient(difficulty_level, max_level) * xs
    elif kind is TerrainKind.ROUGH_SLOPE:
        # noise on a coarse 0.1 m lattice, the fine field interpolates it
        coarse = rng.uniform(-1.0, 1.0, size=n // 2 + 2) * rough_amplitude(difficulty_level, max_level)
        noise = np.interp(xs, -HALF_LENGTH + 2 * RESOLUTION * np.arange(coarse.size), coarse)
        h = sign * slope_gradient(difficulty_level, max_level) * xs + noise
    elif kind is TerrainKind.STAIRS:
        steps = np.floor((xs + HALF_LENGTH) / STAIR_RUN + 1e-9)
        h = sign * stair_rise(difficulty_level, max_level) * (steps - np.floor(HALF_LENGTH / STAIR_RUN))
    elif kind is TerrainKind.DISCRETE_OBSTACLES:
        h = np.zeros(n)
        height = obstacle_height(difficulty_level, max_level)
        x = -HALF_LENGTH + 1.0
        while x < HALF_LENGTH - 1.0:
            width = rng.uniform(0.2, 0.6)
            gap = rng.uniform(0.3, 1.0)
            if abs(x) > 0.5:  # keep the spawn pad clear
                mask = (xs >= x) & (xs < x + width)
                h[mask] = height * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
            x += width + gap
    else:  # pragma: no cover
        raise ConfigurationError(f"unknown terrain kind {kind!r}")
    return TerrainProfile(kind, difficulty_level, h.astype(np.float64), friction=friction,
                          restitution=restitution)
