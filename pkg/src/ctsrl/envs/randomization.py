"""Per-episode dynamics randomisation."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass
class DomainRandomization:
    enabled: bool = True
    link_mass_scale: tuple[float, float] = (0.8, 1.2)
    payload_mass: tuple[float, float] = (-1.0, 3.0)          # kg
    com_offset_x: tuple[float, float] = (-0.075, 0.075)      # m
    com_offset_y: tuple[float, float] = (-0.05, 0.05)
    com_offset_z: tuple[float, float] = (-0.05, 0.05)
    friction: tuple[float, float] = (0.2, 1.7)
    restitution: tuple[float, float] = (0.25, 0.75)
    kp_scale: tuple[float, float] = (0.8, 1.2)
    kd_scale: tuple[float, float] = (0.8, 1.2)
    action_delay: tuple[float, float] = (0.0, 0.020)         # s

    RANGE_FIELDS = ("link_mass_scale", "payload_mass", "com_offset_x", "com_offset_y",
                    "com_offset_z", "friction", "restitution", "kp_scale", "kd_scale",
                    "action_delay")

    def nominal(self) -> dict[str, float]:
        return dict(link_mass_scale=1.0, payload_mass=0.0, com_offset_x=0.0, com_offset_y=0.0,
                    com_offset_z=0.0, friction=1.0, restitution=0.5, kp_scale=1.0, kd_scale=1.0,
                    action_delay=0.0)

    def sample(self, rng: np.random.Generator) -> dict[str, float]:
        """One draw per episode; nominal values when disabled."""
        if not self.enabled:
            return self.nominal()
        out = {}
        for name in self.RANGE_FIELDS:
            lo, hi = getattr(self, name)
            out[name] = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        return out

    def contains(self, sample: dict[str, float]) -> bool:
        return all(getattr(self, k)[0] <= v <= getattr(self, k)[1] for k, v in sample.items()
                   if k in self.RANGE_FIELDS)


TABLE_RANGES = {f.name: f.default for f in fields(DomainRandomization) if isinstance(f.default, tuple)}
