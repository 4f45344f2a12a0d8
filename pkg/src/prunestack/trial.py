"""
Trial record: one evaluated search point.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from .latency_bench import LatencySample
from .search_space import SearchPoint, parse_point


class TrialError(Exception):
    """Raised when a trial violates its stage invariants."""

    pass


@dataclass(frozen=True)
class Trial:
    """
    A search point with its objectives.

    Stage-1 trials always carry measured latency; stage-2 trials always
    carry a quality value and may carry a predicted latency instead.
    """

    point: SearchPoint
    stage: int
    latency: float  # TTFT seconds at the objective context
    latency_predicted: bool = False
    quality: Optional[float] = None
    samples: Tuple[LatencySample, ...] = ()
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.stage not in (1, 2):
            raise TrialError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 1 and self.latency_predicted:
            raise TrialError("stage-1 trials must carry measured latency")
        if self.stage == 2 and self.quality is None:
            raise TrialError("stage-2 trials must carry a quality value")
        object.__setattr__(self, "samples", tuple(self.samples))

    @property
    def objectives(self) -> Tuple[float, float]:
        """(quality, latency) pair; quality must be present."""
        if self.quality is None:
            raise TrialError(f"trial {self.point} has no quality value")
        return (self.quality, self.latency)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point.encode(),
            "stage": self.stage,
            "latency": self.latency,
            "latency_predicted": self.latency_predicted,
            "quality": self.quality,
            "samples": [s.to_dict() for s in self.samples],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Trial":
        return cls(
            point=parse_point(data["point"]),
            stage=int(data["stage"]),
            latency=float(data["latency"]),
            latency_predicted=bool(data.get("latency_predicted", False)),
            quality=data.get("quality"),
            samples=tuple(LatencySample.from_dict(s) for s in data.get("samples", [])),
            provenance=data.get("provenance", ""),
        )
