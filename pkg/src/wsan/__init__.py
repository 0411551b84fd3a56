"""Real-time industrial wireless sensor-actuator network toolkit."""

from wsan.model import (
    ConstantLink,
    EnergyModel,
    Flow,
    LinkSampler,
    MetricRecord,
    NetworkTopology,
    TraceLink,
    TwoStateMarkovLink,
)

__all__ = [
    "ConstantLink",
    "EnergyModel",
    "Flow",
    "LinkSampler",
    "MetricRecord",
    "NetworkTopology",
    "TraceLink",
    "TwoStateMarkovLink",
]

__version__ = "0.1.0"
