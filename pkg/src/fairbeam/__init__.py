"""Weighted max-min-fair multigroup multicast beamforming under per-antenna power limits."""

from fairbeam.model import (
    ChannelSet,
    CovarianceSet,
    GroupPartition,
    PrecoderSet,
    ProblemInstance,
    make_instance,
)

__all__ = [
    "ChannelSet",
    "CovarianceSet",
    "GroupPartition",
    "PrecoderSet",
    "ProblemInstance",
    "make_instance",
]

__version__ = "0.1.0"
