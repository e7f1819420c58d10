"""Quantum data locking: key budget, optics model, RS framing and protocol simulation."""

from .budget import BitAllocation, BlockParams, SecurityBudget, allocate_bits, security_budget
from .protocol import ChannelConfig, Codebook, SecretKey, build_codebook

__all__ = [
    "BitAllocation",
    "BlockParams",
    "ChannelConfig",
    "Codebook",
    "SecretKey",
    "SecurityBudget",
    "allocate_bits",
    "build_codebook",
    "security_budget",
]
__version__ = "0.1.0"
