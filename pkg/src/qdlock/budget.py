"""Key budget for quantum data locking over a d-dimensional channel.

For a block of ``n`` single-photon channel uses carrying ``M = 64**n``
messages, the number of scrambling unitaries ``K_n`` needed to hold
Eve's accessible information to ``O(eps * log2(d**n))`` is at least the
larger of::

    2 (2d/(d+1))**n (ln M / eps**2 + (2/eps**3) ln(5/eps))
    (d**n / M) * 4 ln2 * ln(d**n) / eps**2

with ``eps = 2**(-n**c)``.  Both branches overflow doubles for modest ``n``
so everything here is evaluated as logarithms.

Reed-Solomon (63, x) redundancy is covered by scaling the consumed key by
``63/x``; the remaining bits of each 6-bit photon carry the message.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BITS_PER_SYMBOL = 6
RS_LENGTH = 63
LN2 = math.log(2.0)


@dataclass(frozen=True)
class BlockParams:
    """One transmission block: ``n`` channel uses over a ``d``-dimensional channel."""

    n: int
    d: float
    m_bits: int = BITS_PER_SYMBOL

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n!r}")
        if not self.d >= 2:
            raise ValueError(f"d must be >= 2, got {self.d!r}")
        if self.m_bits != BITS_PER_SYMBOL:
            raise ValueError("only 6-bit symbols are supported")

    @property
    def log2_messages(self) -> int:
        return self.m_bits * self.n


@dataclass(frozen=True)
class SecurityBudget:
    params: BlockParams
    epsilon: float
    codebook_bits: float
    branch_bits: tuple[float, float]
    iacc_bound: float

    @property
    def key_per_photon(self) -> float:
        return self.codebook_bits / self.params.n

    @property
    def feasible(self) -> bool:
        return self.key_per_photon < BITS_PER_SYMBOL

    @property
    def dominant_branch(self) -> int:
        return 0 if self.branch_bits[0] >= self.branch_bits[1] else 1


@dataclass(frozen=True)
class BitAllocation:
    """Per-photon split of the 6 bits for a Reed-Solomon (63, rs_k) code."""

    rs_k: int
    key_per_photon: float
    redundancy_bits: float
    newkey_bits: float
    message_bits: float

    @property
    def feasible(self) -> bool:
        # a tie at exactly zero message bits is treated as infeasible
        return self.message_bits > 0.0

    @property
    def correctable(self) -> int:
        return (RS_LENGTH - self.rs_k) // 2


def epsilon(n: int, c: float = 0.5) -> float:
    """Return ``2**(-n**c)``."""
    if not 0.0 < c < 1.0:
        raise ValueError(f"exponent c must lie in (0, 1), got {c!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    return 2.0 ** (-(n**c))


def _log2_eps_inv(eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps!r}")
    return -math.log2(eps)


def branch_bits(params: BlockParams, eps: float) -> tuple[float, float]:
    """log2 of each branch of the codebook-size bound."""
    n, d = params.n, float(params.d)
    ln_inv_eps = _log2_eps_inv(eps) * LN2
    ln_M = params.log2_messages * LN2
    # ln(ln M / eps^2) and ln((2/eps^3) ln(5/eps)) combined stably
    a = math.log(ln_M) + 2.0 * ln_inv_eps
    b = LN2 + 3.0 * ln_inv_eps + math.log(math.log(5.0) + ln_inv_eps)
    inner = float(np.logaddexp(a, b)) / LN2
    first = 1.0 + n * math.log2(2.0 * d / (d + 1.0)) + inner

    log2_dn = n * math.log2(d)
    second = (
        log2_dn
        - params.log2_messages
        + math.log2(4.0 * LN2 * n * math.log(d))
        + 2.0 * ln_inv_eps / LN2
    )
    return first, second


def codebook_bits(params: BlockParams, eps: float) -> float:
    """Lower bound on ``log2 K_n`` (real valued, not rounded)."""
    return max(branch_bits(params, eps))


def iacc_bound(params: BlockParams, eps: float) -> float:
    """Indicative accessible-information bound ``eps * n * log2(d)``.

    The big-O constant is taken as 1, so the value is indicative only.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {eps!r}")
    return eps * params.n * math.log2(params.d)


def security_budget(d: float, n: int, c: float = 0.5) -> SecurityBudget:
    params = BlockParams(n=n, d=d)
    eps = epsilon(n, c)
    branches = branch_bits(params, eps)
    return SecurityBudget(
        params=params,
        epsilon=eps,
        codebook_bits=max(branches),
        branch_bits=branches,
        iacc_bound=iacc_bound(params, eps),
    )


def allocate_bits(params: BlockParams, rs_k: int, c: float = 0.5) -> BitAllocation:
    if int(rs_k) != rs_k or not 1 <= rs_k <= RS_LENGTH:
        raise ValueError(f"rs_k must be an integer in 1..63, got {rs_k!r}")
    kpp = codebook_bits(params, epsilon(params.n, c)) / params.n
    return allocation_from_key_rate(kpp, rs_k)


def allocation_from_key_rate(key_per_photon: float, rs_k: int) -> BitAllocation:
    redundancy = BITS_PER_SYMBOL * (RS_LENGTH - rs_k) / RS_LENGTH
    newkey = key_per_photon * RS_LENGTH / rs_k
    message = BITS_PER_SYMBOL - redundancy - newkey
    return BitAllocation(
        rs_k=int(rs_k),
        key_per_photon=key_per_photon,
        redundancy_bits=redundancy,
        newkey_bits=newkey,
        message_bits=message,
    )


@dataclass(frozen=True)
class KeyRateRow:
    n: int
    d: float
    epsilon: float
    codebook_bits: float
    key_per_photon: float
    feasible: bool


def sweep_key_rate(d: float, n_list: Sequence[int], c: float = 0.5) -> list[KeyRateRow]:
    if len(n_list) == 0:
        raise ValueError("n_list must not be empty")
    rows = []
    for n in n_list:
        b = security_budget(d, int(n), c)
        rows.append(
            KeyRateRow(
                n=int(n),
                d=d,
                epsilon=b.epsilon,
                codebook_bits=b.codebook_bits,
                key_per_photon=b.key_per_photon,
                feasible=b.feasible,
            )
        )
    return rows


def sweep_allocation(d: float, n: int, xs: Iterable[int], c: float = 0.5) -> list[BitAllocation]:
    params = BlockParams(n=n, d=d)
    return [allocate_bits(params, x, c) for x in xs]


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def write_keyrate_csv(path, rows: Sequence[KeyRateRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "d", "epsilon", "codebook_bits", "key_per_photon", "feasible"])
        for r in rows:
            w.writerow([r.n, _fmt(r.d), _fmt(r.epsilon), _fmt(r.codebook_bits),
                        _fmt(r.key_per_photon), int(r.feasible)])


def write_allocation_csv(path, allocs: Sequence[BitAllocation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "redundancy_bits", "newkey_bits", "message_bits", "feasible"])
        for a in allocs:
            w.writerow([a.rs_k, _fmt(a.redundancy_bits), _fmt(a.newkey_bits),
                        _fmt(a.message_bits), int(a.feasible)])
