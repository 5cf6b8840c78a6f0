"""
Stereokin Channels Module

Fermionic exchange-symmetry selection rules for two identical-species
molecules in a quasi-2D lattice, and the classification of a molecule pair
into the three lowest adiabatic collision channels.

A channel is labelled by (eta, L, gamma, M):
    eta   - exchange symmetry of the internal-state part (+1 / -1)
    L     - 3D angular momentum at short range
    gamma - exchange symmetry of the axial (z) motion (+1 / -1)
    M     - projection of the angular momentum on z at long range

Allowed channels satisfy both
    eta * (-1)**L = -1                (short range, 3D)
    eta * gamma * (-1)**M = -1        (long range, 2D)

Channel labels, ordered by increasing centrifugal barrier:
    |1> = (eta=-1, L=0, gamma=+1, M=0)      isotropic, no barrier
    |2> = (eta=+1, L=1, gamma=-1, M=0)      "head-to-tail"
    |3> = (eta=+1, L=1, gamma=+1, M=+-1)    "side-by-side"
"""

from enum import IntEnum
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import DomainError


class PairConfiguration(BaseModel):
    model_config = ConfigDict(frozen=True)

    same_internal_state: bool
    v1: int = Field(ge=0)
    v2: int = Field(ge=0)

    @property
    def same_level(self) -> bool:
        return self.v1 == self.v2


class ChannelQuantumNumbers(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: int
    L: int = Field(ge=0)
    gamma: int
    M: int

    @field_validator("eta", "gamma")
    @classmethod
    def _is_sign(cls, value: int) -> int:
        if value not in (1, -1):
            raise ValueError("must be +1 or -1")
        return value

    def as_tuple(self):
        return (self.eta, self.L, self.gamma, self.M)


class ChannelLabel(IntEnum):
    ISOTROPIC = 1
    HEAD_TO_TAIL = 2
    SIDE_BY_SIDE = 3

    @property
    def canonical(self) -> ChannelQuantumNumbers:
        """Canonical quantum numbers; |3> is reported with M=+1."""
        return CANONICAL_NUMBERS[self]

    @property
    def ket(self) -> str:
        return f"|{int(self)}>"


CANONICAL_NUMBERS: Dict[ChannelLabel, ChannelQuantumNumbers] = {
    ChannelLabel.ISOTROPIC: ChannelQuantumNumbers(eta=-1, L=0, gamma=1, M=0),
    ChannelLabel.HEAD_TO_TAIL: ChannelQuantumNumbers(eta=1, L=1, gamma=-1, M=0),
    ChannelLabel.SIDE_BY_SIDE: ChannelQuantumNumbers(eta=1, L=1, gamma=1, M=1),
}


def valid_short_range(eta: int, L: int) -> bool:
    return eta * (-1) ** L == -1


def valid_long_range(eta: int, gamma: int, M: int) -> bool:
    return eta * gamma * (-1) ** abs(M) == -1


def _order_key(ch: ChannelQuantumNumbers):
    # gamma=-1 sorts first at equal (L, |M|): lower barrier
    return (ch.L, abs(ch.M), ch.gamma, ch.eta, ch.M)


def enumerate_channels(pair: PairConfiguration, L_max: int, M_max: int) -> List[ChannelQuantumNumbers]:
    """All channels allowed for ``pair`` with L <= L_max and |M| <= M_max."""
    if L_max < 0 or M_max < 0:
        raise DomainError("L_max and M_max must be non-negative")

    etas = (1,) if pair.same_internal_state else (-1, 1)
    gammas = (1,) if pair.same_level else (-1, 1)

    allowed = []
    for eta in etas:
        for L in range(L_max + 1):
            if not valid_short_range(eta, L):
                continue
            for gamma in gammas:
                for M in range(-M_max, M_max + 1):
                    if valid_long_range(eta, gamma, M):
                        allowed.append(ChannelQuantumNumbers(eta=eta, L=L, gamma=gamma, M=M))
    return sorted(allowed, key=_order_key)


def classify_lowest_channel(pair: PairConfiguration) -> ChannelLabel:
    """Lowest-barrier channel reachable by ``pair``."""
    if not pair.same_internal_state:
        # both eta are physical; eta=-1 admits L=0
        return ChannelLabel.ISOTROPIC
    if pair.same_level:
        return ChannelLabel.SIDE_BY_SIDE
    return ChannelLabel.HEAD_TO_TAIL


def label_for(numbers: ChannelQuantumNumbers) -> ChannelLabel:
    """Map quantum numbers onto a label, treating M=+-1 alike; DomainError if none matches."""
    for label, canon in CANONICAL_NUMBERS.items():
        if (numbers.eta, numbers.L, numbers.gamma, abs(numbers.M)) == (canon.eta, canon.L, canon.gamma, abs(canon.M)):
            return label
    raise DomainError(f"{numbers.as_tuple()} is not one of the three lowest channels")


def channel_table(pair: PairConfiguration, L_max: int, M_max: int) -> List[dict]:
    """Rows for the allowed-channel table printed by the CLI."""
    rows = []
    for ch in enumerate_channels(pair, L_max, M_max):
        try:
            label = label_for(ch).ket
        except DomainError:
            label = ""
        rows.append({"eta": ch.eta, "L": ch.L, "gamma": ch.gamma, "M": ch.M, "label": label})
    return rows
