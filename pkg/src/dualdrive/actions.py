from __future__ import annotations

from enum import Enum


class MetaAction(str, Enum):
    """High-level decision emitted at 2 Hz."""

    AC = "AC"       # raise target speed by 1 m/s
    DC = "DC"       # lower target speed by 1 m/s
    IDLE = "IDLE"   # hold target speed
    STOP = "STOP"   # target speed 0

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, token: str) -> "MetaAction":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown meta-action {token!r}") from None
