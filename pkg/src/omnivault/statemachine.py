"""Shared plumbing for the authorization state machines."""

from __future__ import annotations

import enum
import functools
from typing import Any, Callable, TypeVar

from .errors import OmniError, ProtocolStateError, UnexpectedMessage
from .storage import ProtocolMessage

F = TypeVar("F", bound=Callable[..., Any])

DEFAULT_TIMEOUT = 30.0


class ProtocolMachine:
    """A role in a protocol run. Any error moves it to FAILED for good."""

    Phase: type[enum.Enum]
    FAILED: enum.Enum

    def __init__(self, initial: enum.Enum):
        self.phase = initial
        self.error: OmniError | None = None
        # Authenticated fields as this role sent or received them, for agreement checks.
        self.view: dict[str, bytes | int] = {}

    @property
    def failed(self) -> bool:
        return self.phase is self.FAILED

    def _require(self, *phases: enum.Enum) -> None:
        if self.phase not in phases:
            raise ProtocolStateError(
                f"{type(self).__name__} is {self.phase.name}, expected {' or '.join(p.name for p in phases)}"
            )

    def _fail(self, exc: OmniError) -> None:
        self.phase = self.FAILED
        self.error = exc
        self._forget()

    def _forget(self) -> None:
        """Drop one-shot secrets. Overridden per role."""


def step(*phases: str) -> Callable[[F], F]:
    """Decorate a transition: check the phase, and fail closed on any typed error."""

    def wrap(fn: F) -> F:
        @functools.wraps(fn)
        def inner(self: ProtocolMachine, *args, **kwargs):
            self._require(*(self.Phase[p] for p in phases))
            try:
                return fn(self, *args, **kwargs)
            except OmniError as exc:
                self._fail(exc)
                raise

        return inner  # type: ignore[return-value]

    return wrap


def expect(msg: ProtocolMessage, msg_type: str, uuid: str | None = None) -> ProtocolMessage:
    if msg.msg_type != msg_type:
        raise UnexpectedMessage(f"expected {msg_type}, got {msg.msg_type}")
    if uuid is not None and msg.uuid != uuid:
        raise UnexpectedMessage(f"expected message {uuid}, got {msg.uuid}")
    return msg
