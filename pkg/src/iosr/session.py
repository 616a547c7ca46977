"""Teaching-session finite state machine.

The session walks Idle -> EnumerateWorld -> AwaitCorrection -> Collecting
-> Retraining -> Idle. Transitions are pure: handle_event maps a state and
an event to the next state plus actions for the service layer to perform.
Illegal pairs raise RejectedTransitionError rather than mutating anything.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any


class Phase(enum.Enum):
    IDLE = "idle"
    ENUMERATE_WORLD = "enumerate_world"
    AWAIT_CORRECTION = "await_correction"
    COLLECTING = "collecting"
    RETRAINING = "retraining"


@dataclass(frozen=True)
class SessionState:
    phase: Phase = Phase.IDLE
    pending_class: str | None = None
    collected: tuple = ()
    head_version: int = 0

    def check_invariants(self) -> None:
        if self.phase is Phase.COLLECTING and not self.pending_class:
            raise AssertionError("Collecting state without a pending class")
        if self.phase is Phase.RETRAINING and len(self.collected) < 1:
            raise AssertionError("Retraining state with no collected samples")


# -- events --------------------------------------------------------------


@dataclass(frozen=True)
class StartSession:
    pass


@dataclass(frozen=True)
class RequestWorld:
    pass


@dataclass(frozen=True)
class Correct:
    name: str


@dataclass(frozen=True)
class AddSample:
    sample: Any


@dataclass(frozen=True)
class FinishCollection:
    pass


@dataclass(frozen=True)
class RetrainDone:
    pass


@dataclass(frozen=True)
class Abort:
    pass


EVENT_TYPES = (StartSession, RequestWorld, Correct, AddSample, FinishCollection, RetrainDone, Abort)


# -- actions -------------------------------------------------------------


@dataclass(frozen=True)
class EmitWorld:
    pass


@dataclass(frozen=True)
class BeginCollection:
    name: str


@dataclass(frozen=True)
class StartRetrain:
    name: str
    samples: tuple


@dataclass(frozen=True)
class PublishHead:
    pass


class RejectedTransitionError(Exception):
    """Raised for any (state, event) pair outside the transition table."""

    def __init__(self, state: SessionState, event, reason: str = ""):
        self.state = state
        self.event = event
        detail = f" ({reason})" if reason else ""
        super().__init__(
            f"event {type(event).__name__} not allowed in state {state.phase.value}{detail}"
        )


def initial_state(head_version: int = 0) -> SessionState:
    return SessionState(head_version=head_version)


def handle_event(state: SessionState, event) -> tuple[SessionState, list]:
    """Apply one event; returns the next state and the actions it triggers."""
    if isinstance(event, Abort):
        return (
            SessionState(Phase.IDLE, None, (), state.head_version),
            [],
        )
    match state.phase:
        case Phase.IDLE if isinstance(event, StartSession):
            return replace(state, phase=Phase.ENUMERATE_WORLD), []
        case Phase.ENUMERATE_WORLD if isinstance(event, RequestWorld):
            return replace(state, phase=Phase.AWAIT_CORRECTION), [EmitWorld()]
        case Phase.AWAIT_CORRECTION if isinstance(event, Correct):
            if not event.name:
                raise RejectedTransitionError(state, event, "empty class name")
            return (
                replace(state, phase=Phase.COLLECTING, pending_class=event.name, collected=()),
                [BeginCollection(event.name)],
            )
        case Phase.COLLECTING if isinstance(event, AddSample):
            return replace(state, collected=state.collected + (event.sample,)), []
        case Phase.COLLECTING if isinstance(event, FinishCollection):
            if len(state.collected) < 1:
                raise RejectedTransitionError(state, event, "no samples collected")
            return (
                replace(state, phase=Phase.RETRAINING),
                [StartRetrain(state.pending_class, state.collected)],
            )
        case Phase.RETRAINING if isinstance(event, RetrainDone):
            return (
                SessionState(Phase.IDLE, None, (), state.head_version + 1),
                [PublishHead()],
            )
    raise RejectedTransitionError(state, event)
