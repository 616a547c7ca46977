import pytest

from iosr.session import (
    Abort,
    AddSample,
    BeginCollection,
    Correct,
    EmitWorld,
    FinishCollection,
    Phase,
    PublishHead,
    RejectedTransitionError,
    RequestWorld,
    RetrainDone,
    SessionState,
    StartRetrain,
    StartSession,
    handle_event,
    initial_state,
)


def run_events(state, events):
    actions = []
    for e in events:
        state, acts = handle_event(state, e)
        actions.extend(acts)
    return state, actions


class TestTransitionTable:
    def test_start_session(self):
        state, actions = handle_event(initial_state(), StartSession())
        assert state.phase is Phase.ENUMERATE_WORLD
        assert actions == []

    def test_request_world_emits(self):
        state, _ = handle_event(initial_state(), StartSession())
        state, actions = handle_event(state, RequestWorld())
        assert state.phase is Phase.AWAIT_CORRECTION
        assert actions == [EmitWorld()]

    def test_correct_begins_collection(self):
        state, _ = run_events(initial_state(), [StartSession(), RequestWorld()])
        state, actions = handle_event(state, Correct("multimeter"))
        assert state.phase is Phase.COLLECTING
        assert state.pending_class == "multimeter"
        assert actions == [BeginCollection("multimeter")]

    def test_samples_accumulate(self):
        state, _ = run_events(
            initial_state(), [StartSession(), RequestWorld(), Correct("m")]
        )
        state, _ = handle_event(state, AddSample((1.0, 2.0)))
        state, _ = handle_event(state, AddSample((3.0, 4.0)))
        assert state.collected == ((1.0, 2.0), (3.0, 4.0))

    def test_finish_with_no_samples_rejected(self):
        state, _ = run_events(
            initial_state(), [StartSession(), RequestWorld(), Correct("m")]
        )
        with pytest.raises(RejectedTransitionError):
            handle_event(state, FinishCollection())

    def test_finish_starts_retrain(self):
        state, _ = run_events(
            initial_state(),
            [StartSession(), RequestWorld(), Correct("m"), AddSample(1)],
        )
        state, actions = handle_event(state, FinishCollection())
        assert state.phase is Phase.RETRAINING
        assert actions == [StartRetrain("m", (1,))]

    def test_happy_path_increments_version_once(self):
        events = [
            StartSession(), RequestWorld(), Correct("m"),
            AddSample(1), AddSample(2), FinishCollection(), RetrainDone(),
        ]
        state, actions = run_events(initial_state(head_version=4), events)
        assert state.phase is Phase.IDLE
        assert state.head_version == 5
        assert state.collected == ()
        assert PublishHead() in actions

    def test_abort_from_any_state_clears(self):
        prefixes = [
            [],
            [StartSession()],
            [StartSession(), RequestWorld()],
            [StartSession(), RequestWorld(), Correct("m")],
            [StartSession(), RequestWorld(), Correct("m"), AddSample(0), FinishCollection()],
        ]
        for prefix in prefixes:
            state, _ = run_events(initial_state(), prefix)
            aborted, actions = handle_event(state, Abort())
            assert aborted.phase is Phase.IDLE
            assert aborted.collected == ()
            assert aborted.pending_class is None
            assert aborted.head_version == state.head_version

    def test_empty_correct_name_rejected(self):
        state, _ = run_events(initial_state(), [StartSession(), RequestWorld()])
        with pytest.raises(RejectedTransitionError):
            handle_event(state, Correct(""))

    @pytest.mark.parametrize(
        "event",
        [RequestWorld(), Correct("x"), AddSample(0), FinishCollection(), RetrainDone()],
    )
    def test_illegal_from_idle(self, event):
        with pytest.raises(RejectedTransitionError) as err:
            handle_event(initial_state(), event)
        assert err.value.state.phase is Phase.IDLE
        assert err.value.event == event


ALPHABET = [
    StartSession(),
    RequestWorld(),
    Correct("x"),
    Correct(""),
    AddSample(0),
    FinishCollection(),
    RetrainDone(),
    Abort(),
]


def explore(max_depth):
    """Walk every state reachable within max_depth events.

    Transitions are deterministic per (state, event), so deduplicating
    states covers exactly the behaviors of all event sequences up to the
    depth bound. Returns the reachable states and how many were expanded
    (states first reached at the depth bound have no outgoing steps left
    within the scope).
    """
    frontier = {initial_state()}
    seen = set(frontier)
    expanded = 0
    for _ in range(max_depth):
        next_frontier = set()
        for state in frontier:
            state.check_invariants()
            expanded += 1
            for event in ALPHABET:
                try:
                    new_state, _ = handle_event(state, event)
                except RejectedTransitionError:
                    continue
                except Exception as exc:  # pragma: no cover
                    raise AssertionError(
                        f"non-rejection error for ({state}, {event}): {exc!r}"
                    )
                new_state.check_invariants()
                assert new_state.head_version >= state.head_version
                if new_state not in seen:
                    seen.add(new_state)
                    next_frontier.add(new_state)
        frontier = next_frontier
    return seen, expanded


class TestSmallScopeExhaustive:
    def test_depth_eight_reaches_no_bad_state(self):
        seen, expanded = explore(8)
        assert expanded > 0
        phases = {s.phase for s in seen}
        assert phases == set(Phase)
        for s in seen:
            s.check_invariants()

    def test_states_are_values(self):
        a = SessionState()
        b = SessionState()
        assert a == b and hash(a) == hash(b)
