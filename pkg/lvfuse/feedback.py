"""
Feedback loop state machine.

Each reviewed test case either confirms the model (|truth - prediction| <= W, the good streak grows)
or is moved into the training pool (streak reset, retraining requested). The loop has converged
once |train| / |test| < R and the streak has reached F.

Persistence: ``feedback_state.json`` holds the parameters and the initial id sets, and
``feedback_events.csv`` is an append-only event log; the current state is rebuilt by replay.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError

from errors import FeedbackError
from services.json_store import load_json_document, write_json_atomic
from services.tables import append_rows, read_table

log = logging.getLogger(__name__)

STATE_NAME = "feedback_state.json"
EVENTS_NAME = "feedback_events.csv"
EVENT_COLUMNS = ("event_kind", "case_id", "truth_ml", "pred_ml", "streak_after")


class FeedbackParams(BaseModel):
    threshold_ml: float = Field(default=10.0, gt=0.0)
    ratio: float = Field(default=0.1, gt=0.0)
    streak_target: int = Field(default=1000, ge=1)


class EventKind(StrEnum):
    GOOD = "good"
    MOVED = "moved"
    RETRAINED = "retrained"


@dataclass(frozen=True)
class FeedbackEvent:
    kind: EventKind
    case_id: str
    truth_ml: float
    pred_ml: float
    streak_after: int


@dataclass(frozen=True)
class FeedbackState:
    train_ids: frozenset[str]
    test_ids: frozenset[str]
    params: FeedbackParams
    good_streak: int = 0
    retrain_pending: bool = False
    history: tuple[FeedbackEvent, ...] = ()

    def __post_init__(self) -> None:
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise FeedbackError(f"ids in both train and test sets: {', '.join(sorted(overlap)[:5])}")


def initial_state(train_ids: Iterable[str], test_ids: Iterable[str], params: FeedbackParams | None = None) -> FeedbackState:
    return FeedbackState(frozenset(map(str, train_ids)), frozenset(map(str, test_ids)), params or FeedbackParams())


def _check_case(state: FeedbackState, case_id: str) -> None:
    if case_id in state.train_ids:
        raise FeedbackError(f"case {case_id} is already in the training set")
    if case_id not in state.test_ids:
        raise FeedbackError(f"case {case_id} is not in the test set")


def feedback_step(state: FeedbackState, case_id: str, truth_ml: float, pred_ml: float) -> FeedbackState:
    case_id = str(case_id)
    _check_case(state, case_id)
    if abs(truth_ml - pred_ml) > state.params.threshold_ml:
        event = FeedbackEvent(EventKind.MOVED, case_id, float(truth_ml), float(pred_ml), 0)
        log.info("feedback: case=%s moved to train (|T-P|=%.2f > W)", case_id, abs(truth_ml - pred_ml))
        return replace(
            state,
            train_ids=state.train_ids | {case_id},
            test_ids=state.test_ids - {case_id},
            good_streak=0,
            retrain_pending=True,
            history=(*state.history, event),
        )
    streak = state.good_streak + 1
    event = FeedbackEvent(EventKind.GOOD, case_id, float(truth_ml), float(pred_ml), streak)
    return replace(state, good_streak=streak, history=(*state.history, event))


def mark_retrained(state: FeedbackState) -> FeedbackState:
    """Clear the retraining request; the good streak is left untouched."""
    event = FeedbackEvent(EventKind.RETRAINED, "", 0.0, 0.0, state.good_streak)
    return replace(state, retrain_pending=False, history=(*state.history, event))


def feedback_converged(state: FeedbackState) -> bool:
    if not state.test_ids:
        raise FeedbackError("convergence is undefined with an empty test set")
    ratio = len(state.train_ids) / len(state.test_ids)
    return ratio < state.params.ratio and state.good_streak >= state.params.streak_target


def apply_event(state: FeedbackState, event: FeedbackEvent) -> FeedbackState:
    """Re-apply a logged event using its recorded outcome, then verify the logged streak."""
    if event.kind == EventKind.RETRAINED:
        nxt = mark_retrained(state)
    else:
        _check_case(state, event.case_id)
        if event.kind == EventKind.MOVED:
            nxt = replace(
                state,
                train_ids=state.train_ids | {event.case_id},
                test_ids=state.test_ids - {event.case_id},
                good_streak=0,
                retrain_pending=True,
                history=(*state.history, event),
            )
        else:
            nxt = replace(state, good_streak=state.good_streak + 1, history=(*state.history, event))
    if nxt.good_streak != event.streak_after:
        raise FeedbackError(
            f"event log inconsistent at event {len(state.history)}: streak {nxt.good_streak} != logged {event.streak_after}"
        )
    return nxt


def replay(initial: FeedbackState, events: Sequence[FeedbackEvent]) -> FeedbackState:
    state = initial
    for event in events:
        state = apply_event(state, event)
    return state


class FeedbackStore:
    """State file plus append-only event log under one directory."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self.state_path = self.directory / STATE_NAME
        self.events_path = self.directory / EVENTS_NAME

    def exists(self) -> bool:
        return self.state_path.is_file()

    def init(
        self,
        train_ids: Iterable[str],
        test_ids: Iterable[str],
        params: FeedbackParams | None = None,
        overwrite: bool = False,
    ) -> FeedbackState:
        if self.exists() and not overwrite:
            raise FeedbackError(f"feedback state already exists in {self.directory}")
        state = initial_state(train_ids, test_ids, params)
        write_json_atomic(
            self.state_path,
            {
                "params": state.params.model_dump(mode="json"),
                "train_ids": sorted(state.train_ids),
                "test_ids": sorted(state.test_ids),
            },
        )
        if self.events_path.exists():
            self.events_path.unlink()
        append_rows(self.events_path, EVENT_COLUMNS, [])
        log.info("feedback: initialized %s train=%d test=%d", self.directory, len(state.train_ids), len(state.test_ids))
        return state

    def _initial(self) -> FeedbackState:
        try:
            doc = load_json_document(self.state_path)
            params = FeedbackParams.model_validate(doc.get("params") or {})
        except (ValueError, ValidationError) as e:
            raise FeedbackError(f"unreadable feedback state: {e}") from e
        return initial_state(doc.get("train_ids") or [], doc.get("test_ids") or [], params)

    def events(self) -> list[FeedbackEvent]:
        if not self.events_path.exists():
            return []
        frame = read_table(self.events_path, EVENT_COLUMNS, text_columns=("event_kind", "case_id"))
        out: list[FeedbackEvent] = []
        for row in frame.itertuples(index=False):
            try:
                kind = EventKind(str(row.event_kind))
            except ValueError:
                raise FeedbackError(f"unknown event kind {row.event_kind!r} in {self.events_path}") from None
            case_id = "" if kind == EventKind.RETRAINED else str(row.case_id)
            out.append(FeedbackEvent(kind, case_id, float(row.truth_ml), float(row.pred_ml), int(row.streak_after)))
        return out

    def load(self) -> FeedbackState:
        return replay(self._initial(), self.events())

    def append(self, event: FeedbackEvent) -> None:
        append_rows(
            self.events_path,
            EVENT_COLUMNS,
            [(event.kind.value, event.case_id, event.truth_ml, event.pred_ml, event.streak_after)],
        )

    def step(self, case_id: str, truth_ml: float, pred_ml: float) -> FeedbackState:
        state = feedback_step(self.load(), case_id, truth_ml, pred_ml)
        self.append(state.history[-1])
        return state

    def retrained(self) -> FeedbackState:
        state = mark_retrained(self.load())
        self.append(state.history[-1])
        return state
