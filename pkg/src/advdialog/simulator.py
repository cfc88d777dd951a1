"""Agenda-based stochastic user simulator working at the dialog-act level."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Set, Tuple

import numpy as np

from .domain import (
    REQUEST_WILDCARD,
    Dialog,
    DialogAct,
    KnowledgeBase,
    Ontology,
    SystemAction,
    UserGoal,
    evaluate_success,
    query_kb,
)

# noise never substitutes a bye: it must not end dialogs on its own
NOISE_ACTS = ("inform", "request", "affirm", "negate")


@dataclass
class SimulatorConfig:
    epsilon: float = 0.15
    patience: int = 12
    unsatisfiable_fraction: float = 0.1
    max_requests: int = 3


@dataclass
class SystemTurn:
    """What the agent did, with the content the user gets to see."""
    action: SystemAction
    value: Optional[str] = None      # confirmed value (confirm_*), None if the agent has none
    entity: Optional[int] = None     # offered / described entity id


@dataclass
class SimulatorState:
    goal: UserGoal
    agenda: List[DialogAct]
    patience: int
    informed: Set[str] = field(default_factory=set)
    satisfied_requests: Set[str] = field(default_factory=set)
    offered: Optional[int] = None
    pending_requests: List[str] = field(default_factory=list)


def sample_goal(ontology: Ontology, kb: KnowledgeBase, rng: np.random.Generator,
                unsatisfiable_fraction: float = 0.1, max_requests: int = 3) -> UserGoal:
    slots = ontology.slots
    if rng.random() < unsatisfiable_fraction:
        for _ in range(10000):
            combo = {s: ontology.values(s)[int(rng.integers(len(ontology.values(s))))]
                     for s in slots}
            if not query_kb(kb, combo):
                break
        else:
            raise RuntimeError("could not find an unsatisfiable goal")
    else:
        ent = kb.entities[int(rng.integers(len(kb)))]
        combo = {s: ent[s] for s in slots}
    n_req = int(rng.integers(1, min(max_requests, len(ontology.requestable_slots)) + 1))
    picked = rng.choice(len(ontology.requestable_slots), size=n_req, replace=False)
    requests = frozenset(ontology.requestable_slots[int(i)] for i in picked)
    return UserGoal(tuple((s, combo[s]) for s in slots), requests)


class UserSimulator:
    def __init__(self, ontology: Ontology, kb: KnowledgeBase,
                 config: Optional[SimulatorConfig] = None):
        self.ontology = ontology
        self.kb = kb
        self.config = config or SimulatorConfig()

    def sample_goal(self, rng: np.random.Generator) -> UserGoal:
        return sample_goal(self.ontology, self.kb, rng,
                           self.config.unsatisfiable_fraction, self.config.max_requests)

    def new_state(self, goal: UserGoal) -> SimulatorState:
        agenda = [DialogAct("inform", ((s, v),)) for s, v in goal.constraints]
        agenda += [DialogAct("request", ((r, REQUEST_WILDCARD),)) for r in sorted(goal.requests)]
        return SimulatorState(goal=goal, agenda=agenda, patience=self.config.patience,
                              pending_requests=sorted(goal.requests))

    # -------------------------------------------------------------- helpers

    def _inform(self, state: SimulatorState, pairs) -> DialogAct:
        pairs = tuple(pairs)
        for s, _ in pairs:
            state.informed.add(s)
        state.agenda = [a for a in state.agenda
                        if not (a.act == "inform" and a.slot_values[0][0] in state.informed)]
        return DialogAct("inform", pairs)

    def _uninformed(self, state: SimulatorState) -> List[Tuple[str, str]]:
        return [(s, v) for s, v in state.goal.constraints if s not in state.informed]

    def _next_request_or_bye(self, state: SimulatorState) -> DialogAct:
        pending = [r for r in state.pending_requests if r not in state.satisfied_requests]
        if pending:
            return DialogAct("request", ((pending[0], REQUEST_WILDCARD),))
        return DialogAct("bye")

    def _mismatch(self, state: SimulatorState, entity: int) -> List[Tuple[str, str]]:
        ent = self.kb.entities[entity]
        return [(s, v) for s, v in state.goal.constraints if ent[s] != v]

    def _restate(self, state: SimulatorState) -> DialogAct:
        missing = self._uninformed(state)
        if missing:
            return self._inform(state, missing[:1])
        return self._inform(state, state.goal.constraints)

    def _opening(self, state: SimulatorState, rng: np.random.Generator) -> DialogAct:
        cons = list(state.goal.constraints)
        k = int(rng.integers(1, len(cons) + 1))
        order = rng.permutation(len(cons))[:k]
        return self._inform(state, [cons[int(i)] for i in sorted(order)])

    def _respond(self, state: SimulatorState, turn: Optional[SystemTurn],
                 rng: np.random.Generator) -> DialogAct:
        if turn is None:
            return self._opening(state, rng)
        goal = state.goal.constraint_map
        act, slot = turn.action.act, turn.action.slot
        if act == "bye":
            return DialogAct("bye")
        if act == "request":
            if slot in goal:
                return self._inform(state, [(slot, goal[slot])])
            return DialogAct("negate")
        if act == "confirm":
            if slot not in goal:
                return DialogAct("negate")
            if turn.value == goal[slot]:
                return DialogAct("affirm")
            state.informed.add(slot)
            return DialogAct("negate", ((slot, goal[slot]),))
        if act in ("offer", "canthelp"):
            entity = turn.entity if act == "offer" else None
            if entity is None:
                if not query_kb(self.kb, goal):
                    return DialogAct("bye")
                return self._inform(state, state.goal.constraints)
            wrong = self._mismatch(state, entity)
            if wrong:
                state.offered = None
                return self._inform(state, wrong)
            state.offered = entity
            return self._next_request_or_bye(state)
        if act == "inform":
            if turn.entity is None:
                return self._restate(state)
            wrong = self._mismatch(state, turn.entity)
            if wrong:
                state.offered = None
                return self._inform(state, wrong)
            state.offered = turn.entity
            if slot in state.pending_requests:
                state.satisfied_requests.add(slot)
            return self._next_request_or_bye(state)
        if act == "reqmore":
            if state.offered is not None:
                return self._next_request_or_bye(state)
            return self._restate(state)
        raise ValueError(f"unhandled system act {act!r}")

    def _noise_act(self, rng: np.random.Generator) -> DialogAct:
        kind = NOISE_ACTS[int(rng.integers(len(NOISE_ACTS)))]
        if kind == "inform":
            slot = self.ontology.slots[int(rng.integers(len(self.ontology.slots)))]
            values = self.ontology.values(slot)
            return DialogAct("inform", ((slot, values[int(rng.integers(len(values)))]),))
        if kind == "request":
            req = self.ontology.requestable_slots
            return DialogAct("request", ((req[int(rng.integers(len(req)))], REQUEST_WILDCARD),))
        return DialogAct(kind)

    def user_turn(self, state: SimulatorState, system_turn: Optional[SystemTurn],
                  rng: np.random.Generator) -> Tuple[DialogAct, SimulatorState, bool]:
        """Respond to ``system_turn`` (None for the opening turn).

        Mutates and returns ``state``. With probability epsilon the intended
        act is replaced by a random in-grammar act; the user's own bookkeeping
        still follows the intended act.
        """
        if state.patience <= 0:
            raise ValueError("user simulator has no patience left")
        act = self._respond(state, system_turn, rng)
        if self.config.epsilon > 0 and rng.random() < self.config.epsilon:
            act = self._noise_act(rng)
        state.patience -= 1
        if state.patience == 0 and act.act != "bye":
            act = DialogAct("bye")
        return act, state, act.act == "bye"


def feedback(dialog: Dialog, goal: UserGoal, rate: float,
             rng: np.random.Generator) -> Optional[bool]:
    """Positive feedback for a successful dialog with probability ``rate``, else None."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"feedback rate must be in [0, 1], got {rate}")
    if rate == 0.0 or not evaluate_success(dialog, goal):
        return None
    return True if rng.random() < rate else None
