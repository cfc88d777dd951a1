"""Slot-filling task world: ontology, acts, knowledge base, success and rewards."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, OntologyError

REQUEST_WILDCARD = "?"
COUNT_BUCKETS = ("0", "1", "2-4", "5+")
SUMMARY_WIDTH = len(COUNT_BUCKETS) + 1

USER_ACTS = ("inform", "request", "affirm", "negate", "bye")
# system act -> which slot family it takes ("informable", "requestable" or None)
SYSTEM_ACTS = (
    ("request", "informable"),
    ("confirm", "informable"),
    ("offer", None),
    ("inform", "requestable"),
    ("canthelp", None),
    ("reqmore", None),
    ("bye", None),
)


@dataclass(frozen=True)
class Ontology:
    informable_slots: Dict[str, Tuple[str, ...]]
    requestable_slots: Tuple[str, ...]
    user_acts: Tuple[str, ...] = USER_ACTS
    system_acts: Tuple[Tuple[str, Optional[str]], ...] = SYSTEM_ACTS
    name: str = "custom"

    def __post_init__(self):
        if not self.informable_slots:
            raise DataError("ontology has no informable slots")
        for slot, values in self.informable_slots.items():
            if not values:
                raise DataError(f"slot {slot!r} has no values")
            if len(set(values)) != len(values):
                raise DataError(f"slot {slot!r} has duplicate values")
        overlap = set(self.informable_slots) & set(self.requestable_slots)
        if overlap:
            raise DataError(f"slots both informable and requestable: {sorted(overlap)}")

    @property
    def slots(self) -> Tuple[str, ...]:
        return tuple(self.informable_slots)

    def values(self, slot: str) -> Tuple[str, ...]:
        try:
            return self.informable_slots[slot]
        except KeyError:
            raise OntologyError(f"unknown informable slot {slot!r}") from None

    def check_slot_value(self, slot: str, value: str) -> None:
        if slot in self.informable_slots:
            if value not in self.informable_slots[slot] and value != REQUEST_WILDCARD:
                raise OntologyError(f"unknown value {value!r} for slot {slot!r}")
        elif slot in self.requestable_slots:
            if value != REQUEST_WILDCARD:
                raise OntologyError(f"requestable slot {slot!r} only takes {REQUEST_WILDCARD!r}")
        else:
            raise OntologyError(f"unknown slot {slot!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "informable_slots": {k: list(v) for k, v in self.informable_slots.items()},
            "requestable_slots": list(self.requestable_slots),
            "user_acts": list(self.user_acts),
            "system_acts": [[a, s] for a, s in self.system_acts],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Ontology":
        try:
            return cls(
                informable_slots={k: tuple(v) for k, v in d["informable_slots"].items()},
                requestable_slots=tuple(d["requestable_slots"]),
                user_acts=tuple(d.get("user_acts", USER_ACTS)),
                system_acts=tuple((a, s) for a, s in d.get("system_acts", SYSTEM_ACTS)),
                name=d.get("name", "custom"),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed ontology document: {exc!r}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class DialogAct:
    act: str
    slot_values: Tuple[Tuple[str, str], ...] = ()

    def __str__(self):
        inner = ",".join(f"{s}={v}" for s, v in self.slot_values)
        return f"{self.act}({inner})"

    def validate(self, ontology: Ontology) -> None:
        if self.act not in ontology.user_acts:
            raise OntologyError(f"unknown user act {self.act!r}")
        for slot, value in self.slot_values:
            ontology.check_slot_value(slot, value)


@dataclass(frozen=True)
class SystemAction:
    id: int
    label: str
    act: str
    slot: Optional[str] = None


class ActionInventory:
    """Frozen list of act or act_slot system actions built from an ontology."""

    def __init__(self, ontology: Ontology):
        actions: List[SystemAction] = []
        for act, family in ontology.system_acts:
            if family is None:
                actions.append(SystemAction(len(actions), act, act))
                continue
            if family == "informable":
                slots = ontology.slots
            elif family == "requestable":
                slots = ontology.requestable_slots
            else:
                raise DataError(f"system act {act!r} has unknown slot family {family!r}")
            for slot in slots:
                actions.append(SystemAction(len(actions), f"{act}_{slot}", act, slot))
        self.actions: Tuple[SystemAction, ...] = tuple(actions)
        self._by_label = {a.label: a for a in self.actions}

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, idx: int) -> SystemAction:
        return self.actions[idx]

    def by_label(self, label: str) -> SystemAction:
        try:
            return self._by_label[label]
        except KeyError:
            raise OntologyError(f"unknown system action {label!r}") from None

    def id(self, label: str) -> int:
        return self.by_label(label).id

    @property
    def labels(self) -> List[str]:
        return [a.label for a in self.actions]


@dataclass(frozen=True)
class KnowledgeBase:
    entities: Tuple[Dict[str, str], ...]
    ontology: Ontology

    def __post_init__(self):
        for i, ent in enumerate(self.entities):
            for slot in self.ontology.slots:
                if slot not in ent:
                    raise DataError(f"entity {i} lacks informable slot {slot!r}")
                if ent[slot] not in self.ontology.informable_slots[slot]:
                    raise DataError(f"entity {i} has out-of-ontology {slot}={ent[slot]!r}")

    def __len__(self):
        return len(self.entities)

    def to_list(self) -> list:
        return [dict(e) for e in self.entities]


@dataclass(frozen=True)
class QuerySummary:
    count_bucket: int
    available: bool

    def vector(self) -> np.ndarray:
        v = np.zeros(SUMMARY_WIDTH)
        v[self.count_bucket] = 1.0
        v[-1] = 1.0 if self.available else 0.0
        return v


@dataclass(frozen=True)
class UserGoal:
    constraints: Tuple[Tuple[str, str], ...]
    requests: FrozenSet[str] = frozenset()

    @property
    def constraint_map(self) -> Dict[str, str]:
        return dict(self.constraints)

    def matches(self, entity: Mapping[str, str]) -> bool:
        return all(entity.get(s) == v for s, v in self.constraints)


@dataclass
class Turn:
    """One exchange: user act, query summary seen by the agent, agent action."""
    user: DialogAct
    summary: QuerySummary
    action: int
    prev_action: Optional[int] = None
    log_prob: Optional[float] = None
    labels: Optional[Dict[str, Optional[str]]] = None


@dataclass
class Dialog:
    turns: List[Turn]
    goal: UserGoal
    final_beliefs: Dict[str, Optional[str]]
    # (requestable slot, informable values of the entity it was answered for)
    answered: List[Tuple[str, Tuple[Tuple[str, str], ...]]] = field(default_factory=list)
    success: Optional[bool] = None
    dialog_id: str = ""

    def __len__(self):
        return len(self.turns)


# ---------------------------------------------------------------- operations

def query_kb(kb: KnowledgeBase, constraints: Mapping[str, Optional[str]]) -> List[int]:
    """Ids of entities matching every non-None constraint, ascending."""
    active = []
    for slot, value in constraints.items():
        if slot not in kb.ontology.informable_slots:
            raise OntologyError(f"unknown slot {slot!r} in query")
        if value is not None:
            active.append((slot, value))
    return [i for i, ent in enumerate(kb.entities) if all(ent[s] == v for s, v in active)]


def count_bucket(n: int) -> int:
    if n <= 0:
        return 0
    if n == 1:
        return 1
    if n <= 4:
        return 2
    return 3


def summarize(results: Sequence, offered: bool) -> QuerySummary:
    return QuerySummary(count_bucket(len(results)), bool(offered))


def fulfilled_requests(dialog: Dialog, goal: UserGoal) -> FrozenSet[str]:
    done = set()
    for slot, entity in dialog.answered:
        if slot in goal.requests and goal.matches(dict(entity)):
            done.add(slot)
    return frozenset(done)


def correct_informables(dialog: Dialog, goal: UserGoal) -> int:
    return sum(1 for s, v in goal.constraints if dialog.final_beliefs.get(s) == v)


def evaluate_success(dialog: Dialog, goal: UserGoal) -> bool:
    if correct_informables(dialog, goal) != len(goal.constraints):
        return False
    return goal.requests <= fulfilled_requests(dialog, goal)


def designed_reward(dialog: Dialog, goal: UserGoal) -> float:
    n_correct = correct_informables(dialog, goal)
    score = float(n_correct)
    if n_correct == len(goal.constraints):
        score += len(fulfilled_requests(dialog, goal))
    return score


def oracle_reward(dialog: Dialog, goal: UserGoal) -> float:
    return 1.0 if evaluate_success(dialog, goal) else 0.0


# ---------------------------------------------------------------- profiles

TOY_SLOTS = {
    "area": ("north", "south", "east", "centre"),
    "food": ("italian", "chinese", "indian", "french", "thai", "british"),
    "pricerange": ("cheap", "moderate", "expensive"),
}
REQUESTABLES = ("phone", "address", "postcode", "signature")


def _attributes(i: int) -> Dict[str, str]:
    return {
        "name": f"restaurant_{i:03d}",
        "phone": f"01223 {100000 + 7919 * i % 900000:06d}",
        "address": f"{i + 1} synthetic street",
        "postcode": f"C.B {i % 9 + 1}, {i % 7 + 1} U.K",
        "signature": f"house special no. {i}",
    }


def build_kb(ontology: Ontology, n_entities: int, seed: int = 0) -> KnowledgeBase:
    rng = np.random.default_rng(seed)
    entities = []
    for i in range(n_entities):
        ent = _attributes(i)
        for slot, values in ontology.informable_slots.items():
            ent[slot] = values[int(rng.integers(len(values)))]
        entities.append(ent)
    return KnowledgeBase(tuple(entities), ontology)


def toy_profile() -> Tuple[Ontology, KnowledgeBase]:
    onto = Ontology(dict(TOY_SLOTS), REQUESTABLES, name="toy")
    return onto, build_kb(onto, 20, seed=0)


def dstc2_scale_profile() -> Tuple[Ontology, KnowledgeBase]:
    slots = {
        "area": ("north", "south", "east", "west", "centre"),
        "food": tuple(f"food_{i:02d}" for i in range(91)),
        "pricerange": ("cheap", "moderate", "expensive"),
    }
    onto = Ontology(slots, REQUESTABLES, name="dstc2-scale")
    return onto, build_kb(onto, 110, seed=0)


PROFILES = {"toy": toy_profile, "dstc2-scale": dstc2_scale_profile}


def load_profile(name: str) -> Tuple[Ontology, KnowledgeBase]:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def save_domain(path, ontology: Ontology, kb: KnowledgeBase) -> None:
    with open(path, "w") as fh:
        json.dump({"ontology": ontology.to_dict(), "kb": kb.to_list()}, fh, indent=1)


def load_domain(path) -> Tuple[Ontology, KnowledgeBase]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid domain document ({exc})") from None
    onto = Ontology.from_dict(doc["ontology"])
    return onto, KnowledgeBase(tuple(dict(e) for e in doc["kb"]), onto)
