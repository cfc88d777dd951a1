"""Dialog corpora: scripted-expert generation and the line-delimited JSON format.

One JSON object per line::

    {"version": 1, "dialog_id": "demo-00000",
     "goal": {"constraints": {"food": "thai", ...}, "requests": ["phone"]},
     "success": true,
     "final_beliefs": {"food": "thai", "area": null, ...},
     "answered": [["phone", {"food": "thai", ...}]],
     "turns": [{"user": {"act": "inform", "slot_values": [["food", "thai"]]},
                "summary": {"count_bucket": "2-4", "available": false},
                "action": "request_area",
                "labels": {"food": "thai", "area": null, ...}}, ...]}

``labels`` may be omitted on every turn of a record (unlabeled dialogs) but
not on only some of them. ``success`` may be null (unknown).
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from .domain import (
    COUNT_BUCKETS,
    ActionInventory,
    Dialog,
    DialogAct,
    KnowledgeBase,
    Ontology,
    QuerySummary,
    Turn,
    UserGoal,
    evaluate_success,
)
from .errors import CorpusError, OntologyError
from .rollout import AgentContext, KBCache, spawn_rngs
from .simulator import UserSimulator

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

# documented CorpusError.kind values
ERROR_KINDS = ("json", "version", "schema", "symbol", "alignment")


# ------------------------------------------------------------------ scripted expert

class ScriptedExpert:
    """Rule-based agent used to produce demonstration dialogs.

    It tracks the last value the user gave for each slot, asks for missing
    constraints, confirms values that changed without being asked for, offers
    the first matching entity and answers requests about it.
    """

    def __init__(self, ontology: Ontology, inventory: ActionInventory):
        self.ontology = ontology
        self.inventory = inventory
        self.reset()

    def reset(self) -> None:
        self.tracker: Dict[str, Optional[str]] = {s: None for s in self.ontology.slots}
        self.suspicious: Set[str] = set()
        self.prev: Optional[int] = None

    def observe(self, user: DialogAct) -> Dict[str, Optional[str]]:
        prev = None if self.prev is None else self.inventory[self.prev]
        if prev is None:
            prompted = set()
        elif prev.act == "request":
            prompted = {prev.slot}
        elif prev.act in ("offer", "inform", "canthelp"):
            prompted = set(self.ontology.slots)
        else:
            prompted = set()
        if user.act in ("inform", "negate"):
            for slot, value in user.slot_values:
                if slot not in self.tracker:
                    continue
                old = self.tracker[slot]
                self.tracker[slot] = value
                if user.act == "inform" and old is not None and old != value and slot not in prompted:
                    self.suspicious.add(slot)
                elif user.act == "negate":
                    self.suspicious.discard(slot)
        return dict(self.tracker)

    def decide(self, user: DialogAct, context: AgentContext) -> int:
        inv = self.inventory
        if user.act == "bye":
            return inv.id("bye")
        for slot in self.ontology.slots:
            if slot in self.suspicious:
                self.suspicious.discard(slot)
                return inv.id(f"confirm_{slot}")
        if user.act == "request" and context.available:
            slot = user.slot_values[0][0]
            if slot in self.ontology.requestable_slots:
                return inv.id(f"inform_{slot}")
        for slot in self.ontology.slots:
            if self.tracker[slot] is None:
                return inv.id(f"request_{slot}")
        if not context.available:
            return inv.id("offer") if context.results else inv.id("canthelp")
        return inv.id("reqmore")


def expert_dialog(expert: ScriptedExpert, simulator: UserSimulator, goal: UserGoal,
                  rng: np.random.Generator, max_turns: int = 20, kbc: Optional[KBCache] = None) -> Dialog:
    expert.reset()
    context = AgentContext(kbc or KBCache(simulator.kb))
    state = simulator.new_state(goal)
    user, state, done = simulator.user_turn(state, None, rng)
    turns: List[Turn] = []
    labels: Dict[str, Optional[str]] = {}
    for _ in range(max_turns):
        labels = expert.observe(user)
        summary = context.observe(user, labels)
        action = expert.decide(user, context)
        turns.append(Turn(user, summary, action, expert.prev, None, labels))
        sys_turn = context.apply(action, expert.inventory)
        expert.prev = action
        if done or expert.inventory[action].act == "bye":
            break
        user, state, done = simulator.user_turn(state, sys_turn, rng)
    dialog = Dialog(turns, goal, dict(labels), list(context.answered))
    dialog.success = evaluate_success(dialog, goal)
    return dialog


def generate_corpus(ontology: Ontology, kb: KnowledgeBase, n: int, simulator: UserSimulator,
                    rng: np.random.Generator, max_turns: int = 20,
                    prefix: str = "demo") -> List[Dialog]:
    """``n`` expert-vs-simulator dialogs with per-turn gold labels."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    expert = ScriptedExpert(ontology, ActionInventory(ontology))
    kbc = KBCache(kb)
    out = []
    for i, sim_rng in enumerate(spawn_rngs(rng, n)):
        goal = simulator.sample_goal(sim_rng)
        d = expert_dialog(expert, simulator, goal, sim_rng, max_turns, kbc)
        d.dialog_id = f"{prefix}-{i:05d}"
        out.append(d)
    return out


def corpus_stats(dialogs: Sequence[Dialog]) -> Dict[str, float]:
    return {
        "dialogs": len(dialogs),
        "success_rate": float(np.mean([bool(d.success) for d in dialogs])) if dialogs else 0.0,
        "mean_turns": float(np.mean([len(d.turns) for d in dialogs])) if dialogs else 0.0,
    }


# ------------------------------------------------------------------ serialization

def _act_to_json(act: DialogAct) -> dict:
    return {"act": act.act, "slot_values": [list(p) for p in act.slot_values]}


def dialog_to_record(dialog: Dialog, inventory: ActionInventory) -> dict:
    turns = []
    for t in dialog.turns:
        rec = {
            "user": _act_to_json(t.user),
            "summary": {"count_bucket": COUNT_BUCKETS[t.summary.count_bucket],
                        "available": t.summary.available},
            "action": inventory[t.action].label,
        }
        if t.labels is not None:
            rec["labels"] = dict(t.labels)
        turns.append(rec)
    return {
        "version": FORMAT_VERSION,
        "dialog_id": dialog.dialog_id,
        "goal": {"constraints": dict(dialog.goal.constraints),
                 "requests": sorted(dialog.goal.requests)},
        "success": dialog.success,
        "final_beliefs": dict(dialog.final_beliefs),
        "answered": [[slot, dict(ent)] for slot, ent in dialog.answered],
        "turns": turns,
    }


def _require(cond: bool, message: str, kind: str = "schema", **where) -> None:
    if not cond:
        raise CorpusError(message, kind=kind, **where)


def record_to_dialog(rec: dict, ontology: Ontology, inventory: ActionInventory,
                     line: Optional[int] = None) -> Dialog:
    _require(isinstance(rec, dict), "record is not an object", line=line)
    _require("version" in rec, "missing version field", "version", line=line)
    _require(rec["version"] == FORMAT_VERSION,
             f"unsupported version {rec['version']!r} (expected {FORMAT_VERSION})", "version", line=line)
    did = rec.get("dialog_id")
    _require(isinstance(did, str) and did != "", "missing dialog_id", line=line)
    where = dict(line=line, dialog_id=did)
    for key in ("goal", "turns", "final_beliefs"):
        _require(key in rec, f"missing field {key!r}", **where)
    _require(isinstance(rec["turns"], list), "turns must be a list", **where)
    goal_doc = rec["goal"]
    _require(isinstance(goal_doc, dict) and isinstance(goal_doc.get("constraints"), dict)
             and isinstance(goal_doc.get("requests"), list), "malformed goal", **where)

    def check(slot, value, turn=None):
        try:
            ontology.check_slot_value(slot, value)
        except OntologyError as exc:
            raise CorpusError(str(exc), kind="symbol", turn=turn, **where) from None

    for s, v in goal_doc["constraints"].items():
        _require(s in ontology.informable_slots, f"goal constrains unknown slot {s!r}", "symbol", **where)
        check(s, v)
    for r in goal_doc["requests"]:
        _require(r in ontology.requestable_slots, f"goal requests unknown slot {r!r}", "symbol", **where)
    goal = UserGoal(tuple((s, v) for s, v in goal_doc["constraints"].items()),
                    frozenset(goal_doc["requests"]))

    turns: List[Turn] = []
    labeled = None
    prev = None
    for k, t in enumerate(rec["turns"]):
        tw = dict(turn=k, **where)
        _require(isinstance(t, dict) and {"user", "summary", "action"} <= set(t),
                 "turn needs user, summary and action", **tw)
        u = t["user"]
        _require(isinstance(u, dict) and isinstance(u.get("act"), str)
                 and isinstance(u.get("slot_values", []), list), "malformed user act", **tw)
        _require(u["act"] in ontology.user_acts, f"unknown user act {u['act']!r}", "symbol", **tw)
        pairs = []
        for pair in u.get("slot_values", []):
            _require(isinstance(pair, list) and len(pair) == 2, "slot_values entries must be pairs", **tw)
            check(pair[0], pair[1], k)
            pairs.append((pair[0], pair[1]))
        user = DialogAct(u["act"], tuple(pairs))
        sm = t["summary"]
        _require(isinstance(sm, dict) and sm.get("count_bucket") in COUNT_BUCKETS
                 and isinstance(sm.get("available"), bool), "malformed summary", **tw)
        summary = QuerySummary(COUNT_BUCKETS.index(sm["count_bucket"]), sm["available"])
        try:
            action = inventory.id(t["action"])
        except (OntologyError, TypeError):
            raise CorpusError(f"unknown system action {t['action']!r}", kind="symbol", **tw) from None
        has_labels = "labels" in t
        if labeled is None:
            labeled = has_labels
        _require(has_labels == labeled, "slot labels present on some turns but not others",
                 "alignment", **tw)
        labels = None
        if has_labels:
            lab = t["labels"]
            _require(isinstance(lab, dict) and set(lab) == set(ontology.slots),
                     f"labels must cover exactly the informable slots {list(ontology.slots)}",
                     "alignment", **tw)
            for s, v in lab.items():
                if v is not None:
                    check(s, v, k)
            labels = dict(lab)
        turns.append(Turn(user, summary, action, prev, None, labels))
        prev = action

    fb = rec["final_beliefs"]
    _require(isinstance(fb, dict), "final_beliefs must be an object", **where)
    for s, v in fb.items():
        _require(s in ontology.informable_slots, f"final belief for unknown slot {s!r}", "symbol", **where)
        if v is not None:
            check(s, v)
    answered = []
    for item in rec.get("answered", []):
        _require(isinstance(item, list) and len(item) == 2 and isinstance(item[1], dict),
                 "answered entries must be [slot, entity]", **where)
        answered.append((item[0], tuple((s, item[1][s]) for s in ontology.slots if s in item[1])))
    success = rec.get("success")
    _require(success is None or isinstance(success, bool), "success must be a boolean or null", **where)
    dialog = Dialog(turns, goal, dict(fb), answered, success, did)
    if success is not None and goal.constraints:
        _require(evaluate_success(dialog, goal) == success,
                 "success flag disagrees with the recorded beliefs and answers", "alignment", **where)
    return dialog


def save_corpus(path, dialogs: Iterable[Dialog], inventory: ActionInventory) -> None:
    with open(path, "w") as fh:
        for d in dialogs:
            fh.write(json.dumps(dialog_to_record(d, inventory), sort_keys=True) + "\n")


def load_corpus(path, ontology: Ontology, inventory: Optional[ActionInventory] = None) -> List[Dialog]:
    inventory = inventory or ActionInventory(ontology)
    text = Path(path).read_text()
    dialogs: List[Dialog] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON ({exc.msg})", kind="json", line=lineno) from None
        d = record_to_dialog(rec, ontology, inventory, line=lineno)
        _require(d.dialog_id not in seen, "duplicate dialog_id", line=lineno, dialog_id=d.dialog_id)
        seen.add(d.dialog_id)
        dialogs.append(d)
    if not dialogs:
        log.warning("corpus %s is empty", path)
    return dialogs
