"""Menu-driven act-level chat with a trained agent. The human plays the user."""
from __future__ import annotations

import difflib
from typing import Callable, List, Optional, Sequence

from .domain import REQUEST_WILDCARD, Dialog, DialogAct, KnowledgeBase
from .rollout import AgentSession
from .simulator import SystemTurn

InputFn = Callable[[str], str]
OutputFn = Callable[[str], None]


def describe_system_turn(turn: SystemTurn, kb: KnowledgeBase) -> str:
    a = turn.action
    if a.act == "confirm":
        return f"{a.label} ({a.slot}={turn.value})"
    if a.act in ("offer", "inform"):
        if turn.entity is None:
            return f"{a.label} (no matching entity)"
        ent = kb.entities[turn.entity]
        shown = ", ".join(f"{s}={ent[s]}" for s in kb.ontology.slots)
        if a.act == "inform":
            shown += f", {a.slot}={ent[a.slot]}"
        return f"{a.label} ({shown})"
    return a.label


class EndOfSession(Exception):
    pass


class _Prompter:
    def __init__(self, input_fn: InputFn, output_fn: OutputFn, max_retries: int):
        self.input_fn = input_fn
        self.out = output_fn
        self.max_retries = max_retries

    def read(self, prompt: str) -> str:
        try:
            return self.input_fn(prompt).strip()
        except EOFError:
            raise EndOfSession from None

    def choose(self, title: str, options: Sequence[str]) -> str:
        """Pick by number or by name; unknown names get close-match suggestions."""
        self.out(title + ": " + "  ".join(f"[{i + 1}] {o}" for i, o in enumerate(options)))
        for _ in range(self.max_retries):
            raw = self.read("> ")
            if raw.isdigit() and 1 <= int(raw) <= len(options):
                return options[int(raw) - 1]
            if raw in options:
                return raw
            hint = difflib.get_close_matches(raw, options, n=3, cutoff=0.5)
            msg = f"{raw!r} is not one of the options"
            self.out(msg + (f"; did you mean {', '.join(hint)}?" if hint else "; enter a number or a name"))
        raise EndOfSession


def read_user_act(prompter: _Prompter, ontology) -> DialogAct:
    act = prompter.choose("act", list(ontology.user_acts))
    if act == "inform":
        slot = prompter.choose("slot", list(ontology.slots))
        value = prompter.choose(f"{slot} value", list(ontology.values(slot)))
        return DialogAct("inform", ((slot, value),))
    if act == "request":
        slot = prompter.choose("ask for", list(ontology.requestable_slots) + list(ontology.slots))
        return DialogAct("request", ((slot, REQUEST_WILDCARD),))
    return DialogAct(act)


def chat(generator, kb: KnowledgeBase, input_fn: InputFn = input, output_fn: OutputFn = print,
         max_turns: int = 50, max_retries: int = 5, dialog_id: str = "chat-00000") -> Dialog:
    """Run one session; returns it as a dialog with unknown success.

    The session ends on a user or system bye, end of input, ``max_turns`` user
    turns, or ``max_retries`` consecutive bad entries at one prompt.
    """
    prompter = _Prompter(input_fn, output_fn, max_retries)
    session = AgentSession(generator, kb)
    transcript: List[str] = []
    output_fn("Play the user: choose an act, then its slot and value. 'bye' or end of input ends the chat.")
    try:
        for _ in range(max_turns):
            user = read_user_act(prompter, generator.ontology)
            transcript.append(f"user:   {user}")
            sys_turn = session.respond(user)
            line = describe_system_turn(sys_turn, kb)
            transcript.append(f"system: {line}")
            output_fn(f"system: {line}")
            if user.act == "bye" or sys_turn.action.act == "bye":
                break
    except EndOfSession:
        output_fn("(session ended)")
    output_fn("--- transcript ---")
    for line in transcript:
        output_fn(line)
    output_fn("final beliefs: " + ", ".join(f"{s}={v}" for s, v in session.beliefs.items()))
    dialog = session.dialog()
    dialog.dialog_id = dialog_id
    dialog.success = None
    return dialog


def replay(generator, kb: KnowledgeBase, user_acts: Sequence[DialogAct]) -> List[int]:
    """Feed recorded user acts to a fresh greedy session and return its actions."""
    session = AgentSession(generator, kb)
    return [session.respond(u).action.id for u in user_acts]
