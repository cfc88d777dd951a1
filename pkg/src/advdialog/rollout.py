"""Agent/user interaction: per-dialog agent bookkeeping and batched rollouts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import nn
from .agent import Generator, select_action
from .domain import (
    SUMMARY_WIDTH,
    ActionInventory,
    Dialog,
    DialogAct,
    KnowledgeBase,
    QuerySummary,
    Turn,
    UserGoal,
    evaluate_success,
    query_kb,
    summarize,
)
from .simulator import SimulatorState, SystemTurn, UserSimulator


class KBCache:
    """Memoized query_kb keyed on the (slot, value-or-None) tuple."""

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self._cache: Dict[tuple, List[int]] = {}

    def query(self, constraints: Dict[str, Optional[str]]) -> List[int]:
        key = tuple(constraints.items())
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = query_kb(self.kb, constraints)
        return hit


@dataclass
class AgentContext:
    """What the agent side of one dialog remembers outside its network."""
    kb: KBCache
    offered: Optional[int] = None
    user_requested: Set[str] = field(default_factory=set)
    answered: List[Tuple[str, Tuple[Tuple[str, str], ...]]] = field(default_factory=list)
    constraints: Dict[str, Optional[str]] = field(default_factory=dict)
    results: List[int] = field(default_factory=list)

    def observe(self, user: DialogAct, beliefs: Dict[str, Optional[str]]) -> QuerySummary:
        if user.act == "request":
            for slot, _ in user.slot_values:
                self.user_requested.add(slot)
        self.constraints = beliefs
        self.results = self.kb.query(beliefs)
        return summarize(self.results, self.available)

    @property
    def available(self) -> bool:
        """An entity has been offered and still agrees with the current beliefs."""
        if self.offered is None:
            return False
        ent = self.kb.kb.entities[self.offered]
        return all(v is None or ent[s] == v for s, v in self.constraints.items())

    def apply(self, action_id: int, inventory: ActionInventory) -> SystemTurn:
        action = inventory[action_id]
        if action.act == "confirm":
            return SystemTurn(action, value=self.constraints.get(action.slot))
        if action.act == "offer":
            self.offered = self.results[0] if self.results else None
            return SystemTurn(action, entity=self.offered)
        if action.act == "inform":
            entity = self.offered if self.available else (self.results[0] if self.results else None)
            if entity is not None:
                self.offered = entity
                if action.slot in self.user_requested:
                    ent = self.kb.kb.entities[entity]
                    informables = tuple((s, ent[s]) for s in self.kb.kb.ontology.slots)
                    self.answered.append((action.slot, informables))
            return SystemTurn(action, entity=entity)
        return SystemTurn(action)


class AgentSession:
    """Greedy single-dialog driver for interactive use and replay."""

    def __init__(self, generator: Generator, kb: KnowledgeBase):
        self.generator = generator
        self.context = AgentContext(KBCache(kb))
        self.state = generator.initial_state()
        self.prev: Optional[int] = None
        self.turns: List[Turn] = []
        self.beliefs: Dict[str, Optional[str]] = {}

    def respond(self, user: DialogAct) -> SystemTurn:
        g = self.generator
        self.state = g.step(self.state, g.encode_turn_input(user, self.prev))
        self.beliefs = g.belief_argmax(self.state.beliefs)
        summary = self.context.observe(user, self.beliefs)
        probs = g.policy(self.state.recurrent.hidden, self.state.beliefs, summary)
        action = select_action(probs, "greedy")
        self.turns.append(Turn(user, summary, action, self.prev, float(np.log(probs[action]))))
        self.prev = action
        return self.context.apply(action, g.inventory)

    def dialog(self, goal: Optional[UserGoal] = None) -> Dialog:
        goal = goal or UserGoal(())
        return Dialog(list(self.turns), goal, dict(self.beliefs), list(self.context.answered))


def rollout_batch(generator: Generator, simulator: UserSimulator, goals: Sequence[UserGoal],
                  sim_rngs: Sequence[np.random.Generator], max_turns: int = 20,
                  mode: str = "sample", rng: Optional[np.random.Generator] = None) -> List[Dialog]:
    """Run len(goals) dialogs in lockstep with a shared batched forward pass.

    Each simulator owns its RNG; ``rng`` drives action sampling only.
    """
    B = len(goals)
    g = generator
    inventory = g.inventory
    kbc = KBCache(simulator.kb)
    slots = g.ontology.slots
    params = g.params
    H = g.config.hidden
    e = g.config.embed_dim
    hidden = np.zeros((B, H))
    cell = np.zeros((B, H))
    contexts = [AgentContext(kbc) for _ in range(B)]
    sim_states: List[SimulatorState] = []
    user_acts: List[DialogAct] = []
    user_done = np.zeros(B, dtype=bool)
    for i in range(B):
        st = simulator.new_state(goals[i])
        act, st, done = simulator.user_turn(st, None, sim_rngs[i])
        sim_states.append(st)
        user_acts.append(act)
        user_done[i] = done
    prev = [None] * B
    turns: List[List[Turn]] = [[] for _ in range(B)]
    final_beliefs: List[Dict[str, Optional[str]]] = [{} for _ in range(B)]
    active = np.arange(B)
    E_act, E_pair, E_sys = params["emb.user_act"], params["emb.pair"], params["emb.sys"]
    vocab = g.vocab
    for _ in range(max_turns):
        if active.size == 0:
            break
        n = active.size
        x = np.zeros((n, 3 * e))
        for j, i in enumerate(active):
            u = user_acts[i]
            x[j, :e] = E_act[vocab.act_id(u)]
            pids = vocab.pair_ids(u)
            if pids:
                x[j, e:2 * e] = E_pair[pids].sum(axis=0)
            x[j, 2 * e:] = E_sys[vocab.prev_id(prev[i])]
        rec = nn.lstm_step(params, "lstm", nn.RecurrentState(hidden[active], cell[active]), x)
        hidden[active] = rec.hidden
        cell[active] = rec.cell
        beliefs = g.belief_track(rec.hidden)
        arg = [np.argmax(b, axis=-1) for b in beliefs]
        summaries = np.zeros((n, SUMMARY_WIDTH))
        summary_objs = []
        for j, i in enumerate(active):
            bel = {slot: vocab.label_value(slot, int(arg[m][j])) for m, slot in enumerate(slots)}
            final_beliefs[i] = bel
            s = contexts[i].observe(user_acts[i], bel)
            summary_objs.append(s)
            summaries[j] = s.vector()
        probs = g.policy(rec.hidden, beliefs, summaries)
        actions = select_action(probs, mode, rng)
        still = []
        for j, i in enumerate(active):
            a = int(actions[j])
            turns[i].append(Turn(user_acts[i], summary_objs[j], a, prev[i],
                                 float(np.log(probs[j, a]))))
            sys_turn = contexts[i].apply(a, inventory)
            prev[i] = a
            if inventory[a].act == "bye" or user_done[i]:
                continue
            act, _, done = simulator.user_turn(sim_states[i], sys_turn, sim_rngs[i])
            user_acts[i] = act
            user_done[i] = done
            still.append(i)
        active = np.array(still, dtype=np.int64)
    dialogs = []
    for i in range(B):
        d = Dialog(turns[i], goals[i], final_beliefs[i], list(contexts[i].answered))
        d.success = evaluate_success(d, goals[i])
        dialogs.append(d)
    return dialogs


def spawn_rngs(rng: np.random.Generator, n: int) -> List[np.random.Generator]:
    seeds = rng.integers(0, 2 ** 63 - 1, size=n)
    return [np.random.default_rng(int(s)) for s in seeds]


def simulate(generator: Generator, simulator: UserSimulator, n: int, rng: np.random.Generator,
             max_turns: int = 20, mode: str = "sample", chunk: int = 250) -> List[Dialog]:
    """Sample ``n`` goals and roll out ``n`` dialogs."""
    out: List[Dialog] = []
    while len(out) < n:
        m = min(chunk, n - len(out))
        sim_rngs = spawn_rngs(rng, m)
        goals = [simulator.sample_goal(r) for r in sim_rngs]
        out += rollout_batch(generator, simulator, goals, sim_rngs, max_turns, mode, rng)
    return out


def rollout(generator: Generator, simulator: UserSimulator, max_turns: int,
            rng: np.random.Generator, mode: str = "sample",
            goal: Optional[UserGoal] = None) -> Dialog:
    sim_rng = spawn_rngs(rng, 1)[0]
    goal = goal or simulator.sample_goal(sim_rng)
    return rollout_batch(generator, simulator, [goal], [sim_rng], max_turns, mode, rng)[0]


def evaluate_success_rate(generator: Generator, simulator: UserSimulator, n: int = 1000,
                          seed: int = 0, max_turns: int = 20, chunk: int = 500) -> float:
    """Fraction of successful greedy dialogs over ``n`` rollouts.

    Dialog i always uses the RNG stream (seed, i), so repeated evaluations see
    the same goals and user noise draws.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    wins = 0
    for start in range(0, n, chunk):
        rngs = [np.random.default_rng(s) for s in children[start:start + chunk]]
        goals = [simulator.sample_goal(r) for r in rngs]
        dialogs = rollout_batch(generator, simulator, goals, rngs, max_turns, "greedy")
        wins += sum(d.success for d in dialogs)
    return wins / n
