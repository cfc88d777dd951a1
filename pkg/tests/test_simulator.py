import numpy as np
import pytest

from advdialog.corpus import ScriptedExpert, expert_dialog
from advdialog.domain import Dialog, DialogAct, UserGoal, query_kb
from advdialog.simulator import SimulatorConfig, SystemTurn, UserSimulator, feedback, sample_goal


def sys_turn(inventory, label, value=None, entity=None):
    return SystemTurn(inventory.by_label(label), value, entity)


def satisfiable_goal(kb, requests=("phone",)):
    ent = kb.entities[0]
    return UserGoal(tuple((s, ent[s]) for s in kb.ontology.slots), frozenset(requests))


class TestGoals:
    def test_reproducible(self, ontology, kb):
        a = sample_goal(ontology, kb, np.random.default_rng(7))
        b = sample_goal(ontology, kb, np.random.default_rng(7))
        assert a == b

    @pytest.mark.parametrize("frac,expect_match", [(0.0, True), (1.0, False)])
    def test_unsatisfiable_fraction(self, ontology, kb, frac, expect_match):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            g = sample_goal(ontology, kb, rng, unsatisfiable_fraction=frac)
            assert bool(query_kb(kb, g.constraint_map)) == expect_match
            assert 1 <= len(g.requests) <= 3
            assert [s for s, _ in g.constraints] == list(ontology.slots)


class TestUserTurn:
    def quiet(self, ontology, kb):
        return UserSimulator(ontology, kb, SimulatorConfig(epsilon=0.0))

    def test_confirm_correct_value_affirms(self, ontology, kb, inventory):
        sim = self.quiet(ontology, kb)
        goal = satisfiable_goal(kb)
        st = sim.new_state(goal)
        sim.user_turn(st, None, np.random.default_rng(0))
        act, _, done = sim.user_turn(st, sys_turn(inventory, "confirm_food", goal.constraint_map["food"]),
                                     np.random.default_rng(0))
        assert act == DialogAct("affirm") and not done

    def test_confirm_wrong_value_negates_with_correction(self, ontology, kb, inventory):
        sim = self.quiet(ontology, kb)
        goal = satisfiable_goal(kb)
        st = sim.new_state(goal)
        wrong = next(v for v in ontology.values("food") if v != goal.constraint_map["food"])
        act, _, _ = sim.user_turn(st, sys_turn(inventory, "confirm_food", wrong), np.random.default_rng(0))
        assert act == DialogAct("negate", (("food", goal.constraint_map["food"]),))

    def test_offer_after_requests_satisfied_ends(self, ontology, kb, inventory):
        sim = self.quiet(ontology, kb)
        goal = satisfiable_goal(kb)
        st = sim.new_state(goal)
        rng = np.random.default_rng(0)
        sim.user_turn(st, None, rng)
        act, _, _ = sim.user_turn(st, sys_turn(inventory, "inform_phone", entity=0), rng)
        assert act.act == "bye"
        act, _, done = sim.user_turn(st, sys_turn(inventory, "offer", entity=0), rng)
        assert act == DialogAct("bye") and done

    def test_wrong_offer_reinforms_mismatch(self, ontology, kb, inventory):
        sim = self.quiet(ontology, kb)
        goal = satisfiable_goal(kb)
        other = next(i for i, e in enumerate(kb.entities) if e["area"] != goal.constraint_map["area"])
        act, _, _ = sim.user_turn(sim.new_state(goal), sys_turn(inventory, "offer", entity=other),
                                  np.random.default_rng(0))
        assert act.act == "inform" and ("area", goal.constraint_map["area"]) in act.slot_values

    def test_patience_forces_bye(self, ontology, kb, inventory):
        sim = UserSimulator(ontology, kb, SimulatorConfig(epsilon=0.5, patience=4))
        rng = np.random.default_rng(1)
        st = sim.new_state(satisfiable_goal(kb))
        acts = []
        turn = None
        for _ in range(4):
            act, st, done = sim.user_turn(st, turn, rng)
            acts.append(act)
            turn = sys_turn(inventory, "reqmore")
            if done:
                break
        assert done and acts[-1].act == "bye" and len(acts) <= 4

    def test_exhausted_patience_rejected(self, ontology, kb):
        sim = UserSimulator(ontology, kb, SimulatorConfig(patience=1))
        st = sim.new_state(satisfiable_goal(kb))
        act, st, done = sim.user_turn(st, None, np.random.default_rng(0))
        assert done and act.act == "bye"
        with pytest.raises(ValueError):
            sim.user_turn(st, None, np.random.default_rng(0))

    def test_acts_stay_in_ontology(self, ontology, kb, inventory):
        sim = UserSimulator(ontology, kb, SimulatorConfig(epsilon=0.5))
        rng = np.random.default_rng(3)
        labels = inventory.labels
        for _ in range(200):
            st = sim.new_state(sim.sample_goal(rng))
            turn = None
            while True:
                act, st, done = sim.user_turn(st, turn, rng)
                act.validate(ontology)
                if done:
                    break
                a = inventory.by_label(labels[int(rng.integers(len(labels)))])
                turn = SystemTurn(a, ontology.values("food")[0], int(rng.integers(len(kb))))
            assert st.patience >= 0


class TestExpertCompleteness:
    def test_noise_free_satisfiable_all_succeed(self, ontology, kb, inventory, quiet_simulator):
        expert = ScriptedExpert(ontology, inventory)
        rng = np.random.default_rng(0)
        for _ in range(300):
            goal = quiet_simulator.sample_goal(rng)
            d = expert_dialog(expert, quiet_simulator, goal, rng)
            assert d.success, d

    def test_transcript_reproducible(self, ontology, kb, inventory, simulator):
        expert = ScriptedExpert(ontology, inventory)

        def run():
            rng = np.random.default_rng(42)
            goal = simulator.sample_goal(rng)
            d = expert_dialog(expert, simulator, goal, rng)
            return [(t.user, t.action) for t in d.turns]
        assert run() == run()


class TestFeedback:
    def success_dialog(self, kb):
        goal = UserGoal(satisfiable_goal(kb).constraints)
        return Dialog([], goal, dict(goal.constraints)), goal

    def test_rate_zero(self, kb):
        d, g = self.success_dialog(kb)
        rng = np.random.default_rng(0)
        assert all(feedback(d, g, 0.0, rng) is None for _ in range(100))

    def test_rate_one(self, kb):
        d, g = self.success_dialog(kb)
        assert feedback(d, g, 1.0, np.random.default_rng(0)) is True

    def test_failed_dialog_never(self, kb):
        d, g = self.success_dialog(kb)
        d.final_beliefs["area"] = None
        assert feedback(d, g, 1.0, np.random.default_rng(0)) is None

    def test_binomial_count(self, kb):
        d, g = self.success_dialog(kb)
        rng = np.random.default_rng(0)
        n = sum(feedback(d, g, 0.1, rng) is True for _ in range(10 ** 4))
        assert 850 <= n <= 1150

    def test_bad_rate(self, kb):
        d, g = self.success_dialog(kb)
        with pytest.raises(ValueError):
            feedback(d, g, 1.5, np.random.default_rng(0))
