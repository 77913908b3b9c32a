"""Monte Carlo tree search over target-pursuit sub-tasks.

Each decision picks which target to pursue next; pursuing a target means
intercepting its belief center and running a spiral coverage until detection
or cutoff.  The coverage estimator supplies the find probability and the
expected durations of both outcomes, which turns the mission into an MDP over
histories of (action, Find/Miss) pairs.  The search minimizes the expected
sum of log-det position covariances at budget depletion.

Conventions baked into the dynamics:
  - a missed target is dropped from the action list;
  - re-pursuing the target found last models following it until the budget
    depletes, with detection guaranteed and its covariance held at the
    tracked steady state;
  - sub-task durations are expected values, rounded up to the time grid and
    clipped to the remaining budget, never shorter than one step (so budgets
    decrease strictly and the tree depth stays finite).
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .beliefs import (
    MotionModel,
    ObservationModel,
    TargetBelief,
    logdet_xy_raw,
    propagate_raw,
    steady_state_tracked_cov,
    update_raw,
)
from .estimator import estimate_subtask_raw

DEFAULT_ITERATIONS = 20_000
DEFAULT_EXPLORATION = math.sqrt(2.0)


class Outcome(Enum):
    FIND = "find"
    MISS = "miss"


# Alternating pursued targets and their outcomes, oldest first.
History = tuple[tuple[int, Outcome], ...]

# Optional estimator override: (mean, cov, agent_pos, budget_s, model) ->
# (p_find, t_find, t_miss).  Used by tests to force deterministic outcomes.
EstimateFn = Callable[[np.ndarray, np.ndarray, np.ndarray, float, MotionModel], tuple]


@dataclass
class StateNode:
    history: History
    action_list: tuple[int, ...]
    remaining_budget: float
    agent_pos: np.ndarray
    beliefs_raw: tuple  # per-target (mean, cov) pairs, indexed by target id
    time: float
    visit_count: int = 0
    children: dict = field(default_factory=dict)  # target id -> ActionNode
    v_min: float = math.inf
    v_max: float = -math.inf
    # Replan roots pin their own selection to the pursued target without
    # narrowing the action lists of descendant states.
    forced_action: Optional[int] = None
    _u_cache: Optional[float] = None

    @property
    def beliefs(self) -> dict[int, TargetBelief]:
        """Belief snapshots as value objects (for inspection, not hot paths)."""
        return {
            tid: TargetBelief(mean, cov, self.time)
            for tid, (mean, cov) in enumerate(self.beliefs_raw)
        }


@dataclass
class ActionNode:
    target: int
    p_find: float
    t_find: float
    t_miss: float
    parent: StateNode
    follow: bool = False
    visit_count: int = 0
    value: float = 0.0
    children: dict = field(default_factory=dict)  # Outcome -> StateNode


@dataclass(frozen=True)
class ReplanDecision:
    """Conditional next target per coverage outcome; None when the branch
    gathered no statistics."""

    on_find: Optional[int]
    on_miss: Optional[int]


class MctsPlanner:
    """Owns the search configuration; one tree search runs at a time."""

    def __init__(
        self,
        models: Sequence[MotionModel],
        obs: ObservationModel,
        v_a: float,
        w: float,
        c: float = DEFAULT_EXPLORATION,
        estimate_fn: Optional[EstimateFn] = None,
    ):
        taus = {m.tau for m in models}
        if len(taus) != 1:
            raise ValueError("all targets must share the same time step")
        self.models = list(models)
        self.obs = obs
        self.v_a = float(v_a)
        self.w = float(w)
        self.c = float(c)
        self.tau = taus.pop()
        self.estimate_fn = estimate_fn

    # -- node construction -------------------------------------------------

    def make_root(
        self,
        beliefs: Sequence[TargetBelief],
        agent_pos: np.ndarray,
        remaining_budget: float,
        available: Sequence[int],
        history: History = (),
        forced_action: Optional[int] = None,
    ) -> StateNode:
        budget = round(remaining_budget / self.tau) * self.tau
        times = {b.time for b in beliefs}
        if len(times) != 1:
            raise ValueError("all beliefs must share the decision time")
        action_list = tuple(sorted(available))
        if forced_action is not None and forced_action not in action_list:
            raise ValueError(f"forced action {forced_action} not available")
        return StateNode(
            history=tuple(history),
            action_list=action_list,
            remaining_budget=budget,
            agent_pos=np.asarray(agent_pos, dtype=float).reshape(2),
            beliefs_raw=tuple((b.mean, b.cov) for b in beliefs),
            time=times.pop(),
            forced_action=forced_action,
        )

    def _grid_ceil(self, t: float) -> float:
        return math.ceil(t / self.tau - 1e-9) * self.tau

    def _subtask(self, node_beliefs, agent_pos, budget, last_event, target):
        """(p_find, t_find, t_miss, follow) for pursuing `target` now."""
        if last_event is not None and last_event == (target, Outcome.FIND):
            return 1.0, budget, budget, True
        mean, cov = node_beliefs[target]
        if self.estimate_fn is not None:
            p, t_find, t_miss = self.estimate_fn(mean, cov, agent_pos, budget, self.models[target])
        else:
            p, t_find, t_miss, _ = estimate_subtask_raw(
                mean, cov, agent_pos, self.v_a, self.w,
                self.models[target], int(round(budget / self.tau)),
            )
        t_find = min(budget, max(self.tau, self._grid_ceil(t_find)))
        t_miss = min(budget, max(self.tau, self._grid_ceil(t_miss)))
        return p, t_find, t_miss, False

    def expand_state(self, node: StateNode, action: int) -> ActionNode:
        """Attach the action node for pursuing `action` from `node`."""
        if action not in node.action_list:
            raise ValueError(f"target {action} not available in this state")
        last = node.history[-1] if node.history else None
        p, t_find, t_miss, follow = self._subtask(
            node.beliefs_raw, node.agent_pos, node.remaining_budget, last, action
        )
        anode = ActionNode(
            target=action, p_find=p, t_find=t_find, t_miss=t_miss,
            parent=node, follow=follow,
        )
        node.children[action] = anode
        return anode

    def _advance_beliefs(self, beliefs_raw, target, outcome, steps, follow):
        """Propagate all beliefs by `steps`; apply the pursued outcome."""
        out = []
        for tid, (mean, cov) in enumerate(beliefs_raw):
            model = self.models[tid]
            if steps > 0:
                mean, cov = propagate_raw(mean, cov, model, steps)
            if tid == target and outcome is Outcome.FIND:
                if follow:
                    cov = steady_state_tracked_cov(model, self.obs)
                else:
                    # Expected observation sits at the predicted position, so
                    # only the covariance contracts.
                    mean, cov = update_raw(mean, cov, mean[:2], self.obs)
            out.append((mean, cov))
        return tuple(out)

    def expand_action(self, anode: ActionNode, outcome: Outcome) -> StateNode:
        """Attach the state reached from `anode` under `outcome`."""
        if outcome in anode.children:
            raise RuntimeError(f"outcome {outcome} already expanded")
        parent = anode.parent
        elapsed = anode.t_find if outcome is Outcome.FIND else anode.t_miss
        steps = int(round(elapsed / self.tau))
        beliefs = self._advance_beliefs(
            parent.beliefs_raw, anode.target, outcome, steps, anode.follow
        )
        if outcome is Outcome.MISS:
            action_list = tuple(a for a in parent.action_list if a != anode.target)
        else:
            action_list = parent.action_list
        budget = max(0.0, round((parent.remaining_budget - elapsed) / self.tau) * self.tau)
        child = StateNode(
            history=parent.history + ((anode.target, outcome),),
            action_list=action_list,
            remaining_budget=budget,
            agent_pos=beliefs[anode.target][0][:2].copy(),
            beliefs_raw=beliefs,
            time=parent.time + steps * self.tau,
        )
        anode.children[outcome] = child
        return child

    # -- value evaluation --------------------------------------------------

    def _u_at_depletion(self, node: StateNode) -> float:
        """U with the node's beliefs propagated to budget depletion."""
        if node._u_cache is None:
            steps = int(round(node.remaining_budget / self.tau))
            total = 0.0
            for tid, (mean, cov) in enumerate(node.beliefs_raw):
                if steps > 0:
                    _, cov = propagate_raw(mean, cov, self.models[tid], steps)
                total += logdet_xy_raw(cov)
            node._u_cache = total
        return node._u_cache

    # -- search ------------------------------------------------------------

    def _select_ucb(self, node: StateNode) -> int:
        if node.forced_action is not None:
            return node.forced_action
        log_n = math.log(node.visit_count) if node.visit_count > 0 else 0.0
        span = node.v_max - node.v_min
        best, best_score = -1, -math.inf
        for a in node.action_list:
            anode = node.children[a]
            if anode.visit_count == 0:
                return a
            v = (anode.value - node.v_min) / span if span > 0.0 else 0.5
            score = v + self.c * math.sqrt(log_n / anode.visit_count)
            if score > best_score:
                best, best_score = a, score
        return best

    def simulate(self, node: StateNode, rng: np.random.Generator) -> float:
        """One tree walk: select by UCB1, sample outcomes, expand at the
        frontier, roll out, and back up the negated uncertainty."""
        path: list[tuple[StateNode, ActionNode]] = []
        current = node
        while True:
            if current.remaining_budget <= 1e-9 or not current.action_list:
                u = self._u_at_depletion(current)
                break
            if not current.children:
                if current.forced_action is not None:
                    self.expand_state(current, current.forced_action)
                else:
                    for a in current.action_list:
                        self.expand_state(current, a)
                u = self.rollout(current, rng)
                break
            a = self._select_ucb(current)
            anode = current.children[a]
            outcome = Outcome.FIND if rng.random() < anode.p_find else Outcome.MISS
            child = anode.children.get(outcome)
            if child is None:
                child = self.expand_action(anode, outcome)
            path.append((current, anode))
            current = child
        value = -u
        for snode, anode in reversed(path):
            snode.visit_count += 1
            anode.visit_count += 1
            anode.value += (value - anode.value) / anode.visit_count
            if value < snode.v_min:
                snode.v_min = value
            if value > snode.v_max:
                snode.v_max = value
        return u

    def rollout(self, node: StateNode, rng: np.random.Generator) -> float:
        """Random-policy playout to budget depletion, without storing nodes."""
        beliefs = node.beliefs_raw
        agent_pos = node.agent_pos
        budget = node.remaining_budget
        actions = list(node.action_list)
        last = node.history[-1] if node.history else None
        first = True
        while budget > 1e-9 and actions:
            if first and node.forced_action is not None:
                target = node.forced_action
            else:
                target = actions[int(rng.integers(len(actions)))]
            if first and target in node.children:
                anode = node.children[target]
                p, t_find, t_miss, follow = anode.p_find, anode.t_find, anode.t_miss, anode.follow
            else:
                p, t_find, t_miss, follow = self._subtask(beliefs, agent_pos, budget, last, target)
            first = False
            outcome = Outcome.FIND if rng.random() < p else Outcome.MISS
            elapsed = t_find if outcome is Outcome.FIND else t_miss
            steps = int(round(elapsed / self.tau))
            beliefs = self._advance_beliefs(beliefs, target, outcome, steps, follow)
            agent_pos = beliefs[target][0][:2]
            budget = max(0.0, round((budget - elapsed) / self.tau) * self.tau)
            if outcome is Outcome.MISS:
                actions.remove(target)
            last = (target, outcome)
        steps = int(round(budget / self.tau))
        total = 0.0
        for tid, (mean, cov) in enumerate(beliefs):
            if steps > 0:
                _, cov = propagate_raw(mean, cov, self.models[tid], steps)
            total += logdet_xy_raw(cov)
        return total

    def _best_action(self, node: StateNode) -> Optional[int]:
        best, best_value = None, -math.inf
        for a in node.action_list:
            anode = node.children.get(a)
            if anode is None:
                continue
            if anode.value > best_value:
                best, best_value = a, anode.value
        return best

    def tree_search(
        self,
        start: StateNode,
        is_replan: bool,
        iterations: int = DEFAULT_ITERATIONS,
        rng: Optional[np.random.Generator] = None,
        wall_clock_s: Optional[float] = None,
    ):
        """Run simulations from `start` and read off the decision.

        Plain search returns the root action with the best value.  A replan
        search expects the root's action list pinned to the pursued target
        and returns the best follow-up action for each coverage outcome.
        """
        if iterations < 1:
            raise ValueError("tree search needs at least one iteration")
        if rng is None:
            rng = np.random.default_rng()
        deadline = None if wall_clock_s is None else _time.perf_counter() + wall_clock_s
        for _ in range(iterations):
            self.simulate(start, rng)
            if deadline is not None and _time.perf_counter() >= deadline:
                break
        if not is_replan:
            return self._best_action(start)
        if start.forced_action is None:
            raise ValueError("replan root must have its action pinned to the pursued target")
        anode = start.children.get(start.forced_action)
        on_find = on_miss = None
        if anode is not None:
            find_child = anode.children.get(Outcome.FIND)
            if find_child is not None:
                on_find = self._best_action(find_child)
            miss_child = anode.children.get(Outcome.MISS)
            if miss_child is not None:
                on_miss = self._best_action(miss_child)
        return ReplanDecision(on_find=on_find, on_miss=on_miss)


class MctsChooser:
    """Episode-facing adapter: fresh search per decision, shared rng stream."""

    def __init__(
        self,
        models: Sequence[MotionModel],
        obs: ObservationModel,
        v_a: float,
        w: float,
        iterations: int,
        c: float,
        rng: np.random.Generator,
        wall_clock_s: Optional[float] = None,
    ):
        self.planner = MctsPlanner(models, obs, v_a, w, c=c)
        self.iterations = iterations
        self.rng = rng
        self.wall_clock_s = wall_clock_s

    def first_target(self, snapshot) -> Optional[int]:
        if not snapshot.available:
            return None
        root = self.planner.make_root(
            snapshot.beliefs, snapshot.agent_pos, snapshot.remaining_budget,
            snapshot.available, history=snapshot.history,
        )
        return self.planner.tree_search(
            root, is_replan=False, iterations=self.iterations,
            rng=self.rng, wall_clock_s=self.wall_clock_s,
        )

    def conditional(self, snapshot, pursued: int) -> ReplanDecision:
        root = self.planner.make_root(
            snapshot.beliefs, snapshot.agent_pos, snapshot.remaining_budget,
            [pursued], history=snapshot.history,
        )
        return self.planner.tree_search(
            root, is_replan=True, iterations=self.iterations,
            rng=self.rng, wall_clock_s=self.wall_clock_s,
        )
