"""Case base: store finished (situation -> Q-row) experiences and reuse them.

A case pairs a problem description (the situation key's four feature
dimensions) with the Q-row that worked there and some outcome statistics.
Retrieval is an argmax over a weighted per-dimension similarity; reuse
writes a similarity-scaled copy of the stored row into the live Q-table,
but only for rows that have never been visited, so learned values are
never clobbered by old cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .context import ContextModel, SituationKey
from .qlearn import ActionId, QTable
from .serde import fmt_float

DEFAULT_WEIGHTS = (0.25, 0.25, 0.25, 0.25)  # time, place, group, cognitive
DEFAULT_THRESHOLD = 0.8
DEFAULT_MAX_SIZE = 1000
DEFAULT_RETAIN_MIN_VISITS = 5


@dataclass
class Case:
    problem: SituationKey
    solution: dict[ActionId, float]
    visits: int
    mean_reward: float
    user_id: str
    step: int
    order: int = 0  # insertion counter, used as age for eviction ties

    def __post_init__(self):
        if self.visits < 1:
            raise ValueError("a case needs at least one visit")
        if not 0.0 <= self.mean_reward <= 1.0:
            raise ValueError("mean_reward must be in [0, 1]")
        for value in self.solution.values():
            if not math.isfinite(value):
                raise ValueError("case solution contains a non-finite value")


@dataclass(frozen=True)
class RetrievalResult:
    case: Case
    similarity: float
    cost: float


def compute_cost(similarity: float) -> float:
    """Adaptation distance: 1 - similarity."""
    if not 0.0 <= similarity <= 1.0:
        raise ValueError("similarity must be in [0, 1]")
    return 1.0 - similarity


def _chain_match(chain_a: Sequence, chain_b: Sequence, levels: int) -> float:
    """Fraction of generalization levels at which two chains coincide."""
    hits = 0
    for level in range(levels):
        a = chain_a[min(level, len(chain_a) - 1)]
        b = chain_b[min(level, len(chain_b) - 1)]
        if a == b:
            hits += 1
    return hits / levels


def _time_chain(key: SituationKey) -> tuple:
    t = key.time
    # generalize away the most volatile component first
    return ((t.part_of_day, t.day_class, t.calendar_state),
            (t.part_of_day, t.day_class),
            (t.part_of_day,))


def case_similarity(problem_a: SituationKey, problem_b: SituationKey,
                    weights: Sequence[float], context: ContextModel) -> float:
    """Weighted per-dimension match in [0, 1].

    Time and place score the fraction of their generalization chains on
    which the two problems coincide; social group and cognitive class are
    exact-match 0/1.
    """
    if len(weights) != 4:
        raise ValueError("expected one weight per feature dimension (4)")
    time_match = _chain_match(_time_chain(problem_a), _time_chain(problem_b), 3)
    place_match = _chain_match(context.place_chain(problem_a.place),
                               context.place_chain(problem_b.place),
                               context.depth + 1)
    group_match = 1.0 if problem_a.social_group == problem_b.social_group else 0.0
    cognitive_match = 1.0 if problem_a.cognitive == problem_b.cognitive else 0.0
    w_time, w_place, w_group, w_cog = weights
    return (w_time * time_match + w_place * place_match
            + w_group * group_match + w_cog * cognitive_match)


class CaseBase:
    """Fixed-capacity case store with replace-on-duplicate retention."""

    def __init__(self, context: ContextModel,
                 feature_weights: Sequence[float] = DEFAULT_WEIGHTS,
                 retrieval_threshold: float = DEFAULT_THRESHOLD,
                 max_size: int = DEFAULT_MAX_SIZE):
        weights = tuple(float(w) for w in feature_weights)
        if len(weights) != 4 or any(w < 0 for w in weights):
            raise ValueError("feature_weights must be 4 non-negative values")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("feature_weights must sum to 1")
        if not 0.0 <= retrieval_threshold <= 1.0:
            raise ValueError("retrieval_threshold must be in [0, 1]")
        self.context = context
        self.feature_weights = weights
        self.retrieval_threshold = retrieval_threshold
        self.max_size = max_size
        self.cases: list[Case] = []
        self._next_order = 0

    def __len__(self) -> int:
        return len(self.cases)

    def similarity(self, a: SituationKey, b: SituationKey) -> float:
        return case_similarity(a, b, self.feature_weights, self.context)

    def retrieve(self, problem: SituationKey) -> Optional[RetrievalResult]:
        """Most similar case at or above the threshold, or None.

        Ties: higher visit count, then earlier provenance step, then
        insertion order.
        """
        best: Optional[Case] = None
        best_sim = -1.0
        for case in self.cases:
            sim = self.similarity(problem, case.problem)
            if best is None or (sim, case.visits, -case.step) > (best_sim, best.visits, -best.step):
                best, best_sim = case, sim
        if best is None or best_sim < self.retrieval_threshold:
            return None
        return RetrievalResult(best, best_sim, compute_cost(best_sim))

    def retain(self, problem: SituationKey, q_row: dict[ActionId, float],
               visits: int, mean_reward: float, user_id: str, step: int) -> Case:
        """Insert a finished experience; revise an identical problem in place.

        Over capacity, the lowest-mean-reward case is evicted, oldest first
        on ties.
        """
        case = Case(problem, dict(q_row), visits, mean_reward, user_id, step,
                    order=self._next_order)
        self._next_order += 1
        for i, existing in enumerate(self.cases):
            if self.similarity(problem, existing.problem) == 1.0:
                self.cases[i] = case
                return case
        self.cases.append(case)
        if len(self.cases) > self.max_size:
            victim = min(self.cases, key=lambda c: (c.mean_reward, c.order))
            self.cases.remove(victim)
        return case


def adapt(result: RetrievalResult, target_s: SituationKey, table: QTable) -> bool:
    """Bootstrap an unvisited row with the similarity-scaled case solution.

    Returns False (and leaves the table untouched) when the target row has
    already been visited; callers count those skips.
    """
    if table.row_visits(target_s) > 0:
        return False
    for action, value in result.case.solution.items():
        table.set_value(target_s, action, result.similarity * value)
    table.bootstrapped.add(target_s)
    return True


# ---------------------------------------------------------------------------
# Case-base file: problem<TAB>solution_pairs<TAB>visits<TAB>mean_reward<TAB>user<TAB>step
# ---------------------------------------------------------------------------

def save_casebase(base: CaseBase, path: str | Path) -> None:
    lines = []
    for case in base.cases:
        pairs = ",".join(f"{a}={fmt_float(v)}" for a, v in sorted(case.solution.items()))
        lines.append("\t".join((case.problem.canonical(), pairs, str(case.visits),
                                fmt_float(case.mean_reward), case.user_id,
                                str(case.step))))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def load_casebase(path: str | Path, context: ContextModel,
                  feature_weights: Sequence[float] = DEFAULT_WEIGHTS,
                  retrieval_threshold: float = DEFAULT_THRESHOLD,
                  max_size: int = DEFAULT_MAX_SIZE) -> CaseBase:
    base = CaseBase(context, feature_weights, retrieval_threshold, max_size)
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 tab-separated fields")
        problem = SituationKey.from_canonical(parts[0])
        solution: dict[ActionId, float] = {}
        if parts[1]:
            for pair in parts[1].split(","):
                action, value = pair.split("=", 1)
                solution[action] = float(value)
        base.retain(problem, solution, int(parts[2]), float(parts[3]),
                    parts[4], int(parts[5]))
    return base
