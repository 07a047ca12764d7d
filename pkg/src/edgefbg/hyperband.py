"""Hyperband tuning over discrete search spaces.

Brackets follow the published Hyperband schedule: s_max = floor(log_eta R),
and bracket s starts n = ceil((s_max+1) * eta^s / (s+1)) configurations at
r = R * eta^(-s) epochs, halving survivors by eta each round while epochs
grow by eta. The objective is a validation score where lower is better
(here: shape RMSE in mm, which keeps rankings comparable across losses).

Trial runners are resumable: the tuner asks for additional epochs on top
of an opaque per-trial state, so later rounds never retrain from scratch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

import numpy as np

from .errors import ConfigError

Runner = Callable[[dict, int, int, Any], tuple[float, Any]]


@dataclass(frozen=True)
class Dimension:
    """One named hyperparameter with an explicit discrete choice list."""

    name: str
    choices: tuple

    def __post_init__(self):
        if not self.name:
            raise ConfigError("dimension needs a name")
        if len(self.choices) == 0:
            raise ConfigError(f"dimension {self.name!r} has no choices")

    @classmethod
    def stepped(cls, name: str, lo: float, hi: float, step: float) -> "Dimension":
        """Grid dimension in 'min, max, step' form, endpoints inclusive."""
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad range for {name!r}: min {lo}, max {hi}, step {step}")
        count = int(round((hi - lo) / step)) + 1
        values = [round(lo + k * step, 10) for k in range(count)]
        if values[-1] > hi + 1e-9:
            values.pop()
        if all(float(v).is_integer() for v in values):
            values = [int(v) for v in values]
        return cls(name, tuple(values))

    @classmethod
    def from_dict(cls, d: dict) -> "Dimension":
        if "choices" in d:
            return cls(d["name"], tuple(d["choices"]))
        try:
            return cls.stepped(d["name"], d["min"], d["max"], d["step"])
        except KeyError as exc:
            raise ConfigError(f"dimension needs 'choices' or min/max/step: {d}") from exc


@dataclass(frozen=True)
class SearchSpace:
    """Ordered collection of dimensions; configs are name -> value dicts."""

    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in {names}")
        if not self.dimensions:
            raise ConfigError("search space needs at least one dimension")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(tuple(Dimension.from_dict(item) for item in d["dimensions"]))

    def sample(self, rng: np.random.Generator) -> dict:
        """One uniform draw per dimension, in declaration order."""
        return {d.name: d.choices[int(rng.integers(len(d.choices)))]
                for d in self.dimensions}

    @property
    def grid_size(self) -> int:
        size = 1
        for d in self.dimensions:
            size *= len(d.choices)
        return size


def load_preset(name: str) -> SearchSpace:
    """Search space shipped with the package (layers, training, siamese)."""
    path = resources.files("edgefbg").joinpath("spaces", f"{name}.json")
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"no such search-space preset: {name!r}") from exc
    return SearchSpace.from_dict(json.loads(text))


@dataclass(frozen=True)
class Round:
    """One Successive Halving round: this many configs, trained to this epoch."""

    n_configs: int
    epochs: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rounds: tuple[Round, ...]

    @property
    def planned_epochs(self) -> int:
        """Fresh-training upper bound on the epoch spend of this bracket."""
        total = 0
        for r in self.rounds:
            total += r.n_configs * r.epochs
        return total


@dataclass(frozen=True)
class BracketPlan:
    max_epochs: int
    eta: int
    s_max: int
    brackets: tuple[Bracket, ...]


def plan_brackets(max_epochs: int, eta: int = 3) -> BracketPlan:
    """Bracket schedule for a per-config epoch cap and halving factor."""
    if eta < 2:
        raise ConfigError(f"eta must be >= 2, got {eta}")
    if max_epochs < eta:
        raise ConfigError(f"max_epochs {max_epochs} must be >= eta {eta}")
    s_max = 0
    while eta ** (s_max + 1) <= max_epochs:
        s_max += 1
    brackets = []
    for s in range(s_max, -1, -1):
        n = -(-(s_max + 1) * eta**s // (s + 1))
        rounds = []
        for i in range(s + 1):
            n_i = n // eta**i
            if n_i < 1:
                break
            epochs_i = max(1, max_epochs * eta**i // eta**s)
            rounds.append(Round(n_i, epochs_i))
        brackets.append(Bracket(s, tuple(rounds)))
    return BracketPlan(max_epochs, eta, s_max, tuple(brackets))


@dataclass(frozen=True)
class TrialResult:
    """One configuration's outcome, ranked by objective (lower = better)."""

    config: dict
    epochs_used: int
    objective: float
    seed: int
    status: str  # "ok" or "failed"
    bracket: int
    index: int

    def __post_init__(self):
        if self.status == "ok" and not np.isfinite(self.objective):
            raise ValueError("finished trials need a finite objective")


@dataclass(frozen=True)
class HyperbandResult:
    plan: BracketPlan
    ranked: tuple[TrialResult, ...]
    epochs_per_bracket: dict[int, int] = field(default_factory=dict)

    @property
    def best(self) -> TrialResult:
        return self.ranked[0]


class _Trial:
    __slots__ = ("config", "seed", "state", "epochs_used", "objective",
                 "status", "bracket", "index")

    def __init__(self, config: dict, seed: int, bracket: int, index: int):
        self.config = config
        self.seed = seed
        self.state = None
        self.epochs_used = 0
        self.objective = float("inf")
        self.status = "ok"
        self.bracket = bracket
        self.index = index

    def result(self) -> TrialResult:
        return TrialResult(self.config, self.epochs_used, self.objective,
                           self.seed, self.status, self.bracket, self.index)


def _trial_seed(seed: int, s: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, s, index]).generate_state(1)[0])


def run_hyperband(space: SearchSpace, runner: Runner, max_epochs: int = 27,
                  eta: int = 3, seed: int = 0) -> HyperbandResult:
    """Full Hyperband sweep; returns every trial ranked best-first.

    ``runner(config, n_additional_epochs, trial_seed, state)`` trains the
    configuration for that many more epochs on top of ``state`` (None on
    the first call) and returns (objective, new_state). A raising runner
    marks its trial failed; failed trials always rank behind finished ones.
    """
    plan = plan_brackets(max_epochs, eta)
    budget = (plan.s_max + 1) * max_epochs
    all_trials: list[_Trial] = []
    epochs_per_bracket: dict[int, int] = {}
    for bracket in plan.brackets:
        s = bracket.s
        rng = np.random.default_rng([seed, s])
        first = bracket.rounds[0]
        live = [_Trial(space.sample(rng), _trial_seed(seed, s, k), s, k)
                for k in range(first.n_configs)]
        all_trials.extend(live)
        spent = 0
        for i, rnd in enumerate(bracket.rounds):
            for trial in live:
                if trial.status == "failed":
                    continue
                additional = rnd.epochs - trial.epochs_used
                if additional <= 0:
                    continue
                spent += additional
                try:
                    trial.objective, trial.state = runner(
                        trial.config, additional, trial.seed, trial.state)
                    trial.epochs_used = rnd.epochs
                except Exception:
                    trial.status = "failed"
                    trial.objective = float("inf")
                if trial.status == "ok" and not np.isfinite(trial.objective):
                    trial.status = "failed"
                    trial.objective = float("inf")
            if i + 1 < len(bracket.rounds):
                live = sorted(
                    live,
                    key=lambda t: (t.status != "ok", t.objective, t.index),
                )[: bracket.rounds[i + 1].n_configs]
        if spent > budget:
            raise RuntimeError(
                f"bracket {s} spent {spent} epochs, over the {budget} budget"
            )
        epochs_per_bracket[s] = spent
    ranked = tuple(
        t.result() for t in sorted(
            all_trials,
            key=lambda t: (t.status != "ok", t.objective, -t.bracket, t.index),
        )
    )
    return HyperbandResult(plan, ranked, epochs_per_bracket)
