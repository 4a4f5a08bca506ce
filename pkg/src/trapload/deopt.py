"""Differential evolution for noisy black-box maximization.

DE/rand/1/bin: mutant v = a + Fw*(b - c) from three distinct population
members, binomial crossover with one forced gene, clamping to box bounds,
greedy selection.  Noise is handled by averaging evals_per_candidate
evaluations with common random seeds per generation, so candidate
comparisons within a generation are paired.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rngstreams import rng_for


@dataclass
class DEConfig:
    bounds: list[tuple[float, float]] = field(
        default_factory=lambda: [(-1.0, 1.0)] * 13)
    population: int | None = None      # default 10 * dimension
    weight: float = 0.6                # differential weight Fw in (0, 2]
    crossover: float = 0.9             # CR in [0, 1]
    generations: int = 100
    evals_per_candidate: int = 1
    seed: int = 1

    def __post_init__(self) -> None:
        if not self.bounds:
            raise ConfigError("bounds must be non-empty")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigError(f"bad bound ({lo}, {hi})")
        if not 0.0 < self.weight <= 2.0:
            raise ConfigError("differential weight must be in (0, 2]")
        if not 0.0 <= self.crossover <= 1.0:
            raise ConfigError("crossover rate must be in [0, 1]")
        if self.evals_per_candidate < 1:
            raise ConfigError("evals_per_candidate must be >= 1")
        if self.np_population < 4:
            raise ConfigError("population must be >= 4")

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def np_population(self) -> int:
        return self.population or 10 * self.dimension


@dataclass
class GenerationTrace:
    generation: int
    best_score: float
    mean_score: float
    best_params: np.ndarray


@dataclass
class OptimizeResult:
    best_params: np.ndarray
    best_score: float
    trace: list[GenerationTrace]
    evaluations: int
    budget_exhausted: bool
    failures: int           # evaluations that raised (scored -inf)


def _pool_init():
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:
        pass


def _mean_score(objective, x, gen_seeds):
    """(mean score, failure count) over the shared generation seeds."""
    total = 0.0
    for s in gen_seeds:
        try:
            val = float(objective(x, int(s)))
        except Exception:
            return -math.inf, 1
        if not np.isfinite(val):
            return -math.inf, 0
        total += val
    return total / len(gen_seeds), 0


def optimize(objective, config: DEConfig, max_workers: int = 1,
             callback=None, init: np.ndarray | None = None) -> OptimizeResult:
    """Maximize objective(x, seed) over the configured box.

    The objective receives an evaluation seed; deterministic objectives
    may ignore it.  Scores within a generation share seeds (common random
    numbers), giving paired comparisons under noise.  Candidates whose
    evaluation raises score -inf and are logged, never selected.  init may
    carry points (k, dim) seeded into the initial population (checkpoint
    resume).
    """
    rng = rng_for(config.seed, 0xDE)
    dim = config.dimension
    NP = config.np_population
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])

    pop = lo + rng.random((NP, dim)) * (hi - lo)
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=float))
        k = min(len(init), NP)
        pop[:k] = np.clip(init[:k], lo, hi)
    failures = [0]
    evals = 0
    # objective(x, seed) is deterministic, so repeated (x, seeds) pairs
    # (unchanged parents under constant generation seeds) are free
    memo: dict[tuple, float] = {}

    def score_many(xs, gen_seeds):
        nonlocal evals
        key_seeds = tuple(gen_seeds)
        keys = [(x.tobytes(), key_seeds) for x in xs]
        todo = [i for i, k in enumerate(keys) if k not in memo]
        evals += len(todo) * len(gen_seeds)
        if max_workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(
                    max_workers=max_workers,
                    mp_context=multiprocessing.get_context("spawn"),
                    initializer=_pool_init) as pool:
                futs = {i: pool.submit(_mean_score, objective, xs[i],
                                       gen_seeds) for i in todo}
                for i, fut in futs.items():
                    score, nfail = fut.result()
                    memo[keys[i]] = score
                    failures[0] += nfail
        else:
            for i in todo:
                score, nfail = _mean_score(objective, xs[i], gen_seeds)
                memo[keys[i]] = score
                failures[0] += nfail
        return np.array([memo[k] for k in keys])

    gen_seeds0 = [int(s) for s in
                  rng.integers(0, 2**31 - 1, config.evals_per_candidate)]
    scores = score_many(pop, gen_seeds0)
    best_idx = int(np.argmax(scores))
    best_params = pop[best_idx].copy()
    best_score = float(scores[best_idx])
    trace: list[GenerationTrace] = []

    for gen in range(config.generations):
        gen_seeds = [int(s) for s in
                     rng.integers(0, 2**31 - 1, config.evals_per_candidate)]
        trial = np.empty_like(pop)
        for i in range(NP):
            choices = [j for j in range(NP) if j != i]
            a, b, c = rng.choice(choices, size=3, replace=False)
            mutant = pop[a] + config.weight * (pop[b] - pop[c])
            cross = rng.random(dim) < config.crossover
            cross[int(rng.integers(0, dim))] = True      # one forced gene
            t = np.where(cross, mutant, pop[i])
            trial[i] = np.clip(t, lo, hi)
        trial_scores = score_many(trial, gen_seeds)
        parent_scores = score_many(pop, gen_seeds)       # paired comparison
        improved = trial_scores >= parent_scores
        pop[improved] = trial[improved]
        gen_scores = np.where(improved, trial_scores, parent_scores)
        gi = int(np.argmax(gen_scores))
        if gen_scores[gi] > best_score:
            best_score = float(gen_scores[gi])
            best_params = pop[gi].copy()
        finite = gen_scores[np.isfinite(gen_scores)]
        trace.append(GenerationTrace(
            generation=gen,
            best_score=float(gen_scores[gi]),
            mean_score=float(finite.mean()) if len(finite) else -math.inf,
            best_params=pop[gi].copy(),
        ))
        if callback is not None:
            callback(trace[-1])

    return OptimizeResult(
        best_params=best_params,
        best_score=best_score,
        trace=trace,
        evaluations=evals,
        budget_exhausted=True,   # fixed-generation budget always runs out
        failures=failures[0],
    )


# ---------------------------------------------------------------------------
# Loading-objective wrapper
# ---------------------------------------------------------------------------

class LoadingObjective:
    """Picklable objective: mean final trapped N of a loading run.

    Instances cross process boundaries under the spawn start method, so
    population evaluations can run in fresh worker interpreters.
    """

    def __init__(self, config, free_channels, loading_time):
        self.config = config
        self.free_channels = list(free_channels)
        self.loading_time = float(loading_time)

    def __call__(self, x, seed):
        from dataclasses import replace as dc_replace

        from .errors import TrapLoadError
        from .loading import LoadingEngine

        overrides = {ch: float(v) for ch, v in zip(self.free_channels, x)}
        currents = self.config.currents.replace(**overrides)
        cfg = dc_replace(self.config, currents=currents, seed=int(seed),
                         duration=self.loading_time)
        try:
            engine = LoadingEngine(cfg)
            engine.run_steps(int(round(self.loading_time / engine.dt)))
            mask = engine.trapped_mask()
            return float(np.count_nonzero(mask)) * engine.ensemble.weight
        except TrapLoadError:
            return -math.inf


def optimize_loading(config, free_channels: list[str], de_config: DEConfig,
                     loading_time: float = 33.0, max_workers: int = 1,
                     init: np.ndarray | None = None):
    """Tune the currents of free_channels for maximum trapped N.

    The objective is the mean final trapped number of run_loading at fixed
    loading time across evals_per_candidate seeds (the DE eval seeds).
    Returns (best CurrentSetting, its characterization, OptimizeResult).
    Configurations without a bound trap score -inf.
    """
    from .trapanalysis import characterize

    if not free_channels:
        base = config.currents
        system_char = None
        result = OptimizeResult(np.zeros(0), float("nan"), [], 0, False, 0)
        return base, system_char, result
    missing = [ch for ch in free_channels if ch not in config.layout.channels]
    if missing:
        raise ConfigError(f"free channels not in layout: {missing}")
    if len(de_config.bounds) != len(free_channels):
        raise ConfigError("DE bounds must match the free channel list")

    objective = LoadingObjective(config, free_channels, loading_time)
    result = optimize(objective, de_config, max_workers=max_workers, init=init)
    best = config.currents.replace(**{
        ch: float(v) for ch, v in zip(free_channels, result.best_params)
    })
    from .magnetics import ZeemanSystem

    char = characterize(
        ZeemanSystem(config.layout, best, config.spin, config.constants,
                     gravity=config.gravity, bias=config.bias),
        config.analysis,
        entrance_x=min(config.barrier_reference_x, config.beam.entrance_x),
    )
    return best, char, result
