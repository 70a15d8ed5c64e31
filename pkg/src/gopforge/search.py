"""Deterministic parallel execution of candidate sweeps.

One job is one whole candidate training.  A job's randomness comes only
from its own ``rng_stream_id``, so results do not depend on the worker count
or on the order in which jobs are scheduled.
"""
import csv
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from typing import Any, Optional

import multiprocessing as mp
import numpy as np
from threadpoolctl import threadpool_limits

from .errors import TrainingError, ValidationError
from .operators import OperatorSet

WORKERS_ENV = "GOPFORGE_WORKERS"


@dataclass(frozen=True)
class CandidateJob:
    candidate_index: int
    opset: OperatorSet
    rng_stream_id: int
    payload: Any = None


@dataclass
class CandidateOutcome:
    candidate_index: int
    opset: OperatorSet
    loss: float
    status: str  # ok | diverged | infeasible | failed
    seconds: float = 0.0
    reason: str = ""
    result: Any = None
    attempts: int = 1


@dataclass
class SweepResult:
    losses: np.ndarray
    winner_index: Optional[int]
    winner_params: Any
    failures: list
    outcomes: list = field(default_factory=list)

    @property
    def all_failed(self):
        return self.winner_index is None

    @property
    def winner(self):
        return None if self.winner_index is None else self.outcomes[self.winner_index]


def resolve_workers(workers=None):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    workers = 1 if workers is None else int(workers)
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    return workers


_CONTEXT = None
_TASK = None


def _init_worker(task, context):
    global _CONTEXT, _TASK
    _TASK, _CONTEXT = task, context
    threadpool_limits(limits=1)


def _run_one(job, task, context):
    t0 = time.perf_counter()
    try:
        loss, result = task(job, context)
        status, reason = "ok", ""
    except TrainingError as exc:
        loss, result, status, reason = math.inf, None, "diverged", str(exc)
    except ValidationError as exc:
        # e.g. pooling arity larger than the layer's fan-in
        loss, result, status, reason = math.inf, None, "infeasible", str(exc)
    if not math.isfinite(loss):
        loss = math.inf
        if status == "ok":
            status, reason = "diverged", "non-finite loss"
    return CandidateOutcome(job.candidate_index, job.opset, loss, status,
                            time.perf_counter() - t0, reason, result)


def _worker_entry(job):
    return _run_one(job, _TASK, _CONTEXT)


def _crash(job, exc_text, attempts):
    return CandidateOutcome(job.candidate_index, job.opset, math.inf, "failed",
                            0.0, exc_text, None, attempts)


def _run_serial(jobs, task, context):
    outcomes = {}
    with threadpool_limits(limits=1):
        for job in jobs:
            for attempt in (1, 2):
                try:
                    out = _run_one(job, task, context)
                    out.attempts = attempt
                    outcomes[job.candidate_index] = out
                    break
                except Exception:
                    if attempt == 2:
                        outcomes[job.candidate_index] = _crash(job, traceback.format_exc(limit=3), 2)
    return outcomes


def _pool_attempt(jobs, workers, task, context, ctx):
    """One attempt over ``jobs``; returns outcomes for the jobs that completed."""
    done = {}
    try:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs)), mp_context=ctx,
                                 initializer=_init_worker, initargs=(task, context)) as pool:
            futures = [(job, pool.submit(_worker_entry, job)) for job in jobs]
            for job, fut in futures:
                try:
                    done[job.candidate_index] = fut.result()
                except BrokenProcessPool:
                    raise
                except Exception:
                    pass
    except BrokenProcessPool:
        pass
    return done


def _run_pool(jobs, workers, task, context):
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    ctx = mp.get_context(method)
    outcomes = _pool_attempt(jobs, workers, task, context, ctx)
    # second attempt: each leftover job alone, so a crashing job cannot take others down
    for job in jobs:
        if job.candidate_index in outcomes:
            continue
        retry = _pool_attempt([job], 1, task, context, ctx)
        if job.candidate_index in retry:
            out = retry[job.candidate_index]
            out.attempts = 2
            outcomes[job.candidate_index] = out
        else:
            outcomes[job.candidate_index] = _crash(job, "worker failed twice", 2)
    return outcomes


def reduce_outcomes(outcomes):
    """Argmin over candidate indices; ties go to the lowest index."""
    ordered = [outcomes[i] for i in sorted(outcomes)]
    losses = np.array([o.loss for o in ordered])
    winner = None
    best = math.inf
    for pos, o in enumerate(ordered):
        if o.loss < best:
            best, winner = o.loss, pos
    failures = [(o.candidate_index, o.status, o.reason) for o in ordered if o.status != "ok"]
    params = None if winner is None else ordered[winner].result
    return SweepResult(losses, winner, params, failures, ordered)


def run_sweep(jobs, workers, task, context=None):
    """Run ``task(job, context) -> (loss, result)`` for every job and reduce to the argmin.

    ``task`` must be a module-level function so it can be sent to worker
    processes.  Diverging candidates (``TrainingError``) and infeasible ones
    (``ValidationError``) score +inf; any other exception is retried once and
    then recorded as a failure.
    """
    jobs = list(jobs)
    if not jobs:
        raise ValidationError("run_sweep: no jobs")
    if len({j.candidate_index for j in jobs}) != len(jobs):
        raise ValidationError("run_sweep: duplicate candidate indices")
    workers = int(workers)
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    if workers == 1:
        outcomes = _run_serial(jobs, task, context)
    else:
        outcomes = _run_pool(jobs, workers, task, context)
    assert len(outcomes) == len(jobs)
    return reduce_outcomes(outcomes)


def write_sweep_csv(path, sweep, append=False, extra=None):
    """Per-candidate report: candidate_index, opset triple, loss, seconds, status."""
    extra = extra or {}
    new = not (append and os.path.exists(path))
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(list(extra) + ["candidate_index", "nodal", "pool", "act", "loss", "seconds", "status"])
        for o in sweep.outcomes:
            w.writerow(list(extra.values()) + [o.candidate_index, *o.opset.names, repr(o.loss),
                                               f"{o.seconds:.4f}", o.status])
