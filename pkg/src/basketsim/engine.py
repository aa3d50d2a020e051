"""Batch execution of (scenario x model) fits with caching and parallelism.

A :class:`StudyRunner` owns everything derived from one master seed: the
simulated datasets and the model fits over them.  Fits are cached by
scenario stream key, data prefix and model, so two approaches that need the
same fit (or a study re-running its calibration scenarios) share one
computation and obtain bit-identical posterior summaries.

The cache key uses only the data prefix a model can see (baskets up to the
largest index in its scope), so fits over existing baskets are reused across
sweeps that only resize a later basket.

Parallelism dispatches whole (scenario, model) batches to worker processes;
each batch derives its own substreams, so results do not depend on worker
count or completion order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import streams
from .inference import BatchPosterior, ModelSpec, fit_batch
from .trial import (
    McmcSettings,
    PriorSpec,
    TrialDesign,
    generate_data_batch,
    generate_random_truth_batch,
)


@dataclass(frozen=True)
class BatchTask:
    """Everything a worker needs to rebuild one (scenario, model) batch."""

    master_seed: int
    scenario_key: int
    p: Tuple[float, ...]            # fixed rates; existing rates only for random truth
    n: Tuple[int, ...]
    model: ModelSpec
    replicates: int
    mcmc: McmcSettings
    priors: PriorSpec
    q0: float
    k_total: int
    truth_interval: Optional[Tuple[float, float]] = None  # random-truth marker
    new_baskets: Tuple[int, ...] = ()


def _task_data(task: BatchTask) -> np.ndarray:
    if task.truth_interval is None:
        return generate_data_batch(
            task.p, task.n, task.master_seed, task.scenario_key, task.replicates
        )
    y, _ = generate_random_truth_batch(
        task.p, task.truth_interval, task.n, task.master_seed,
        task.scenario_key, task.replicates, task.new_baskets,
    )
    return y


def compute_batch(task: BatchTask) -> BatchPosterior:
    """Run one (scenario, model) batch from scratch; used by worker processes."""
    y = _task_data(task)
    gen = streams.fit_stream(
        task.master_seed, task.scenario_key, task.model.family, task.model.scope
    )
    return fit_batch(
        task.model.family, y, task.n, task.model.scope, task.priors,
        task.q0, task.mcmc, gen, k_total=task.k_total,
    )


def _fit_key(task: BatchTask) -> tuple:
    hi = max(task.model.scope) + 1
    return (
        "fit", task.master_seed, task.scenario_key, task.truth_interval,
        task.new_baskets,
        task.p[: hi if task.truth_interval is None else len(task.p)],
        task.n[:hi], task.model, task.replicates,
        task.mcmc.fingerprint(), task.priors, task.q0,
    )


class StudyRunner:
    """Shared fit/data cache for every study run off one master seed."""

    def __init__(
        self,
        design: TrialDesign,
        master_seed: int,
        threads: int = 1,
        mcmc: Optional[McmcSettings] = None,
        share_cache_with: Optional["StudyRunner"] = None,
    ):
        self.design = design
        self.master_seed = int(master_seed)
        self.threads = int(threads)
        self.mcmc = mcmc if mcmc is not None else design.mcmc
        if share_cache_with is not None:
            # cache keys carry the data prefix and model identity, so runners
            # for design variants (resized new baskets, say) can share safely
            self._fits = share_cache_with._fits
            self._data = share_cache_with._data
            self._truths = share_cache_with._truths
        else:
            self._fits: Dict[tuple, BatchPosterior] = {}
            self._data: Dict[tuple, np.ndarray] = {}
            self._truths: Dict[tuple, np.ndarray] = {}

    # -- task construction -------------------------------------------------

    def task(
        self,
        scenario_key: int,
        p: Sequence[float],
        model: ModelSpec,
        replicates: int,
        n: Optional[Sequence[int]] = None,
        truth_interval: Optional[Tuple[float, float]] = None,
    ) -> BatchTask:
        n = tuple(self.design.n) if n is None else tuple(int(v) for v in n)
        return BatchTask(
            master_seed=self.master_seed,
            scenario_key=int(scenario_key),
            p=tuple(float(v) for v in p),
            n=n,
            model=model,
            replicates=int(replicates),
            mcmc=self.mcmc,
            priors=self.design.priors,
            q0=self.design.q0,
            k_total=self.design.k_total,
            truth_interval=truth_interval,
            new_baskets=tuple(self.design.new) if truth_interval is not None else (),
        )

    # -- execution ----------------------------------------------------------

    def _worker_count(self) -> int:
        if self.threads == 0:
            return os.cpu_count() or 1
        return self.threads

    def prefetch(self, tasks: Iterable[BatchTask]) -> None:
        """Compute any uncached fits, in parallel when threads allow.

        Results are stored under their cache keys; the computation of one
        batch never depends on which other batches run alongside it.
        """
        pending: Dict[tuple, BatchTask] = {}
        for t in tasks:
            key = _fit_key(t)
            if key not in self._fits and key not in pending:
                pending[key] = t
        if not pending:
            return
        items = sorted(pending.items(), key=lambda kv: repr(kv[0]))
        workers = self._worker_count()
        if workers <= 1 or len(items) == 1:
            for key, t in items:
                self._fits[key] = compute_batch(t)
            return
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (key, _), result in zip(items, pool.map(compute_batch, [t for _, t in items])):
                self._fits[key] = result

    def fits(self, task: BatchTask) -> BatchPosterior:
        key = _fit_key(task)
        if key not in self._fits:
            self._fits[key] = compute_batch(task)
        return self._fits[key]

    # -- data (regenerated cheaply, cached for aggregation) -----------------

    def data(self, task: BatchTask) -> np.ndarray:
        key = ("data", task.master_seed, task.scenario_key, task.truth_interval,
               task.p, task.n, task.replicates)
        if key not in self._data:
            if task.truth_interval is None:
                self._data[key] = _task_data(task)
            else:
                y, p = generate_random_truth_batch(
                    task.p, task.truth_interval, task.n, task.master_seed,
                    task.scenario_key, task.replicates, task.new_baskets,
                )
                self._data[key] = y
                self._truths[key] = p
        return self._data[key]

    def truths(self, task: BatchTask) -> np.ndarray:
        """Per-replicate true rate matrix for a random-truth task."""
        key = ("data", task.master_seed, task.scenario_key, task.truth_interval,
               task.p, task.n, task.replicates)
        if key not in self._truths:
            self.data(task)
        return self._truths[key]
