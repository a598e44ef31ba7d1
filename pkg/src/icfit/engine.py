"""Generic driver alternating imputation and consistency steps.

A model object supplies the problem-specific pieces:

``blocks``
    list of :class:`BlockSpec` naming the parameter blocks and their
    update order within one consistency sweep (Gauss-Seidel: each block
    sees the freshest values of the others).
``initialize(data, rng)``
    produce the starting filled data; the default start median-fills.
``initial_state(filled)``
    a state object with every block populated well enough to be
    conditioned on before its first update.
``impute(filled, state, rng)``
    the I-step: redraw the unobserved cells conditional on the state.
``update_block(name, filled, state)``
    one conditional-consistency update; returns the new state.
``pack(state)``
    flatten the state into the snapshot payload (fixed layout per model).

Single-estimator models (one ``estimate(filled)`` method) run through
:func:`run_ic`, which wraps them in a one-block adapter; consequently a
one-block :func:`run_icc` and :func:`run_ic` share the same code path
and the same RNG consumption.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ChainTrace,
    IncompleteMatrix,
    ParameterSnapshot,
    make_incomplete,
    median_fill,
)
from .exceptions import BlockFailure, EstimatorFailure, InsufficientChains

DEFAULT_ITERATIONS = 30
DEFAULT_BURN_IN = 20


@dataclass(frozen=True)
class BlockSpec:
    name: str
    dimension: int
    update_order: int


@dataclass(frozen=True)
class EngineConfig:
    iterations: int = DEFAULT_ITERATIONS
    burn_in: int = DEFAULT_BURN_IN
    chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")


@dataclass
class Checkpoint:
    """Everything needed to restart a chain after iteration ``iteration``."""

    iteration: int
    filled: object
    state: object
    rng_state: dict


def _ordered_blocks(model):
    blocks = sorted(model.blocks, key=lambda b: b.update_order)
    if [b.update_order for b in blocks] != list(range(1, len(blocks) + 1)):
        raise ValueError("update_order must be a permutation of 1..k")
    return blocks


def run_icc(model, data, cfg: EngineConfig, start=None, resume: Checkpoint | None = None,
            checkpoint_at: int | None = None):
    """Run one imputation-conditional-consistency chain.

    Iteration 0 is a consistency sweep on the starting fill (median fill
    unless ``start='complete-cases'``); every later iteration draws a
    fresh imputation conditional on the previous state, then sweeps the
    blocks in update order.  Returns a :class:`ChainTrace`; when
    ``checkpoint_at`` is given, returns ``(trace, checkpoint)`` instead.
    """
    blocks = _ordered_blocks(model)
    start = start or getattr(model, "preferred_start", "median")
    trace = ChainTrace(burn_in=cfg.burn_in)
    checkpoint = None

    if resume is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = copy.deepcopy(resume.rng_state)
        filled = resume.filled
        state = resume.state
        t0 = resume.iteration + 1
    else:
        rng = np.random.default_rng(cfg.seed)
        init = getattr(model, "initialize", None)
        filled = init(data, rng) if init is not None else median_fill(data)
        state = model.initial_state(filled)
        t0 = 0

    for t in range(t0, cfg.iterations):
        if t > 0:
            state_prev = state
            try:
                filled = model.impute(filled, state_prev, rng)
            except Exception as exc:  # noqa: BLE001 - wrapped with context
                raise EstimatorFailure(t, exc) from exc
        if t == 0 and start == "complete-cases":
            state = _complete_case_sweep(model, blocks, filled, state)
        else:
            for block in blocks:
                try:
                    state = model.update_block(block.name, filled, state)
                except Exception as exc:  # noqa: BLE001
                    raise BlockFailure(block.name, t, exc) from exc
        trace.append(ParameterSnapshot(t, np.asarray(model.pack(state), dtype=float)))
        if checkpoint_at is not None and t == checkpoint_at:
            checkpoint = Checkpoint(
                iteration=t,
                filled=filled,
                state=copy.deepcopy(state),
                rng_state=copy.deepcopy(rng.bit_generator.state),
            )

    if checkpoint_at is not None:
        return trace, checkpoint
    return trace


def _complete_case_sweep(model, blocks, filled, state):
    """Initial consistency sweep using only the fully observed rows."""
    if not isinstance(filled, IncompleteMatrix):
        raise ValueError("complete-cases start requires matrix data")
    keep = filled.mask.all(axis=1)
    if not keep.any():
        raise ValueError("no complete cases available for a C-step-first start")
    sub = make_incomplete(filled.values[keep])
    for block in blocks:
        state = model.update_block(block.name, sub, state)
    return state


class _SingleBlockAdapter:
    """Present a plain estimator (one ``estimate`` method) as a 1-block model."""

    def __init__(self, model):
        self._model = model
        dim = getattr(model, "dimension", 0)
        self.blocks = [BlockSpec("all", dim, 1)]
        self.preferred_start = getattr(model, "preferred_start", "median")

    def initialize(self, data, rng):
        init = getattr(self._model, "initialize", None)
        return init(data, rng) if init is not None else median_fill(data)

    def initial_state(self, filled):
        return None

    def impute(self, filled, state, rng):
        return self._model.impute(filled, state, rng)

    def update_block(self, name, filled, state):
        return self._model.estimate(filled)

    def pack(self, state):
        return self._model.pack(state)


def run_ic(model, data, cfg: EngineConfig, start=None, resume=None, checkpoint_at=None):
    """Run one imputation-consistency chain for a single-estimator model."""
    adapter = _SingleBlockAdapter(model)
    try:
        return run_icc(adapter, data, cfg, start=start, resume=resume,
                       checkpoint_at=checkpoint_at)
    except BlockFailure as exc:
        raise EstimatorFailure(exc.iteration, exc.cause) from exc


def run_chains(model, data, cfg: EngineConfig, start=None,
               runner=run_icc) -> list[ChainTrace]:
    """Run ``cfg.chains`` independent chains with substreams of ``cfg.seed``."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    traces = []
    for seq in seeds:
        chain_cfg = EngineConfig(cfg.iterations, cfg.burn_in, 1,
                                 int(seq.generate_state(1)[0]))
        traces.append(runner(model, data, chain_cfg, start=start))
    return traces


def gelman_rubin(traces: list[ChainTrace], coordinate: int) -> float:
    """Potential scale reduction factor for one payload coordinate.

    Uses post-burn-in samples: with m the per-chain length, W the mean
    within-chain variance and B = m * Var(chain means), the statistic is
    sqrt((W (m-1)/m + B/m) / W).  All-constant-and-equal chains return 1.
    """
    if len(traces) < 2:
        raise InsufficientChains("need at least two chains")
    series = [t.post_burn_in()[:, coordinate] for t in traces]
    m = len(series[0])
    if any(len(s) != m for s in series):
        raise ValueError("chains must have equal post-burn-in lengths")
    if m < 2:
        raise ValueError("need at least two post-burn-in samples per chain")
    within = float(np.mean([np.var(s, ddof=1) for s in series]))
    means = np.array([s.mean() for s in series])
    between = m * float(np.var(means, ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    return float(np.sqrt((within * (m - 1) / m + between / m) / within))
