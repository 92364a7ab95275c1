"""Stochastic trajectory engine: single runs, ensembles, steady-state sampling.

Each trajectory owns a counter-based random stream keyed by
``(master seed, trajectory index)``, so ensembles are bit-reproducible
for any chunk schedule and any worker count.  Trajectories advance in
fixed-size chunks as vectorized numpy operations; partial reductions
(mean sums, steady-state samples, renormalization counts) are merged in
chunk order, which keeps floating-point results independent of the
thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import FeedbackChain, FeedbackLaw, validate_law
from .model import (
    BlochState,
    ModelParams,
    backaction_update,
    dissipation_update,
    rotation_update,
)

__all__ = [
    "TrajectoryConfig",
    "TrajectoryRecord",
    "SteadySampling",
    "EnsembleResult",
    "BayesStepper",
    "run_trajectory",
    "run_ensemble",
    "trajectory_rng",
]

#: Trajectories per vectorized chunk.  Fixed (never derived from the worker
#: count) so that reduction order, and therefore every output bit, is a pure
#: function of (seed, n_traj).
CHUNK_SIZE = 4096

#: Steps of noise generated per inner block; bounds the noise buffer to
#: CHUNK_SIZE * BLOCK_STEPS doubles.
BLOCK_STEPS = 512


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one trajectory, keyed by (seed, index)."""
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _steps_for(total_time: float, dt: float) -> int:
    n = int(round(total_time / dt))
    if n < 1 or abs(n * dt - total_time) > 1e-9 * max(total_time, dt):
        raise ValueError(
            f"total_time = {total_time} is not a whole number of steps of dt = {dt}"
        )
    return n


@dataclass(frozen=True)
class TrajectoryConfig:
    """What to simulate: initial state, duration, recording grid, master seed."""

    initial: BlochState
    total_time: float
    record_stride: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        self.initial.require_physical()
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def n_steps(self, params: ModelParams) -> int:
        n = _steps_for(self.total_time, params.dt)
        if n % self.record_stride != 0:
            raise ValueError(
                f"record_stride = {self.record_stride} does not divide "
                f"the {n} total steps; recorded times would be non-uniform"
            )
        return n


@dataclass
class TrajectoryRecord:
    """Recorded time series of one trajectory.

    ``xyz`` has shape (len(times), 3).  ``readouts``, when recorded,
    holds one raw readout per simulation step (the sample that advanced
    step k to k+1).  ``renorm_count`` counts floating-point
    renormalizations back onto the sphere; ``excursion_count`` counts
    sphere violations beyond tolerance flagged by non-positivity-
    preserving integrators.
    """

    times: np.ndarray
    xyz: np.ndarray
    readouts: np.ndarray | None = None
    renorm_count: int = 0
    excursion_count: int = 0

    @property
    def states(self) -> list[BlochState]:
        return [BlochState(*row) for row in self.xyz]

    def state(self, i: int) -> BlochState:
        return BlochState(*self.xyz[i])

    def final_state(self) -> BlochState:
        return BlochState(*self.xyz[-1])


@dataclass(frozen=True)
class SteadySampling:
    """Steady-state sampling protocol: burn-in, then sparse periodic samples.

    States before ``burn_in`` are discarded; afterwards (y, z) is
    collected every ``stride`` of time, which for stride ~ tau_m gives
    weakly correlated samples.
    """

    burn_in: float
    stride: float

    @classmethod
    def default(cls, params: ModelParams) -> "SteadySampling":
        return cls(burn_in=10.0 * params.tau_m, stride=params.tau_m)

    def step_indices(self, n_steps: int, dt: float) -> np.ndarray:
        burn = int(round(self.burn_in / dt))
        stride = max(1, int(round(self.stride / dt)))
        if burn > n_steps:
            raise ValueError("burn_in exceeds the simulated time span")
        return np.arange(burn, n_steps + 1, stride)

    def samples_per_trajectory(self, total_time: float, dt: float) -> int:
        return len(self.step_indices(_steps_for(total_time, dt), dt))


@dataclass
class EnsembleResult:
    """Streamed reduction of an ensemble run.

    ``mean_xyz`` is the per-time arithmetic mean over trajectories.
    ``steady_yz`` pools the steady-state (y, z) samples of every
    trajectory (trajectory-major order) when a sampling protocol was
    requested.  ``records`` holds full per-trajectory histories only
    when explicitly kept.
    """

    times: np.ndarray
    mean_xyz: np.ndarray
    n_traj: int
    renorm_count: int = 0
    excursion_count: int = 0
    steady_yz: np.ndarray | None = None
    steady_sampling: SteadySampling | None = None
    records: list[TrajectoryRecord] | None = None

    def steady_mean_radius(self) -> float:
        """Radius of the mean steady-state vector, |<(y, z)>|."""
        if self.steady_yz is None or len(self.steady_yz) == 0:
            raise ValueError("no steady-state samples were collected")
        my, mz = self.steady_yz.mean(axis=0)
        return math.hypot(my, mz)


class BayesStepper:
    """Vectorized one-step update: readout, feedback chain, conditioned evolution.

    Owns the feedback chain state for a batch of trajectories and the
    running count of sphere renormalizations.
    """

    def __init__(self, params: ModelParams, law: FeedbackLaw, batch: int) -> None:
        self.chain = FeedbackChain(law, params, batch=batch)
        self._sigma = params.readout_sigma
        self._s_scale = params.dt / params.tau_m
        self._dt = params.dt
        self._delta0 = law.delta0
        self._delta1 = law.delta1
        self._ft = params.transverse_decay
        self._e1 = params.t1_decay
        self._lossless = self._ft == 1.0 and self._e1 == 1.0
        self.last_readout: np.ndarray | None = None
        self.renorms = 0
        self.excursions = 0

    def step(self, x, y, z, n01):
        rbar = z + self._sigma * n01
        self.last_readout = rbar
        fed = self.chain.push(rbar)
        x, y, z = backaction_update(x, y, z, rbar * self._s_scale)
        y, z = rotation_update(y, z, self._dt * (self._delta0 + self._delta1 * fed))
        if not self._lossless:
            x, y, z = dissipation_update(x, y, z, self._ft, self._e1)
        r2 = x * x + y * y + z * z
        outside = r2 > 1.0
        n_out = int(np.count_nonzero(outside))
        if n_out:
            self.renorms += n_out
            scale = np.where(outside, 1.0 / np.sqrt(np.where(outside, r2, 1.0)), 1.0)
            x = x * scale
            y = y * scale
            z = z * scale
        return x, y, z


@dataclass
class _ChunkResult:
    rec_sums: np.ndarray
    renorms: int
    excursions: int
    steady: np.ndarray | None
    records: list[TrajectoryRecord] | None


def _run_chunk(
    lo: int,
    hi: int,
    cfg: TrajectoryConfig,
    params: ModelParams,
    stepper_factory,
    rec_steps: np.ndarray,
    steady_steps: np.ndarray | None,
    keep_records: bool,
    record_readouts: bool,
) -> _ChunkResult:
    n = hi - lo
    n_steps = cfg.n_steps(params)
    stepper = stepper_factory(n)
    x = np.full(n, cfg.initial.x)
    y = np.full(n, cfg.initial.y)
    z = np.full(n, cfg.initial.z)
    gens = [trajectory_rng(cfg.seed, i) for i in range(lo, hi)]

    n_rec = len(rec_steps)
    rec_sums = np.zeros((n_rec, 3))
    traj_xyz = np.empty((n, n_rec, 3)) if keep_records else None
    readouts = np.empty((n, n_steps)) if record_readouts else None
    n_steady = 0 if steady_steps is None else len(steady_steps)
    steady_buf = np.empty((n_steady, n, 2)) if n_steady else None

    rec_pos = 0
    steady_pos = 0

    def collect(state_idx: int) -> None:
        nonlocal rec_pos, steady_pos
        if rec_pos < n_rec and rec_steps[rec_pos] == state_idx:
            rec_sums[rec_pos, 0] = x.sum()
            rec_sums[rec_pos, 1] = y.sum()
            rec_sums[rec_pos, 2] = z.sum()
            if traj_xyz is not None:
                traj_xyz[:, rec_pos, 0] = x
                traj_xyz[:, rec_pos, 1] = y
                traj_xyz[:, rec_pos, 2] = z
            rec_pos += 1
        if steady_buf is not None and steady_pos < n_steady and steady_steps[steady_pos] == state_idx:
            steady_buf[steady_pos, :, 0] = y
            steady_buf[steady_pos, :, 1] = z
            steady_pos += 1

    collect(0)
    noise = np.empty((n, BLOCK_STEPS))
    done = 0
    while done < n_steps:
        block = min(BLOCK_STEPS, n_steps - done)
        for j, g in enumerate(gens):
            noise[j, :block] = g.standard_normal(block)
        for k in range(block):
            x, y, z = stepper.step(x, y, z, noise[:, k])
            if readouts is not None:
                readouts[:, done + k] = stepper.last_readout
            collect(done + k + 1)
        done += block

    records = None
    if keep_records:
        times = rec_steps * params.dt
        records = [
            TrajectoryRecord(
                times=times.copy(),
                xyz=traj_xyz[j].copy(),
                readouts=None if readouts is None else readouts[j].copy(),
            )
            for j in range(n)
        ]
    steady = None
    if steady_buf is not None:
        steady = steady_buf.transpose(1, 0, 2).reshape(-1, 2)
    return _ChunkResult(
        rec_sums=rec_sums,
        renorms=getattr(stepper, "renorms", 0),
        excursions=getattr(stepper, "excursions", 0),
        steady=steady,
        records=records,
    )


def run_ensemble(
    n_traj: int,
    cfg: TrajectoryConfig,
    params: ModelParams,
    law: FeedbackLaw,
    *,
    threads: int = 1,
    keep_records: bool = False,
    record_readouts: bool = False,
    steady: SteadySampling | None = None,
    stepper_factory=None,
) -> EnsembleResult:
    """Simulate ``n_traj`` trajectories and reduce them on the fly.

    Trajectory i draws from the stream keyed (cfg.seed, i); results are
    identical for any ``threads`` value.  ``steady`` enables pooled
    steady-state (y, z) sampling for histograms.  ``stepper_factory``
    (batch size -> stepper) swaps the physics kernel; the default is the
    quantum Bayesian update with the feedback chain.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if record_readouts and cfg.record_stride != 1:
        raise ValueError("readout recording requires record_stride == 1")
    if record_readouts and not keep_records:
        raise ValueError("readouts are carried on records; set keep_records=True")
    validate_law(law, params)
    n_steps = cfg.n_steps(params)
    rec_steps = np.arange(0, n_steps + 1, cfg.record_stride)
    steady_steps = None if steady is None else steady.step_indices(n_steps, params.dt)
    if stepper_factory is None:
        stepper_factory = lambda batch: BayesStepper(params, law, batch)

    bounds = [(lo, min(lo + CHUNK_SIZE, n_traj)) for lo in range(0, n_traj, CHUNK_SIZE)]
    run = lambda b: _run_chunk(
        b[0], b[1], cfg, params, stepper_factory,
        rec_steps, steady_steps, keep_records, record_readouts,
    )
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, bounds))
    else:
        chunks = [run(b) for b in bounds]

    # Ordered merge: chunk index, not completion order, fixes the float sums.
    rec_sums = np.zeros((len(rec_steps), 3))
    renorms = 0
    excursions = 0
    for c in chunks:
        rec_sums += c.rec_sums
        renorms += c.renorms
        excursions += c.excursions
    records = None
    if keep_records:
        records = [r for c in chunks for r in c.records]
    steady_yz = None
    if steady_steps is not None:
        steady_yz = np.concatenate([c.steady for c in chunks], axis=0)
    return EnsembleResult(
        times=rec_steps * params.dt,
        mean_xyz=rec_sums / n_traj,
        n_traj=n_traj,
        renorm_count=renorms,
        excursion_count=excursions,
        steady_yz=steady_yz,
        steady_sampling=steady,
        records=records,
    )


def run_trajectory(
    cfg: TrajectoryConfig,
    params: ModelParams,
    law: FeedbackLaw,
    *,
    record_readouts: bool = False,
) -> TrajectoryRecord:
    """Simulate one trajectory; equals trajectory 0 of an ensemble with the same seed."""
    result = run_ensemble(
        1, cfg, params, law, keep_records=True, record_readouts=record_readouts
    )
    record = result.records[0]
    record.renorm_count = result.renorm_count
    record.excursion_count = result.excursion_count
    return record
