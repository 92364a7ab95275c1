"""Single-step physics of a dispersively monitored qubit with feedback.

The qubit state is tracked as a Bloch vector (x, y, z).  One simulation
step of duration ``dt`` applies, in order:

1. measurement backaction conditioned on the readout collected during
   the step,
2. a coherent rotation in the yz-plane whose rate is set by the feedback
   controller,
3. environmental dissipation (energy relaxation ``T1``, dephasing ``T2``,
   and the extra dephasing caused by detector inefficiency ``eta``).

The coarse-grained readout for a step is Gaussian with mean ``z`` and
variance ``tau_m/dt``, where ``tau_m`` is the measurement collapse time
(time to unit signal-to-noise between the two energy eigenstates).  Units
throughout: times in microseconds, rates and angular frequencies in
rad/us; the readout is dimensionless (eigenvalue units of the measured
observable).

All operations are pure functions of their inputs plus an explicit random
generator, so they are safe to call concurrently with independent
generators.  The ``*_update`` kernels accept scalars or numpy arrays and
carry the same formulas used by the vectorized trajectory engine.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BlochState",
    "ModelParams",
    "ReadoutSample",
    "sample_readout",
    "measurement_backaction",
    "feedback_rotation",
    "dissipation_step",
    "composite_step",
    "backaction_update",
    "rotation_update",
    "dissipation_update",
]

#: Tolerance for "on the Bloch sphere" checks; float noise only.
SPHERE_TOL = 1e-12


@dataclass(frozen=True)
class BlochState:
    """Qubit state as Bloch coordinates.

    A physical state satisfies ``x**2 + y**2 + z**2 <= 1``; the excited
    state of the measured observable sits at z = +1, the ground state at
    z = -1.  The polar representation (``radius``, ``theta``) is derived
    on demand; for states in the yz-plane x = 0 and ``theta`` is measured
    from the +z axis toward +y.
    """

    x: float
    y: float
    z: float

    @classmethod
    def from_polar(cls, theta: float, radius: float = 1.0) -> "BlochState":
        """In-plane state (0, R sin(theta), R cos(theta))."""
        return cls(0.0, radius * math.sin(theta), radius * math.cos(theta))

    @property
    def radius(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    @property
    def theta(self) -> float:
        """Polar angle in the yz-plane, atan2(y, z)."""
        return math.atan2(self.y, self.z)

    @property
    def purity(self) -> float:
        """Tr(rho^2) = (1 + R^2)/2."""
        r = self.radius
        return 0.5 * (1.0 + r * r)

    @property
    def fidelity(self) -> float:
        """Overlap with the pure state at the same angle, (1 + R)/2."""
        return 0.5 * (1.0 + self.radius)

    def require_physical(self) -> "BlochState":
        """Raise ValueError if the vector lies outside the Bloch sphere."""
        r2 = self.x * self.x + self.y * self.y + self.z * self.z
        if r2 > 1.0 + SPHERE_TOL:
            raise ValueError(f"Bloch vector outside the unit sphere: |r|^2 = {r2!r}")
        return self


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the monitored qubit.

    Parameters
    ----------
    tau_m : float
        Measurement collapse time (us).
    dt : float
        Simulation time step (us).  Must resolve the collapse time:
        steps above ``tau_m/10`` trigger a warning, above ``tau_m/2``
        are rejected (the split-step composition error grows as dt^2).
    T1, T2 : float
        Energy relaxation and dephasing times (us); ``math.inf`` for an
        ideal qubit.
    eta : float
        Quantum efficiency of the detection chain, in (0, 1].
    """

    tau_m: float = 0.2
    dt: float = 0.0005
    T1: float = math.inf
    T2: float = math.inf
    eta: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau_m > 0.0:
            raise ValueError(f"tau_m must be positive, got {self.tau_m}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.T1 > 0.0 or not self.T2 > 0.0:
            raise ValueError("T1 and T2 must be positive (use math.inf for ideal)")
        if self.dt > self.tau_m / 2.0:
            raise ValueError(
                f"dt = {self.dt} exceeds tau_m/2 = {self.tau_m / 2.0}; "
                "the split-step update is invalid at this resolution"
            )
        if self.dt > self.tau_m / 10.0:
            warnings.warn(
                f"dt = {self.dt} exceeds tau_m/10 = {self.tau_m / 10.0}; "
                "composition error may be visible above statistical noise",
                stacklevel=2,
            )

    @property
    def gamma_ineff(self) -> float:
        """Extra dephasing rate from lost measurement information, (1-eta)/(2 tau_m eta)."""
        return (1.0 - self.eta) / (2.0 * self.tau_m * self.eta)

    @property
    def gamma_total(self) -> float:
        """Total ensemble z-dephasing rate without feedback: 1/2T1 + 1/T2 + 1/(2 tau_m eta)."""
        return 0.5 / self.T1 + 1.0 / self.T2 + 0.5 / (self.tau_m * self.eta)

    @property
    def gamma_prime(self) -> float:
        """Dephasing rate excluding T1: 1/T2 + 1/(2 tau_m eta)."""
        return 1.0 / self.T2 + 0.5 / (self.tau_m * self.eta)

    @property
    def readout_sigma(self) -> float:
        """Standard deviation of the one-step readout, sqrt(tau_m/dt)."""
        return math.sqrt(self.tau_m / self.dt)

    @property
    def transverse_decay(self) -> float:
        """Per-step factor applied to x and y: exp(-dt/2T1 - dt/T2 - dt*gamma_ineff)."""
        return math.exp(
            -self.dt * (0.5 / self.T1 + 1.0 / self.T2 + self.gamma_ineff)
        )

    @property
    def t1_decay(self) -> float:
        """Per-step factor exp(-dt/T1) applied to the population balance."""
        return math.exp(-self.dt / self.T1)


@dataclass(frozen=True)
class ReadoutSample:
    """Coarse-grained readout averaged over one time step.

    ``r_bar`` has mean z and standard deviation sqrt(tau_m/dt); values
    beyond ~6 sigma indicate a broken sampler rather than physics.
    """

    r_bar: float


def _as_readout(r) -> float:
    return r.r_bar if isinstance(r, ReadoutSample) else float(r)


# ---------------------------------------------------------------------------
# Array kernels.  These encode the actual update formulas once; the scalar
# operations below and the trajectory engine both call them.

def backaction_update(x, y, z, s):
    """Measurement backaction for log-strength s = r_bar*dt/tau_m.

    Returns the updated (x, y, z).  The normalization
    p = cosh(s) + z sinh(s) is strictly positive whenever |z| <= 1.
    """
    ch = np.cosh(s)
    sh = np.sinh(s)
    p = ch + z * sh
    return x / p, y / p, (z * ch + sh) / p


def rotation_update(y, z, angle):
    """Rotate (y, z) by ``angle`` (rad); +z turns toward +y. Norm-preserving."""
    c = np.cos(angle)
    s = np.sin(angle)
    return y * c + z * s, z * c - y * s


def dissipation_update(x, y, z, transverse_decay, t1_decay):
    """Relaxation/dephasing step with precomputed per-step factors."""
    return (
        x * transverse_decay,
        y * transverse_decay,
        z * t1_decay - (1.0 - t1_decay),
    )


# ---------------------------------------------------------------------------
# Scalar operations on BlochState.

def sample_readout(
    state: BlochState, params: ModelParams, rng: np.random.Generator
) -> ReadoutSample:
    """Draw the readout for one step: Normal(mean=z, var=tau_m/dt)."""
    return ReadoutSample(state.z + params.readout_sigma * rng.standard_normal())


def measurement_backaction(
    state: BlochState, r, params: ModelParams
) -> BlochState:
    """Conditioned state update for readout ``r`` (partial collapse toward a pole).

    The poles (0, 0, +-1) are fixed points for every readout value, and
    the update never increases the Bloch radius beyond 1.
    """
    state.require_physical()
    s = _as_readout(r) * params.dt / params.tau_m
    p = math.cosh(s) + state.z * math.sinh(s)
    if p <= 0.0:
        raise ValueError(
            f"non-positive readout likelihood p = {p!r}; state is corrupted (|z| > 1?)"
        )
    x, y, z = backaction_update(state.x, state.y, state.z, s)
    return BlochState(float(x), float(y), float(z))


def feedback_rotation(
    state: BlochState, delta: float, params: ModelParams
) -> BlochState:
    """Coherent yz-plane rotation by dt*delta; x and the norm are unchanged."""
    y, z = rotation_update(state.y, state.z, params.dt * delta)
    return BlochState(state.x, float(y), float(z))


def dissipation_step(state: BlochState, params: ModelParams) -> BlochState:
    """One step of T1 relaxation, T2 dephasing, and inefficiency dephasing.

    x and y shrink by a common transverse factor; z relaxes toward the
    ground state at -1.  With T1 = T2 = inf and eta = 1 this is the
    identity.
    """
    x, y, z = dissipation_update(
        state.x, state.y, state.z, params.transverse_decay, params.t1_decay
    )
    return BlochState(float(x), float(y), float(z))


def composite_step(
    state: BlochState,
    r,
    r_fed: float,
    law,
    params: ModelParams,
) -> BlochState:
    """Full update for one step: backaction, then feedback rotation, then dissipation.

    ``r`` is the readout sampled this step; ``r_fed`` is the filtered and
    delayed readout the controller actually sees (0 while the delay
    buffer is still filling).  The rotation rate is
    ``law.delta0 + law.delta1 * r_fed``.

    The result is renormalized onto the sphere if floating-point drift
    pushes it infinitesimally outside.
    """
    out = measurement_backaction(state, r, params)
    out = feedback_rotation(out, law.delta0 + law.delta1 * r_fed, params)
    out = dissipation_step(out, params)
    r2 = out.x * out.x + out.y * out.y + out.z * out.z
    if r2 > 1.0:
        scale = 1.0 / math.sqrt(r2)
        out = BlochState(out.x * scale, out.y * scale, out.z * scale)
    return out
