"""Non-intrusive surrogate: leaky echo-state network with a ridge readout.

The reservoir is fixed after seeded random initialization; training touches
only the linear readout.  State update:

    r <- (1 - gamma) r + gamma tanh(beta (eps W_in u + W r + eta b))

The network is strictly input-driven: predictions depend on the inlet signal
and the trained weights only, never on test-phase field data.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    HorizonTooShort,
    NonPositiveDimension,
    PowerIterationNoConvergence,
    SingularNormalEquations,
)


@dataclass(frozen=True)
class EsnConfig:
    n_reservoir: int = 800
    density: float = 0.02
    spectral_radius_target: float = 0.95
    input_scaling: float = 0.5    # eps
    bias_scaling: float = 1.0     # eta
    pre_activation_gain: float = 1.0  # beta
    leak_rate: float = 0.2        # gamma
    ridge_lambda: float = 3e-5
    seed: int = 0
    washout_duration: float = 3.0  # seconds

    def __post_init__(self):
        if not (0.0 < self.leak_rate <= 1.0):
            raise NonPositiveDimension("leak_rate must be in (0, 1]")
        if not (0.0 < self.density <= 1.0):
            raise NonPositiveDimension("density must be in (0, 1]")
        if self.spectral_radius_target <= 0.0:
            raise NonPositiveDimension("spectral_radius_target must be > 0")
        if self.ridge_lambda < 0.0:
            raise NonPositiveDimension("ridge_lambda must be >= 0")


@dataclass
class Reservoir:
    W_in: np.ndarray          # (N_r, d_in)
    W: sp.csr_matrix          # (N_r, N_r) sparse recurrent weights
    bias: np.ndarray          # (N_r,)
    r: np.ndarray             # current state
    spectral_radius: float    # power-iteration estimate of rho(beta W)
    zero_recurrent: bool = False  # degenerate density, scaling skipped


@dataclass
class Readout:
    W_out: np.ndarray         # (d_out, N_r)
    b_out: np.ndarray         # (d_out,)
    training_error: float = np.nan


def estimate_spectral_radius(W, seed=1234, iters=200, tol=1e-6):
    """Power-iteration estimate of the largest |eigenvalue|.

    The per-step norm ratio oscillates when the dominant eigenvalues are a
    complex pair, so the estimate is the accumulated geometric growth rate
    (rho^k up to a bounded factor, hence k-th roots converge).  Early exit
    when the per-step ratio itself settles to `tol`; otherwise the
    full-horizon estimate is returned.
    """
    n = W.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    rho = 0.0
    log_growth = 0.0
    for k in range(1, iters + 1):
        y = W @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        log_growth += np.log(ny)
        x = y / ny
        if abs(ny - rho) <= tol * max(ny, 1e-300):
            return ny
        rho = ny
    est = float(np.exp(log_growth / iters))
    if not np.isfinite(est) or est <= 0.0:
        raise PowerIterationNoConvergence(
            f"spectral radius estimate degenerate after {iters} iterations")
    return est


def init_reservoir(config: EsnConfig, d_in=1, d_out=6) -> Reservoir:
    """Seeded random reservoir, recurrent matrix rescaled to the target
    spectral radius (including the pre-activation gain)."""
    rng = np.random.default_rng(config.seed)
    n = config.n_reservoir
    W_in = rng.uniform(-1.0, 1.0, size=(n, d_in))
    bias = rng.uniform(-1.0, 1.0, size=n)
    mask = rng.random((n, n)) < config.density
    W = np.where(mask, rng.uniform(-1.0, 1.0, size=(n, n)), 0.0)
    zero = not mask.any()
    if zero:
        rho = 0.0
    else:
        rho = estimate_spectral_radius(sp.csr_matrix(W))
        if rho == 0.0:
            zero = True
    if not zero:
        W *= config.spectral_radius_target / (config.pre_activation_gain * rho)
        rho = estimate_spectral_radius(sp.csr_matrix(config.pre_activation_gain * W))
    return Reservoir(W_in=W_in, W=sp.csr_matrix(W), bias=bias,
                     r=np.zeros(n), spectral_radius=rho, zero_recurrent=zero)


def advance(reservoir: Reservoir, u_in_t, config: EsnConfig):
    """One leaky-tanh update; returns and stores the new state."""
    g, b_ = config.leak_rate, config.pre_activation_gain
    u = np.atleast_1d(np.asarray(u_in_t, dtype=float))
    pre = b_ * (config.input_scaling * (reservoir.W_in @ u)
                + reservoir.W @ reservoir.r
                + config.bias_scaling * reservoir.bias)
    reservoir.r = (1.0 - g) * reservoir.r + g * np.tanh(pre)
    return reservoir.r


def collect_states(reservoir: Reservoir, inputs, config: EsnConfig,
                   times=None):
    """Drive the reservoir from rest through the input sequence.

    Returns (R, washout_rows): post-update states stacked row-wise and a
    boolean mask flagging rows inside the washout window.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float).T).T
    if inputs.shape[0] == 0:
        raise NonPositiveDimension("input sequence is empty")
    reservoir.r = np.zeros_like(reservoir.r)
    R = np.empty((inputs.shape[0], reservoir.r.size))
    for k in range(inputs.shape[0]):
        R[k] = advance(reservoir, inputs[k], config)
    if times is None:
        washout = np.zeros(inputs.shape[0], dtype=bool)
    else:
        washout = np.asarray(times) < times[0] + config.washout_duration
    return R, washout


def train_readout(R, Y, ridge_lambda, washout_rows=None) -> Readout:
    """Ridge regression via the normal equations with mean centering."""
    R = np.asarray(R, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if washout_rows is not None:
        keep = ~np.asarray(washout_rows, dtype=bool)
        R, Y = R[keep], Y[keep]
    if R.shape[0] != Y.shape[0]:
        raise NonPositiveDimension("state and target row counts differ")
    r_mean = R.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Rc = R - r_mean
    Yc = Y - y_mean
    A = Rc.T @ Rc + ridge_lambda * np.eye(R.shape[1])
    try:
        cf = scipy.linalg.cho_factor(A)
        Wt = scipy.linalg.cho_solve(cf, Rc.T @ Yc)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from exc
    except scipy.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from exc
    W_out = Wt.T
    b_out = y_mean - W_out @ r_mean
    pred = Rc @ Wt + y_mean
    denom = np.linalg.norm(Y)
    err = np.linalg.norm(pred - Y) / denom if denom > 0.0 else 0.0
    return Readout(W_out=W_out, b_out=b_out, training_error=float(err))


def predict(reservoir: Reservoir, readout: Readout, test_inputs,
            config: EsnConfig, times=None):
    """Drive the reset reservoir through the test signal and emit the linear
    readout per step; the first washout_duration seconds only initialize the
    state.  Returns (outputs, washout_rows, wall_seconds)."""
    test_inputs = np.asarray(test_inputs, dtype=float)
    if times is not None:
        horizon = times[-1] - times[0]
        if horizon < config.washout_duration:
            raise HorizonTooShort(
                f"test horizon {horizon} s is shorter than the "
                f"{config.washout_duration} s washout")
    wall0 = time.perf_counter()
    R, washout = collect_states(reservoir, test_inputs, config, times=times)
    outputs = R @ readout.W_out.T + readout.b_out
    wall = time.perf_counter() - wall0
    return outputs, washout, wall


def train_esn(config: EsnConfig, train_inputs, train_targets, times):
    """Full offline phase: init reservoir, collect states, fit readout.

    Returns (reservoir, readout, wall_seconds).
    """
    targets = np.asarray(train_targets, dtype=float)
    wall0 = time.perf_counter()
    reservoir = init_reservoir(config, d_in=1, d_out=targets.shape[1])
    R, washout = collect_states(reservoir, train_inputs, config, times=times)
    readout = train_readout(R, targets, config.ridge_lambda, washout_rows=washout)
    wall = time.perf_counter() - wall0
    return reservoir, readout, wall
