"""Deep Galerkin trainer for the per-regime value functions.

One small feed-forward network per regime (a, p) approximates v(s, i).
Training minimizes, over random points,

    mean (-delta*v + L^{a,p} v + c_I i + f)^2  on the triangle D
  + mean (v(0, y) - c_I y / (delta + gamma))^2 on the s = 0 edge
  + penalty * mean max(v(a,p) - v(a,1-p) - g, 0)^2   (optional)

summed over the four regimes. Input derivatives up to second order are
propagated analytically layer by layer (no finite differences); the
parameter gradient of the loss comes from torch autograd.

Everything runs in float64 on the CPU.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from console_utils import print_info, progress_bar
from model import (
    ALL_REGIMES,
    ConfigError,
    Derivs,
    ModelParams,
    Regime,
    State,
    SwitchCosts,
    TrainingDivergedError,
    boundary_value,
    generator_terms,
    running_cost_arrays,
)
from switching_constants import (
    DGM_ACTIVATION,
    DGM_BOUNDARY_BATCH,
    DGM_DECAY_STEPS,
    DGM_INTERIOR_BATCH,
    DGM_LEARNING_RATE,
    DGM_STEPS,
    DGM_STOP_LOSS,
    DGM_STOP_WINDOW,
    DGM_WIDTHS,
)

__all__ = [
    "ACTIVATIONS",
    "Network",
    "DgmConfig",
    "Batch",
    "LossTerms",
    "LossRecord",
    "TrainingResult",
    "init_networks",
    "eval_with_derivs",
    "pde_residual",
    "pde_residual_batch",
    "sample_batch",
    "loss_terms",
    "loss",
    "flat_parameters",
    "set_flat_parameters",
    "train",
]

DTYPE = torch.float64


# =============================================================================
# Activations: value, first and second derivative
# =============================================================================

def _tanh(z):
    t = torch.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _sigmoid(z):
    y = torch.sigmoid(z)
    d1 = y * (1.0 - y)
    return y, d1, d1 * (1.0 - 2.0 * y)


ACTIVATIONS = {"tanh": _tanh, "sigmoid": _sigmoid}


# =============================================================================
# Network
# =============================================================================

class Network(nn.Module):
    """Fully connected net (s, i) -> v for one regime.

    Hidden layers use a C^2 activation; the output layer is linear.
    Weights are uniform in +-1/sqrt(fan_in), biases start at zero.
    """

    def __init__(self, widths: Sequence[int] = DGM_WIDTHS, activation: str = DGM_ACTIVATION,
                 regime: Regime = Regime(0, 0), generator: Optional[torch.Generator] = None):
        super().__init__()
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or widths[0] != 2 or widths[-1] != 1 or min(widths) < 1:
            raise ConfigError(f"network widths must run from 2 inputs to 1 output, got {widths}",
                              key="widths")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}", key="activation")

        self.widths = widths
        self.activation = activation
        self.regime = regime
        self.layers = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=DTYPE) for n_in, n_out in zip(widths[:-1], widths[1:])
        )
        self.reset_parameters(generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = ACTIVATIONS[self.activation]
        y = x
        for layer in self.layers[:-1]:
            y = act(layer(y))[0]
        return self.layers[-1](y).squeeze(-1)


def init_networks(config: "DgmConfig") -> dict:
    """Four freshly initialized networks, seeded from ``config.seed``."""
    generator = torch.Generator().manual_seed(int(config.seed))
    return {
        regime: Network(config.widths, config.activation, regime, generator)
        for regime in ALL_REGIMES
    }


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE).reshape(-1)
    return torch.as_tensor(np.asarray(x, dtype=float).reshape(-1), dtype=DTYPE)


def eval_with_derivs(net: Network, s, i) -> Derivs:
    """Value and exact first/second input partials at points (s, i).

    Each hidden layer maps z = W y + b with
        y_s  = phi'(z) z_s
        y_ss = phi''(z) z_s^2 + phi'(z) z_ss
        y_si = phi''(z) z_s z_i + phi'(z) z_si
    and the linear output layer applies W to every carried quantity.

    Returns:
        Derivs of 1-D tensors, one entry per point
    """
    s = _as_tensor(s)
    i = _as_tensor(i)
    batch = s.shape[0]
    act = ACTIVATIONS[net.activation]

    y = torch.stack([s, i], dim=1)
    y_s = torch.tensor([1.0, 0.0], dtype=DTYPE).expand(batch, 2)
    y_i = torch.tensor([0.0, 1.0], dtype=DTYPE).expand(batch, 2)
    y_ss = torch.zeros(batch, 2, dtype=DTYPE)
    y_ii = torch.zeros(batch, 2, dtype=DTYPE)
    y_si = torch.zeros(batch, 2, dtype=DTYPE)

    for layer in net.layers[:-1]:
        w_t = layer.weight.t()
        z = layer(y)
        z_s, z_i = y_s @ w_t, y_i @ w_t
        z_ss, z_ii, z_si = y_ss @ w_t, y_ii @ w_t, y_si @ w_t
        y, d1, d2 = act(z)
        y_s, y_i = d1 * z_s, d1 * z_i
        y_ss = d2 * z_s * z_s + d1 * z_ss
        y_ii = d2 * z_i * z_i + d1 * z_ii
        y_si = d2 * z_s * z_i + d1 * z_si

    out = net.layers[-1]
    w_t = out.weight.t()
    return Derivs(
        v=out(y)[:, 0],
        v_s=(y_s @ w_t)[:, 0],
        v_i=(y_i @ w_t)[:, 0],
        v_ss=(y_ss @ w_t)[:, 0],
        v_ii=(y_ii @ w_t)[:, 0],
        v_si=(y_si @ w_t)[:, 0],
    )


def pde_residual_batch(net: Network, s, i, regime: Regime, params: ModelParams) -> torch.Tensor:
    """-delta*v + L v + c_I i + f(s, p) at a batch of points."""
    s = _as_tensor(s)
    i = _as_tensor(i)
    d = eval_with_derivs(net, s, i)
    generator = generator_terms(d.v_s, d.v_i, d.v_ss, d.v_ii, d.v_si,
                                s, i, regime.a, regime.p, params)
    return -params.delta * d.v + generator + running_cost_arrays(s, i, regime.p, params)


def pde_residual(net: Network, point: State, regime: Regime, params: ModelParams) -> float:
    with torch.no_grad():
        return float(pde_residual_batch(net, point.s, point.i, regime, params)[0])


# =============================================================================
# Training configuration and sampling
# =============================================================================

@dataclass(frozen=True)
class DgmConfig:
    """Trainer settings.

    ``decay_steps`` = n0 of the schedule alpha_n = alpha0 / (1 + n/n0);
    None keeps the step size constant. ``resample=False`` reuses the first
    batch for every step.
    """

    widths: tuple = DGM_WIDTHS
    activation: str = DGM_ACTIVATION
    interior_batch: int = DGM_INTERIOR_BATCH
    boundary_batch: int = DGM_BOUNDARY_BATCH
    learning_rate: float = DGM_LEARNING_RATE
    decay_steps: Optional[float] = DGM_DECAY_STEPS
    steps: int = DGM_STEPS
    penalty_weight: float = 0.0
    seed: int = 0
    optimizer: str = "sgd"
    stop_window: int = DGM_STOP_WINDOW
    stop_loss: float = DGM_STOP_LOSS
    resample: bool = True
    verbose: bool = False

    def __post_init__(self):
        if self.interior_batch < 1 or self.boundary_batch < 1:
            raise ConfigError("batch sizes must be >= 1", key="batch")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0", key="learning_rate")
        if self.decay_steps is not None and not self.decay_steps > 0:
            raise ConfigError("decay_steps must be > 0", key="decay_steps")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1", key="steps")
        if self.penalty_weight < 0:
            raise ConfigError("penalty weight must be >= 0", key="penalty_weight")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", key="optimizer")
        if self.stop_window < 1:
            raise ConfigError("stop_window must be >= 1", key="stop_window")

    def step_size(self, n: int) -> float:
        if self.decay_steps is None:
            return self.learning_rate
        return self.learning_rate / (1.0 + n / self.decay_steps)


class Batch(NamedTuple):
    interior_s: np.ndarray
    interior_i: np.ndarray
    boundary_i: np.ndarray


def sample_batch(config: DgmConfig, rng: np.random.Generator) -> Batch:
    """Uniform points on the triangle D and on the s = 0 edge.

    Triangle points come from folding the unit square along s + i = 1.
    """
    u = rng.random(config.interior_batch)
    w = rng.random(config.interior_batch)
    fold = u + w > 1.0
    s = np.where(fold, 1.0 - u, u)
    i = np.where(fold, 1.0 - w, w)
    return Batch(interior_s=s, interior_i=i, boundary_i=rng.random(config.boundary_batch))


# =============================================================================
# Loss
# =============================================================================

class LossTerms(NamedTuple):
    total: object
    pde: object
    boundary: object
    penalty: object


class LossRecord(NamedTuple):
    step: int
    loss: float
    pde_term: float
    boundary_term: float
    penalty_term: float


def _penalty_cost(costs: SwitchCosts, values: dict, regime: Regime):
    spec = costs.spec_for(regime.p)
    if spec.kind == "constant":
        return spec.value
    return spec.value * values[spec.reference(regime)]


def loss_terms(nets: dict, batch: Batch, params: ModelParams, costs: Optional[SwitchCosts],
               penalty_weight: float = 0.0) -> LossTerms:
    """Differentiable loss pieces summed over the four regimes."""
    s = _as_tensor(batch.interior_s)
    i = _as_tensor(batch.interior_i)
    edge_i = _as_tensor(batch.boundary_i)
    edge_points = torch.stack([torch.zeros_like(edge_i), edge_i], dim=1)
    edge_target = boundary_value(edge_i, params)

    pde_term = torch.zeros((), dtype=DTYPE)
    boundary_term = torch.zeros((), dtype=DTYPE)
    penalty_term = torch.zeros((), dtype=DTYPE)
    values = {}

    for regime in ALL_REGIMES:
        net = nets[regime]
        d = eval_with_derivs(net, s, i)
        generator = generator_terms(d.v_s, d.v_i, d.v_ss, d.v_ii, d.v_si,
                                    s, i, regime.a, regime.p, params)
        residual = -params.delta * d.v + generator + running_cost_arrays(s, i, regime.p, params)
        pde_term = pde_term + torch.mean(residual ** 2)
        boundary_term = boundary_term + torch.mean((net(edge_points) - edge_target) ** 2)
        values[regime] = d.v

    if penalty_weight > 0:
        if costs is None:
            raise ConfigError("the obstacle penalty needs switching costs")
        for regime in ALL_REGIMES:
            g = _penalty_cost(costs, values, regime)
            excess = torch.relu(values[regime] - values[regime.flip_p()] - g)
            penalty_term = penalty_term + torch.mean(excess ** 2)

    total = pde_term + boundary_term + penalty_weight * penalty_term
    return LossTerms(total=total, pde=pde_term, boundary=boundary_term, penalty=penalty_term)


def _all_parameters(nets: dict) -> list:
    return [p for regime in ALL_REGIMES for p in nets[regime].parameters()]


def flat_parameters(nets: dict) -> np.ndarray:
    """theta of all four nets, regimes in REGIME_ORDER, layers in order."""
    with torch.no_grad():
        return nn.utils.parameters_to_vector(_all_parameters(nets)).numpy().copy()


def set_flat_parameters(nets: dict, theta: np.ndarray):
    with torch.no_grad():
        nn.utils.vector_to_parameters(torch.as_tensor(theta, dtype=DTYPE),
                                      _all_parameters(nets))


def loss(nets: dict, batch: Batch, params: ModelParams, costs: Optional[SwitchCosts],
         penalty_weight: float = 0.0) -> tuple[LossRecord, np.ndarray]:
    """Scalar loss and its exact gradient with respect to the flat theta."""
    parameters = _all_parameters(nets)
    for p in parameters:
        p.grad = None
    terms = loss_terms(nets, batch, params, costs, penalty_weight)
    terms.total.backward()
    grad = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in parameters
    ]).numpy().copy()
    for p in parameters:
        p.grad = None
    return _record(0, terms), grad


def _record(step: int, terms: LossTerms) -> LossRecord:
    return LossRecord(
        step=step,
        loss=float(terms.total.detach()),
        pde_term=float(terms.pde.detach()),
        boundary_term=float(terms.boundary.detach()),
        penalty_term=float(terms.penalty.detach()),
    )


# =============================================================================
# Training loop
# =============================================================================

@dataclass
class TrainingResult:
    nets: dict
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.trace[-1].loss if self.trace else float("nan")


def train(config: DgmConfig, params: ModelParams, costs: Optional[SwitchCosts] = None,
          nets: Optional[dict] = None) -> TrainingResult:
    """Stochastic descent theta_{n+1} = theta_n - alpha_n grad G(theta_n, batch_n).

    Stops after ``config.steps`` or once the mean loss over the trailing
    ``stop_window`` steps drops below ``stop_loss``.

    Raises:
        TrainingDivergedError: The loss became NaN or infinite
    """
    rng = np.random.default_rng(config.seed)
    if nets is None:
        nets = init_networks(config)
    parameters = _all_parameters(nets)

    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(parameters, lr=config.learning_rate)
    else:
        optimizer = torch.optim.SGD(parameters, lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda n: config.step_size(n) / config.learning_rate
    )

    result = TrainingResult(nets=nets)
    window: deque = deque(maxlen=config.stop_window)
    batch = sample_batch(config, rng)

    with progress_bar(config.steps, "DGM", enabled=config.verbose) as bar:
        for step in range(config.steps):
            if config.resample and step > 0:
                batch = sample_batch(config, rng)

            optimizer.zero_grad()
            terms = loss_terms(nets, batch, params, costs, config.penalty_weight)
            record = _record(step, terms)
            result.trace.append(record)
            if not math.isfinite(record.loss):
                raise TrainingDivergedError(
                    f"loss became {record.loss} at step {step}", result.trace
                )

            terms.total.backward()
            optimizer.step()
            scheduler.step()
            bar.update(1)

            window.append(record.loss)
            if len(window) == config.stop_window and sum(window) / len(window) < config.stop_loss:
                result.converged = True
                break

    if config.verbose:
        print_info(f"DGM stopped after {len(result.trace)} steps, loss {result.final_loss:.3e}")
    return result
