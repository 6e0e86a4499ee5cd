"""Residual-shifting diffusion between a source image ``y0`` and target ``x0``.

The forward chain moves ``x0`` toward ``y0`` along ``e0 = y0 - x0``::

    q(x_t | x_{t-1}, y0) = N(x_{t-1} + alpha_t e0, kappa^2 alpha_t I)

with ``alpha_t = eta_t - eta_{t-1}`` and ``eta_0 = 0``. Summing the
independent per-step increments gives the closed-form marginal
``x_t = x0 + eta_t e0 + kappa sqrt(eta_t) eps``.
"""

import math
from dataclasses import dataclass

import torch

from ._validation import ShapeError, ValidationError, check_same_shape

ELBO_FLOOR = 1e-4


@dataclass(frozen=True)
class DiffusionSchedule:
    """Shift schedule ``eta_0 .. eta_T`` and noise scale ``kappa``."""

    eta: tuple
    kappa: float

    def __post_init__(self):
        eta = tuple(float(e) for e in self.eta)
        object.__setattr__(self, "eta", eta)
        if len(eta) < 2 or eta[0] != 0.0:
            raise ValidationError("eta must start at 0 and contain at least one step")
        if any(b <= a for a, b in zip(eta, eta[1:])):
            raise ValidationError("eta must be strictly increasing")
        if eta[-1] > 1.0:
            raise ValidationError("eta_T must not exceed 1")
        if not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise ValidationError("kappa must be finite and non-negative")

    @property
    def num_timesteps(self):
        return len(self.eta) - 1

    @property
    def alpha(self):
        """``(alpha_1, ..., alpha_T)``; index ``t - 1`` for step ``t``."""
        return tuple(b - a for a, b in zip(self.eta, self.eta[1:]))

    def satisfies_endpoints(self, eta1_max=0.1, etaT_min=0.99):
        return self.eta[1] <= eta1_max and self.eta[-1] >= etaT_min

    def to_dict(self):
        return {"eta": list(self.eta), "kappa": self.kappa}


def make_schedule(T=4, eta1=0.04, etaT=0.9999, kappa=2.0):
    """Geometric schedule ``eta_t = eta1 * (etaT / eta1) ** ((t-1)/(T-1))``.

    ``kappa = 0`` is accepted and disables noise entirely.
    """
    if int(T) != T or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    if not (0 < eta1 < etaT <= 1):
        raise ValidationError(f"need 0 < eta1 < etaT <= 1, got eta1={eta1}, etaT={etaT}")
    if kappa < 0:
        raise ValidationError(f"kappa must be non-negative, got {kappa}")
    T = int(T)
    if T == 1:
        steps = [etaT]
    else:
        ratio = etaT / eta1
        steps = [eta1 * ratio ** ((t - 1) / (T - 1)) for t in range(1, T + 1)]
        steps[-1] = etaT
    return DiffusionSchedule(eta=(0.0, *steps), kappa=float(kappa))


def _check_t(t, schedule):
    if int(t) != t or not 1 <= t <= schedule.num_timesteps:
        raise ValidationError(f"t must be an integer in 1..{schedule.num_timesteps}, got {t}")
    return int(t)


def _gather(values, t, like):
    """Per-sample schedule coefficients broadcast against ``like``."""
    v = torch.as_tensor(values, dtype=like.dtype, device=like.device)[t]
    return v.reshape(-1, *([1] * (like.dim() - 1)))


def _noise(like, generator):
    return torch.randn(like.shape, generator=generator, dtype=like.dtype, device=like.device)


def forward_sample(x0, y0, t, schedule, generator=None, noise=None):
    """Draw ``x_t ~ q(x_t | x0, y0)``.

    ``t`` may be an int or a ``(B,)`` integer tensor for per-sample steps.
    """
    check_same_shape(x0, y0, ("x0", "y0"))
    if isinstance(t, torch.Tensor) and t.dim() > 0:
        if bool((t < 1).any()) or bool((t > schedule.num_timesteps).any()):
            raise ValidationError(f"t must lie in 1..{schedule.num_timesteps}")
        eta_t = _gather(schedule.eta, t, x0)
    else:
        eta_t = schedule.eta[_check_t(t, schedule)]
    if noise is None:
        noise = _noise(x0, generator)
    std = schedule.kappa * (eta_t.sqrt() if isinstance(eta_t, torch.Tensor) else math.sqrt(eta_t))
    return x0 + eta_t * (y0 - x0) + std * noise


def forward_step(x_prev, x0, y0, t, schedule, generator=None):
    """One transition ``x_{t-1} -> x_t`` of the forward chain."""
    t = _check_t(t, schedule)
    alpha = schedule.alpha[t - 1]
    return (
        x_prev
        + alpha * (y0 - x0)
        + schedule.kappa * math.sqrt(alpha) * _noise(x_prev, generator)
    )


def posterior_mean(x_t, f_pred, t, schedule):
    t = _check_t(t, schedule)
    eta_t, eta_prev = schedule.eta[t], schedule.eta[t - 1]
    return (eta_prev / eta_t) * x_t + (schedule.alpha[t - 1] / eta_t) * f_pred


def posterior_variance(t, schedule):
    t = _check_t(t, schedule)
    eta_t, eta_prev = schedule.eta[t], schedule.eta[t - 1]
    return schedule.kappa**2 * (eta_prev / eta_t) * schedule.alpha[t - 1]


def reverse_step(x_t, f_pred, y0, t, schedule, generator=None):
    """Sample ``x_{t-1}`` given the network's ``x0`` prediction ``f_pred``.

    At ``t = 1`` the posterior collapses onto ``f_pred``.
    """
    check_same_shape(x_t, f_pred, ("x_t", "f_pred"))
    check_same_shape(x_t, y0, ("x_t", "y0"))
    t = _check_t(t, schedule)
    if schedule.eta[t - 1] == 0.0:
        return f_pred.clone()
    mean = posterior_mean(x_t, f_pred, t, schedule)
    var = posterior_variance(t, schedule)
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * _noise(x_t, generator)


def loss_weight(t, schedule, mode="unit"):
    """Per-step weight on ``||f(x_t, y0, t) - x0||^2``.

    ``"elbo"`` is ``alpha_t / (2 kappa^2 eta_t eta_{t-1})`` with
    ``eta_{t-1}`` floored at 1e-4, since the coefficient is singular at t=1.
    """
    t = _check_t(t, schedule)
    if mode == "unit":
        return 1.0
    if mode != "elbo":
        raise ValidationError(f"unknown loss weight mode {mode!r}")
    if schedule.kappa == 0:
        raise ValidationError("elbo weights are undefined for kappa = 0")
    eta_prev = max(schedule.eta[t - 1], ELBO_FLOOR)
    return schedule.alpha[t - 1] / (2 * schedule.kappa**2 * schedule.eta[t] * eta_prev)


def prior_sample(y0, schedule, generator=None):
    """Initial state ``x_T = y0 + kappa sqrt(eta_T) eps``."""
    std = schedule.kappa * math.sqrt(schedule.eta[-1])
    return y0 + std * _noise(y0, generator)


@torch.no_grad()
def translate(y0, model, context, schedule, generator=None, clip=(0.0, 1.0)):
    """Run the reverse chain from ``x_T`` to an ``x0`` estimate.

    ``model(x_t, y0, t, context)`` returns an ``x0`` prediction shaped like
    ``x_t``; ``t`` is passed as a ``(B,)`` long tensor.
    """
    x = prior_sample(y0, schedule, generator)
    batch = y0.shape[0]
    for t in range(schedule.num_timesteps, 0, -1):
        steps = torch.full((batch,), t, dtype=torch.long, device=y0.device)
        f_pred = model(x, y0, steps, context)
        if f_pred.shape != x.shape:
            raise ShapeError(f"model output {tuple(f_pred.shape)} != state {tuple(x.shape)}")
        x = reverse_step(x, f_pred, y0, t, schedule, generator)
    if clip is not None:
        x = x.clamp(*clip)
    return x
