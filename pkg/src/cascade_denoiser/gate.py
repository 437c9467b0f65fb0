"""Uncertainty-weighted loss and the early-exit controller.

The per-iteration loss follows the heteroscedastic form
mean_i( ||s_i - g_i||_2 / (2 sigma_i^2) + 0.5 ln sigma_i^2 ) with
sigma^2 = exp(u); its stationary point puts sigma^2 at the per-pixel
residual norm, which is what makes the mean uncertainty a usable proxy
for the restoration error. A "laplace" variant (|r|/sigma + ln sigma)
is available for ablation. The exit policy stops iterating once the
patch-mean sigma^2 drops below a threshold, capped at max_iters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor, pointwise, sqrt, tmean, tsum

LOSS_FORMS = ("printed", "laplace")


@dataclass
class ExitPolicy:
    """Early-exit control: exit when mean sigma^2 crosses the threshold.

    ``exit_on_low`` chooses the comparison direction; the default exits
    on LOW uncertainty so that easy inputs stop early. threshold 0 with
    the default polarity therefore never exits before max_iters.
    """
    enabled: bool = True
    threshold: float = 0.002
    max_iters: int = 12
    exit_on_low: bool = True

    def __post_init__(self):
        if self.threshold < 0:
            raise ParameterError(f"threshold must be >= 0, got {self.threshold}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class GateDecision:
    mean_uncertainty: float  # mean over pixels of sigma^2
    exit: bool
    iteration: int


def eu_loss(s, g, log_var, form="printed"):
    """Error-uncertainty loss between a prediction and its clean target.

    s, g: [C, p, p]; log_var: [1, p, p] holding ln sigma^2. The residual
    enters as its per-pixel L2 norm across channels. Returns a scalar
    Tensor, differentiable in s and log_var.
    """
    if s.shape != g.shape:
        raise DimensionError(f"prediction {s.shape} vs target {g.shape}")
    if log_var.shape != (1,) + tuple(s.shape[1:]):
        raise DimensionError(f"log_var {log_var.shape} does not match patch {s.shape}")
    if form not in LOSS_FORMS:
        raise ParameterError(f"unknown loss form {form!r}, expected one of {LOSS_FORMS}")
    if not np.all(np.isfinite(log_var.data)):
        raise DimensionError("log_var contains non-finite values")
    diff = s - g
    r = sqrt(tsum(diff * diff, axis=0, keepdims=True))  # [1, p, p]
    if form == "printed":
        per_pixel = r * pointwise(-log_var, "exp") * 0.5 + log_var * 0.5
    else:
        per_pixel = r * pointwise(log_var * -0.5, "exp") + log_var * 0.5
    return tmean(per_pixel)


def total_loss(per_iter_losses, gamma, max_iters=None):
    """Exponentially weighted sum over iterations: sum_k gamma^(N-k) L_k.

    N defaults to the number of losses; pass the configured iteration cap
    when early exit truncated the list.
    """
    if not per_iter_losses:
        raise ParameterError("per-iteration loss list is empty")
    if not 0.0 < gamma <= 1.0:
        raise ParameterError(f"gamma must be in (0, 1], got {gamma}")
    n = max_iters if max_iters is not None else len(per_iter_losses)
    if len(per_iter_losses) > n:
        raise ParameterError(f"{len(per_iter_losses)} losses exceed max_iters {n}")
    total = None
    for k, loss in enumerate(per_iter_losses, start=1):
        if not isinstance(loss, Tensor):
            loss = Tensor(np.asarray(float(loss)))
        term = loss * float(gamma ** (n - k))
        total = term if total is None else total + term
    return total


def decide_exit(u, policy: ExitPolicy, iteration):
    """Gate decision from a log-variance map after ``iteration`` steps."""
    if iteration < 1:
        raise ParameterError(f"iteration must be >= 1, got {iteration}")
    data = u.data if isinstance(u, Tensor) else np.asarray(u)
    mean_sigma2 = float(np.exp(data).mean())
    crossed = mean_sigma2 < policy.threshold if policy.exit_on_low \
        else mean_sigma2 > policy.threshold
    exit_now = iteration >= policy.max_iters or (policy.enabled and crossed)
    return GateDecision(mean_uncertainty=mean_sigma2, exit=exit_now, iteration=iteration)


def compute_savings(decisions, max_iters):
    """Fraction of iterations saved: 1 - mean(exit iteration)/max_iters."""
    if not decisions:
        raise ParameterError("no gate decisions to aggregate")
    mean_iter = float(np.mean([d.iteration for d in decisions]))
    return 1.0 - mean_iter / max_iters
