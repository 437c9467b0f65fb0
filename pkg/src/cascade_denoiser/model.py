"""Parameter construction and the per-triplet forward pass."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .flow import refine_flow, register_flow
from .gate import ExitPolicy
from .predenoise import predenoise, register_predenoise
from .recon import register_recon, run_cascade
from .tensor import ParamSet, no_grad


def init_params(cfg: ModelConfig, seed=0):
    """Fresh ParamSet for the full model; deterministic in (cfg, seed)."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    register_predenoise(params, cfg, rng)
    register_flow(params, cfg, rng)
    register_recon(params, cfg, rng)
    return params


class DenoiserModel:
    """Bundles a ParamSet with its geometry and wires the three stages."""

    def __init__(self, cfg: ModelConfig, params: ParamSet | None = None, seed=0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def predenoise_frame(self, frame, record_grad=False):
        if record_grad:
            return predenoise(frame, self.params, self.cfg)
        with no_grad():
            return predenoise(frame, self.params, self.cfg)

    def forward_triplet(self, triplet, policy: ExitPolicy | None = None,
                        max_iters=None):
        """Flow iterates plus the gated reconstruction cascade.

        Returns (flows, outputs): one FlowField list per supporting frame
        and the IterationOutputs actually produced.
        """
        n = max_iters if max_iters is not None else self.cfg.max_iters
        if policy is None:
            policy = ExitPolicy(enabled=False, threshold=self.cfg.threshold, max_iters=n)
        flows = refine_flow(triplet, n, self.params, self.cfg)
        outputs = run_cascade(triplet, flows, n, self.params, policy, self.cfg)
        return flows, outputs
