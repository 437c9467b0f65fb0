"""Model geometry and channel widths, with toy-scale defaults."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError

CORR_LEVELS = 4  # pyramid depth is fixed by the correlation-volume contract


@dataclass
class ModelConfig:
    channels: int = 1            # image channels per frame
    patch_size: int = 32
    search_radius: int = 8
    feat_channels: int = 32      # flow feature encoder width (D)
    context_channels: int = 32   # context encoder width
    hidden_channels: int = 48    # GRU hidden state width
    recon_channels: int = 32     # restoration feature width (F)
    lookup_radius: int = 3
    offset_groups: int = 4
    pre_width: int = 8           # pre-denoiser U-Net base width
    pre_depth: int = 2
    max_iters: int = 12
    gamma: float = 0.8
    threshold: float = 0.002

    def __post_init__(self):
        # flow features live at 1/2 patch resolution and are pooled 3 more
        # times for the 4-level pyramid, so the patch must divide by 16
        if self.patch_size % 16 != 0:
            raise ParameterError(
                f"patch_size must be a multiple of 16, got {self.patch_size}")
        if self.recon_channels % self.offset_groups != 0:
            raise ParameterError(
                f"recon_channels ({self.recon_channels}) must divide evenly into "
                f"{self.offset_groups} offset groups")
        if self.channels < 1 or self.lookup_radius < 1 or self.max_iters < 1:
            raise ParameterError("channels, lookup_radius and max_iters must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")

    @property
    def flow_grid(self):
        """Spatial extent of the flow feature maps."""
        return self.patch_size // 2
