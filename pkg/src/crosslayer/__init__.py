"""Cross-layer video delivery over a simulated LTE cell."""

from .config import SimConfig, load_config, load_preset
from .sim import MetricsReport, estimate_psnr, run

__all__ = ["SimConfig", "MetricsReport", "load_config", "load_preset", "run", "estimate_psnr"]
__version__ = "0.1.0"
