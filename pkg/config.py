"""
Configuration management for the cgrapipe compiler
Values come from CGRAPIPE_* environment variables (or .env); CLI flags override them
"""
import os
from typing import Optional
from pydantic import BaseModel
from dotenv import load_dotenv

from cgrapipe.passes import PassParams
from cgrapipe.pnr import PnrParams

# Load environment variables
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseModel):
    """Compiler knobs"""

    # Placement settings
    alpha: float = 1.5
    gamma: float = 1.0
    seed: int = 0
    cooling_rate: float = 0.95

    # Routing settings
    route_iters: int = 40
    congestion_growth: float = 1.5

    # Pre-PnR pass settings
    chain_n: int = 4
    bcast_threshold: int = 8
    bcast_fanout: int = 4
    bcast_budget: int = 256

    # Post-PnR settings
    max_postpnr_iters: int = 64
    fifo_depth: int = 2
    schedule_length: int = 64

    log_level: str = "WARNING"

    @classmethod
    def from_env(cls) -> "Settings":
        """Create settings from environment variables"""
        settings = cls()

        settings.alpha = float(os.getenv("CGRAPIPE_ALPHA", settings.alpha))
        settings.gamma = float(os.getenv("CGRAPIPE_GAMMA", settings.gamma))
        settings.seed = int(os.getenv("CGRAPIPE_SEED", settings.seed))
        settings.cooling_rate = float(os.getenv("CGRAPIPE_COOLING_RATE", settings.cooling_rate))

        settings.route_iters = int(os.getenv("CGRAPIPE_ROUTE_ITERS", settings.route_iters))
        settings.congestion_growth = float(os.getenv("CGRAPIPE_CONGESTION_GROWTH", settings.congestion_growth))

        settings.chain_n = int(os.getenv("CGRAPIPE_CHAIN_N", settings.chain_n))
        settings.bcast_threshold = int(os.getenv("CGRAPIPE_BCAST_THRESHOLD", settings.bcast_threshold))
        settings.bcast_fanout = int(os.getenv("CGRAPIPE_BCAST_FANOUT", settings.bcast_fanout))
        settings.bcast_budget = int(os.getenv("CGRAPIPE_BCAST_BUDGET", settings.bcast_budget))

        settings.max_postpnr_iters = int(os.getenv("CGRAPIPE_MAX_POSTPNR_ITERS", settings.max_postpnr_iters))
        settings.fifo_depth = int(os.getenv("CGRAPIPE_FIFO_DEPTH", settings.fifo_depth))
        settings.schedule_length = int(os.getenv("CGRAPIPE_SCHEDULE_LENGTH", settings.schedule_length))

        settings.log_level = os.getenv("CGRAPIPE_LOG_LEVEL", settings.log_level).upper()

        return settings

    def validate_settings(self) -> tuple[bool, str]:
        """
        Validate knob ranges

        Returns:
            Tuple of (is_valid, error_message)
        """
        if self.alpha < 1.0:
            return False, f"alpha must be >= 1, got {self.alpha}"
        if self.gamma < 0.0:
            return False, f"gamma must be >= 0, got {self.gamma}"
        if not 0.0 < self.cooling_rate < 1.0:
            return False, f"cooling_rate must be in (0, 1), got {self.cooling_rate}"
        if self.route_iters < 1:
            return False, f"route_iters must be positive, got {self.route_iters}"
        if self.congestion_growth <= 1.0:
            return False, f"congestion_growth must be > 1, got {self.congestion_growth}"
        if self.chain_n < 1:
            return False, f"chain_n must be positive, got {self.chain_n}"
        if self.bcast_threshold < 2:
            return False, f"bcast_threshold must be >= 2, got {self.bcast_threshold}"
        if self.bcast_fanout < 2:
            return False, f"bcast_fanout must be >= 2, got {self.bcast_fanout}"
        if self.bcast_budget < 0:
            return False, f"bcast_budget must be >= 0, got {self.bcast_budget}"
        if self.max_postpnr_iters < 0:
            return False, f"max_postpnr_iters must be >= 0, got {self.max_postpnr_iters}"
        if self.fifo_depth < 2:
            return False, f"fifo_depth must be >= 2, got {self.fifo_depth}"
        if self.schedule_length < 1:
            return False, f"schedule_length must be positive, got {self.schedule_length}"
        if self.log_level not in LOG_LEVELS:
            return False, f"log_level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level}"
        return True, ""

    def pnr_params(self, alpha: Optional[float] = None) -> PnrParams:
        """Placement/routing parameters; `alpha` overrides the criticality exponent"""
        return PnrParams(
            alpha=self.alpha if alpha is None else alpha,
            gamma=self.gamma,
            seed=self.seed,
            cooling_rate=self.cooling_rate,
            route_iter_limit=self.route_iters,
            congestion_growth=self.congestion_growth,
        )

    def pass_params(self) -> PassParams:
        return PassParams(
            chain_n=self.chain_n,
            bcast_threshold=self.bcast_threshold,
            bcast_fanout=self.bcast_fanout,
            bcast_budget=self.bcast_budget,
            fifo_depth=self.fifo_depth,
        )

    def with_overrides(self, **overrides) -> "Settings":
        """Copy with every non-None override applied"""
        return self.model_copy(update={k: v for k, v in overrides.items() if v is not None})


# Global settings instance
settings = Settings.from_env()
