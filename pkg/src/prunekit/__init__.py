"""Filter pruning with soft, hard and gradually-hard schedules."""
from .arch import ArchSpec, FlopsReport, LayerSpec, build_arch, count_flops, liveness_propagate
from .compactor import compact, verify_equivalence
from .config import RunConfig, parse_config
from .network import Network
from .pruning import (FilterMask, FilterState, Mode, PruneState, ScheduleConfig, alpha_schedule,
                      apply_grad_mask, apply_soft_mask, importance_l2, lambda_schedule,
                      rate_schedule, select_filters)
from .tensor import SgdConfig, Tensor
from .trainer import run_ghfp

__version__ = "0.1.0"
