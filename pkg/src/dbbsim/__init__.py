"""Density Bound Block sparse tensors and a sparse systolic array simulator."""

__version__ = "0.1.0"

from .arch import ArrayConfig, Mode, load_arch_config, parse_arch_config
from .dbb_format import (
    DbbBlock,
    DbbConfig,
    DbbTensor,
    block_tensor,
    compress_block,
    decompress_block,
    deserialize_tensor,
    load_tensor,
    save_tensor,
    serialize_tensor,
    storage_bytes_per_block,
    unblock_tensor,
)
from .energy_model import (
    DEFAULT_COEFFICIENTS,
    EnergyBreakdown,
    EnergyCoefficients,
    compare,
    estimate,
)
from .problem import GemmProblem
from .pruning import (
    DapArrayConfig,
    RankHistogram,
    dap_prune_block,
    nnz_for_coverage,
    prune_activation_tile,
    prune_weight_tensor,
)
from .report import SimReport
from .systolic_sim import buffer_account, plan_tiles, run_gemm, run_layer, run_network, sram_traffic, tile_cycles
from .workloads import LayerSpec, NetworkSpec, builtin, parse_network, serialize_network, synth_microbench
