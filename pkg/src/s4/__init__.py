from .hippo import hippo_init
from .kernel import SsmLayerParams, S4Kernel, discretize, materialize_kernel, kernel_rows
from .conv import fft_conv, direct_conv, next_power_of_two
from .layer import s4_forward, recurrent_scan, SsmState

__all__ = [
    "hippo_init",
    "SsmLayerParams",
    "S4Kernel",
    "discretize",
    "materialize_kernel",
    "kernel_rows",
    "fft_conv",
    "direct_conv",
    "next_power_of_two",
    "s4_forward",
    "recurrent_scan",
    "SsmState",
]
