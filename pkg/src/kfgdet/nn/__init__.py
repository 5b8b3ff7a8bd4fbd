from .blocks import C2f, SPPF, Bottleneck, ConvBlock, DetectHeadV8, dfl_expectation
from .module import (
    Conv2dLayer,
    Module,
    ModuleList,
    ScaleLayer,
    manual_seed,
    param_count,
    reachable_parameters,
)
