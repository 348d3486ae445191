"""One-shot low-rank compression of CNNs: VBMF rank selection, Tucker-2
kernel decomposition, layer substitution and cost accounting."""

from .graph import LayerRanks, LayerSpec, NetworkSpec, SpecError, substitute_spec
from .linalg import SvdResult, svd, sym_eig, truncated_svd
from .network import (Network, compare, conv_forward, decomposed_forward, init_network,
                      network_forward, substitute_layer)
from .report import CompressionReport, analyze, render_report
from .tensor import fold, mode_product, unfold
from .tucker import DecompositionQuality, TuckerFactors, hooi, hosvd, reconstruct, tucker1_kernel, tucker2_kernel
from .vbmf import VbmfResult, vbmf_estimate, vbmf_estimate_with_sigma

__version__ = "0.1.0"
