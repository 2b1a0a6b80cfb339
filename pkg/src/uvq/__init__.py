"""Universal-codebook vector quantization of small neural networks.

One frozen codebook is sampled from a kernel density estimate over weight
sub-vectors pooled from several networks. Each network is then compressed by
learning soft assignments to nearby codewords and freezing them progressively
into hard indices.
"""
from .assignment import LayerAssignment, build_assignment, decompose, find_candidates, init_logits, ratios
from .codebook import (KdeModel, SubVectorPool, UniversalCodebook, fit_universal_codebook, kde_density,
                       kmeans_codebook, pool_subvectors, sample_codebook, uniform_quantize)
from .pnc import PncConfig, PncTrace, compress
from .storage import CompressedModel, account, decode_and_run, pack_assignments, unpack_assignments

__version__ = "0.1.0"
