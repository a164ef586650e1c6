"""One-shot architecture search over elastic decoder-only transformers.

Weight-shared supernet training, predictor-guided multi-objective search,
INT8 weight quantization, and exact deployment size modeling.
"""

__version__ = "0.1.0"

from .archspace import (
    ArchGenome,
    BytePolicy,
    ModelDims,
    SearchSpaceSpec,
    SizeBreakdown,
    cardinality,
    llama2_7b_space,
    model_bytes,
    param_count,
    parse_genome,
    phenotype,
    sample_random,
    toy_space,
)

__all__ = [
    "ArchGenome",
    "BytePolicy",
    "ModelDims",
    "SearchSpaceSpec",
    "SizeBreakdown",
    "cardinality",
    "llama2_7b_space",
    "model_bytes",
    "param_count",
    "parse_genome",
    "phenotype",
    "sample_random",
    "toy_space",
    "__version__",
]
