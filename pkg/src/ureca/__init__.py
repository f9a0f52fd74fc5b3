"""Union-find based recursive evidence clustering for few-shot retrieval adaptation."""

from .core import (
    DynamicsMatrix,
    EvidenceState,
    Mode,
    RecursionTrace,
    TransportConfig,
    UnionFind,
    init_dynamics,
    init_evidence,
    run_recursion,
    split_by_gt,
    threshold_update_dynamics,
    transport_step,
)
from .errors import DimensionError, IngestError, InputError, InvariantError, UrecaError
from .ingest import DatasetManifest, EmbeddingBatch, gen_synthetic, load_batch, sample_fewshot, save_binary, save_text
from .losses import LossReport, PartitionSet, combined_loss, grad_combined, info_nce, ureca_aux_loss

__version__ = "0.1.0"
