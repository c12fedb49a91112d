"""Privacy-preserving federated aggregation of clustered models.

Modules: weight_clustering, fuse_filter, dmcfe, protocol, fl_harness,
privacy_eval, cli.
"""
from .errors import (ConstructionFailed, DecodeError, DlogOutOfRange, EncClusterError,
                     InsufficientCiphertexts, InsufficientShares, InvalidArgument, LabelMismatch,
                     PlaintextBoundExceeded, TagMismatch)
from .fuse_filter import FuseFilter, build_filter, deserialize_filter, member, serialize_filter
from .weight_clustering import ClusteredModel, cluster_weights, clustering_loss, reconstruct_weights

__version__ = "0.1.0"
