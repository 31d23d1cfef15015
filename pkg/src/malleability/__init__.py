"""Detect, classify and measure Bitcoin transaction-malleability attacks."""

from .conflict import (
    ConflictSet, CorpusRecord, MultiBroadcast, Outcome, brute_force_conflicts,
    build_conflict_sets, determine_outcome, normalized_key,
)
from .mutation import (
    EncodingMutation, GenuineReSign, MutationContext, MutationKind, Unknown, classify_pair,
    enumerate_applicable, mutate,
)
from .txcodec import (
    Hash256, OutPoint, Transaction, TxInput, TxOutput, deserialize_tx, serialize_tx, txid,
)

__version__ = "0.1.0"
