"""Consortium ledger: canonical transactions, PBFT ordering, hash-chained blocks, world state."""

from .block import (
    Block,
    GenesisConfig,
    IntegrityViolation,
    QuorumCert,
    decode_chain,
    encode_chain,
    load_chain,
    merkle_root,
    replay_world_state,
    save_chain,
    validate_block,
    verify_chain,
)
from .consortium import Client, Consortium, Receipt
from .pbft import Behavior, Peer, PeerCosts
from .state import AclDecision, Flags, Verifier, WorldState, apply_acl
from .tx import Action, LedgerTransaction, ReputationSnapshot, SignedTx, SubmissionRefused, TxRejected, create_tx

__all__ = [name for name in dir() if not name.startswith("_")]
