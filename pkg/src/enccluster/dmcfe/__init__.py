"""Decentralized multi-client functional encryption for inner products."""
from .bsgs import BSGS
from .groups import SUPPORTED_KS, PairingGroup, get_group
from .scheme import (B_AGG, B_SLOT, Y_BOUND, Ciphertext, ClientKeyPair, Decryptor, FunctionalDecKey,
                     PartialDecKey, PublicParams, SetupTranscript, ciphertext_from_bytes,
                     ciphertext_to_bytes, combine_keys, decrypt, derive_partial_key, encrypt, keygen,
                     keygen_all, partial_key_from_bytes, partial_key_to_bytes, setup)

__all__ = [
    "BSGS", "SUPPORTED_KS", "PairingGroup", "get_group", "B_AGG", "B_SLOT", "Y_BOUND", "Ciphertext",
    "ClientKeyPair", "Decryptor", "FunctionalDecKey", "PartialDecKey", "PublicParams",
    "SetupTranscript", "ciphertext_from_bytes", "ciphertext_to_bytes", "combine_keys", "decrypt",
    "derive_partial_key", "encrypt", "keygen", "keygen_all", "partial_key_from_bytes",
    "partial_key_to_bytes", "setup",
]
