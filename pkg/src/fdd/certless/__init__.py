"""Certificateless keys issued by a multisigning KGD consortium."""

from .group import CurveGroup, GroupError, ModPGroup, SystemParams, setup
from .keys import (
    KGD,
    Cosigner,
    CosignerKey,
    DerivationRefused,
    DeviceKeyPair,
    DevicePublicKey,
    DeviceSecret,
    IssuanceFailed,
    IssuanceMessage,
    PartialSecret,
    PointerDecryptionError,
    PublicParams,
    decrypt_pointer,
    derive_keys,
    encrypt_pointer,
    gen_device_secret,
    gen_partial_secret,
    public_point,
    register_device,
    sign_tx,
    verify_issuance,
    verify_tx_sig,
)
from .schnorr import MultiSignature, Outcome, Signature, schnorr_sign, schnorr_verify, verify_multisig
from .wire import WireError, armor, unarmor

__all__ = [name for name in dir() if not name.startswith("_")]
