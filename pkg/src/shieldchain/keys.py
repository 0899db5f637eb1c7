"""Ed25519 signing and AES-GCM sealing helpers.

One fixed signature scheme (Ed25519, 32-byte public keys, deterministic
signatures) and one fixed AEAD (AES-256-GCM, 12-byte nonce prefixed to the
ciphertext). No algorithm agility.
"""

import os

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

PUBLIC_KEY_LEN = 32
SIGNATURE_LEN = 64
_NONCE_LEN = 12


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    """Derive a deterministic signing key from a 32-byte seed."""
    if len(seed) != 32:
        raise ValueError("signing seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def generate_signing_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def public_bytes(key: Ed25519PrivateKey | Ed25519PublicKey) -> bytes:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    from cryptography.hazmat.primitives.serialization import (
        Encoding,
        PublicFormat,
    )

    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def sign(key: Ed25519PrivateKey, message: bytes) -> bytes:
    return key.sign(message)


def verify(public_key: bytes, signature: bytes, message: bytes) -> bool:
    """Check an Ed25519 signature; never raises on malformed input."""
    if len(public_key) != PUBLIC_KEY_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def seal(key: bytes, plaintext: bytes) -> bytes:
    """AEAD-encrypt; returns nonce || ciphertext+tag."""
    nonce = os.urandom(_NONCE_LEN)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def unseal(key: bytes, blob: bytes) -> bytes:
    """Reverse :func:`seal`. Raises ValueError on tampered or short input."""
    if len(blob) < _NONCE_LEN + 16:
        raise ValueError("sealed blob too short")
    try:
        return AESGCM(key).decrypt(blob[:_NONCE_LEN], blob[_NONCE_LEN:], None)
    except InvalidTag as exc:
        raise ValueError("authentication failed") from exc
