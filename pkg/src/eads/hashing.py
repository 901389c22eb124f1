"""Domain-separated SHA-256 hashing and Ed25519 signatures."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

HASH_SIZE = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# Hashes are plain 32-byte ``bytes`` values.
Hash = bytes

EMPTY_ROOT: Hash = hashlib.sha256(b"").digest()


def sha256(data: bytes) -> Hash:
    return hashlib.sha256(data).digest()


def leaf_hash(data: bytes) -> Hash:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def node_hash(left: Hash, right: Hash) -> Hash:
    if len(left) != HASH_SIZE or len(right) != HASH_SIZE:
        raise ValueError("node_hash expects two 32-byte hashes")
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def to_hex(value: bytes) -> str:
    return value.hex()


_HEX_DIGITS = frozenset("0123456789abcdef")


def from_hex(text: str, size: int | None = None) -> bytes:
    """Strict inverse of :func:`to_hex`.

    Only lowercase digits are accepted so that every value has exactly one
    textual form; a re-cased hash would otherwise decode to the same bytes.
    """
    if not isinstance(text, str) or len(text) % 2 or not _HEX_DIGITS.issuperset(text):
        raise ValueError(f"not lowercase hex: {text!r:.80}")
    raw = bytes.fromhex(text)
    if size is not None and len(raw) != size:
        raise ValueError(f"expected {size} bytes, got {len(raw)}")
    return raw


def hash_from_hex(text: str) -> Hash:
    return from_hex(text, HASH_SIZE)


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: bytes

    @classmethod
    def generate(cls) -> KeyPair:
        return cls.from_secret(
            Ed25519PrivateKey.generate().private_bytes(
                Encoding.Raw, PrivateFormat.Raw, NoEncryption()
            )
        )

    @classmethod
    def from_secret(cls, secret: bytes) -> KeyPair:
        key = Ed25519PrivateKey.from_private_bytes(secret)
        public = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(secret=bytes(secret), public=public)

    @classmethod
    def from_seed(cls, seed: int) -> KeyPair:
        """Deterministic key for tests and scripted scenarios."""
        return cls.from_secret(sha256(b"eads-seed:%d" % seed))


class Ed25519Scheme:
    name = "ed25519"

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret).sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        except (InvalidSignature, ValueError, TypeError):
            return False
        return True


# Swappable for tests that want a stub scheme; everything else goes through
# sign() / verify_signature() below.
scheme = Ed25519Scheme()


def sign(secret: bytes, message: bytes) -> bytes:
    return scheme.sign(secret, message)


def verify_signature(public: bytes, message: bytes, signature: bytes) -> bool:
    """Never raises: malformed keys or signatures simply fail verification."""
    try:
        return scheme.verify(bytes(public), bytes(message), bytes(signature))
    except Exception:
        return False
