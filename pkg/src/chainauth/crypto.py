"""Deterministic cryptographic building blocks.

Everything here is a pure function of its inputs. Where randomness is needed
(sealing), the caller passes a seeded ``random.Random`` so whole scenarios
replay bit-for-bit.
"""
from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Iterable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SIZE = 32

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NO_ENC = serialization.NoEncryption()


class CryptoError(Exception):
    pass


def check32(value: bytes, what: str = "value") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != SIZE:
        raise ValueError(f"{what} must be exactly {SIZE} bytes")
    return bytes(value)


def hash32(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def mac_tag(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def mac_verify(key: bytes, data: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac_tag(key, data), tag)


def xor_combine(items: Iterable[bytes]) -> bytes:
    """Bytewise XOR of equal-length 32-byte values."""
    items = list(items)
    if not items:
        raise ValueError("nothing to combine")
    acc = 0
    for item in items:
        acc ^= int.from_bytes(check32(item, "xor operand"), "big")
    return acc.to_bytes(SIZE, "big")


def keystream_encrypt(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    """XOR ``plaintext`` with SHA-256(key || nonce || counter) blocks.

    Size-preserving and an involution: applying it twice with the same key and
    nonce returns the input. Provides no integrity on its own.
    """
    out = bytearray(len(plaintext))
    for block, start in enumerate(range(0, len(plaintext), SIZE)):
        stream = hash32(key + nonce + block.to_bytes(8, "big"))
        chunk = plaintext[start:start + SIZE]
        out[start:start + len(chunk)] = bytes(a ^ b for a, b in zip(chunk, stream))
    return bytes(out)


def keygen_symmetric(seed: bytes) -> bytes:
    return hash32(b"symkey:" + seed)


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes

    @property
    def public_id(self) -> str:
        return account_id(self.public)


def account_id(public: bytes) -> str:
    return "0x" + hash32(public)[:20].hex()


def keygen(seed: bytes) -> KeyPair:
    """Derive an X25519 key pair from ``seed``; identical seeds give identical keys."""
    priv = X25519PrivateKey.from_private_bytes(hash32(b"keypair:" + seed))
    return KeyPair(
        secret=priv.private_bytes(_RAW, _RAW_PRIV, _NO_ENC),
        public=priv.public_key().public_bytes(_RAW, _RAW_PUB),
    )


def _seal_key(shared: bytes, eph_public: bytes, recipient_public: bytes) -> bytes:
    hkdf = HKDF(algorithm=hashes.SHA256(), length=32, salt=None,
                info=b"chainauth-seal" + eph_public + recipient_public)
    return hkdf.derive(shared)


_SEAL_NONCE = bytes(12)  # key is fresh per message (ephemeral DH)


def seal(recipient_public: bytes, plaintext: bytes, rng: random.Random) -> bytes:
    """Hybrid public-key encryption: ephemeral X25519 + HKDF + ChaCha20-Poly1305."""
    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(SIZE))
    eph_public = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_public))
    key = _seal_key(shared, eph_public, recipient_public)
    return eph_public + ChaCha20Poly1305(key).encrypt(_SEAL_NONCE, plaintext, None)


def unseal(recipient: KeyPair, blob: bytes) -> bytes:
    if len(blob) < SIZE + 16:
        raise CryptoError("unsealing failed")
    eph_public, body = blob[:SIZE], blob[SIZE:]
    priv = X25519PrivateKey.from_private_bytes(recipient.secret)
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_public))
        key = _seal_key(shared, eph_public, recipient.public)
        return ChaCha20Poly1305(key).decrypt(_SEAL_NONCE, body, None)
    except (InvalidTag, ValueError) as exc:
        raise CryptoError("unsealing failed") from exc
