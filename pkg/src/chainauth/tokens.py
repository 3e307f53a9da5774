"""Compact token encoding, MAC tagging and multi-AS token bundles.

Compact layout (big-endian, fixed width, 90 bytes)::

    common   sub(16) scope(8) iat(8) exp(8) type(1) version(1)   = 42
    distinct iss(16) cti(32)                                       = 48

A signed token is the 90-byte payload followed by a 32-byte HMAC tag.
A bundle carries m tokens and m encrypted PoP keys; with ``dedup`` the
common section is sent once, with ``agg_mac`` the m tags are XORed into one.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

from .crypto import SIZE, hash32, mac_tag, mac_verify, xor_combine

COMMON_SIZE = 42
DISTINCT_SIZE = 48
PAYLOAD_SIZE = COMMON_SIZE + DISTINCT_SIZE
TAG_SIZE = SIZE
POP_SIZE = SIZE
SIGNED_SIZE = PAYLOAD_SIZE + TAG_SIZE

VERSION = 1
TYPE_POP = 1

_COMMON = struct.Struct(">16s8sQQBB")
_DISTINCT = struct.Struct(">16s32s")


class CodecError(ValueError):
    pass


def pad(label: str | bytes, width: int) -> bytes:
    raw = label.encode() if isinstance(label, str) else bytes(label)
    if len(raw) > width:
        raise CodecError(f"{raw!r} longer than {width} bytes")
    return raw.ljust(width, b"\0")


def unpad(raw: bytes) -> str:
    return raw.rstrip(b"\0").decode()


def thing_id(thing_uri: str) -> bytes:
    return hash32(thing_uri.encode())[:16]


@dataclass(frozen=True)
class TokenPayload:
    sub: bytes
    scope: bytes
    iat: int
    exp: int
    type: int
    version: int
    iss: bytes
    cti: bytes

    def __post_init__(self):
        for name, width in (("sub", 16), ("scope", 8), ("iss", 16), ("cti", 32)):
            if len(getattr(self, name)) != width:
                raise CodecError(f"{name} must be {width} bytes")
        if not (0 <= self.iat < self.exp < 2**64):
            raise CodecError("need 0 <= iat < exp < 2**64")
        if not (0 <= self.type < 256 and 0 <= self.version < 256):
            raise CodecError("type and version are single bytes")

    def common(self) -> bytes:
        return _COMMON.pack(self.sub, self.scope, self.iat, self.exp, self.type, self.version)

    def distinct(self) -> bytes:
        return _DISTINCT.pack(self.iss, self.cti)


def encode_compact(payload: TokenPayload) -> bytes:
    return payload.common() + payload.distinct()


def _from_sections(common: bytes, distinct: bytes) -> TokenPayload:
    sub, scope, iat, exp, type_, version = _COMMON.unpack(common)
    iss, cti = _DISTINCT.unpack(distinct)
    return TokenPayload(sub, scope, iat, exp, type_, version, iss, cti)


def decode_compact(data: bytes) -> TokenPayload:
    if len(data) != PAYLOAD_SIZE:
        raise CodecError(f"compact payload must be {PAYLOAD_SIZE} bytes, got {len(data)}")
    return _from_sections(data[:COMMON_SIZE], data[COMMON_SIZE:])


def token_mac_key(thing_key: bytes) -> bytes:
    return hash32(thing_key + b"mac")


@dataclass(frozen=True)
class SignedToken:
    payload: TokenPayload
    tag: bytes

    def to_bytes(self) -> bytes:
        return encode_compact(self.payload) + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> SignedToken:
        if len(data) != SIGNED_SIZE:
            raise CodecError(f"signed token must be {SIGNED_SIZE} bytes, got {len(data)}")
        return cls(decode_compact(data[:PAYLOAD_SIZE]), data[PAYLOAD_SIZE:])


def sign_token(payload: TokenPayload, mac_key: bytes) -> SignedToken:
    return SignedToken(payload, mac_tag(mac_key, encode_compact(payload)))


def verify_token(token: SignedToken, mac_key: bytes) -> bool:
    return mac_verify(mac_key, encode_compact(token.payload), token.tag)


def aggregate_tags(tags: Sequence[bytes]) -> bytes:
    return xor_combine(tags)


# -- bundles ---------------------------------------------------------------

@dataclass(frozen=True)
class BundleOptions:
    agg_mac: bool = False
    dedup: bool = False

    @classmethod
    def all(cls) -> list[BundleOptions]:
        return [cls(a, d) for d in (False, True) for a in (False, True)]

    @property
    def label(self) -> str:
        return {(False, False): "none", (True, False): "agg-mac",
                (False, True): "dedup", (True, True): "both"}[self.agg_mac, self.dedup]


@dataclass(frozen=True)
class BundleContents:
    payloads: list[TokenPayload]
    tags: list[bytes]  # m tags, or a single aggregate
    pops: list[bytes]
    aggregate: bool


def build_bundle(responses: Sequence[tuple[TokenPayload, bytes, bytes]],
                 opts: BundleOptions = BundleOptions()) -> bytes:
    """Serialize ``(payload, tag, encrypted PoP)`` triples for the Thing."""
    if not responses:
        raise CodecError("bundle needs at least one token")
    payloads = [p for p, _, _ in responses]
    tags = [t for _, t, _ in responses]
    pops = [c for _, _, c in responses]
    if any(len(t) != TAG_SIZE for t in tags) or any(len(c) != POP_SIZE for c in pops):
        raise CodecError("tags and PoP ciphertexts must be 32 bytes")
    out = bytearray()
    if opts.dedup:
        common = payloads[0].common()
        if any(p.common() != common for p in payloads):
            raise CodecError("dedup requires identical common sections")
        out += common
        for p in payloads:
            out += p.distinct()
    else:
        for p in payloads:
            out += encode_compact(p)
    if opts.agg_mac:
        out += aggregate_tags(tags)
    else:
        for t in tags:
            out += t
    for c in pops:
        out += c
    return bytes(out)


def bundle_size(m: int, opts: BundleOptions) -> int:
    tokens = COMMON_SIZE + DISTINCT_SIZE * m if opts.dedup else PAYLOAD_SIZE * m
    return tokens + (TAG_SIZE if opts.agg_mac else TAG_SIZE * m) + POP_SIZE * m


def parse_bundle(data: bytes, m: int, opts: BundleOptions = BundleOptions()) -> BundleContents:
    if m < 1:
        raise CodecError("m must be at least 1")
    if len(data) != bundle_size(m, opts):
        raise CodecError(f"bundle length {len(data)} inconsistent with m={m}, opts={opts.label}")
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if opts.dedup:
        common = take(COMMON_SIZE)
        payloads = [_from_sections(common, take(DISTINCT_SIZE)) for _ in range(m)]
    else:
        payloads = [decode_compact(take(PAYLOAD_SIZE)) for _ in range(m)]
    tags = [take(TAG_SIZE) for _ in range(1 if opts.agg_mac else m)]
    pops = [take(POP_SIZE) for _ in range(m)]
    return BundleContents(payloads, tags, pops, opts.agg_mac)


def measure_reduction(m: int, opts: BundleOptions) -> tuple[int, float]:
    """Bundle size for ``m`` tokens and its percent saving against no optimization."""
    if m < 1:
        raise ValueError("m must be at least 1")
    sample = [(_sample_payload(i), bytes(TAG_SIZE), bytes(POP_SIZE)) for i in range(m)]
    size = len(build_bundle(sample, opts))
    baseline = len(build_bundle(sample, BundleOptions()))
    return size, round(100 * (baseline - size) / baseline, 1)


def _sample_payload(i: int) -> TokenPayload:
    return TokenPayload(sub=bytes(16), scope=pad("read", 8), iat=0, exp=3600, type=TYPE_POP,
                        version=VERSION, iss=pad(f"AS{i + 1}", 16), cti=hash32(bytes([i])))


# -- verbose comparison encoding --------------------------------------------

_VERBOSE_ORDER = ("iss", "sub", "scope", "iat", "exp", "cti", "typ", "ver")


def encode_verbose(payload: TokenPayload, tag: bytes | None = None) -> bytes:
    """Text-map encoding with standard claim names and hex values, for size comparison."""
    claims = {
        "iss": payload.iss.hex(), "sub": payload.sub.hex(), "scope": payload.scope.hex(),
        "iat": payload.iat.to_bytes(8, "big").hex(), "exp": payload.exp.to_bytes(8, "big").hex(),
        "cti": payload.cti.hex(), "typ": bytes([payload.type]).hex(),
        "ver": bytes([payload.version]).hex(),
    }
    doc = {"claims": {k: claims[k] for k in _VERBOSE_ORDER}}
    if tag is not None:
        doc["tag"] = tag.hex()
    return json.dumps(doc, separators=(",", ":")).encode()


def decode_verbose(data: bytes) -> tuple[TokenPayload, bytes | None]:
    doc = json.loads(data)
    c = {k: bytes.fromhex(v) for k, v in doc["claims"].items()}
    payload = TokenPayload(sub=c["sub"], scope=c["scope"], iat=int.from_bytes(c["iat"], "big"),
                           exp=int.from_bytes(c["exp"], "big"), type=c["typ"][0],
                           version=c["ver"][0], iss=c["iss"], cti=c["cti"])
    tag = bytes.fromhex(doc["tag"]) if "tag" in doc else None
    return payload, tag
