"""Issuer key discovery over JWKS, HTTP-aware caching and issuer trust policy."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping
from urllib.parse import urlsplit

from .errors import AlgUnsupported, InvalidIssuerUrl, KeyUnavailable, UntrustedIssuer
from .keys import VerifyingKey

log = logging.getLogger(__name__)

WELL_KNOWN_PATH = "/.well-known/aex-keys.json"
DEFAULT_TTL = 300.0
DEFAULT_REFRESH_COOLDOWN = 30.0


def normalize_issuer(iss: str) -> str:
    """Validate an issuer URL and strip a single trailing slash."""
    if not isinstance(iss, str) or not iss:
        raise InvalidIssuerUrl("issuer must be a non-empty string")
    parts = urlsplit(iss)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise InvalidIssuerUrl(f"issuer {iss!r} is not an absolute http(s) URL")
    if parts.query or parts.fragment:
        raise InvalidIssuerUrl(f"issuer {iss!r} must not carry a query or fragment")
    return iss[:-1] if iss.endswith("/") else iss


def jwks_url(iss: str) -> str:
    # Issuers with paths get the well-known suffix after the full path.
    return normalize_issuer(iss) + WELL_KNOWN_PATH


def origin_of(url: str) -> str:
    parts = urlsplit(url)
    host = (parts.hostname or "").lower()
    port = parts.port
    default = {"http": 80, "https": 443}.get(parts.scheme)
    netloc = host if port in (None, default) else f"{host}:{port}"
    return f"{parts.scheme.lower()}://{netloc}"


@dataclass(frozen=True)
class FetchResult:
    status: int
    headers: Mapping[str, str]
    body: bytes


Fetcher = Callable[[str], FetchResult]


def httpx_fetcher(client) -> Fetcher:
    """Adapt an ``httpx.Client`` into a fetch capability."""
    import httpx

    def fetch(url: str) -> FetchResult:
        try:
            resp = client.get(url)
        except httpx.HTTPError as exc:
            raise KeyUnavailable(f"JWKS fetch {url} failed: {exc}") from None
        return FetchResult(resp.status_code, {k.lower(): v for k, v in resp.headers.items()}, resp.content)

    return fetch


@dataclass(frozen=True)
class IssuerTrustPolicy:
    """Local trust rules.  An issuer is trusted if any configured rule accepts it.

    * ``allowlist``: exact (normalized) issuer URLs.
    * ``target_origin``: accept issuers on the same origin as the API target.
    * ``pins``: issuer -> kid -> key; pinned issuers never hit the network.
    """

    allowlist: frozenset[str] = frozenset()
    target_origin: str | None = None
    pins: Mapping[str, Mapping[str, VerifyingKey]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowlist", frozenset(normalize_issuer(i) for i in self.allowlist))
        object.__setattr__(self, "pins", {normalize_issuer(i): dict(k) for i, k in self.pins.items()})
        if not (self.allowlist or self.target_origin or self.pins):
            raise ValueError("trust policy needs an allowlist, a target origin or pinned keys")

    def is_trusted(self, iss: str) -> bool:
        try:
            norm = normalize_issuer(iss)
        except InvalidIssuerUrl:
            return False
        if norm in self.allowlist or norm in self.pins:
            return True
        return self.target_origin is not None and origin_of(norm) == origin_of(self.target_origin)

    def pinned(self, iss: str) -> Mapping[str, VerifyingKey] | None:
        return self.pins.get(normalize_issuer(iss))

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "IssuerTrustPolicy":
        from .keys import parse_jwks

        pins = {iss: parse_jwks(normalize_issuer(iss), doc) for iss, doc in obj.get("pins", {}).items()}
        return cls(frozenset(obj.get("allowlist", ())), obj.get("target_origin"), pins)

    def to_json(self) -> dict[str, Any]:
        from .keys import jwks_document

        out: dict[str, Any] = {"allowlist": sorted(self.allowlist)}
        if self.target_origin:
            out["target_origin"] = self.target_origin
        if self.pins:
            out["pins"] = {iss: jwks_document(keys.values()) for iss, keys in self.pins.items()}
        return out


_MAX_AGE_RE = re.compile(r"max-age\s*=\s*\"?(\d+)")


def cache_ttl(headers: Mapping[str, str], default: float = DEFAULT_TTL) -> float:
    cc = headers.get("cache-control", "").lower()
    if "no-store" in cc or "no-cache" in cc:
        return 0.0
    m = _MAX_AGE_RE.search(cc)
    if not m:
        return default
    ttl = float(m.group(1))
    try:
        ttl -= float(headers.get("age", "0"))
    except ValueError:
        pass
    return max(ttl, 0.0)


@dataclass
class _Entry:
    keys: dict[str, tuple[VerifyingKey, float]] = field(default_factory=dict)
    unsupported: set[str] = field(default_factory=set)
    expires_at: float = float("-inf")
    last_fetch: float | None = None
    last_failure: float | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def lookup(self, kid: str, now: float) -> VerifyingKey | None:
        hit = self.keys.get(kid)
        if hit is not None and hit[1] >= now:
            return hit[0]
        return None


class JwksCache:
    """Per-issuer JWKS cache.

    Fetches for one issuer are single-flight (a per-issuer lock); no lock is
    held across network I/O for other issuers.  After a refresh, keys that
    disappeared from the document stay usable until their own expiry, which
    keeps attestations signed just before a rotation verifiable.
    """

    def __init__(
        self,
        *,
        default_ttl: float = DEFAULT_TTL,
        refresh_cooldown: float = DEFAULT_REFRESH_COOLDOWN,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.default_ttl = default_ttl
        self.refresh_cooldown = refresh_cooldown
        self.clock = clock
        self._entries: dict[str, _Entry] = {}
        self._lock = threading.Lock()
        self.fetch_count = 0
        self.fetches: list[str] = []

    def _entry(self, iss: str) -> _Entry:
        with self._lock:
            entry = self._entries.get(iss)
            if entry is None:
                entry = self._entries[iss] = _Entry()
            return entry

    def _fetch_into(self, iss: str, entry: _Entry, fetch: Fetcher) -> None:
        url = jwks_url(iss)
        now = self.clock()
        entry.last_fetch = now
        with self._lock:
            self.fetch_count += 1
            self.fetches.append(url)
        log.debug("fetching JWKS %s", url)
        try:
            result = fetch(url)
        except KeyUnavailable:
            raise
        except Exception as exc:  # transport errors from arbitrary fetchers
            raise KeyUnavailable(f"JWKS fetch {url} failed: {exc}") from None
        if result.status != 200:
            raise KeyUnavailable(f"JWKS fetch {url} returned HTTP {result.status}")
        try:
            doc = json.loads(result.body)
            raw_keys = doc["keys"]
            if not isinstance(raw_keys, list):
                raise TypeError("keys is not an array")
        except (ValueError, KeyError, TypeError) as exc:
            raise KeyUnavailable(f"JWKS document at {url} is malformed: {exc}") from None

        expires = now + cache_ttl(result.headers, self.default_ttl)
        for jwk in raw_keys:
            if not isinstance(jwk, dict) or not isinstance(jwk.get("kid"), str):
                continue
            try:
                key = VerifyingKey.from_jwk(iss, jwk)
            except AlgUnsupported:
                entry.unsupported.add(jwk["kid"])
                continue
            except (ValueError, KeyError):
                continue
            entry.keys[key.kid] = (key, expires)
            entry.unsupported.discard(key.kid)
        entry.expires_at = expires

    def _miss(self, entry: _Entry, iss: str, kid: str) -> KeyUnavailable | AlgUnsupported:
        if kid in entry.unsupported:
            return AlgUnsupported(f"key {kid} of {iss} is not Ed25519")
        return KeyUnavailable(f"issuer {iss} has no usable key {kid!r}")

    def get_key(self, iss: str, kid: str, fetch: Fetcher) -> VerifyingKey:
        iss = normalize_issuer(iss)
        entry = self._entry(iss)
        now = self.clock()
        if now < entry.expires_at:
            key = entry.lookup(kid, now)
            if key is not None:
                return key

        with entry.lock:
            now = self.clock()
            key = entry.lookup(kid, now)
            if key is not None:
                return key
            if now < entry.expires_at:
                # Fresh set, unknown kid: cache-bypassing refresh, one per cooldown window.
                if entry.last_fetch is not None and now - entry.last_fetch < self.refresh_cooldown:
                    raise self._miss(entry, iss, kid)
            elif entry.last_failure is not None and now - entry.last_failure < self.refresh_cooldown:
                raise KeyUnavailable(f"JWKS for {iss} recently failed; refresh suppressed")
            try:
                self._fetch_into(iss, entry, fetch)
            except KeyUnavailable:
                entry.last_failure = self.clock()
                raise
            key = entry.lookup(kid, now)
            if key is None:
                raise self._miss(entry, iss, kid)
            return key


def resolve_key(
    iss: str,
    kid: str,
    policy: IssuerTrustPolicy,
    cache: JwksCache,
    fetch: Fetcher,
) -> VerifyingKey:
    """Return the verification key for ``iss``/``kid`` if policy trusts ``iss``.

    A valid JWKS alone never establishes trust: policy is checked before any
    network access.
    """
    if not policy.is_trusted(iss):
        raise UntrustedIssuer(f"issuer {iss} is not trusted by local policy")
    pinned = policy.pinned(iss)
    if pinned is not None:
        key = pinned.get(kid)
        if key is None:
            raise KeyUnavailable(f"no pinned key {kid!r} for {iss}")
        return key
    return cache.get_key(iss, kid, fetch)


class KeyResolver:
    """Callable ``(iss, kid) -> VerifyingKey`` bundling policy, cache and transport."""

    def __init__(self, policy: IssuerTrustPolicy, cache: JwksCache | None = None,
                 fetch: Fetcher | None = None) -> None:
        self.policy = policy
        self.cache = cache if cache is not None else JwksCache()
        self.fetch = fetch if fetch is not None else _no_network

    def __call__(self, iss: str, kid: str) -> VerifyingKey:
        return resolve_key(iss, kid, self.policy, self.cache, self.fetch)


def _no_network(url: str) -> FetchResult:
    raise KeyUnavailable(f"no fetch capability configured for {url}")


class StaticJwksFetcher:
    """Serve JWKS documents from memory; counts calls per URL (for tests and replay)."""

    def __init__(self, documents: Mapping[str, Any], headers: Mapping[str, str] | None = None) -> None:
        self.documents = {jwks_url(iss) if not iss.endswith(WELL_KNOWN_PATH) else iss: doc
                          for iss, doc in documents.items()}
        self.headers = dict(headers or {})
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def __call__(self, url: str) -> FetchResult:
        with self._lock:
            self.calls.append(url)
        doc = self.documents.get(url)
        if doc is None:
            return FetchResult(404, {}, b"")
        body = doc if isinstance(doc, bytes) else json.dumps(doc).encode()
        return FetchResult(200, self.headers, body)
