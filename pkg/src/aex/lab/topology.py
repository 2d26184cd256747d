"""Boot the four lab components on loopback sockets, one uvicorn server per thread."""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, field

import httpx
import uvicorn

from ..errors import TopologyUnavailable
from ..trust import IssuerTrustPolicy, JwksCache, KeyResolver, httpx_fetcher
from ..verify import VerifierConfig
from .common import IssuerIdentity, LabConfig, make_key
from .gateway import Gateway, create_gateway_app
from .provider import Provider, create_provider_app
from .proxies import Proxy, create_proxy_app
from .trace import TraceStore

log = logging.getLogger(__name__)

ROLES = ("gateway", "proxy_a", "proxy_b", "provider")


def _bind(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    # Accepted sockets inherit this; without it keep-alive responses written in
    # two parts stall on the peer's delayed ACK (~40 ms per request).
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise TopologyUnavailable(f"cannot bind {host}:{port}: {exc}") from None
    sock.listen(128)
    sock.setblocking(False)
    return sock


@dataclass
class _Server:
    role: str
    url: str
    server: uvicorn.Server
    sock: socket.socket
    thread: threading.Thread | None = None


@dataclass
class LabTopology:
    """Gateway -> proxy A -> proxy B -> provider on distinct loopback ports.

    Proxy A, proxy B and the provider are issuers and publish JWKS; the
    gateway only verifies.  The provider also serves a second, untrusted
    issuer under ``/rogue`` and holds an unpublished key for fault runs.
    """

    config: LabConfig = field(default_factory=LabConfig)
    verifier_config: VerifierConfig = field(default_factory=VerifierConfig)
    urls: dict[str, str] = field(default_factory=dict)
    identities: dict[str, IssuerIdentity] = field(default_factory=dict)
    store: TraceStore | None = None
    _servers: list[_Server] = field(default_factory=list)
    _clients: list[httpx.Client] = field(default_factory=list)

    @property
    def gateway_url(self) -> str:
        return self.urls["gateway"]

    @property
    def trust_policy(self) -> IssuerTrustPolicy:
        return IssuerTrustPolicy(allowlist=frozenset(self.identities[r].iss
                                                     for r in ("proxy_a", "proxy_b", "provider")))

    def _client(self) -> httpx.Client:
        client = httpx.Client(timeout=30.0)
        self._clients.append(client)
        return client

    def _inbound_resolver(self) -> KeyResolver:
        return KeyResolver(self.trust_policy, JwksCache(), httpx_fetcher(self._client()))

    def start(self) -> "LabTopology":
        cfg = self.config
        ports = {"gateway": cfg.gateway_port, "proxy_a": cfg.proxy_a_port,
                 "proxy_b": cfg.proxy_b_port, "provider": cfg.provider_port}
        socks: dict[str, socket.socket] = {}
        try:
            for role in ROLES:
                socks[role] = _bind(cfg.host, ports[role])
        except TopologyUnavailable:
            for s in socks.values():
                s.close()
            raise
        for role, sock in socks.items():
            self.urls[role] = f"http://{cfg.host}:{sock.getsockname()[1]}"

        seed = cfg.key_seed
        prov = self.urls["provider"]
        self.identities = {
            "proxy_a": IssuerIdentity(self.urls["proxy_a"],
                                      make_key(self.urls["proxy_a"], "proxy-a-key-2", seed, "proxy_a")),
            "proxy_b": IssuerIdentity(self.urls["proxy_b"],
                                      make_key(self.urls["proxy_b"], "proxy-b-key-1", seed, "proxy_b")),
            "provider": IssuerIdentity(prov, make_key(prov, "provider-key-1", seed, "provider")),
            "rogue": IssuerIdentity(prov + "/rogue", make_key(prov + "/rogue", "rogue-key-1", seed, "rogue")),
        }
        hidden = make_key(prov, "provider-key-unpublished", seed, "hidden")
        self.store = TraceStore(cfg.runs_path, cfg.keep_traces_in_memory)

        apps = {
            "provider": create_provider_app(Provider(
                self.identities["provider"], self.identities["rogue"], hidden, cfg, self._inbound_resolver())),
            "proxy_b": create_proxy_app(Proxy(
                "proxy_b", self.identities["proxy_b"], self.urls["provider"], cfg,
                self._inbound_resolver(), self._client())),
            "proxy_a": create_proxy_app(Proxy(
                "proxy_a", self.identities["proxy_a"], self.urls["proxy_b"], cfg,
                self._inbound_resolver(), self._client())),
            "gateway": create_gateway_app(Gateway(
                self.urls["proxy_a"], self.trust_policy, self.store, self.verifier_config, self._client())),
        }
        for role in ROLES:
            server = uvicorn.Server(uvicorn.Config(apps[role], log_level="warning", lifespan="off",
                                                   access_log=False))
            entry = _Server(role, self.urls[role], server, socks[role])
            entry.thread = threading.Thread(target=server.run, kwargs={"sockets": [socks[role]]},
                                            name=f"aex-lab-{role}", daemon=True)
            entry.thread.start()
            self._servers.append(entry)
        self._wait_ready()
        log.info("lab topology up: %s", self.urls)
        return self

    def _wait_ready(self, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        for entry in self._servers:
            while not entry.server.started:
                if time.monotonic() > deadline or not entry.thread.is_alive():
                    self.stop()
                    raise TopologyUnavailable(f"{entry.role} did not start")
                time.sleep(0.01)

    def health(self) -> dict[str, dict]:
        out = {}
        with httpx.Client(timeout=5.0) as client:
            for role, url in self.urls.items():
                out[role] = client.get(url + "/healthz").json()
        return out

    def stop(self) -> None:
        for entry in self._servers:
            entry.server.should_exit = True
        for entry in self._servers:
            if entry.thread is not None:
                entry.thread.join(timeout=5.0)
            entry.sock.close()
        self._servers.clear()
        for client in self._clients:
            client.close()
        self._clients.clear()

    def __enter__(self) -> "LabTopology":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
