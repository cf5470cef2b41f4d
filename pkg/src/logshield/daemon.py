"""Protected log daemon: admin protocol, key custody, staging.

Management traffic rides the untrusted OS network, so its security comes
entirely from cryptography: commands are ed25519-signed over a canonical
encoding that includes a session id and a single-use nonce. The daemon
drops anything that fails verification or reuses a nonce; accepted
commands execute through the monitor's secure I/O path and the response is
signed with the daemon's own key, nonce echoed. Dropping, delaying or
replaying messages therefore stalls new work but can never forge a
deletion or a believable false response.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)

from .engine import Rng

SIGNATURE_SCHEME = "ed25519"

CMD_RETRIEVE = "retrieve"
CMD_DELETE = "delete"
CMD_PING = "ping"

DROP_BAD_SIGNATURE = "bad_signature"
DROP_REPLAYED_NONCE = "replayed_nonce"
DROP_BAD_SESSION = "bad_session"


class HandshakeFailure(RuntimeError):
    pass


@dataclass
class ProvisionedKeys:
    """Secrets installed on the protected disk at machine provisioning and
    handed to the daemon by the monitor at attestation. The daemon private
    key exists only inside protected memory."""

    scheme: str
    daemon_private: Ed25519PrivateKey
    daemon_public_bytes: bytes
    admin_public_bytes: bytes


@dataclass
class AdminCredentials:
    scheme: str
    admin_private: Ed25519PrivateKey
    admin_public_bytes: bytes
    daemon_public_bytes: bytes


def provision_keys(rng: Rng) -> tuple[ProvisionedKeys, AdminCredentials]:
    """Deterministic keypair generation from the run seed."""
    dpriv = Ed25519PrivateKey.from_private_bytes(rng.bytes(32))
    apriv = Ed25519PrivateKey.from_private_bytes(rng.bytes(32))
    dpub = dpriv.public_key().public_bytes_raw()
    apub = apriv.public_key().public_bytes_raw()
    return (ProvisionedKeys(SIGNATURE_SCHEME, dpriv, dpub, apub),
            AdminCredentials(SIGNATURE_SCHEME, apriv, apub, dpub))


@dataclass(frozen=True)
class ManagementCommand:
    kind: str
    lba: int
    sector_count: int
    nonce: bytes
    session: bytes
    signature: bytes

    def canonical(self) -> bytes:
        return canonical_command(self.kind, self.lba, self.sector_count,
                                 self.nonce, self.session)


@dataclass(frozen=True)
class ChannelMessage:
    direction: str          # admin_to_daemon | daemon_to_admin
    body: bytes
    nonce: bytes
    signature: bytes


def canonical_command(kind: str, lba: int, count: int, nonce: bytes,
                      session: bytes) -> bytes:
    return b"|".join([b"cmd", kind.encode(), str(lba).encode(),
                      str(count).encode(), nonce, session])


def canonical_response(body: bytes, nonce: bytes, session: bytes) -> bytes:
    return b"|".join([b"resp", body, nonce, session])


class AdminClient:
    """Remote administrator endpoint (scripted from scenarios and tests)."""

    def __init__(self, creds: AdminCredentials, rng: Rng):
        self.creds = creds
        self.rng = rng
        self.session: Optional[bytes] = None
        self._daemon_pub = Ed25519PublicKey.from_public_bytes(creds.daemon_public_bytes)

    def fresh_nonce(self) -> bytes:
        return self.rng.bytes(16)

    def hello(self) -> tuple[bytes, bytes]:
        nonce = self.fresh_nonce()
        sig = self.creds.admin_private.sign(b"hello|" + nonce)
        return nonce, sig

    def finish_handshake(self, nonce_a: bytes, reply: tuple[bytes, bytes]) -> bytes:
        nonce_d, sig = reply
        try:
            self._daemon_pub.verify(sig, b"welcome|" + nonce_a + nonce_d)
        except InvalidSignature as exc:
            raise HandshakeFailure("daemon authentication failed") from exc
        self.session = hashlib.sha256(nonce_a + nonce_d).digest()[:8]
        return self.session

    def command(self, kind: str, lba: int = 0, count: int = 0,
                nonce: Optional[bytes] = None) -> ManagementCommand:
        if self.session is None:
            raise HandshakeFailure("no established session")
        nonce = nonce if nonce is not None else self.fresh_nonce()
        payload = canonical_command(kind, lba, count, nonce, self.session)
        sig = self.creds.admin_private.sign(payload)
        return ManagementCommand(kind, lba, count, nonce, self.session, sig)

    def verify_response(self, msg: ChannelMessage, expect_nonce: bytes) -> bool:
        if msg.nonce != expect_nonce or self.session is None:
            return False
        try:
            self._daemon_pub.verify(
                msg.signature, canonical_response(msg.body, msg.nonce, self.session))
            return True
        except InvalidSignature:
            return False


class DaemonProtocol:
    """Daemon-side channel state: session, nonce ledger, command execution."""

    def __init__(self, keys: ProvisionedKeys, monitor, trace):
        self.keys = keys
        self.monitor = monitor
        self.trace = trace
        self.session: Optional[bytes] = None
        self.nonces_seen: set[bytes] = set()
        self._admin_pub = Ed25519PublicKey.from_public_bytes(keys.admin_public_bytes)
        self.dropped: dict[str, int] = {DROP_BAD_SIGNATURE: 0,
                                        DROP_REPLAYED_NONCE: 0,
                                        DROP_BAD_SESSION: 0}
        self.deletions = 0

    # -- handshake ------------------------------------------------------------

    def accept_hello(self, nonce_a: bytes, sig: bytes,
                     rng: Rng) -> tuple[bytes, bytes]:
        try:
            self._admin_pub.verify(sig, b"hello|" + nonce_a)
        except InvalidSignature as exc:
            raise HandshakeFailure("admin authentication failed") from exc
        nonce_d = rng.bytes(16)
        self.session = hashlib.sha256(nonce_a + nonce_d).digest()[:8]
        reply_sig = self.keys.daemon_private.sign(b"welcome|" + nonce_a + nonce_d)
        return nonce_d, reply_sig

    # -- command handling --------------------------------------------------------

    def handle_admin(self, msg: ManagementCommand, now: int = 0) -> Optional[ChannelMessage]:
        """Verify-then-execute. Any failure drops the message with a trace
        record and no state change."""
        try:
            self._admin_pub.verify(msg.signature, msg.canonical())
        except InvalidSignature:
            self.dropped[DROP_BAD_SIGNATURE] += 1
            self.trace.record(now, "daemon.manager", "admin",
                              verdict=DROP_BAD_SIGNATURE, command=msg.kind)
            return None
        if self.session is None or msg.session != self.session:
            self.dropped[DROP_BAD_SESSION] += 1
            self.trace.record(now, "daemon.manager", "admin",
                              verdict=DROP_BAD_SESSION, command=msg.kind)
            return None
        if msg.nonce in self.nonces_seen:
            self.dropped[DROP_REPLAYED_NONCE] += 1
            self.trace.record(now, "daemon.manager", "admin",
                              verdict=DROP_REPLAYED_NONCE, command=msg.kind)
            return None
        self.nonces_seen.add(msg.nonce)

        if msg.kind == CMD_PING:
            body = b"pong"
        elif msg.kind == CMD_RETRIEVE:
            body = self.monitor.secure_read(msg.lba, msg.sector_count)
        elif msg.kind == CMD_DELETE:
            self.monitor.secure_delete(msg.lba, msg.sector_count)
            self.deletions += 1
            body = b"deleted"
        else:
            body = b"unknown"
        self.trace.record(now, "daemon.manager", "admin", verdict="executed",
                          command=msg.kind, lba=msg.lba, count=msg.sector_count)
        sig = self.keys.daemon_private.sign(
            canonical_response(body, msg.nonce, self.session))
        return ChannelMessage("daemon_to_admin", body, msg.nonce, sig)


def establish_channel(admin: AdminClient, daemon: DaemonProtocol,
                      rng: Rng) -> bytes:
    """Mutual authentication handshake; returns the bound session id."""
    nonce_a, sig = admin.hello()
    reply = daemon.accept_hello(nonce_a, sig, rng)
    return admin.finish_handshake(nonce_a, reply)
