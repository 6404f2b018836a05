"""Deterministic simulator of fingerprint checks inside an E2EE message flow.

Clients hash and look up images on-device, before encryption on the send
side and after decryption on the receive side. The relay between them sees
only ciphertext envelopes and routing metadata, so nothing the server logs
can reveal message content or which fingerprints are being matched. Flag
policies decide what a match does: allow, warn, or block forwarding.

`run_scenario` drives a script of timestamped events through clients and
relay on a single thread; identical (script, seed) pairs produce
byte-identical reports.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
from dataclasses import dataclass, field

from .errors import (
    ConfigurationError,
    CorruptPayloadError,
    MalformedImageError,
    ScriptError,
    SessionError,
    TamperError,
)
from .pdq import hash as pdq_hash
from .raster import RasterImage, decode_image, decode_pnm, encode_pnm
from .store import DeviceFingerprintSet, UpdateBundle, bundle_from_json

DEFAULT_RADIUS = 31

# Development-only bundle MAC key used when none is supplied explicitly.
DEFAULT_BUNDLE_KEY = b"fcmatch-dev-bundle-key"


class FlagPolicy(str, enum.Enum):
    ALLOW = "allow"
    WARN_ONLY = "warn"
    BLOCK_FORWARD = "block"


class Stage(str, enum.Enum):
    SEND = "send"
    RECEIVE = "receive"


class Outcome(str, enum.Enum):
    CLEAN = "clean"
    WARNED = "warned"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class FlagDecision:
    t: float
    stage: Stage
    client: str
    peers: tuple
    outcome: Outcome
    record_id: int = None
    distance: int = None
    url: str = None

    def __post_init__(self):
        if self.outcome in (Outcome.WARNED, Outcome.BLOCKED):
            if self.record_id is None or self.distance is None:
                raise ConfigurationError(
                    "warned/blocked decisions must carry a match"
                )

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "stage": self.stage.value,
            "client": self.client,
            "peers": list(self.peers),
            "outcome": self.outcome.value,
            "record_id": self.record_id,
            "distance": self.distance,
            "url": self.url,
        }


@dataclass
class MatchCounter:
    """Aggregate per-record match tallies; holds no client ids or hashes."""

    counts: dict = field(default_factory=dict)

    def record(self, record_id: int) -> None:
        self.counts[record_id] = self.counts.get(record_id, 0) + 1


def record_match(counter: MatchCounter, record_id: int) -> MatchCounter:
    counter.record(record_id)
    return counter


# -- cipher ------------------------------------------------------------------------


class Sha256StreamCipher:
    """Keystream from chained SHA-256 blocks plus an HMAC-SHA256 tag.

    Deterministic given (key, sequence), which is what the simulator needs;
    key/sequence pairs must never repeat across messages. This is a stand-in
    for a real AEAD, not production cryptography.
    """

    TAG_LEN = 32

    def _keys(self, key: bytes):
        enc = hmac.new(key, b"enc", hashlib.sha256).digest()
        mac = hmac.new(key, b"mac", hashlib.sha256).digest()
        return enc, mac

    def _keystream(self, enc_key: bytes, sequence: int, length: int) -> bytes:
        out = bytearray()
        counter = 0
        seq8 = sequence.to_bytes(8, "little")
        while len(out) < length:
            out += hashlib.sha256(
                enc_key + seq8 + counter.to_bytes(8, "little")
            ).digest()
            counter += 1
        return bytes(out[:length])

    def encrypt(self, key: bytes, sequence: int, plaintext: bytes):
        enc_key, mac_key = self._keys(key)
        stream = self._keystream(enc_key, sequence, len(plaintext))
        ciphertext = bytes(p ^ s for p, s in zip(plaintext, stream))
        tag = hmac.new(
            mac_key, sequence.to_bytes(8, "little") + ciphertext, hashlib.sha256
        ).digest()
        return ciphertext, tag

    def decrypt(self, key: bytes, sequence: int, ciphertext: bytes, tag: bytes):
        enc_key, mac_key = self._keys(key)
        expected = hmac.new(
            mac_key, sequence.to_bytes(8, "little") + ciphertext, hashlib.sha256
        ).digest()
        if not hmac.compare_digest(expected, tag):
            raise TamperError("envelope failed authentication")
        stream = self._keystream(enc_key, sequence, len(ciphertext))
        return bytes(c ^ s for c, s in zip(ciphertext, stream))


@dataclass(frozen=True)
class Envelope:
    """What the relay sees: routing fields and opaque ciphertext only."""

    sender: str
    recipient: str
    sequence: int
    ciphertext: bytes
    tag: bytes


class Relay:
    """Ciphertext-blind message router with per-recipient queues."""

    def __init__(self):
        self.known = set()
        self.queues = {}
        self.trace = []
        self.delivery_failures = []

    def register(self, client_id: str) -> None:
        self.known.add(client_id)
        self.queues.setdefault(client_id, [])

    def deliver(self, envelope: Envelope, t: float) -> bool:
        if envelope.recipient not in self.known:
            self.delivery_failures.append(
                {
                    "t": t,
                    "sender": envelope.sender,
                    "recipient": envelope.recipient,
                    "sequence": envelope.sequence,
                    "reason": "unknown-recipient",
                }
            )
            return False
        self.queues[envelope.recipient].append(envelope)
        self.trace.append(
            {
                "t": t,
                "sender": envelope.sender,
                "recipient": envelope.recipient,
                "sequence": envelope.sequence,
                "ciphertext_length": len(envelope.ciphertext),
            }
        )
        return True


# -- clients -----------------------------------------------------------------------


def _direction_key(pair_key: bytes, sender_id: str, recipient_id: str) -> bytes:
    material = b"direction:" + sender_id.encode("utf-8") + b">" + recipient_id.encode("utf-8")
    return hmac.new(pair_key, material, hashlib.sha256).digest()


class Client:
    """A device: session keys, a fingerprint snapshot, and a flag policy."""

    def __init__(
        self,
        client_id: str,
        policy: FlagPolicy = FlagPolicy.WARN_ONLY,
        radius: int = DEFAULT_RADIUS,
        device: DeviceFingerprintSet = None,
        cipher=None,
        telemetry: bool = False,
        counter: MatchCounter = None,
    ):
        self.id = client_id
        self.policy = policy
        self.radius = radius
        self.device = device if device is not None else DeviceFingerprintSet.empty()
        self.cipher = cipher if cipher is not None else Sha256StreamCipher()
        self.telemetry = telemetry
        self.counter = counter
        self.log = []
        self._session_keys = {}
        self._sequences = {}

    def establish_session(self, peer_id: str, key: bytes) -> None:
        self._session_keys[peer_id] = key

    def has_session(self, peer_id: str) -> bool:
        return peer_id in self._session_keys

    def apply_bundle(self, bundle: UpdateBundle, key: bytes) -> None:
        """Swap in a new frozen snapshot; raises and keeps the old one on
        stale or unauthenticated bundles."""
        self.device = self.device.apply_bundle(bundle, key)

    def _count_match(self, record_id: int) -> None:
        if self.telemetry and self.counter is not None:
            self.counter.record(record_id)

    def _lookup(self, img: RasterImage):
        return self.device.lookup(pdq_hash(img), self.radius)

    def send_image(self, recipients, img: RasterImage, t: float = 0.0):
        """Check the image on-device, then encrypt per recipient.

        Returns (FlagDecision, [Envelope]); a blocked send emits nothing.
        The fingerprint lookup happens exactly once, before any encryption.
        """
        if isinstance(recipients, str):
            recipients = [recipients]
        recipients = list(recipients)
        for peer in recipients:
            if peer not in self._session_keys:
                raise SessionError(f"{self.id} has no session with {peer}")
        match = self._lookup(img)
        record_id = distance = url = None
        outcome = Outcome.CLEAN
        if match is not None:
            result, record = match
            record_id, distance, url = record.id, result.distance, record.url
            self._count_match(record.id)
            if self.policy is FlagPolicy.WARN_ONLY:
                outcome = Outcome.WARNED
            elif self.policy is FlagPolicy.BLOCK_FORWARD:
                outcome = Outcome.BLOCKED
        envelopes = []
        if outcome is not Outcome.BLOCKED:
            plaintext = encode_pnm(img)
            for peer in recipients:
                sequence = self._sequences.get(peer, 0) + 1
                self._sequences[peer] = sequence
                key = _direction_key(self._session_keys[peer], self.id, peer)
                ciphertext, tag = self.cipher.encrypt(key, sequence, plaintext)
                envelopes.append(
                    Envelope(
                        sender=self.id,
                        recipient=peer,
                        sequence=sequence,
                        ciphertext=ciphertext,
                        tag=tag,
                    )
                )
        decision = FlagDecision(
            t=t,
            stage=Stage.SEND,
            client=self.id,
            peers=tuple(recipients),
            outcome=outcome,
            record_id=record_id,
            distance=distance,
            url=url,
        )
        self.log.append(decision)
        return decision, envelopes

    def receive_image(self, envelope: Envelope, t: float = 0.0):
        """Decrypt, re-hash on-device, and flag against our own snapshot.

        Returns (RasterImage, FlagDecision). A blocked receive still returns
        the image (delivered, but flagged non-forwardable).
        """
        if envelope.recipient != self.id:
            raise SessionError(
                f"envelope for {envelope.recipient} given to {self.id}"
            )
        if envelope.sender not in self._session_keys:
            raise SessionError(f"{self.id} has no session with {envelope.sender}")
        key = _direction_key(self._session_keys[envelope.sender], envelope.sender, self.id)
        plaintext = self.cipher.decrypt(
            key, envelope.sequence, envelope.ciphertext, envelope.tag
        )
        try:
            img = decode_pnm(plaintext)
        except MalformedImageError as exc:
            raise CorruptPayloadError(f"payload is not a valid image: {exc}") from exc
        match = self._lookup(img)
        record_id = distance = url = None
        outcome = Outcome.CLEAN
        if match is not None:
            result, record = match
            record_id, distance, url = record.id, result.distance, record.url
            self._count_match(record.id)
            if self.policy is FlagPolicy.WARN_ONLY:
                outcome = Outcome.WARNED
            elif self.policy is FlagPolicy.BLOCK_FORWARD:
                outcome = Outcome.BLOCKED
        decision = FlagDecision(
            t=t,
            stage=Stage.RECEIVE,
            client=self.id,
            peers=(envelope.sender,),
            outcome=outcome,
            record_id=record_id,
            distance=distance,
            url=url,
        )
        self.log.append(decision)
        return img, decision


# -- scripted scenarios --------------------------------------------------------------


@dataclass(frozen=True)
class ScriptEvent:
    line: int
    t: float
    kind: str
    actor: str
    recipients: tuple = ()
    image_path: str = None
    bundle_path: str = None


_EVENT_KEYS = {
    "send": {"t", "kind", "actor", "recipient", "group", "image_path"},
    "apply_bundle": {"t", "kind", "actor", "bundle_path"},
}


def parse_script(text: str):
    """Parse a JSON-lines scenario script; blank lines are ignored.

    Raises ScriptError with the 1-based line number on any malformed event.
    """
    events = []
    last_t = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScriptError(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ScriptError(line_no, "event must be a JSON object")
        kind = obj.get("kind")
        if kind not in _EVENT_KEYS:
            raise ScriptError(line_no, f"unknown event kind {kind!r}")
        extra = set(obj) - _EVENT_KEYS[kind]
        if extra:
            raise ScriptError(line_no, f"unexpected keys {sorted(extra)}")
        if "t" not in obj or not isinstance(obj["t"], (int, float)):
            raise ScriptError(line_no, "numeric timestamp 't' required")
        t = obj["t"]
        if last_t is not None and t < last_t:
            raise ScriptError(line_no, f"timestamp {t} goes backwards")
        last_t = t
        actor = obj.get("actor")
        if not isinstance(actor, str) or not actor:
            raise ScriptError(line_no, "non-empty 'actor' required")
        if kind == "send":
            recipient = obj.get("recipient")
            group = obj.get("group")
            if (recipient is None) == (group is None):
                raise ScriptError(
                    line_no, "send needs exactly one of 'recipient' or 'group'"
                )
            if recipient is not None:
                if not isinstance(recipient, str) or not recipient:
                    raise ScriptError(line_no, "'recipient' must be a client id")
                recipients = (recipient,)
            else:
                if (
                    not isinstance(group, list)
                    or not group
                    or not all(isinstance(g, str) and g for g in group)
                ):
                    raise ScriptError(
                        line_no, "'group' must be a non-empty list of client ids"
                    )
                recipients = tuple(group)
            image_path = obj.get("image_path")
            if not isinstance(image_path, str) or not image_path:
                raise ScriptError(line_no, "'image_path' required for send")
            events.append(
                ScriptEvent(
                    line=line_no,
                    t=t,
                    kind=kind,
                    actor=actor,
                    recipients=recipients,
                    image_path=image_path,
                )
            )
        else:
            bundle_path = obj.get("bundle_path")
            if not isinstance(bundle_path, str) or not bundle_path:
                raise ScriptError(line_no, "'bundle_path' required for apply_bundle")
            events.append(
                ScriptEvent(
                    line=line_no,
                    t=t,
                    kind=kind,
                    actor=actor,
                    bundle_path=bundle_path,
                )
            )
    return events


@dataclass
class SimConfig:
    policy: FlagPolicy = FlagPolicy.WARN_ONLY
    radius: int = DEFAULT_RADIUS
    bundle_key: bytes = DEFAULT_BUNDLE_KEY
    telemetry: bool = True


@dataclass
class SimReport:
    decisions: list
    server_trace: list
    counters: dict
    prevented_total: int
    applies: list
    delivery_failures: list

    def to_dict(self) -> dict:
        return {
            "decisions": self.decisions,
            "server_trace": self.server_trace,
            "counters": {str(k): v for k, v in sorted(self.counters.items())},
            "prevented_total": self.prevented_total,
            "applies": self.applies,
            "delivery_failures": self.delivery_failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _file_loader(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _session_key(seed: int, a: str, b: str) -> bytes:
    lo, hi = sorted((a, b))
    material = (
        b"fcmatch-session:"
        + seed.to_bytes(8, "little")
        + lo.encode("utf-8")
        + b"|"
        + hi.encode("utf-8")
    )
    return hashlib.sha256(material).digest()


def run_scenario(
    events, seed: int = 0, config: SimConfig = None, loader=_file_loader
) -> SimReport:
    """Run parsed script events through clients and relay, single-threaded.

    `loader` maps a script path string to file bytes; swap it out to feed
    scenarios from memory instead of local storage.
    """
    if not (0 <= seed < (1 << 64)):
        raise ConfigurationError("seed must fit in a uint64")
    cfg = config if config is not None else SimConfig()
    relay = Relay()
    counter = MatchCounter()
    clients = {}

    def ensure_client(client_id: str) -> Client:
        if client_id not in clients:
            clients[client_id] = Client(
                client_id,
                policy=cfg.policy,
                radius=cfg.radius,
                telemetry=cfg.telemetry,
                counter=counter,
            )
            relay.register(client_id)
        return clients[client_id]

    # register everyone up front so the relay can route any scripted pair
    for event in events:
        ensure_client(event.actor)
        for peer in event.recipients:
            ensure_client(peer)

    decisions = []
    applies = []
    for event in events:
        actor = ensure_client(event.actor)
        if event.kind == "apply_bundle":
            raw = loader(event.bundle_path)
            entry = {"t": event.t, "actor": event.actor, "ok": True, "reason": None}
            try:
                bundle = bundle_from_json(raw.decode("utf-8"))
                entry["version"] = bundle.version
                actor.apply_bundle(bundle, cfg.bundle_key)
            except Exception as exc:  # recorded in the report, not fatal
                entry.setdefault("version", None)
                entry["ok"] = False
                entry["reason"] = str(exc)
            applies.append(entry)
            continue
        img = decode_image(loader(event.image_path))
        for peer in event.recipients:
            if not actor.has_session(peer):
                key = _session_key(seed, event.actor, peer)
                actor.establish_session(peer, key)
                ensure_client(peer).establish_session(event.actor, key)
        decision, envelopes = actor.send_image(list(event.recipients), img, t=event.t)
        decisions.append(decision.to_dict())
        for envelope in envelopes:
            if relay.deliver(envelope, event.t):
                receiver = ensure_client(envelope.recipient)
                queued = relay.queues[envelope.recipient].pop(0)
                _, rdecision = receiver.receive_image(queued, t=event.t)
                decisions.append(rdecision.to_dict())

    prevented = sum(
        1
        for d in decisions
        if d["stage"] == Stage.SEND.value and d["outcome"] == Outcome.BLOCKED.value
    )
    return SimReport(
        decisions=decisions,
        server_trace=relay.trace,
        counters=dict(counter.counts),
        prevented_total=prevented,
        applies=applies,
        delivery_failures=relay.delivery_failures,
    )
