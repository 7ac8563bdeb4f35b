"""Sealing, redaction and verification of session records.

Hashing layout
--------------
A record splits into a *public* part (everything except the master seed,
the per-circuit seeds and the counts digests) and a *private* part (those
three). With ``canon`` the compact sorted-key JSON encoding::

    commitment  = SHA-256(canon(private))
    sealed      = canon(public) || commitment || prev_record_hash   (prev is b"" at genesis)
    record_hash = SHA-256(sealed)
    hmac_tag    = HMAC-SHA256(hmac_key, sealed)
    signature   = RSA-PKCS1v15-SHA256(record_hash)

Redaction drops the private part and keeps ``commitment`` as
``private_commitment``, so ``sealed`` and with it the hash, MAC and signature
are unchanged.

Artifact files are the sorted-key JSON of the artifact with two-space indent
and a trailing newline. Digests and signatures are lowercase hex. A file
whose bytes differ from the canonical re-encoding of its parsed content is
rejected, so alternative spellings of the same values (``1E-05``, upper-case
hex) count as tampering.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import math
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .attest import ChshEvidence
from .features import FeatureError, FeatureVector

SCHEMA_VERSION = "qdna-1"
ARTIFACT_SUFFIX = ".qdna.json"
MIN_RSA_BITS = 2048
HMAC_KEY_BYTES = 32
FIXED_CLOCK_ENV = "QDNA_FIXED_CLOCK"

_HEX64 = re.compile(r"[0-9a-f]{64}")
_HEX = re.compile(r"(?:[0-9a-f]{2})+")

RECORD_KEYS = {
    "schema_version",
    "device_id",
    "session_id",
    "timestamp_utc",
    "master_seed",
    "shots",
    "circuits",
    "features",
    "counts_digest",
    "chsh",
    "calibration_meta",
}
PRIVATE_KEYS = {"master_seed", "counts_digest"}
ARTIFACT_KEYS = {
    "record",
    "prev_record_hash",
    "record_hash",
    "hmac_tag",
    "signature",
    "signer_key_id",
    "redacted",
    "private_commitment",
}


class ProvenanceError(ValueError):
    pass


class ArtifactFormatError(ProvenanceError):
    pass


class KeyMaterialError(ProvenanceError):
    pass


# ---------------------------------------------------------------- primitives


@lru_cache(maxsize=None)
def primitive_self_test() -> bool:
    """Check SHA-256 and HMAC-SHA256 against published vectors (FIPS 180-2, RFC 4231)."""
    vectors = [
        (hashlib.sha256(b"").hexdigest(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
        (hashlib.sha256(b"abc").hexdigest(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
        (
            hmac.new(b"\x0b" * 20, b"Hi There", hashlib.sha256).hexdigest(),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7",
        ),
        (
            hmac.new(b"Jefe", b"what do ya want for nothing?", hashlib.sha256).hexdigest(),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
        ),
        (
            hmac.new(b"\xaa" * 131, b"Test Using Larger Than Block-Size Key - Hash Key First", hashlib.sha256).hexdigest(),
            "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
        ),
    ]
    for got, want in vectors:
        if got != want:
            raise ProvenanceError(f"digest self-test failed: {got} != {want}")
    return True


def canonical_json(obj: Any) -> bytes:
    try:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False).encode()
    except ValueError as exc:
        raise ProvenanceError(f"cannot canonicalise: {exc}") from exc


def utc_now() -> str:
    """RFC 3339 UTC timestamp; ``QDNA_FIXED_CLOCK`` pins it for reproducible runs."""
    fixed = os.environ.get(FIXED_CLOCK_ENV)
    if fixed:
        parse_timestamp(fixed)
        return fixed
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_timestamp(value: str) -> datetime:
    try:
        stamp = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except (AttributeError, ValueError) as exc:
        raise ProvenanceError(f"bad RFC 3339 timestamp {value!r}") from exc
    if stamp.tzinfo is None:
        raise ProvenanceError(f"timestamp {value!r} lacks a UTC offset")
    return stamp


# ---------------------------------------------------------------- keys


def generate_signing_key(bits: int = MIN_RSA_BITS) -> rsa.RSAPrivateKey:
    return rsa.generate_private_key(public_exponent=65537, key_size=bits)


def generate_hmac_key() -> bytes:
    return os.urandom(HMAC_KEY_BYTES)


def _check_rsa(key):
    if not isinstance(key, (rsa.RSAPrivateKey, rsa.RSAPublicKey)):
        raise KeyMaterialError(f"expected an RSA key, got {type(key).__name__}")
    if key.key_size < MIN_RSA_BITS:
        raise KeyMaterialError(f"RSA modulus of {key.key_size} bits is below {MIN_RSA_BITS}")


def _check_hmac_key(key):
    if not isinstance(key, (bytes, bytearray)) or len(key) != HMAC_KEY_BYTES:
        raise KeyMaterialError(f"HMAC key must be {HMAC_KEY_BYTES} bytes")


def key_id(public_key: rsa.RSAPublicKey) -> str:
    """First 16 hex chars of SHA-256 over the DER SubjectPublicKeyInfo."""
    der = public_key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    return hashlib.sha256(der).hexdigest()[:16]


def private_key_pem(key: rsa.RSAPrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )


def public_key_pem(key) -> bytes:
    if isinstance(key, rsa.RSAPrivateKey):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_private_key(path) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    except ValueError as exc:
        raise KeyMaterialError(f"{path}: malformed private key") from exc
    _check_rsa(key)
    return key


def load_public_key(path) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_pem_public_key(Path(path).read_bytes())
    except ValueError as exc:
        raise KeyMaterialError(f"{path}: malformed public key") from exc
    _check_rsa(key)
    return key


def load_hmac_key(path) -> bytes:
    """HMAC keys are stored as 64 lowercase hex characters."""
    text = Path(path).read_text().strip()
    if not _HEX64.fullmatch(text):
        raise KeyMaterialError(f"{path}: HMAC key file must hold 64 hex characters")
    return bytes.fromhex(text)


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class CircuitEntry:
    circuit_id: str
    seed: int | None
    gate_count: int

    def to_dict(self, private: bool = True) -> dict:
        out = {"circuit_id": self.circuit_id, "gate_count": self.gate_count}
        if private:
            out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class SessionRecord:
    device_id: str
    session_id: str
    timestamp_utc: str
    master_seed: int | None
    shots: int
    circuits: tuple[CircuitEntry, ...]
    features: dict[str, FeatureVector]
    counts_digest: dict[str, str] | None
    chsh: ChshEvidence
    calibration_meta: dict[str, Any] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    __hash__ = None

    @property
    def is_redacted(self) -> bool:
        return self.master_seed is None

    def validate(self):
        parse_timestamp(self.timestamp_utc)
        ids = [c.circuit_id for c in self.circuits]
        if len(set(ids)) != len(ids):
            raise ProvenanceError("duplicate circuit ids")
        if set(ids) != set(self.features):
            raise ProvenanceError("circuit list does not match feature keys")
        if self.shots < 1:
            raise ProvenanceError("shots must be positive")
        for fv in self.features.values():
            for name, value in fv.to_dict().items():
                if not math.isfinite(value):
                    raise ProvenanceError(f"non-finite feature {name}={value}")

    def public_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "device_id": self.device_id,
            "session_id": self.session_id,
            "timestamp_utc": self.timestamp_utc,
            "shots": self.shots,
            "circuits": [c.to_dict(private=False) for c in self.circuits],
            "features": {c: fv.to_dict() for c, fv in self.features.items()},
            "chsh": self.chsh.to_dict(),
            "calibration_meta": dict(self.calibration_meta),
        }

    def private_dict(self) -> dict:
        if self.is_redacted:
            raise ProvenanceError("redacted record has no private fields")
        return {
            "master_seed": self.master_seed,
            "circuit_seeds": {c.circuit_id: c.seed for c in self.circuits},
            "counts_digest": dict(self.counts_digest or {}),
        }

    def to_dict(self) -> dict:
        out = self.public_dict()
        if not self.is_redacted:
            out["master_seed"] = self.master_seed
            out["counts_digest"] = dict(self.counts_digest or {})
            out["circuits"] = [c.to_dict() for c in self.circuits]
        return out

    def redacted(self) -> SessionRecord:
        return SessionRecord(
            device_id=self.device_id,
            session_id=self.session_id,
            timestamp_utc=self.timestamp_utc,
            master_seed=None,
            shots=self.shots,
            circuits=tuple(CircuitEntry(c.circuit_id, None, c.gate_count) for c in self.circuits),
            features=dict(self.features),
            counts_digest=None,
            chsh=self.chsh,
            calibration_meta=dict(self.calibration_meta),
            schema_version=self.schema_version,
        )

    @classmethod
    def from_dict(cls, data: dict, redacted: bool) -> SessionRecord:
        expected = RECORD_KEYS - PRIVATE_KEYS if redacted else RECORD_KEYS
        _exact_keys(data, expected, "record")
        circuit_keys = {"circuit_id", "gate_count"} | (set() if redacted else {"seed"})
        circuits = []
        for entry in _typed(data["circuits"], list, "circuits"):
            _exact_keys(entry, circuit_keys, "circuit entry")
            circuits.append(
                CircuitEntry(
                    _typed(entry["circuit_id"], str, "circuit_id"),
                    None if redacted else _typed(entry["seed"], int, "seed"),
                    _typed(entry["gate_count"], int, "gate_count"),
                )
            )
        features = {}
        for cid, fv in _typed(data["features"], dict, "features").items():
            _exact_keys(fv, set(FeatureVector.__dataclass_fields__), f"features[{cid}]")
            for name, value in fv.items():
                _typed(value, int if name == "support" else float, f"features[{cid}].{name}")
            features[cid] = FeatureVector.from_dict(fv)
        chsh = _typed(data["chsh"], dict, "chsh")
        _exact_keys(chsh, {"E_ab", "E_ab_p", "E_ap_b", "E_ap_bp", "S", "shots_per_setting", "pass", "threshold"}, "chsh")
        _typed(chsh["pass"], bool, "chsh.pass")
        _typed(chsh["shots_per_setting"], int, "chsh.shots_per_setting")
        for k in ("E_ab", "E_ab_p", "E_ap_b", "E_ap_bp", "S", "threshold"):
            _typed(chsh[k], float, f"chsh.{k}")
        counts_digest = None
        if not redacted:
            counts_digest = dict(_typed(data["counts_digest"], dict, "counts_digest"))
            for cid, digest in counts_digest.items():
                if not isinstance(digest, str) or not _HEX64.fullmatch(digest):
                    raise ArtifactFormatError(f"counts_digest[{cid}] is not a SHA-256 hex digest")
        return cls(
            device_id=_typed(data["device_id"], str, "device_id"),
            session_id=_typed(data["session_id"], str, "session_id"),
            timestamp_utc=_typed(data["timestamp_utc"], str, "timestamp_utc"),
            master_seed=None if redacted else _typed(data["master_seed"], int, "master_seed"),
            shots=_typed(data["shots"], int, "shots"),
            circuits=tuple(circuits),
            features=features,
            counts_digest=counts_digest,
            chsh=ChshEvidence.from_dict(chsh),
            calibration_meta=_typed(data["calibration_meta"], dict, "calibration_meta"),
            schema_version=_typed(data["schema_version"], str, "schema_version"),
        )


def _exact_keys(obj, expected, where):
    if not isinstance(obj, dict):
        raise ArtifactFormatError(f"{where} must be an object")
    if set(obj) != set(expected):
        extra, missing = set(obj) - set(expected), set(expected) - set(obj)
        raise ArtifactFormatError(f"{where}: unexpected keys {sorted(extra)}, missing {sorted(missing)}")


def _typed(value, kind, where):
    ok = isinstance(value, kind)
    if kind is int or kind is float:
        ok = ok and not isinstance(value, bool)
    if not ok:
        raise ArtifactFormatError(f"{where} must be {kind.__name__}, got {type(value).__name__}")
    return value


def canonical_bytes(record: SessionRecord) -> bytes:
    """Canonical encoding of the full record: sorted keys, compact, shortest round-trip floats."""
    return canonical_json(record.to_dict())


def private_commitment(record: SessionRecord) -> bytes:
    return hashlib.sha256(canonical_json(record.private_dict())).digest()


def sealed_bytes(record: SessionRecord, prev_hash: bytes | None, commitment: bytes | None = None) -> bytes:
    if commitment is None:
        commitment = private_commitment(record)
    return canonical_json(record.public_dict()) + commitment + (prev_hash or b"")


# ---------------------------------------------------------------- artifacts


@dataclass(frozen=True)
class ProvenanceArtifact:
    record: SessionRecord
    prev_record_hash: bytes | None
    record_hash: bytes
    hmac_tag: bytes
    signature: bytes
    signer_key_id: str
    redacted: bool = False
    private_commitment: bytes | None = None

    __hash__ = None

    def to_dict(self) -> dict:
        hx = lambda b: None if b is None else b.hex()  # noqa: E731
        return {
            "record": self.record.to_dict(),
            "prev_record_hash": hx(self.prev_record_hash),
            "record_hash": hx(self.record_hash),
            "hmac_tag": hx(self.hmac_tag),
            "signature": hx(self.signature),
            "signer_key_id": self.signer_key_id,
            "redacted": self.redacted,
            "private_commitment": hx(self.private_commitment),
        }

    def to_bytes(self) -> bytes:
        try:
            text = json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False)
        except ValueError as exc:
            raise ProvenanceError(f"cannot encode artifact: {exc}") from exc
        return (text + "\n").encode()

    @classmethod
    def from_dict(cls, data: dict) -> ProvenanceArtifact:
        _exact_keys(data, ARTIFACT_KEYS, "artifact")
        redacted = _typed(data["redacted"], bool, "redacted")

        def unhex(name, nullable=False, exact=None):
            value = data[name]
            if value is None and nullable:
                return None
            if not isinstance(value, str) or not _HEX.fullmatch(value):
                raise ArtifactFormatError(f"{name} is not lowercase hex")
            raw = bytes.fromhex(value)
            if exact is not None and len(raw) != exact:
                raise ArtifactFormatError(f"{name} must be {exact} bytes")
            return raw

        commitment = unhex("private_commitment", nullable=True, exact=32)
        if redacted != (commitment is not None):
            raise ArtifactFormatError("private_commitment must be present iff the artifact is redacted")
        return cls(
            record=SessionRecord.from_dict(data["record"], redacted),
            prev_record_hash=unhex("prev_record_hash", nullable=True, exact=32),
            record_hash=unhex("record_hash", exact=32),
            hmac_tag=unhex("hmac_tag", exact=32),
            signature=unhex("signature"),
            signer_key_id=_typed(data["signer_key_id"], str, "signer_key_id"),
            redacted=redacted,
            private_commitment=commitment,
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> ProvenanceArtifact:
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArtifactFormatError(f"not JSON: {exc}") from exc
        return cls.from_dict(data)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path


def read_artifact(path) -> ProvenanceArtifact:
    return ProvenanceArtifact.from_bytes(Path(path).read_bytes())


def seal(
    record: SessionRecord,
    prev_hash: bytes | None,
    hmac_key: bytes,
    signing_key: rsa.RSAPrivateKey,
) -> ProvenanceArtifact:
    """Hash, MAC and sign ``record`` chained onto ``prev_hash`` (``None`` at genesis)."""
    primitive_self_test()
    _check_hmac_key(hmac_key)
    _check_rsa(signing_key)
    if record.is_redacted:
        raise ProvenanceError("seal the full record, then redact")
    if prev_hash is not None and len(prev_hash) != 32:
        raise ProvenanceError("prev_hash must be a 32-byte digest")
    record.validate()
    body = sealed_bytes(record, prev_hash)
    record_hash = hashlib.sha256(body).digest()
    return ProvenanceArtifact(
        record=record,
        prev_record_hash=prev_hash,
        record_hash=record_hash,
        hmac_tag=hmac.new(bytes(hmac_key), body, hashlib.sha256).digest(),
        signature=signing_key.sign(record_hash, padding.PKCS1v15(), hashes.SHA256()),
        signer_key_id=key_id(signing_key.public_key()),
    )


def redact(artifact: ProvenanceArtifact) -> ProvenanceArtifact:
    """Public variant: private fields replaced by their SHA-256 commitment."""
    if artifact.redacted:
        raise ProvenanceError("artifact is already redacted")
    return ProvenanceArtifact(
        record=artifact.record.redacted(),
        prev_record_hash=artifact.prev_record_hash,
        record_hash=artifact.record_hash,
        hmac_tag=artifact.hmac_tag,
        signature=artifact.signature,
        signer_key_id=artifact.signer_key_id,
        redacted=True,
        private_commitment=private_commitment(artifact.record),
    )


# ---------------------------------------------------------------- verification

OK, FAIL, SKIPPED = "ok", "fail", "skipped"


@dataclass
class VerificationReport:
    encoding_ok: str = SKIPPED
    hash_ok: str = SKIPPED
    hmac_ok: str = SKIPPED
    signature_ok: str = SKIPPED
    chsh_recheck_ok: str = SKIPPED
    chain_link_ok: str = SKIPPED
    details: dict[str, str] = field(default_factory=dict)

    CHECKS = ("encoding_ok", "hash_ok", "hmac_ok", "signature_ok", "chsh_recheck_ok", "chain_link_ok")

    @property
    def passed(self) -> bool:
        return all(getattr(self, c) != FAIL for c in self.CHECKS)

    @property
    def failed_checks(self) -> list[str]:
        return [c for c in self.CHECKS if getattr(self, c) == FAIL]

    def to_dict(self) -> dict:
        out = {c: getattr(self, c) for c in self.CHECKS}
        out["passed"] = self.passed
        out["details"] = dict(self.details)
        return out


def verify(artifact: ProvenanceArtifact, public_key: rsa.RSAPublicKey, hmac_key: bytes | None = None) -> VerificationReport:
    """Recompute hash, MAC, signature and CHSH verdict; failures are report entries."""
    report = VerificationReport()
    d = report.details

    if artifact.prev_record_hash is None or len(artifact.prev_record_hash) == 32:
        report.chain_link_ok = OK
    else:
        report.chain_link_ok = FAIL
        d["chain_link_ok"] = "prev_record_hash is neither null nor a 32-byte digest"

    body = None
    try:
        if artifact.redacted != artifact.record.is_redacted:
            raise ProvenanceError("redacted flag disagrees with record contents")
        if artifact.redacted:
            if artifact.private_commitment is None:
                raise ProvenanceError("redacted artifact lacks private_commitment")
            commitment = artifact.private_commitment
        else:
            if artifact.private_commitment is not None:
                raise ProvenanceError("unredacted artifact carries a private_commitment")
            commitment = private_commitment(artifact.record)
        artifact.record.validate()
        body = sealed_bytes(artifact.record, artifact.prev_record_hash, commitment)
        recomputed = hashlib.sha256(body).digest()
        if hmac.compare_digest(recomputed, artifact.record_hash):
            report.hash_ok = OK
        else:
            report.hash_ok = FAIL
            d["hash_ok"] = f"record_hash {artifact.record_hash.hex()} != recomputed {recomputed.hex()}"
    except ProvenanceError as exc:
        report.hash_ok = FAIL
        d["hash_ok"] = str(exc)

    if hmac_key is None:
        d["hmac_ok"] = "no HMAC key supplied"
    elif body is None:
        report.hmac_ok = FAIL
        d["hmac_ok"] = "record could not be encoded"
    else:
        tag = hmac.new(bytes(hmac_key), body, hashlib.sha256).digest()
        report.hmac_ok = OK if hmac.compare_digest(tag, artifact.hmac_tag) else FAIL
        if report.hmac_ok == FAIL:
            d["hmac_ok"] = "HMAC tag mismatch"

    expected_id = key_id(public_key)
    if artifact.signer_key_id != expected_id:
        report.signature_ok = FAIL
        d["signature_ok"] = f"signer_key_id {artifact.signer_key_id} does not match public key {expected_id}"
    else:
        try:
            public_key.verify(artifact.signature, artifact.record_hash, padding.PKCS1v15(), hashes.SHA256())
            report.signature_ok = OK
        except InvalidSignature:
            report.signature_ok = FAIL
            d["signature_ok"] = "RSA signature does not verify"

    problems = artifact.record.chsh.problems()
    report.chsh_recheck_ok = FAIL if problems else OK
    if problems:
        d["chsh_recheck_ok"] = "; ".join(problems)
    return report


def verify_bytes(raw: bytes, public_key: rsa.RSAPublicKey, hmac_key: bytes | None = None) -> VerificationReport:
    """Verify an artifact file's bytes, including its canonical encoding."""
    try:
        artifact = ProvenanceArtifact.from_bytes(raw)
    except (ProvenanceError, FeatureError, TypeError) as exc:
        report = VerificationReport(encoding_ok=FAIL, hash_ok=FAIL)
        report.details["encoding_ok"] = f"unparseable artifact: {exc}"
        return report
    report = verify(artifact, public_key, hmac_key)
    try:
        canonical = artifact.to_bytes()
    except ProvenanceError as exc:
        canonical, report.details["encoding_ok"] = None, str(exc)
    report.encoding_ok = OK if canonical == raw else FAIL
    if report.encoding_ok == FAIL:
        report.details.setdefault("encoding_ok", "file bytes are not the canonical encoding of their content")
    return report

