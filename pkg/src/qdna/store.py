"""Append-only hierarchical store of verified artifacts.

Layout::

    root/<device_id>/<session_id>.qdna.json
    root/<device_id>/index.tsv

Each index line is ``session_id<TAB>record_hash<TAB>relative_path<TAB>file_sha256``
in chain order. The file digest lets an audit without keys detect edits to
fields the record hash does not cover (signature, MAC tag).
"""
from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .provenance import (
    ARTIFACT_SUFFIX,
    ProvenanceArtifact,
    ProvenanceError,
    private_commitment,
    sealed_bytes,
    verify,
)

INDEX_NAME = "index.tsv"
_SAFE_ID = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*")


class StoreError(Exception):
    pass


class AdmissionError(StoreError):
    """Artifact failed verification."""


class ChainLinkError(StoreError):
    pass


class DuplicateSessionError(StoreError):
    pass


class NotFoundError(StoreError, KeyError):
    pass


@dataclass(frozen=True)
class IndexEntry:
    session_id: str
    record_hash: str
    path: str
    file_sha256: str


@dataclass
class AuditReport:
    device_id: str
    length: int = 0
    break_index: int | None = None
    findings: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return self.break_index is None

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "length": self.length,
            "clean": self.clean,
            "break_index": self.break_index,
            "findings": list(self.findings),
        }


def _check_id(value: str, what: str) -> str:
    if not _SAFE_ID.fullmatch(value or ""):
        raise StoreError(f"{what} {value!r} is not a safe path component")
    return value


class ArtifactStore:
    """Per-device hash chains under ``root``.

    ``public_key`` is needed to admit artifacts (signature and hash are checked
    before anything is written); ``hmac_key`` is optional. Single writer per
    device; readers never modify anything.
    """

    def __init__(self, root, public_key=None, hmac_key: bytes | None = None):
        self.root = Path(root)
        self.public_key = public_key
        self.hmac_key = hmac_key

    # -- reading

    def devices(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / INDEX_NAME).is_file())

    def entries(self, device_id: str) -> list[IndexEntry]:
        index = self.root / _check_id(device_id, "device_id") / INDEX_NAME
        if not index.is_file():
            return []
        out = []
        for lineno, line in enumerate(index.read_text().splitlines()):
            parts = line.split("\t")
            if len(parts) != 4:
                raise StoreError(f"{index}:{lineno + 1}: malformed index line")
            out.append(IndexEntry(*parts))
        return out

    def head_hash(self, device_id: str) -> bytes | None:
        entries = self.entries(device_id)
        return bytes.fromhex(entries[-1].record_hash) if entries else None

    def _entry(self, device_id: str, session_id: str) -> IndexEntry:
        for entry in self.entries(device_id):
            if entry.session_id == session_id:
                return entry
        raise NotFoundError(f"no session {session_id!r} for device {device_id!r}")

    def get_bytes(self, device_id: str, session_id: str) -> bytes:
        entry = self._entry(device_id, session_id)
        return (self.root / device_id / entry.path).read_bytes()

    def get(self, device_id: str, session_id: str) -> ProvenanceArtifact:
        return ProvenanceArtifact.from_bytes(self.get_bytes(device_id, session_id))

    def chain(self, device_id: str) -> list[ProvenanceArtifact]:
        return [
            ProvenanceArtifact.from_bytes((self.root / device_id / e.path).read_bytes())
            for e in self.entries(device_id)
        ]

    # -- writing

    def append(self, artifact: ProvenanceArtifact) -> int:
        """Admit ``artifact`` at the head of its device chain; returns its position."""
        if self.public_key is None:
            raise StoreError("store opened without a public key cannot admit artifacts")
        record = artifact.record
        device_id = _check_id(record.device_id, "device_id")
        session_id = _check_id(record.session_id, "session_id")

        report = verify(artifact, self.public_key, self.hmac_key)
        if not report.passed:
            raise AdmissionError(f"verification failed: {', '.join(report.failed_checks)}")

        entries = self.entries(device_id)
        if any(e.session_id == session_id for e in entries):
            raise DuplicateSessionError(f"session {session_id!r} already stored for {device_id!r}")
        head = bytes.fromhex(entries[-1].record_hash) if entries else None
        if artifact.prev_record_hash != head:
            want = head.hex() if head else "null"
            got = artifact.prev_record_hash.hex() if artifact.prev_record_hash else "null"
            raise ChainLinkError(f"prev_record_hash {got} does not match head {want}")

        device_dir = self.root / device_id
        device_dir.mkdir(parents=True, exist_ok=True)
        rel = f"{session_id}{ARTIFACT_SUFFIX}"
        raw = artifact.to_bytes()
        try:
            with open(device_dir / rel, "xb") as fh:
                fh.write(raw)
                fh.flush()
                os.fsync(fh.fileno())
        except FileExistsError:
            raise DuplicateSessionError(f"{device_dir / rel} already exists") from None
        line = f"{session_id}\t{artifact.record_hash.hex()}\t{rel}\t{hashlib.sha256(raw).hexdigest()}\n"
        with open(device_dir / INDEX_NAME, "a") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        return len(entries)

    # -- auditing

    def audit_chain(self, device_id: str) -> AuditReport:
        """Walk the chain from genesis and report the first broken position."""
        report = AuditReport(device_id)
        try:
            entries = self.entries(device_id)
        except StoreError as exc:
            report.break_index = 0
            report.findings.append(str(exc))
            return report
        report.length = len(entries)
        prev = None
        for i, entry in enumerate(entries):
            problem = self._audit_entry(device_id, entry, prev)
            if problem:
                report.break_index = i
                report.findings.append(f"[{i}] {entry.session_id}: {problem}")
                break
            prev = bytes.fromhex(entry.record_hash)
        return report

    def _audit_entry(self, device_id, entry, prev) -> str | None:
        path = self.root / device_id / entry.path
        try:
            raw = path.read_bytes()
        except OSError as exc:
            return f"unreadable: {exc}"
        if hashlib.sha256(raw).hexdigest() != entry.file_sha256:
            return "file bytes differ from the digest recorded at admission"
        try:
            artifact = ProvenanceArtifact.from_bytes(raw)
            commitment = artifact.private_commitment if artifact.redacted else private_commitment(artifact.record)
            recomputed = hashlib.sha256(sealed_bytes(artifact.record, artifact.prev_record_hash, commitment)).digest()
        except (ProvenanceError, ValueError) as exc:
            return f"unparseable: {exc}"
        if artifact.to_bytes() != raw:
            return "non-canonical encoding"
        if recomputed != artifact.record_hash:
            return "record_hash does not match content"
        if artifact.record_hash.hex() != entry.record_hash:
            return "index hash does not match artifact"
        if artifact.prev_record_hash != prev:
            return "prev_record_hash does not link to the previous entry"
        if artifact.record.session_id != entry.session_id or artifact.record.device_id != device_id:
            return "artifact identity does not match its index entry"
        if self.public_key is not None:
            report = verify(artifact, self.public_key, self.hmac_key)
            if not report.passed:
                return f"verification failed: {', '.join(report.failed_checks)}"
        return None
