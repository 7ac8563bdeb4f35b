import hashlib
import hmac
import json

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import padding
from hypothesis import given, settings
from hypothesis import strategies as st

from qdna.provenance import (
    ArtifactFormatError,
    KeyMaterialError,
    ProvenanceArtifact,
    ProvenanceError,
    canonical_json,
    key_id,
    load_hmac_key,
    load_private_key,
    load_public_key,
    primitive_self_test,
    private_key_pem,
    public_key_pem,
    redact,
    seal,
    sealed_bytes,
    utc_now,
    verify,
    verify_bytes,
)

from conftest import FIXED_TIME


def test_primitives_match_published_vectors():
    assert primitive_self_test()


def test_record_hash_independent_oracle(sealed_chain, hmac_key, signing_key):
    """Rebuild the hashed bytes from the artifact JSON alone, with hashlib/hmac."""
    art = sealed_chain[1]
    doc = json.loads(art.to_bytes())
    record = doc["record"]
    private = {
        "master_seed": record["master_seed"],
        "circuit_seeds": {c["circuit_id"]: c["seed"] for c in record["circuits"]},
        "counts_digest": record["counts_digest"],
    }
    public = {k: v for k, v in record.items() if k not in ("master_seed", "counts_digest")}
    public["circuits"] = [{"circuit_id": c["circuit_id"], "gate_count": c["gate_count"]} for c in record["circuits"]]
    compact = lambda o: json.dumps(o, sort_keys=True, separators=(",", ":")).encode()  # noqa: E731
    body = compact(public) + hashlib.sha256(compact(private)).digest() + bytes.fromhex(doc["prev_record_hash"])
    assert hashlib.sha256(body).hexdigest() == doc["record_hash"]
    assert hmac.new(hmac_key, body, hashlib.sha256).hexdigest() == doc["hmac_tag"]
    signing_key.public_key().verify(
        bytes.fromhex(doc["signature"]), bytes.fromhex(doc["record_hash"]), padding.PKCS1v15(), hashes.SHA256()
    )


def test_seal_and_verify(sealed_chain, hmac_key, signing_key):
    pub = signing_key.public_key()
    for art in sealed_chain:
        rep = verify_bytes(art.to_bytes(), pub, hmac_key)
        assert rep.passed, rep.to_dict()
        assert rep.hmac_ok == rep.signature_ok == rep.hash_ok == rep.encoding_ok == "ok"
    assert sealed_chain[0].prev_record_hash is None
    assert sealed_chain[1].prev_record_hash == sealed_chain[0].record_hash


def test_verify_with_wrong_keys(sealed_chain, other_signing_key):
    art = sealed_chain[0]
    rep = verify(art, other_signing_key.public_key(), bytes(32))
    assert rep.signature_ok == "fail" and rep.hmac_ok == "fail" and not rep.passed


def test_redacted_artifact_verifies_without_secrets(sealed_chain, signing_key, hmac_key):
    art = sealed_chain[0]
    red = redact(art)
    raw = red.to_bytes()
    doc = json.loads(raw)
    assert "master_seed" not in doc["record"] and "counts_digest" not in doc["record"]
    assert all("seed" not in c for c in doc["record"]["circuits"])
    rep = verify_bytes(raw, signing_key.public_key())
    assert rep.passed and rep.hmac_ok == "skipped"
    assert verify_bytes(raw, signing_key.public_key(), hmac_key).passed
    assert red.record_hash == art.record_hash
    with pytest.raises(ProvenanceError):
        redact(red)
    # a redacted artifact whose commitment is swapped no longer verifies
    forged = ProvenanceArtifact(**{**red.__dict__, "private_commitment": bytes(32)})
    assert verify(forged, signing_key.public_key()).hash_ok == "fail"


def test_artifact_roundtrip_is_byte_stable(sealed_chain):
    raw = sealed_chain[2].to_bytes()
    assert ProvenanceArtifact.from_bytes(raw).to_bytes() == raw
    assert raw.endswith(b"\n")


def test_seal_is_deterministic(sealed_chain, hmac_key, signing_key):
    art = sealed_chain[0]
    again = seal(art.record, None, hmac_key, signing_key)
    assert again.to_bytes() == art.to_bytes()


def test_seal_rejects_bad_inputs(sealed_chain, hmac_key, signing_key):
    rec = sealed_chain[0].record
    with pytest.raises(KeyMaterialError):
        seal(rec, None, b"short", signing_key)
    with pytest.raises(ProvenanceError):
        seal(rec, b"\x00" * 5, hmac_key, signing_key)
    with pytest.raises(ProvenanceError):
        seal(rec.redacted(), None, hmac_key, signing_key)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["record"].__setitem__("shots", d["record"]["shots"] + 1),
        lambda d: d["record"]["features"]["pm"].__setitem__("entropy", 0.5),
        lambda d: d["record"].__setitem__("master_seed", 12),
        lambda d: d["record"]["chsh"].__setitem__("pass", False),
        lambda d: d["record"]["calibration_meta"].__setitem__("processor", "other"),
        lambda d: d.__setitem__("prev_record_hash", "00" * 32),
    ],
)
def test_semantic_edits_fail_verification(sealed_chain, signing_key, hmac_key, mutate):
    doc = json.loads(sealed_chain[1].to_bytes())
    mutate(doc)
    raw = (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()
    rep = verify_bytes(raw, signing_key.public_key(), hmac_key)
    assert not rep.passed
    assert "hash_ok" in rep.failed_checks or "chsh_recheck_ok" in rep.failed_checks


def test_non_canonical_spelling_is_rejected(sealed_chain, signing_key):
    raw = sealed_chain[0].to_bytes()
    spaced = raw.replace(b'"shots": ', b'"shots":  ', 1)
    rep = verify_bytes(spaced, signing_key.public_key())
    assert rep.encoding_ok == "fail" and not rep.passed
    assert verify(ProvenanceArtifact.from_bytes(spaced), signing_key.public_key()).passed


def test_strict_parsing(sealed_chain):
    doc = json.loads(sealed_chain[0].to_bytes())
    doc["extra"] = 1
    with pytest.raises(ArtifactFormatError):
        ProvenanceArtifact.from_dict(doc)
    doc = json.loads(sealed_chain[0].to_bytes())
    doc["record_hash"] = doc["record_hash"].upper()
    with pytest.raises(ArtifactFormatError):
        ProvenanceArtifact.from_dict(doc)
    doc = json.loads(sealed_chain[0].to_bytes())
    doc["record"]["shots"] = True
    with pytest.raises(ArtifactFormatError):
        ProvenanceArtifact.from_dict(doc)
    with pytest.raises(ArtifactFormatError):
        ProvenanceArtifact.from_bytes(b"\xff")


def test_unparseable_bytes_report_failure(signing_key):
    rep = verify_bytes(b"not json", signing_key.public_key())
    assert not rep.passed and rep.encoding_ok == "fail"


def _flip(raw, pos):
    out = bytearray(raw)
    out[pos // 8] ^= 1 << (pos % 8)
    return bytes(out)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_any_single_bit_flip_is_detected_by_keyed_verifier(sealed_chain, signing_key, hmac_key, data):
    raw = sealed_chain[1].to_bytes()
    pos = data.draw(st.integers(0, len(raw) * 8 - 1))
    assert not verify_bytes(_flip(raw, pos), signing_key.public_key(), hmac_key).passed


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_public_verifier_detects_flips_outside_the_mac(sealed_chain, signing_key, data):
    # the MAC tag is only checkable with the secret key; every other byte is public-verifiable
    raw = sealed_chain[1].to_bytes()
    tag = sealed_chain[1].hmac_tag.hex().encode()
    start = raw.index(tag)
    pos = data.draw(st.integers(0, len(raw) * 8 - 1).filter(lambda p: not start <= p // 8 < start + len(tag)))
    assert not verify_bytes(_flip(raw, pos), signing_key.public_key()).passed


def test_mac_tag_flip_needs_the_key(sealed_chain, signing_key, hmac_key):
    raw = sealed_chain[1].to_bytes()
    tag = sealed_chain[1].hmac_tag.hex()
    # flip the low bit of a decimal digit so the tag stays well-formed hex
    offset = next(i for i, ch in enumerate(tag) if ch.isdigit())
    pos = (raw.index(tag.encode()) + offset) * 8
    tampered = _flip(raw, pos)
    assert verify_bytes(tampered, signing_key.public_key()).hmac_ok == "skipped"
    assert verify_bytes(tampered, signing_key.public_key(), hmac_key).hmac_ok == "fail"


def test_sealed_bytes_binds_prev(sealed_chain):
    rec = sealed_chain[1].record
    assert sealed_bytes(rec, None) != sealed_bytes(rec, b"\x01" * 32)


def test_canonical_json_rejects_nan():
    with pytest.raises(ProvenanceError):
        canonical_json({"x": float("nan")})
    assert canonical_json({"b": 1, "a": [1.5, "x"]}) == b'{"a":[1.5,"x"],"b":1}'


def test_fixed_clock(fixed_clock, monkeypatch):
    assert utc_now() == FIXED_TIME
    monkeypatch.setenv("QDNA_FIXED_CLOCK", "yesterday")
    with pytest.raises(ProvenanceError):
        utc_now()


def test_key_files_roundtrip(tmp_path, signing_key):
    (tmp_path / "k.pem").write_bytes(private_key_pem(signing_key))
    (tmp_path / "k.pub").write_bytes(public_key_pem(signing_key.public_key()))
    assert key_id(load_private_key(tmp_path / "k.pem").public_key()) == key_id(signing_key.public_key())
    assert key_id(load_public_key(tmp_path / "k.pub")) == key_id(signing_key.public_key())
    (tmp_path / "h").write_text("ab" * 32 + "\n")
    assert load_hmac_key(tmp_path / "h") == b"\xab" * 32
    (tmp_path / "h").write_text("zz")
    with pytest.raises(KeyMaterialError):
        load_hmac_key(tmp_path / "h")
    (tmp_path / "junk.pem").write_text("junk")
    with pytest.raises(KeyMaterialError):
        load_public_key(tmp_path / "junk.pem")
