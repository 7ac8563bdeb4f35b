"""Command line entry point.

Exit codes: 0 success, 1 a verification, admission or audit check failed,
2 bad arguments, 3 unreadable or malformed input / output failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .classify import DEFAULT_METRICS, MODEL_KINDS, assemble_matrix, list_feature_files, run_pipeline
from .features import DEFAULT_DRIFT_METRIC, FEATURE_FIELDS, FEATURE_FILE_SUFFIX, FeatureError, rows_to_csv, write_feature_file
from .provenance import (
    ProvenanceError,
    generate_hmac_key,
    generate_signing_key,
    load_hmac_key,
    load_private_key,
    load_public_key,
    private_key_pem,
    public_key_pem,
    read_artifact,
    redact,
    verify_bytes,
)
from .reporting import drift_tables, report_summary
from .session import DEFAULT_SHOTS, run_session
from .sim import ProfileError, load_profile
from .store import AdmissionError, ArtifactStore, StoreError

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

HMAC_FILE = "hmac.key"
PRIVATE_FILE = "signing_key.pem"
PUBLIC_FILE = "signing_key.pub.pem"

log = logging.getLogger("qdna")


class CheckFailed(Exception):
    """A check ran and said no; maps to exit code 1."""


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _public_key(args):
    if args.pubkey:
        return load_public_key(args.pubkey)
    if getattr(args, "keys", None):
        return load_public_key(Path(args.keys) / PUBLIC_FILE)
    return None


def _hmac_key(args):
    if args.hmac_key:
        return load_hmac_key(args.hmac_key)
    if getattr(args, "keys", None) and (Path(args.keys) / HMAC_FILE).is_file():
        return load_hmac_key(Path(args.keys) / HMAC_FILE)
    return None


# ---------------------------------------------------------------- commands


def cmd_keygen(args) -> int:
    out = Path(args.out)
    targets = [out / HMAC_FILE, out / PRIVATE_FILE, out / PUBLIC_FILE]
    existing = [str(p) for p in targets if p.exists()]
    if existing:
        raise CheckFailed(f"refusing to overwrite {', '.join(existing)}")
    out.mkdir(parents=True, exist_ok=True)
    key = generate_signing_key()
    payloads = [generate_hmac_key().hex().encode() + b"\n", private_key_pem(key), public_key_pem(key.public_key())]
    for path, data in zip(targets, payloads):
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644 if path.name == PUBLIC_FILE else 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
    for path in targets:
        _emit(str(path))
    return EXIT_OK


def cmd_session(args) -> int:
    profile = load_profile(args.profile)
    keys = Path(args.keys)
    signing_key = load_private_key(keys / PRIVATE_FILE)
    hmac_key = load_hmac_key(keys / HMAC_FILE)
    store = ArtifactStore(args.store, signing_key.public_key(), hmac_key)
    if args.session_id and args.count != 1:
        raise argparse.ArgumentTypeError("--session-id names one session; drop it or use --count 1")
    start = len(store.entries(profile.device_id))
    ids = [args.session_id] if args.session_id else [f"s{start + i:03d}" for i in range(args.count)]
    for session_id in ids:
        artifact, result = run_session(
            profile,
            args.master_seed,
            session_id,
            hmac_key=hmac_key,
            signing_key=signing_key,
            prev_hash=store.head_hash(profile.device_id),
            shots=args.shots,
            interval_label=args.interval_label,
        )
        try:
            position = store.append(artifact)
        except AdmissionError as exc:
            raise CheckFailed(str(exc)) from exc
        except StoreError as exc:
            # duplicate sessions and chain-link mismatches are refusals, not I/O trouble
            raise CheckFailed(str(exc)) from exc
        if args.features_dir:
            target = Path(args.features_dir) / profile.device_id / f"{session_id}{FEATURE_FILE_SUFFIX}"
            target.parent.mkdir(parents=True, exist_ok=True)
            write_feature_file(target, profile.device_id, session_id, result.features)
        chsh = result.chsh
        log.info("%s/%s position %d S=%.4f pass=%s", profile.device_id, session_id, position, chsh.S, chsh.passed)
        _emit(f"{profile.device_id}\t{session_id}\t{position}\t{artifact.record_hash.hex()}")
    return EXIT_OK


def cmd_verify(args) -> int:
    raw = Path(args.artifact).read_bytes()
    public_key = _public_key(args)
    if public_key is None:
        raise argparse.ArgumentTypeError("verify needs --pubkey or --keys")
    report = verify_bytes(raw, public_key, _hmac_key(args))
    _emit(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    if not report.passed:
        log.error("failed checks: %s", ", ".join(report.failed_checks))
        return EXIT_FAILED
    return EXIT_OK


def cmd_redact(args) -> int:
    out = Path(args.out)
    if out.exists():
        raise CheckFailed(f"refusing to overwrite {out}")
    redact(read_artifact(args.artifact)).write(out)
    _emit(str(out))
    return EXIT_OK


def cmd_audit(args) -> int:
    store = ArtifactStore(args.store, _public_key(args), _hmac_key(args))
    devices = args.device or store.devices()
    reports = [store.audit_chain(d) for d in devices]
    _emit(json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2))
    return EXIT_OK if all(r.clean for r in reports) else EXIT_FAILED


def _device_sessions(store: ArtifactStore, device_id: str):
    return [(a.record.session_id, a.record.features) for a in store.chain(device_id)]


def cmd_drift(args) -> int:
    store = ArtifactStore(args.store)
    tables = drift_tables(args.device, _device_sessions(store, args.device), args.metric)
    if args.out:
        for stem, text in tables.csv().items():
            _write(Path(args.out) / f"{args.device}_{args.metric}_{stem}.csv", text)
    _emit(tables.csv()["drift_totals"])
    return EXIT_OK


def cmd_report(args) -> int:
    store = ArtifactStore(args.store)
    devices = args.devices or store.devices()
    if not devices:
        raise FeatureError("store holds no devices")
    out = Path(args.out)
    all_tables = []
    for device in devices:
        sessions = _device_sessions(store, device)
        for metric in args.metrics:
            tables = drift_tables(device, sessions, metric)
            all_tables.append(tables)
            for stem, text in tables.csv().items():
                _write(out / device / f"{metric}_{stem}.csv", text)
    summary = rows_to_csv(report_summary(all_tables))
    _write(out / "summary.csv", summary)
    _emit(summary)
    return EXIT_OK


def cmd_classify(args) -> int:
    files_a, files_b = list_feature_files(args.dev_a), list_feature_files(args.dev_b)
    if not files_a or not files_b:
        raise FeatureError("both device directories need feature files")
    fm = assemble_matrix(files_a, files_b, args.metrics, args.min_presence)
    params = {
        "l2_lambda": args.l2_lambda,
        "class_weight": "balanced" if args.balanced else None,
        "n_trees": args.n_trees,
        "max_depth": args.max_depth,
        "min_leaf": args.min_leaf,
    }
    report = run_pipeline(fm.X, fm.y, args.folds, args.opt_threshold, args.seed, args.permutations, args.models, **params)
    out = Path(args.out)
    _write(out / "cv_report.json", report.to_json())
    _write(out / "fold_metrics.csv", report.fold_csv())
    predictions = [
        {**p, "device_id": fm.sessions[p["index"]][0], "session_id": fm.sessions[p["index"]][1]}
        for m in report.models.values()
        for p in m.predictions
    ]
    _write(out / "predictions.csv", rows_to_csv(predictions))
    summary = rows_to_csv(report.summary_rows())
    _write(out / "summary.csv", summary)
    _emit(summary)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import make_server

    public_key = _public_key(args)
    if public_key is None:
        raise argparse.ArgumentTypeError("serve needs --pubkey")
    server = make_server(args.store, public_key, args.host, args.port)
    log.info("serving %s on http://%s:%d", args.store, *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdna", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qdna {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create an HMAC key and an RSA-2048 signing keypair")
    p.add_argument("--out", required=True, help="directory for the three key files")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("session", help="probe a device profile, seal the result and append it to the store")
    p.add_argument("--profile", required=True, help="profile INI path or fixture name (sim_torino, sim_brisbane)")
    p.add_argument("--keys", required=True, help="directory written by keygen")
    p.add_argument("--store", required=True)
    p.add_argument("--features-dir", help="also write <dir>/<device>/<session>.features.json")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--shots", type=_positive, default=DEFAULT_SHOTS)
    p.add_argument("--session-id")
    p.add_argument("--count", type=_positive, default=1, help="number of consecutive sessions (ids s000, s001, ...)")
    p.add_argument("--interval-label", help="cadence label stored in calibration metadata, e.g. 8h")
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("verify", help="recompute hash, HMAC, signature and CHSH verdict of an artifact file")
    p.add_argument("artifact")
    _key_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("redact", help="write the public, secret-free variant of an artifact")
    p.add_argument("artifact")
    p.add_argument("out")
    p.set_defaults(func=cmd_redact)

    p = sub.add_parser("audit", help="walk stored chains and report the first break")
    p.add_argument("--store", required=True)
    p.add_argument("--device", action="append", help="repeatable; default all devices")
    _key_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("drift", help="drift tables for one device")
    p.add_argument("--store", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--metric", default=DEFAULT_DRIFT_METRIC, choices=FEATURE_FIELDS)
    p.add_argument("--out", help="directory for the CSV tables")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("report", help="drift tables and summary for several devices and metrics")
    p.add_argument("--store", required=True)
    p.add_argument("--devices", nargs="+")
    p.add_argument("--metrics", nargs="+", default=[DEFAULT_DRIFT_METRIC], choices=FEATURE_FIELDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("classify", help="cross-validated device classification from feature files")
    p.add_argument("--dev-a", required=True, help="feature files (or artifacts) of the first device")
    p.add_argument("--dev-b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", nargs="+", default=list(DEFAULT_METRICS), choices=FEATURE_FIELDS)
    p.add_argument("--min-presence", type=float, default=1.0)
    p.add_argument("--folds", type=int, default=6)
    p.add_argument("--permutations", type=int, default=999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--models", nargs="+", default=list(MODEL_KINDS), choices=MODEL_KINDS)
    p.add_argument("--opt-threshold", action="store_true", help="pick thresholds on test folds (optimistic)")
    p.add_argument("--l2-lambda", type=float, default=0.1)
    p.add_argument("--balanced", action="store_true", help="balanced class weights for logistic regression")
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--min-leaf", type=int, default=2)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", help="read-only HTTP verification endpoint")
    p.add_argument("--store", required=True)
    p.add_argument("--pubkey", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)
    return parser


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _key_args(p):
    p.add_argument("--pubkey", help="RSA public key PEM")
    p.add_argument("--hmac-key", help="HMAC key file (64 hex characters)")
    p.add_argument("--keys", help="keygen directory; supplies both keys")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except CheckFailed as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    except (OSError, ProvenanceError, ProfileError, FeatureError, StoreError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
