"""Artifact directory management: listing, trusted material, outputs, traces, reports.

Untrusted files sit at the top of the directory (program.obf, outputs.txt,
trace.jsonl, report.json). Trusted files live under trusted/ and only the
runtime side reads them. key.json carries an itsdangerous signature over
its canonical JSON so a tampered key is refused instead of used.
"""

import json
import logging
import os
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import asdict
from pathlib import Path

from itsdangerous import BadSignature, Signer

from decorrelator.core.compiler import format_listing, parse_listing
from decorrelator.core.evaluator import read_trace, render_outputs, write_trace
from decorrelator.core.layout import layout_from_dict, layout_to_dict
from decorrelator.errors import TrustedMaterialUnavailable
from decorrelator.models import CompileResult, ExecutionTrace, FlatLayout, KeyMaterial, ObfuscatedProgram, ProvenanceMap

logger = logging.getLogger(__name__)

LISTING_FILE = "program.obf"
TRUSTED_DIR = "trusted"
KEY_FILE = "key.json"
LAYOUT_FILE = "layout.json"
PROVENANCE_FILE = "provenance.json"
OUTPUTS_FILE = "outputs.txt"
TRACE_FILE = "trace.jsonl"
REPORT_FILE = "report.json"

_KEY_SALT = "decorrelator.key"
_DEV_SECRET = "dev-secret-change-in-production"

_artifact_dir_override: ContextVar["Path | None"] = ContextVar("_artifact_dir_override", default=None)


@contextmanager
def override_artifact_dir(path: "Path"):
    """Context manager to point every artifact read/write at path.

    Example:
        with override_artifact_dir(tmp_path):
            save_compile_result(result)
    """
    token = _artifact_dir_override.set(Path(path))
    try:
        yield
    finally:
        _artifact_dir_override.reset(token)


def get_artifact_dir() -> Path:
    """Return the active artifact directory, creating it if needed.

    Priority order:
    1. ContextVar override
    2. DECORRELATOR_ARTIFACT_DIR environment variable
    3. Default ~/.decorrelator/artifacts
    """
    override = _artifact_dir_override.get()
    if override is not None:
        path = override
    elif os.environ.get("DECORRELATOR_ARTIFACT_DIR"):
        path = Path(os.environ["DECORRELATOR_ARTIFACT_DIR"])
    else:
        path = Path.home() / ".decorrelator" / "artifacts"
    path.mkdir(parents=True, exist_ok=True)
    return path


def trusted_dir(base: Path = None) -> Path:
    path = (base or get_artifact_dir()) / TRUSTED_DIR
    path.mkdir(parents=True, exist_ok=True)
    return path


def _get_signer() -> Signer:
    key = os.environ.get("SECRET_KEY")
    if not key:
        logger.warning("SECRET_KEY is not set; signing key material with the development secret")
        key = _DEV_SECRET
    return Signer(key, salt=_KEY_SALT)


def _canonical(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ── Trusted material ──────────────────────────────────────────────────────────

def save_key(key: KeyMaterial, base: Path = None) -> Path:
    data = asdict(key)
    signature = _get_signer().get_signature(_canonical(data)).decode("ascii")
    path = trusted_dir(base) / KEY_FILE
    _write_json(path, {**data, "signature": signature})
    return path


def load_key(base: Path = None) -> KeyMaterial:
    """Read and verify the key file; any failure is TrustedMaterialUnavailable."""
    path = (base or get_artifact_dir()) / TRUSTED_DIR / KEY_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        signature = data.pop("signature")
        if not _get_signer().verify_signature(_canonical(data), signature.encode("ascii")):
            raise BadSignature("key file signature does not match")
        return KeyMaterial(**data)
    except (OSError, ValueError, KeyError, TypeError, BadSignature) as exc:
        logger.debug("key file rejected: %s", exc)
        raise TrustedMaterialUnavailable("trusted material unavailable") from None


def save_layout(flat: FlatLayout, base: Path = None) -> Path:
    path = trusted_dir(base) / LAYOUT_FILE
    _write_json(path, layout_to_dict(flat))
    return path


def load_layout(base: Path = None) -> FlatLayout:
    path = (base or get_artifact_dir()) / TRUSTED_DIR / LAYOUT_FILE
    try:
        return layout_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        logger.debug("layout file rejected: %s", exc)
        raise TrustedMaterialUnavailable("trusted material unavailable") from None


def save_provenance(provenance: ProvenanceMap, base: Path = None) -> Path:
    path = trusted_dir(base) / PROVENANCE_FILE
    _write_json(path, {
        "origins": provenance.origins,
        "padding": provenance.padding,
        "obf_to_clear": {str(r): c for r, c in provenance.obf_to_clear.items()},
    })
    return path


def load_provenance(base: Path = None) -> ProvenanceMap:
    path = (base or get_artifact_dir()) / TRUSTED_DIR / PROVENANCE_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        logger.debug("provenance file rejected: %s", exc)
        raise TrustedMaterialUnavailable("trusted material unavailable") from None
    return ProvenanceMap(
        origins=list(data["origins"]),
        padding=list(data["padding"]),
        obf_to_clear={int(r): c for r, c in data["obf_to_clear"].items()},
    )


# ── Untrusted files ───────────────────────────────────────────────────────────

def save_listing(program: ObfuscatedProgram, base: Path = None) -> Path:
    path = (base or get_artifact_dir()) / LISTING_FILE
    path.write_text(format_listing(program), encoding="utf-8")
    return path


def load_listing(base: Path = None) -> ObfuscatedProgram:
    path = (base or get_artifact_dir()) / LISTING_FILE
    return parse_listing(path.read_text(encoding="utf-8"), filename=str(path))


def save_compile_result(result: CompileResult, base: Path = None) -> Path:
    """Write the listing and all trusted material; returns the directory."""
    base = base or get_artifact_dir()
    save_listing(result.program, base)
    save_key(result.key, base)
    save_layout(result.layout, base)
    save_provenance(result.provenance, base)
    logger.info("wrote %d-statement listing and trusted material to %s", len(result.program.statements), base)
    return base


def save_outputs(outputs, path: Path = None) -> Path:
    path = path or get_artifact_dir() / OUTPUTS_FILE
    path.write_text(render_outputs(outputs), encoding="utf-8")
    return path


def save_trace(trace: ExecutionTrace, path: Path = None) -> Path:
    path = path or get_artifact_dir() / TRACE_FILE
    write_trace(trace, path)
    return path


def load_trace(path: Path = None) -> ExecutionTrace:
    return read_trace(path or get_artifact_dir() / TRACE_FILE)


def save_report(report: dict, path: Path = None) -> Path:
    path = path or get_artifact_dir() / REPORT_FILE
    _write_json(path, report)
    return path
