"""
Line-delimited manifest and query-list codec.

Line 1 is a schema header, every following line is one record. Output is
canonical (sorted keys, one record per line, trailing newline) so writing a
loaded manifest reproduces the file byte for byte. Field names are
documented in schema/manifest.md.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Union

import orjson
from pydantic import ValidationError

from datamodel.errors import IntegrityError, ManifestParseError
from datamodel.records import DatasetManifest, FrameRecord, QueryRecord

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def _dumps(obj) -> bytes:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS) + b"\n"


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}" if loc else str(err.get("msg"))


def _read_lines(path: Path) -> List[bytes]:
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return [line for line in path.read_bytes().splitlines() if line.strip()]


def _parse_header(line: bytes, path: Path, kind: str) -> dict:
    try:
        header = orjson.loads(line)
    except orjson.JSONDecodeError as e:
        raise ManifestParseError(f"unreadable header: {e}", 1, str(path)) from e
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise ManifestParseError(f"expected a '{kind}' header line", 1, str(path))
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestParseError(f"unsupported schema_version {version!r}", 1, str(path))
    return header


def load_manifest(path: PathLike, counterpart: Optional[DatasetManifest] = None) -> DatasetManifest:
    """Load and validate a manifest file.

    When `counterpart` is given (the other split of the same dataset) the
    pair is checked for shared identities as well.
    """
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise ManifestParseError("empty file", None, str(path))
    header = _parse_header(lines[0], path, "manifest")

    frames = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            frames.append(FrameRecord.model_validate(orjson.loads(line)))
        except orjson.JSONDecodeError as e:
            raise ManifestParseError(f"invalid JSON: {e}", line_no, str(path)) from e
        except ValidationError as e:
            raise ManifestParseError(_first_error(e), line_no, str(path)) from e

    try:
        manifest = DatasetManifest(
            name=header.get("name", path.stem),
            split=header.get("split"),
            frames=frames,
            num_identities=header.get("num_identities", 0),
            identity_remap=header.get("identity_remap", {}),
        )
    except ValidationError as e:
        raise ManifestParseError(_first_error(e), None, str(path)) from e

    for key, actual in (("num_frames", len(manifest.frames)), ("num_boxes", manifest.num_boxes)):
        if key in header and header[key] != actual:
            raise ManifestParseError(f"header {key}={header[key]} but file holds {actual}", 1, str(path))

    if counterpart is not None:
        if manifest.split.value == "train":
            validate_split_pair(manifest, counterpart)
        else:
            validate_split_pair(counterpart, manifest)

    logger.debug(f"Loaded manifest {manifest.name}/{manifest.split.value}: {len(frames)} frames")
    return manifest


def validate_split_pair(train: DatasetManifest, test: DatasetManifest) -> None:
    """Train and test splits of one dataset must not share source identities."""
    shared = set(train.identity_remap) & set(test.identity_remap)
    if shared:
        raise IntegrityError(
            f"{train.name}: train and test share {len(shared)} identities "
            f"(e.g. {sorted(shared)[:5]})",
            shared,
        )


def write_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "manifest",
        "name": manifest.name,
        "split": manifest.split.value,
        "num_identities": manifest.num_identities,
        "num_frames": len(manifest.frames),
        "num_boxes": manifest.num_boxes,
        "identity_remap": manifest.identity_remap,
    }
    with open(path, "wb") as f:
        f.write(_dumps(header))
        for frame in manifest.frames:
            f.write(_dumps(frame.model_dump(mode="json")))
    return path


def load_queries(path: PathLike, manifest: Optional[DatasetManifest] = None) -> List[QueryRecord]:
    """Load a query list; with `manifest`, every source frame must exist in it."""
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise ManifestParseError("empty file", None, str(path))
    _parse_header(lines[0], path, "queries")

    frames = manifest.frame_index() if manifest is not None else None
    queries = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            query = QueryRecord.model_validate(orjson.loads(line))
        except orjson.JSONDecodeError as e:
            raise ManifestParseError(f"invalid JSON: {e}", line_no, str(path)) from e
        except ValidationError as e:
            raise ManifestParseError(_first_error(e), line_no, str(path)) from e
        if frames is not None and query.source_frame_id not in frames:
            raise ManifestParseError(
                f"query {query.query_id} references unknown frame {query.source_frame_id}",
                line_no,
                str(path),
            )
        queries.append(query)
    return queries


def write_queries(queries: Iterable[QueryRecord], path: PathLike, manifest_name: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    queries = list(queries)
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "queries",
        "manifest": manifest_name,
        "num_queries": len(queries),
    }
    with open(path, "wb") as f:
        f.write(_dumps(header))
        for query in queries:
            f.write(_dumps(query.model_dump(mode="json")))
    return path
