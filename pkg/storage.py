"""
File formats: bit-exact checkpoints with an architecture sidecar, JSONL
dataset splits, vocab/label maps, manifests, CSV logs and decode TSVs.
"""

import csv
import hashlib
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from errors import DataError
from models import ModelConfig, Utterance
from slu.nn_core import ParamStore
from slu.slu_model import SluModel, architecture_hash

logger = logging.getLogger(__name__)


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_bytes(path: str | Path, data: bytes) -> str:
    path = Path(path)
    _ensure_parent(path)
    if path.exists():
        logger.warning("Storage: overwriting %s", path)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def write_text(path: str | Path, text: str) -> str:
    return write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, obj: Any) -> str:
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------
def encode_checkpoint(entries: Iterable[tuple[str, np.ndarray]]) -> bytes:
    """SLUC + version, then per entry: name, rank, dims, f64 values (all little-endian)."""
    chunks = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION])]
    for name, value in entries:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError("not a checkpoint: bad magic bytes")
    if len(data) < 5 or data[4] != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version: {data[4] if len(data) > 4 else None}")
    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 5
    try:
        while offset < len(data):
            (name_length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if offset + 8 * count > len(data):
                raise DataError(f"checkpoint truncated inside entry {name}")
            values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            entries[name] = values.astype(np.float64).reshape(dims)
    except struct.error as exc:
        raise DataError(f"checkpoint truncated: {exc}") from exc
    return entries


def save_params(path: str | Path, params: ParamStore) -> str:
    return write_bytes(path, encode_checkpoint(params.items()))


def load_params_into(path: str | Path, params: ParamStore) -> ParamStore:
    """Overwrite params from a checkpoint file; names, order and shapes must match exactly."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    entries = decode_checkpoint(path.read_bytes())
    if list(entries) != params.names():
        raise DataError(f"{path}: parameter names do not match the architecture")
    for name, value in entries.items():
        if value.shape != params[name].shape:
            raise DataError(f"{path}: {name} has shape {value.shape}, expected {params[name].shape}")
        params[name] = value
    return params


def save_checkpoint(path: str | Path, params: ParamStore, model_config: ModelConfig, extra: Optional[dict] = None) -> str:
    """Write the checkpoint and its <path>.json sidecar; returns the checkpoint's SHA-256."""
    path = Path(path)
    digest = save_params(path, params)
    write_json(
        path.with_name(path.name + ".json"),
        {
            "architecture_hash": architecture_hash(model_config),
            "model": model_config.model_dump(mode="json"),
            "extra": extra or {},
        },
    )
    return digest


def load_checkpoint(path: str | Path, expected: Optional[ModelConfig] = None) -> tuple[SluModel, dict]:
    """Returns (SluModel, extra). Rejects architecture-hash or tensor-layout mismatches."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    sidecar = read_json(path.with_name(path.name + ".json"))
    try:
        model_config = ModelConfig.model_validate(sidecar["model"])
    except (KeyError, ValidationError) as exc:
        raise DataError(f"{path}: unreadable architecture sidecar ({exc})") from exc
    recorded = sidecar.get("architecture_hash")
    if recorded != architecture_hash(model_config):
        raise DataError(f"{path}: sidecar architecture hash does not match its model config")
    if expected is not None and architecture_hash(expected) != recorded:
        raise DataError(f"{path}: checkpoint architecture does not match the configured model")

    model = SluModel(model_config)
    load_params_into(path, model.params)
    return model, sidecar.get("extra", {})


# ---------------------------------------------------------
# Dataset files
# ---------------------------------------------------------
def write_lines(path: str | Path, lines: Sequence[str]) -> str:
    return write_text(path, "".join(f"{line}\n" for line in lines))


def read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def utterance_record(utterance: Utterance, vocab: Sequence[str], labels: Sequence[str]) -> dict:
    return {
        "id": utterance.id,
        "transcript": [vocab[t] for t in utterance.transcript],
        "label": labels[utterance.label],
        "frames": utterance.frames.tolist(),
    }


def write_split(path: str | Path, utterances: Sequence[Utterance], vocab: Sequence[str], labels: Sequence[str]) -> str:
    lines = [
        json.dumps(utterance_record(u, vocab, labels), separators=(",", ":"))
        for u in utterances
    ]
    return write_lines(path, lines)


def read_split(
    path: str | Path, vocab: Sequence[str], labels: Sequence[str], feature_dim: Optional[int] = None
) -> list[Utterance]:
    """Utterances of one split. Every record must carry frames of shape (T, d), T >= 1, with one d per split."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing split file: {path}")
    token_ids = {token: i for i, token in enumerate(vocab)}
    label_ids = {label: i for i, label in enumerate(labels)}
    utterances = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                frames = np.asarray(record["frames"], dtype=np.float64)
                utterances.append(
                    Utterance(
                        id=record["id"],
                        frames=frames,
                        transcript=[token_ids[t] for t in record["transcript"]],
                        label=label_ids[record["label"]],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_number}: malformed record ({exc!r})") from exc
            if feature_dim is None and frames.ndim == 2:
                feature_dim = frames.shape[1]
            if frames.ndim != 2 or min(frames.shape) < 1 or frames.shape[1] != feature_dim:
                raise DataError(
                    f"{path}:{line_number}: frames must be (T, {feature_dim}) with T >= 1, got {frames.shape}"
                )
    return utterances


def write_manifest(dataset_dir: Path, config: dict, files: dict[str, str]) -> str:
    config_hash = hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    return write_json(dataset_dir / "manifest.json", {"config": config, "config_hash": config_hash, "files": files})


def read_manifest(dataset_dir: Path) -> dict:
    return read_json(Path(dataset_dir) / "manifest.json")


def verify_file_hash(path: Path, manifest: dict) -> None:
    expected = manifest.get("files", {}).get(path.name)
    if expected is None:
        raise DataError(f"{path.name} is not listed in the dataset manifest")
    if not path.exists():
        raise DataError(f"missing split file: {path}")
    if file_sha256(path) != expected:
        raise DataError(f"{path} does not match its manifest hash")


# ---------------------------------------------------------
# Reports
# ---------------------------------------------------------
def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    path = Path(path)
    _ensure_parent(path)
    if path.exists():
        logger.warning("Storage: overwriting %s", path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
    return file_sha256(path)


def write_decode(path: str | Path, rows: Iterable[tuple[str, Sequence[str]]]) -> str:
    """id<TAB>space-joined tokens, sorted by id."""
    lines = [f"{utt_id}\t{' '.join(tokens)}" for utt_id, tokens in sorted(rows)]
    return write_lines(path, lines)
