"""
File Handler Service - persistence for records, traces, reports and manifests
Grid EMG records use a binary format with a JSON header; tables use CSV
"""
import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from app.errors import MissingFileError, RecordFormatError
from app.models.axon import SpikeTrainSet
from app.models.emg import EmgGridRecord, RecordLabel
from app.models.manifest import MANIFEST_NAME, RunManifest
from app.models.muscle import ForceTrace

logger = structlog.get_logger(__name__)

RECORD_MAGIC = b"SEMG\x01"
RECORD_EXTENSION = ".semg"
HEADER_FIELDS = {"rate", "rows", "cols", "label", "length"}

PathLike = Union[str, Path]


def sha256_file(path: PathLike) -> str:
    """Hex SHA-256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _header_bytes(record: EmgGridRecord) -> bytes:
    return json.dumps(record.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")


class FileHandler:
    """
    Read and write every StimLab data file under a root directory
    Relative paths are resolved against the root
    """

    def __init__(self, root: Optional[PathLike] = None):
        self.root = Path(root) if root is not None else Path(".")

    def path(self, relative: PathLike) -> Path:
        relative = Path(relative)
        return relative if relative.is_absolute() else self.root / relative

    def _target(self, relative: PathLike) -> Path:
        target = self.path(relative)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def _existing(self, relative: PathLike) -> Path:
        target = self.path(relative)
        if not target.exists():
            raise MissingFileError(f"File not found: {target}", path=str(target))
        return target

    # EMG records

    def write_record(self, record: EmgGridRecord, relative: PathLike) -> Path:
        """
        Write a grid record

        Layout: magic, uint32 little-endian header length, JSON header
        (sorted keys), then float32 little-endian samples channel by channel.
        """
        target = self._target(relative)
        header = _header_bytes(record)
        with open(target, "wb") as f:
            f.write(RECORD_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(np.ascontiguousarray(record.channels, dtype="<f4").tobytes())
        logger.debug("Record written", path=str(target), label=record.label.value, samples=record.length)
        return target

    def validate_record_file(self, relative: PathLike) -> Tuple[bool, str]:
        """
        Check a record file without loading its samples

        Returns:
            Tuple of (is_valid, error_message)
        """
        try:
            self._read_header(self._existing(relative))
            return True, ""
        except (RecordFormatError, MissingFileError) as e:
            return False, e.message

    def _read_header(self, target: Path) -> Tuple[Dict[str, Any], int]:
        with open(target, "rb") as f:
            magic = f.read(len(RECORD_MAGIC))
            if magic != RECORD_MAGIC:
                raise RecordFormatError("bad record magic", path=str(target))
            raw_length = f.read(4)
            if len(raw_length) != 4:
                raise RecordFormatError("truncated record header", path=str(target))
            (length,) = struct.unpack("<I", raw_length)
            raw_header = f.read(length)
            if len(raw_header) != length:
                raise RecordFormatError("truncated record header", path=str(target))
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise RecordFormatError(f"unreadable record header: {e}", path=str(target))
        if not isinstance(header, dict) or set(header) != HEADER_FIELDS:
            raise RecordFormatError("record header fields do not match the schema", path=str(target))
        try:
            RecordLabel(header["label"])
        except ValueError:
            raise RecordFormatError(f"unknown record label '{header['label']}'", path=str(target))
        offset = len(RECORD_MAGIC) + 4 + length
        expected = offset + 4 * header["rows"] * header["cols"] * header["length"]
        actual = target.stat().st_size
        if actual != expected:
            raise RecordFormatError("record payload size does not match its header",
                                    path=str(target), expected_bytes=expected, actual_bytes=actual)
        return header, offset

    def read_record(self, relative: PathLike) -> EmgGridRecord:
        target = self._existing(relative)
        header, offset = self._read_header(target)
        n_channels = header["rows"] * header["cols"]
        data = np.fromfile(target, dtype="<f4", offset=offset).reshape(n_channels, header["length"])
        return EmgGridRecord(
            sample_rate=header["rate"],
            channels=data.astype(np.float32),
            rows=header["rows"],
            cols=header["cols"],
            label=RecordLabel(header["label"]),
        )

    # Tables

    def write_force(self, trace: ForceTrace, relative: PathLike) -> Path:
        target = self._target(relative)
        trace.to_frame().to_csv(target, index=False)
        return target

    def read_force(self, relative: PathLike) -> ForceTrace:
        frame = pd.read_csv(self._existing(relative), float_precision="round_trip")
        if list(frame.columns) != ["time_s", "force_N"]:
            raise RecordFormatError("force table must have columns time_s, force_N", path=str(relative))
        times = frame["time_s"].to_numpy()
        if len(times) < 2:
            raise RecordFormatError("force table needs at least two samples", path=str(relative))
        rate = float(round(1.0 / (times[1] - times[0]), 6))
        return ForceTrace(sample_rate=rate, samples=frame["force_N"].to_numpy())

    def write_spikes(self, spikes: SpikeTrainSet, relative: PathLike) -> Path:
        target = self._target(relative)
        spikes.to_frame().to_csv(target, index=False)
        return target

    def read_spikes(self, relative: PathLike, n_axons: int, duration: float) -> SpikeTrainSet:
        frame = pd.read_csv(self._existing(relative), float_precision="round_trip")
        if list(frame.columns) != ["axon_id", "spike_time_s"]:
            raise RecordFormatError("spike table must have columns axon_id, spike_time_s", path=str(relative))
        return SpikeTrainSet.from_frame(frame, n_axons, duration)

    def write_table(self, frame: pd.DataFrame, relative: PathLike, index: bool = True) -> Path:
        target = self._target(relative)
        frame.to_csv(target, index=index)
        return target

    def write_matrix(self, matrix: np.ndarray, relative: PathLike) -> Path:
        target = self._target(relative)
        pd.DataFrame(np.asarray(matrix)).to_csv(target, index=False, header=False)
        return target

    # JSON documents

    def write_json(self, payload: Any, relative: PathLike) -> Path:
        target = self._target(relative)
        target.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return target

    def read_json(self, relative: PathLike) -> Any:
        target = self._existing(relative)
        try:
            return json.loads(target.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise RecordFormatError(f"invalid JSON: {e}", path=str(target))

    def write_manifest(self, manifest: RunManifest) -> Path:
        target = self._target(MANIFEST_NAME)
        target.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("Manifest written", path=str(target), trials=len(manifest.trials))
        return target

    def read_manifest(self) -> RunManifest:
        target = self._existing(MANIFEST_NAME)
        try:
            return RunManifest.model_validate_json(target.read_text(encoding="utf-8"))
        except ValueError as e:
            raise RecordFormatError(f"invalid manifest: {e}", path=str(target))

    def hash(self, relative: PathLike) -> str:
        return sha256_file(self._existing(relative))

    def verify_hashes(self, manifest: RunManifest) -> Dict[str, str]:
        """Files whose current hash differs from the manifest, with the reason"""
        problems = {}
        for relative, expected in manifest.file_hashes.items():
            target = self.path(relative)
            if not target.exists():
                problems[relative] = "missing"
            elif sha256_file(target) != expected:
                problems[relative] = "hash mismatch"
        return problems
