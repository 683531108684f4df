"""``VMF1`` checkpoint files.

Layout: the 4 magic bytes ``VMF1``, a little-endian uint32 header length, the
UTF-8 JSON header, then one little-endian float32 blob per tensor in header
order. Tensor ``offset`` values count from the first blob byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig

MAGIC = b"VMF1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    image_shape: tuple[int, int, int]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    adam_step: int = 0
    history: list[dict] = field(default_factory=list)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def architecture(self) -> dict:
        vit = self.config.effective_vit
        return {
            "vit": None if vit is None else vit.to_dict(),
            "generator": {"kind": "conv4", "widths": list(self.config.gen_widths), "channels": self.image_shape[0]},
            "image_shape": list(self.image_shape),
        }

    def to_bytes(self) -> bytes:
        entries, blobs, offset = [], [], 0
        for name, arr in self.tensors.items():
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
        header = {
            "format_version": FORMAT_VERSION,
            "architecture": self.architecture(),
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "rng": {"kind": "seed_sequence", "entropy": self.config.seed},
            "epoch": self.epoch,
            "adam_step": self.adam_step,
            "history": self.history,
            "tensors": entries,
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(blobs)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:4] != MAGIC:
            raise CheckpointError("not a VMF1 checkpoint (bad magic)")
        if len(raw) < 8:
            raise CheckpointError("truncated checkpoint header")
        (hlen,) = struct.unpack("<I", raw[4:8])
        try:
            header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")
        base = 8 + hlen
        tensors = {}
        for e in header["tensors"]:
            start = base + e["offset"]
            chunk = raw[start : start + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise CheckpointError(f"tensor {e['name']} truncated")
            tensors[e["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(e["shape"])
        ckpt = cls(
            TrainConfig.from_dict(header["config"]),
            tuple(header["architecture"]["image_shape"]),
            tensors,
            header["epoch"],
            header["adam_step"],
            header["history"],
        )
        if ckpt.architecture() != header["architecture"]:
            raise CheckpointError("architecture tag does not match the stored config")
        return ckpt

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
