"""Single-file model checkpoints: a JSON header followed by the parameter blob.

Layout: 8-byte magic, uint32 format version, uint32 header length, UTF-8 JSON
header, then the raw torch-serialized state dict. The classifier and the
segmenter share this container.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import torch

MAGIC = b"WSEGCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path: Path | str, kind: str, config: dict,
                    state_dict: dict, fingerprint: str = "") -> None:
    header = {
        "kind": kind,
        "config": config,
        "fingerprint": fingerprint,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    torch.save(state_dict, buffer)
    blob = buffer.getvalue()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_checkpoint(path: Path | str) -> tuple[dict, dict]:
    """Return (header, state_dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        state_dict = torch.load(io.BytesIO(fh.read()), map_location="cpu", weights_only=True)
    return header, state_dict
