"""Model checkpoints: magic "MIRM", a JSON config block, named float32
parameter blobs, and a trailing CRC32 over everything after the magic.

Parameters are stored little-endian float32 regardless of the in-memory dtype
(runs train in float32; float64 is a test-only mode).  Writing is atomic via a
rename so a crashed run never leaves a half checkpoint behind.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .autograd import parameter
from .model import EncoderConfig, ModelState
from .tokenizer import TokenizerConfig

__all__ = ["CKPT_MAGIC", "CKPT_VERSION", "save_checkpoint", "load_checkpoint"]

CKPT_MAGIC = b"MIRM"
CKPT_VERSION = 1


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> None:
    """extra: small JSON-safe metadata (label vocab, config echo, ...)."""
    cfg = {
        "tokenizer": vars(state.tok_cfg) | {},
        "encoder": vars(state.enc_cfg) | {},
        "n_channels": state.n_channels,
        "n_classes": state.n_classes,
        "extra": extra or {},
    }
    cfg_blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += struct.pack("<I", CKPT_VERSION)
    body += struct.pack("<I", len(cfg_blob))
    body += cfg_blob
    body += struct.pack("<I", len(state.params))
    for name in sorted(state.params):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(state.params[name].data, dtype="<f4")
        body += struct.pack("<H", len(raw))
        body += raw
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}: {blob[:4]!r}")
    body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ValueError(f"checkpoint checksum mismatch in {path}")
    off = 0
    (version,) = struct.unpack_from("<I", body, off); off += 4
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", body, off); off += 4
    cfg = json.loads(body[off:off + cfg_len].decode("utf-8")); off += cfg_len
    (n_params,) = struct.unpack_from("<I", body, off); off += 4
    params = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", body, off); off += 2
        name = body[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<B", body, off); off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off); off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        params[name] = parameter(arr.copy(), name)
    state = ModelState(
        tok_cfg=TokenizerConfig(**cfg["tokenizer"]),
        enc_cfg=EncoderConfig(**cfg["encoder"]),
        n_channels=cfg["n_channels"],
        n_classes=cfg["n_classes"],
        params=params,
        dtype=np.dtype(np.float32),
    )
    return state, cfg.get("extra", {})
