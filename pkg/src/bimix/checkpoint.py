"""Checkpoint directories: ``params.bin`` plus ``manifest.json``.

``params.bin`` layout (all integers little-endian)::

    b"BMXP"  u32 version  u32 count
    count x { u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims,
              prod(dims) x float32 }

The manifest records the iteration, the config digests, optimizer
hyper-parameters and the SHA-256 of ``params.bin``.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .exceptions import CheckpointError, IntegrityError
from .trainer import Checkpoint

FORMAT_VERSION = 1
MAGIC = b"BMXP"
PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.array(arr, dtype="<f4", order="C")  # keeps 0-d shapes
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_arrays(data: bytes) -> dict[str, np.ndarray]:
    try:
        if data[:4] != MAGIC:
            raise IntegrityError("not a parameter container")
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        pos, out = 12, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise IntegrityError("truncated parameter container")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise IntegrityError(f"corrupt parameter container: {exc}") from exc
    if pos != len(data):
        raise IntegrityError("trailing bytes in parameter container")
    return out


def _flatten(ckpt: Checkpoint):
    arrays, opt_meta = {}, {}
    for net, state in ckpt.networks.items():
        for key, t in state.items():
            arrays[f"net/{net}/{key}"] = t.detach().cpu().numpy()
    for opt, st in ckpt.optimizers.items():
        scalars = {}
        for idx, pstate in st["state"].items():
            for key, v in pstate.items():
                if torch.is_tensor(v):
                    arrays[f"opt/{opt}/{idx}/{key}"] = v.detach().cpu().numpy()
                else:
                    scalars.setdefault(str(idx), {})[key] = v
        opt_meta[opt] = {"param_groups": st["param_groups"], "scalars": scalars}
    return arrays, opt_meta


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays, opt_meta = _flatten(ckpt)
    payload = encode_arrays(arrays)
    (path / PARAMS_FILE).write_bytes(payload)
    manifest = {
        "format_version": FORMAT_VERSION,
        "phase": ckpt.phase,
        "iteration": ckpt.iteration,
        "config_digest": ckpt.config_digest,
        "arch_digest": ckpt.arch_digest,
        "config": ckpt.config,
        "optimizers": opt_meta,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    mfile, pfile = path / MANIFEST_FILE, path / PARAMS_FILE
    if not mfile.is_file() or not pfile.is_file():
        raise CheckpointError(f"{path} is not a checkpoint directory")
    try:
        manifest = json.loads(mfile.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    payload = pfile.read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest.get("checksum"):
        raise IntegrityError("parameter checksum mismatch")
    arrays = decode_arrays(payload)

    networks: dict[str, dict] = {}
    opt_state: dict[str, dict] = {}
    for name, arr in arrays.items():
        parts = name.split("/")
        tensor = torch.from_numpy(arr)
        if parts[0] == "net":
            networks.setdefault(parts[1], {})["/".join(parts[2:])] = tensor
        elif parts[0] == "opt":
            opt_state.setdefault(parts[1], {}).setdefault(int(parts[2]), {})[parts[3]] = tensor
    optimizers = {}
    for opt, meta in manifest.get("optimizers", {}).items():
        state = opt_state.get(opt, {})
        for idx, scalars in meta.get("scalars", {}).items():
            state.setdefault(int(idx), {}).update(scalars)
        optimizers[opt] = {"state": state, "param_groups": meta["param_groups"]}
    return Checkpoint(
        phase=manifest["phase"], iteration=manifest["iteration"], config=manifest["config"],
        config_digest=manifest["config_digest"], arch_digest=manifest["arch_digest"],
        networks=networks, optimizers=optimizers,
    )
