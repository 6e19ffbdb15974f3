"""Versioned binary container for supernets, optimizers and predictors.

Layout::

    magic       4 bytes   b"EQCK"
    version     uint32    little-endian
    header_len  uint64
    header      JSON (sorted keys): metadata, array table, payload sha256
    payload     concatenated little-endian arrays

The format has no timestamps, so identical state gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IncompatibleCheckpointError

MAGIC = b"EQCK"
VERSION = 1


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    table = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        buf = np.ascontiguousarray(a.astype(dt, copy=False)).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(a.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = json.dumps(
        {"meta": meta, "arrays": table, "payload_bytes": len(payload),
         "sha256": hashlib.sha256(payload).hexdigest()},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        f.write(payload)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an eqnet checkpoint")
    version, hlen = struct.unpack_from("<IQ", blob, 4)
    if version != VERSION:
        raise IncompatibleCheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    if len(blob) < 16 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen])
    except ValueError:
        raise FormatError(f"{path}: corrupt header") from None
    payload = blob[16 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {header['payload_bytes']} bytes)")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise FormatError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = entry["nbytes"] // dt.itemsize
        arrays[entry["name"]] = np.frombuffer(payload, dtype=dt, count=count, offset=entry["offset"]).reshape(
            entry["shape"]).astype(dt.newbyteorder("="))
    return header["meta"], arrays


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def save_checkpoint(path, net, trainer=None, config_text: str = "", extra: dict | None = None) -> None:
    meta = {
        "kind": "supernet",
        "arch_hash": net.arch_hash(),
        "config": config_text,
        "extra": extra or {},
    }
    arrays = {f"net/{k}": v for k, v in net.state_arrays().items()}
    if trainer is not None:
        opt = trainer.optimizer.state_dict()
        meta["trainer"] = {
            "epoch": trainer.epoch,
            "step": trainer.step,
            "opt_t": opt["t"],
            "opt_steps": opt["steps"],
            "rng": _rng_state(trainer.rng),
        }
        for i, (m, v) in enumerate(zip(opt["m"], opt["v"])):
            arrays[f"opt/m/{i:05d}"] = m
            arrays[f"opt/v/{i:05d}"] = v
    save_container(path, meta, arrays)


def read_checkpoint_meta(path) -> dict:
    meta, _ = load_container(path)
    return meta


def load_checkpoint(path, net, trainer=None) -> dict:
    """Restore ``net`` (and optionally ``trainer``) in place; returns the metadata."""
    meta, arrays = load_container(path)
    if meta.get("kind") != "supernet":
        raise IncompatibleCheckpointError(f"{path}: not a supernet checkpoint")
    if meta["arch_hash"] != net.arch_hash():
        raise IncompatibleCheckpointError(
            f"{path}: architecture hash {meta['arch_hash'][:12]} does not match {net.arch_hash()[:12]}"
        )
    net.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("net/")})
    if trainer is not None:
        if "trainer" not in meta:
            raise IncompatibleCheckpointError(f"{path}: no training state to resume from")
        t = meta["trainer"]
        n = len(trainer.optimizer.params)
        trainer.optimizer.load_state_dict({
            "t": t["opt_t"],
            "steps": t["opt_steps"],
            "m": [arrays[f"opt/m/{i:05d}"] for i in range(n)],
            "v": [arrays[f"opt/v/{i:05d}"] for i in range(n)],
        })
        trainer.epoch = t["epoch"]
        trainer.step = t["step"]
        _set_rng_state(trainer.rng, t["rng"])
    return meta


def save_predictor(path, model, space_desc: dict, n_layers: int, metrics: dict | None = None) -> None:
    meta = {"kind": "predictor", "space": space_desc, "n_layers": n_layers, "metrics": metrics or {}}
    save_container(path, meta, model.arrays())


def load_predictor(path):
    from ..predictor import CQAPModel

    meta, arrays = load_container(path)
    if meta.get("kind") != "predictor":
        raise IncompatibleCheckpointError(f"{path}: not a predictor file")
    return CQAPModel.from_arrays(arrays), meta
