"""
Checkpoint container: a zip holding ``header.json`` and one ``.npy`` per parameter or BN statistic.

Entries carry a fixed timestamp so saving the same network twice yields identical bytes.
"""

from __future__ import annotations

import io
import json
import logging
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib import format as npy_format
from pydantic import ValidationError

from errors import CheckpointError
from nn.layers import Network, NetworkSpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_NAME = "header.json"
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    spec: NetworkSpec
    parameters: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    epoch: int
    validation_loss: float
    seed: int
    meta: dict[str, Any] = field(default_factory=dict)

    def to_network(self) -> Network:
        net = Network(self.spec, seed=None)
        net.set_parameters(self.parameters, self.buffers)
        return net


def snapshot(net: Network, epoch: int, validation_loss: float, seed: int, meta: dict[str, Any] | None = None) -> Checkpoint:
    return Checkpoint(
        spec=net.spec,
        parameters={k: v.copy() for k, v in net.parameters().items()},
        buffers={k: v.copy() for k, v in net.buffers().items()},
        epoch=epoch,
        validation_loss=float(validation_loss),
        seed=seed,
        meta=dict(meta or {}),
    )


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    npy_format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": ckpt.spec.model_dump(mode="json"),
        "epoch": ckpt.epoch,
        "validation_loss": ckpt.validation_loss,
        "seed": ckpt.seed,
        "meta": ckpt.meta,
        "parameters": sorted(ckpt.parameters),
        "buffers": sorted(ckpt.buffers),
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_entry(HEADER_NAME), json.dumps(header, indent=2, sort_keys=True) + "\n")
        for group, arrays in (("parameters", ckpt.parameters), ("buffers", ckpt.buffers)):
            for name in sorted(arrays):
                zf.writestr(_entry(f"{group}/{name}.npy"), _npy_bytes(arrays[name]))
    os.replace(tmp, path)
    log.info("checkpoint: saved %s epoch=%d val=%.6f", path, ckpt.epoch, ckpt.validation_loss)
    return path


def _read_array(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    with zf.open(name) as fh:
        return npy_format.read_array(io.BytesIO(fh.read()), allow_pickle=False)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read(HEADER_NAME).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('format_version')!r}")
            spec = NetworkSpec.model_validate(header["spec"])
            params = {n: _read_array(zf, f"parameters/{n}.npy") for n in header["parameters"]}
            buffers = {n: _read_array(zf, f"buffers/{n}.npy") for n in header["buffers"]}
    except CheckpointError:
        raise
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    except (OSError, KeyError, zipfile.BadZipFile, ValidationError, ValueError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    ckpt = Checkpoint(
        spec=spec,
        parameters=params,
        buffers=buffers,
        epoch=int(header["epoch"]),
        validation_loss=float(header["validation_loss"]),
        seed=int(header["seed"]),
        meta=dict(header.get("meta") or {}),
    )
    try:
        ckpt.to_network()
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: parameters do not match the stored network spec ({e})") from e
    return ckpt
