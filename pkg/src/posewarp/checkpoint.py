"""Checkpoint container.

Layout::

    POSEWARP-CHECKPOINT v1\\n
    <header byte length, decimal>\\n
    <UTF-8 JSON header>
    <float64 little-endian parameter data>

The header holds the model config, training config, seed, epoch, optimizer
hyperparameters, the full loss history and a ``params`` list of
``{"name", "shape"}`` entries.  Parameter data follows in exactly that order,
each array C-contiguous.  JSON keys are sorted so equal checkpoints are equal
byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .model import ModelConfig, PoseTransferNet

MAGIC = b"POSEWARP-CHECKPOINT v1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, meta):
    params = list(model.named_parameters())
    header = dict(meta)
    header["model"] = model.cfg.to_dict()
    header["params"] = [{"name": n, "shape": list(p.shape)} for n, p in params]
    blob = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(blob))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_header(path):
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint")
        size = int(fh.readline())
        return json.loads(fh.read(size).decode("utf-8")), fh.tell()


def load_checkpoint(path):
    """Rebuild the model described by the header and fill in its parameters."""
    header, offset = read_header(path)
    cfg = ModelConfig.from_dict(header["model"])
    model = PoseTransferNet(cfg)
    expected = [(n, list(p.shape)) for n, p in model.named_parameters()]
    stored = [(e["name"], e["shape"]) for e in header["params"]]
    if expected != stored:
        raise CheckpointError("checkpoint parameters do not match the architecture in its header")
    data = np.fromfile(path, dtype="<f8", offset=offset)
    pos = 0
    for _, p in model.named_parameters():
        n = p.data.size
        if pos + n > data.size:
            raise CheckpointError("checkpoint data is truncated")
        p.data = data[pos:pos + n].reshape(p.shape).astype(np.float64)
        pos += n
    if pos != data.size:
        raise CheckpointError("checkpoint has trailing data")
    return model, header
