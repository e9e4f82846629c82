"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"SYMMIMCK"
    version    uint32    currently 1
    config     uint32 byte length, then UTF-8 text of the flat RunConfig
    count      uint32    number of arrays
    count times:
      name     uint32 byte length, then UTF-8 name
      ndim     uint32
      shape    ndim x uint64
      data     prod(shape) x float64, C order

Array names: ``meta/step``, ``meta/m``, ``theta_q/<param>``, ``theta_k/<param>``
and ``optim/<param>/{step,exp_avg,exp_avg_sq}`` where ``<param>`` is the dotted
name inside the online (theta_q) or momentum (theta_k) tree.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .errors import ConfigError
from .model import SymMIM, build_model

MAGIC = b"SYMMIMCK"
VERSION = 1


def write_container(path, config_text: str, arrays: dict[str, np.ndarray]):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode()
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        nb = name.encode()
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes())
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_container(path) -> tuple[str, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n,) = take("<I")
    text = data[pos:pos + n].decode()
    pos += n
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (n,) = take("<I")
        name = data[pos:pos + n].decode()
        pos += n
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return text, arrays


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy()


def save_checkpoint(path, model: SymMIM, cfg, optimizer: torch.optim.Optimizer | None = None):
    arrays = {"meta/step": np.array(float(model.step)), "meta/m": np.array(float(model.m))}
    for name, p in model.online.named_parameters():
        arrays[f"theta_q/{name}"] = _np(p)
    for name, p in model.momentum.named_parameters():
        arrays[f"theta_k/{name}"] = _np(p)
    if optimizer is not None:
        names = {id(p): n for n, p in model.online.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                for key, value in state.items():
                    arrays[f"optim/{names[id(p)]}/{key}"] = _np(torch.as_tensor(value))
    write_container(path, config_mod.dumps(cfg), arrays)


def load_checkpoint(path, optimizer_factory=None, dtype=torch.float32):
    """Rebuild ``(model, cfg, optimizer_or_None)`` from a checkpoint file.

    ``optimizer_factory(model)`` builds an optimizer whose state is then restored.
    """
    text, arrays = read_container(path)
    cfg = config_mod.loads(text)
    model = build_model(cfg).to(dtype)
    model.check_momentum_structure()
    with torch.no_grad():
        for prefix, tree in (("theta_q", model.online), ("theta_k", model.momentum)):
            params = dict(tree.named_parameters())
            stored = {k[len(prefix) + 1:] for k in arrays if k.startswith(prefix + "/")}
            if stored != set(params):
                raise ConfigError(f"{path}: {prefix} tree does not match the configured model")
            for name, p in params.items():
                arr = arrays[f"{prefix}/{name}"]
                if arr.shape != tuple(p.shape):
                    raise ConfigError(f"{path}: shape mismatch for {prefix}/{name}")
                p.copy_(torch.from_numpy(arr))
    model.step = int(arrays["meta/step"])
    model.m = float(arrays["meta/m"])
    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model)
        for name, p in model.online.named_parameters():
            keys = [k for k in arrays if k.startswith(f"optim/{name}/")]
            if not keys:
                continue
            state = {}
            for k in keys:
                field = k.rsplit("/", 1)[1]
                value = torch.from_numpy(arrays[k])
                state[field] = value.float() if field == "step" else value.to(p.dtype)
            optimizer.state[p] = state
    return model, cfg, optimizer
