"""Deterministic checkpoint container.

A checkpoint is a ZIP archive (stored, not compressed) holding one
``meta.json`` plus one ``<key>.npy`` entry per named array, written in
sorted key order with a fixed entry timestamp. Writing the same arrays
and metadata therefore produces byte-identical files, which is what the
reproducibility guarantees are checked against. Standard tools
(``unzip``, ``numpy.lib.format``) can open the result.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointMismatch
from . import models as M

FORMAT = "srdistill-ckpt-v1"
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed entry date: no wall clock in outputs


def save_arrays(path, arrays: dict, meta: dict) -> None:
    """Write ``arrays`` (name -> ndarray) plus JSON metadata to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta.setdefault("format", FORMAT)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for key in sorted(arrays):
            buf = io.BytesIO()
            arr = np.asarray(arrays[key], order="C")  # keeps 0-d shape intact
            np.lib.format.write_array(buf, arr, version=(1, 0),
                                      allow_pickle=False)
            info = zipfile.ZipInfo(key + ".npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())


def load_arrays(path):
    """Read a checkpoint back as (arrays dict, meta dict)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointMismatch(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = zf.namelist()
            if "meta.json" not in names:
                raise CheckpointMismatch(f"{path}: missing meta.json")
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in names:
                if name == "meta.json":
                    continue
                if not name.endswith(".npy"):
                    raise CheckpointMismatch(f"{path}: unexpected entry {name!r}")
                arr = np.lib.format.read_array(io.BytesIO(zf.read(name)),
                                               allow_pickle=False)
                arrays[name[:-4]] = arr
    except zipfile.BadZipFile as exc:
        raise CheckpointMismatch(f"{path}: not a checkpoint archive ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointMismatch(
            f"{path}: format {meta.get('format')!r}, expected {FORMAT!r}")
    return arrays, meta


def state_arrays(module: torch.nn.Module, prefix: str = "") -> dict:
    """Snapshot a module's state dict as numpy arrays under ``prefix``."""
    out = {}
    for k, v in module.state_dict().items():
        out[prefix + k] = v.detach().cpu().numpy().copy()
    return out


def model_meta(model: M.SRNetwork, step: int = 0, **extra) -> dict:
    meta = {
        "format": FORMAT,
        "kind": "model",
        "arch": model.arch,
        "config": M.config_to_dict(model.cfg),
        "scale": model.scale,
        "step": int(step),
    }
    meta.update(extra)
    return meta


def save_model(path, model: M.SRNetwork, step: int = 0, **extra) -> None:
    save_arrays(path, state_arrays(model), model_meta(model, step, **extra))


def _load_tensors(module: torch.nn.Module, arrays: dict, prefix: str,
                  path) -> None:
    want = module.state_dict()
    have = {k[len(prefix):]: v for k, v in arrays.items()
            if k.startswith(prefix) and not k.startswith("optim.")}
    missing = sorted(set(want) - set(have))
    extra = sorted(set(have) - set(want))
    if missing or extra:
        raise CheckpointMismatch(
            f"{path}: key mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    tensors = {}
    for k, v in have.items():
        if tuple(want[k].shape) != tuple(v.shape):
            raise CheckpointMismatch(
                f"{path}: shape mismatch at {k}: checkpoint {v.shape}, "
                f"model {tuple(want[k].shape)}")
        tensors[k] = torch.from_numpy(np.ascontiguousarray(v))
    module.load_state_dict(tensors)


def load_into_model(path, model: M.SRNetwork) -> dict:
    """Load weights into an existing model, verifying arch and config."""
    arrays, meta = load_arrays(path)
    if meta.get("arch") != model.arch:
        raise CheckpointMismatch(
            f"{path}: arch {meta.get('arch')!r} does not match model {model.arch!r}")
    if meta.get("config") != M.config_to_dict(model.cfg):
        raise CheckpointMismatch(
            f"{path}: config {meta.get('config')} does not match model "
            f"{M.config_to_dict(model.cfg)}")
    prefix = "student." if meta.get("kind") == "train_state" else ""
    _load_tensors(model, arrays, prefix, path)
    return meta


def build_from_checkpoint(path) -> tuple[M.SRNetwork, dict]:
    """Reconstruct the network an archive describes and load its weights.

    Accepts both plain model checkpoints and full training-state
    checkpoints (where the network lives under the ``student.`` prefix).
    """
    arrays, meta = load_arrays(path)
    for field in ("arch", "config"):
        if field not in meta:
            raise CheckpointMismatch(f"{path}: meta lacks {field!r}")
    cfg = M.config_from_dict(meta["arch"], meta["config"])
    model = M.EDSR(cfg) if meta["arch"] == "edsr" else M.RCAN(cfg)
    prefix = "student." if meta.get("kind") == "train_state" else ""
    _load_tensors(model, arrays, prefix, path)
    model.eval()
    return model, meta
