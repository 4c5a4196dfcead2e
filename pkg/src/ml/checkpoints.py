"""
Versioned binary containers for model checkpoints (MODL1) and prompt states (PRMT1).

Layout: 6-byte magic, little-endian u32 header length, UTF-8 JSON header (config,
tensor names and shapes), then every tensor as little-endian float64 in header order.
"""
import json
from pathlib import Path
from typing import Union

import numpy as np
import torch

from ..core.errors import BadMagic, IoFailure, NonFiniteValue, TruncatedFile
from ..core.models import ModelConfig, PromptState, TrainHyper
from .toylm import DTYPE, ToyMaskedLM

MODEL_MAGIC = b"MODL1\n"
PROMPT_MAGIC = b"PRMT1\n"

PathLike = Union[str, Path]


def _pack(magic: bytes, header: dict, arrays: list[np.ndarray], path: PathLike) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"Refusing to write non-finite values to {path}")
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(magic + np.array([len(head)], dtype="<u4").tobytes() + head + payload)
    except OSError as exc:
        raise IoFailure(f"Could not write {path}: {exc}") from exc


def _unpack(magic: bytes, path: PathLike) -> tuple[dict, list[np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Could not read {path}: {exc}") from exc
    if data[: len(magic)] != magic:
        raise BadMagic(f"{path} does not start with {magic!r}")
    pos = len(magic)
    if len(data) < pos + 4:
        raise TruncatedFile(f"{path} ends inside the header length")
    size = int(np.frombuffer(data[pos:pos + 4], dtype="<u4")[0])
    pos += 4
    if len(data) < pos + size:
        raise TruncatedFile(f"{path} ends inside the JSON header")
    header = json.loads(data[pos:pos + size].decode("utf-8"))
    pos += size
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(data):
            raise TruncatedFile(f"{path} ends inside tensor payload")
        arrays.append(np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).astype(np.float64))
        pos = end
    if pos != len(data):
        raise TruncatedFile(f"{path} has {len(data) - pos} trailing bytes")
    return header, arrays


def save_model(model: ToyMaskedLM, path: PathLike) -> None:
    state = model.state_dict()
    names = list(state)
    arrays = [state[n].detach().numpy() for n in names]
    header = {
        "config": model.cfg.model_dump(),
        "names": names,
        "shapes": [list(a.shape) for a in arrays],
    }
    _pack(MODEL_MAGIC, header, arrays, path)


def load_model(path: PathLike) -> ToyMaskedLM:
    header, arrays = _unpack(MODEL_MAGIC, path)
    model = ToyMaskedLM(ModelConfig(**header["config"]))
    state = {n: torch.from_numpy(a).to(DTYPE) for n, a in zip(header["names"], arrays)}
    model.load_state_dict(state)
    model.requires_grad_(False)
    model.eval()
    return model


def save_prompt(state: PromptState, path: PathLike) -> None:
    header = {
        "task": state.task,
        "seed": state.seed,
        "hyper": state.hyper.model_dump(),
        "names": ["embeddings"],
        "shapes": [list(state.embeddings.shape)],
    }
    _pack(PROMPT_MAGIC, header, [state.embeddings], path)


def load_prompt(path: PathLike) -> PromptState:
    header, (embeddings,) = _unpack(PROMPT_MAGIC, path)
    return PromptState(
        task=header["task"], seed=header["seed"], embeddings=embeddings,
        hyper=TrainHyper(**header["hyper"]),
    )


def prompt_file(out_dir: PathLike, task: str, seed: int) -> Path:
    """Conventional location of a (task, seed) prompt inside a run directory."""
    return Path(out_dir) / "prompts" / f"{task}__s{seed}.prmt"


def save_run_checkpoints(model: ToyMaskedLM, prompts: dict, out_dir: PathLike) -> list[Path]:
    """model.modl plus one .prmt per (task, seed), in sorted order."""
    written = [Path(out_dir) / "model.modl"]
    save_model(model, written[0])
    for (task, seed), state in sorted(prompts.items()):
        path = prompt_file(out_dir, task, seed)
        save_prompt(state, path)
        written.append(path)
    return written
