"""
Prompt tuning on a frozen ToyMaskedLM, evaluation under ablation masks, and
activation extraction.

Only the l × d prompt rows are optimized; the base model is checked bit-for-bit
before and after training.
"""
import logging
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..core.errors import DivergenceDetected, EmptyDataset
from ..core.models import BOS, AblationMask, PromptState, TaskDataset, TrainHyper
from .toylm import DTYPE, ToyMaskedLM, keep_masks, params_checksum, prompt_tensor, token_tensor

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


def _targets(labels: np.ndarray) -> torch.Tensor:
    # logit column 0 is "yes", so label 1 (yes) maps to class 0
    return torch.from_numpy(1 - labels.astype(np.int64))


def train_prompt(
    model: ToyMaskedLM,
    task: TaskDataset,
    seed: int,
    hyper: Optional[TrainHyper] = None,
    progress: bool = False,
) -> PromptState:
    """
    Optimize the prompt rows with Adam on cross-entropy over the [yes, no] logits.

    The prompt initialization and batch order both come from one torch.Generator
    seeded with `seed`, so two runs with the same seed give identical prompts.
    """
    hyper = hyper or TrainHyper()
    if len(task) == 0:
        raise EmptyDataset(f"Task {task.task!r} has no training samples")
    tokens = token_tensor(model, task.tokens)
    targets = _targets(task.labels)
    cfg = model.cfg
    before = params_checksum(model)

    gen = torch.Generator().manual_seed(int(seed))
    init = torch.empty(cfg.prompt_len, cfg.d_model, dtype=DTYPE)
    init.normal_(0.0, hyper.prompt_init_std, generator=gen)
    prompt = torch.nn.Parameter(init)
    optimizer = torch.optim.Adam([prompt], lr=hyper.lr)

    n = len(task)
    pbar = tqdm(range(hyper.epochs), desc=f"prompt {task.task}/{seed}", disable=not progress)
    for epoch in pbar:
        order = torch.randperm(n, generator=gen)
        running = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            logits, _ = model(tokens[idx], prompt)
            loss = F.cross_entropy(logits, targets[idx])
            if not torch.isfinite(loss):
                raise DivergenceDetected(
                    f"Loss became {loss.item()} in epoch {epoch} for task {task.task!r}",
                    task=task.task, seed=seed, epoch=epoch,
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            running += loss.item() * len(idx)
        pbar.set_postfix(loss=f"{running / n:.4f}")

    if params_checksum(model) != before:
        raise RuntimeError("base model parameters changed during prompt tuning")
    logger.debug("Trained prompt for %s seed %d, final loss %.4f", task.task, seed, running / n)
    return PromptState(task=task.task, seed=int(seed), embeddings=prompt.detach().numpy().copy(), hyper=hyper)


def predict(
    model: ToyMaskedLM,
    prompt,
    tokens: np.ndarray,
    mask: Optional[AblationMask] = None,
) -> np.ndarray:
    """Batched [yes, no] logits, samples × 2."""
    ids = token_tensor(model, tokens)
    p = prompt_tensor(model, prompt)
    keep = keep_masks(model, mask)
    out = []
    with torch.no_grad():
        for start in range(0, ids.shape[0], EVAL_BATCH):
            logits, _ = model(ids[start:start + EVAL_BATCH], p, keep=keep)
            out.append(logits)
    return torch.cat(out).numpy()


def evaluate(
    model: ToyMaskedLM,
    prompt,
    test: TaskDataset,
    mask: Optional[AblationMask] = None,
) -> float:
    """Accuracy under argmax(yes, no); a tie counts as "no"."""
    if len(test) == 0:
        raise EmptyDataset(f"Task {test.task!r} has no evaluation samples")
    logits = predict(model, prompt, test.tokens, mask)
    predicted_yes = logits[:, 0] > logits[:, 1]
    return float(np.mean(predicted_yes == (test.labels == 1)))


def extract_activations(model: ToyMaskedLM, prompt) -> np.ndarray:
    """
    Activation vector: forward [MASK], the prompt rows, <s> with no text, mean-pool v over all l + 2
    positions per layer and concatenate layers into a length-L vector.
    """
    ids = token_tensor(model, [BOS])
    with torch.no_grad():
        _, pres = model(ids, prompt_tensor(model, prompt))
    return torch.cat([p[0].mean(dim=0) for p in pres]).numpy()


def prompt_loss(model: ToyMaskedLM, prompt: torch.Tensor, batch: TaskDataset) -> torch.Tensor:
    logits, _ = model(token_tensor(model, batch.tokens), prompt)
    return F.cross_entropy(logits, _targets(batch.labels))


def gradient_check(model: ToyMaskedLM, prompt, batch: TaskDataset, step: float = 1e-4) -> float:
    """
    Compare the autograd gradient of the loss w.r.t. every prompt entry against central
    finite differences.

    Returns:
        max |g_analytic − g_numeric| / max |g_analytic|
    """
    p = prompt_tensor(model, prompt).clone().requires_grad_(True)
    loss = prompt_loss(model, p, batch)
    (analytic,) = torch.autograd.grad(loss, p)

    numeric = torch.zeros_like(analytic)
    with torch.no_grad():
        base = p.detach().clone()
        for i in range(base.shape[0]):
            for j in range(base.shape[1]):
                plus, minus = base.clone(), base.clone()
                plus[i, j] += step
                minus[i, j] -= step
                numeric[i, j] = (prompt_loss(model, plus, batch) - prompt_loss(model, minus, batch)) / (2 * step)
    scale = analytic.abs().max().item()
    return (analytic - numeric).abs().max().item() / scale if scale > 0 else 0.0
