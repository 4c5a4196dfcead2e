"""
Desk-scale masked-LM encoder used as the language model under study.

Pre-LN transformer in float64. Parameter names follow the TransformerLens
convention: each MLP holds W_in (d_model × d_ff), b_in, W_out (d_ff × d_model) and
b_out, and the captured neuron value is the pre-activation v = LN(x) W_in + b_in
(`hook_pre`). Neuron i of layer k has global index k · d_ff + i.

Input layout for every forward pass: [MASK], the l prompt rows, then the text
tokens. The yes/no verbalizer logits are read at position 0.
"""
import hashlib
import logging
import math
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.errors import IndexOutOfRange, InvalidConfig, SequenceTooLong, UnknownToken
from ..core.models import MASK, NO, PAD, YES, AblationMask, ModelConfig, PromptState

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LN_EPS = 1e-5


def gelu(x: Union[float, torch.Tensor]) -> Union[float, torch.Tensor]:
    """Exact GELU x · Φ(x) (erf form, not the tanh approximation)."""
    if isinstance(x, torch.Tensor):
        return F.gelu(x, approximate="none")
    return float(F.gelu(torch.tensor(float(x), dtype=DTYPE), approximate="none"))


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.heads
        self.d_head = d // cfg.heads
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            setattr(self, name, nn.Parameter(torch.empty(d, d, dtype=DTYPE)))
        for name in ("b_Q", "b_K", "b_V", "b_O"):
            setattr(self, name, nn.Parameter(torch.zeros(d, dtype=DTYPE)))

    def forward(self, x: torch.Tensor, key_pad: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape

        def heads(w, bias):
            return (x @ w + bias).view(b, t, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = heads(self.W_Q, self.b_Q), heads(self.W_K, self.b_K), heads(self.W_V, self.b_V)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        z = (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, t, d)
        return z @ self.W_O + self.b_O


class MLP(nn.Module):
    """FFN(x) = GELU(x W_in + b_in) W_out + b_out with an optional keep-mask on v."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.W_in = nn.Parameter(torch.empty(cfg.d_model, cfg.d_ff, dtype=DTYPE))
        self.b_in = nn.Parameter(torch.zeros(cfg.d_ff, dtype=DTYPE))
        self.W_out = nn.Parameter(torch.empty(cfg.d_ff, cfg.d_model, dtype=DTYPE))
        self.b_out = nn.Parameter(torch.zeros(cfg.d_model, dtype=DTYPE))

    def forward(self, x, keep=None, cache=None, name=""):
        pre = x @ self.W_in + self.b_in
        if keep is not None:
            pre = pre * keep
        post = gelu(pre)
        out = post @ self.W_out + self.b_out
        if cache is not None:
            cache[f"{name}.hook_pre"] = pre
            cache[f"{name}.hook_post"] = post
            cache[f"{name}.hook_mlp_out"] = out
        return out, pre


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model, eps=LN_EPS, dtype=DTYPE)
        self.attn = Attention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model, eps=LN_EPS, dtype=DTYPE)
        self.mlp = MLP(cfg)

    def forward(self, x, key_pad, keep=None, cache=None, name=""):
        x = x + self.attn(self.ln1(x), key_pad)
        if cache is not None:
            cache[f"{name}.hook_resid_mid"] = x
        out, pre = self.mlp(self.ln2(x), keep=keep, cache=cache, name=f"{name}.mlp")
        return x + out, pre


class ToyMaskedLM(nn.Module):
    """Encoder with tied-embedding MLM head restricted to the yes/no verbalizer."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        cfg.check()
        self.cfg = cfg
        self.W_E = nn.Parameter(torch.empty(cfg.vocab, cfg.d_model, dtype=DTYPE))
        self.W_pos = nn.Parameter(torch.empty(cfg.max_len, cfg.d_model, dtype=DTYPE))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_final = nn.LayerNorm(cfg.d_model, eps=LN_EPS, dtype=DTYPE)
        self.W_head = nn.Parameter(torch.empty(cfg.d_model, cfg.d_model, dtype=DTYPE))
        self.b_head = nn.Parameter(torch.zeros(cfg.d_model, dtype=DTYPE))
        self.ln_head = nn.LayerNorm(cfg.d_model, eps=LN_EPS, dtype=DTYPE)
        self.b_U = nn.Parameter(torch.zeros(cfg.vocab, dtype=DTYPE))

    def embed(self, tokens: torch.Tensor, prompt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b = tokens.shape[0]
        mask_row = self.W_E[MASK].expand(b, 1, -1)
        prompt_rows = prompt.unsqueeze(0).expand(b, -1, -1)
        x = torch.cat([mask_row, prompt_rows, self.W_E[tokens]], dim=1)
        x = x + self.W_pos[: x.shape[1]]
        key_pad = torch.cat(
            [torch.zeros(b, 1 + prompt.shape[0], dtype=torch.bool), tokens == PAD], dim=1
        )
        return x, key_pad

    def forward(
        self,
        tokens: torch.Tensor,
        prompt: torch.Tensor,
        keep: Optional[list[torch.Tensor]] = None,
        cache: Optional[dict] = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """
        Returns:
            (logits, pre): logits is batch × 2 ([yes, no] at the [MASK] position); pre
            holds one batch × positions × d_ff tensor of v per layer.
        """
        x, key_pad = self.embed(tokens, prompt)
        pres = []
        for k, block in enumerate(self.blocks):
            x, pre = block(
                x, key_pad,
                keep=None if keep is None else keep[k],
                cache=cache, name=f"blocks.{k}",
            )
            pres.append(pre)
        h = self.ln_final(x[:, 0])
        h = self.ln_head(gelu(h @ self.W_head + self.b_head))
        verbalizer = [YES, NO]
        logits = h @ self.W_E[verbalizer].T + self.b_U[verbalizer]
        return logits, pres

    def run_with_cache(self, tokens, prompt, keep=None):
        cache: dict[str, torch.Tensor] = {}
        logits, _ = self.forward(tokens, prompt, keep=keep, cache=cache)
        return logits, cache


def init_model(cfg: ModelConfig, seed: int) -> ToyMaskedLM:
    """
    Build a model with deterministic weights: every W_* matrix ~ N(0, cfg.init_std),
    biases 0, layer-norm gains 1. All parameters come back frozen.
    """
    model = ToyMaskedLM(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("W_"):
                param.normal_(0.0, cfg.init_std, generator=gen)
            elif leaf == "weight":
                param.fill_(1.0)
            else:
                param.zero_()
    model.requires_grad_(False)
    model.eval()
    return model


def params_checksum(model: nn.Module) -> str:
    """sha256 over every parameter's raw bytes, in registration order."""
    digest = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().contiguous().numpy().tobytes())
    return digest.hexdigest()


# ── shared helpers ────────────────────────────────────────────────────────────

def prompt_tensor(model: ToyMaskedLM, prompt: Union[PromptState, np.ndarray, torch.Tensor]) -> torch.Tensor:
    if isinstance(prompt, PromptState):
        prompt = prompt.embeddings
    tensor = torch.as_tensor(prompt, dtype=DTYPE)
    expected = (model.cfg.prompt_len, model.cfg.d_model)
    if tuple(tensor.shape) != expected:
        raise InvalidConfig(f"prompt shape {tuple(tensor.shape)} != {expected}")
    return tensor


def token_tensor(model: ToyMaskedLM, tokens) -> torch.Tensor:
    """Validate a (batch of) token sequence(s) and return a 2-d long tensor."""
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    cfg = model.cfg
    if arr.size and (arr.min() < 0 or arr.max() >= cfg.vocab):
        bad = int(arr[(arr < 0) | (arr >= cfg.vocab)][0])
        raise UnknownToken(f"Token id {bad} outside vocabulary of {cfg.vocab}", token=bad)
    length = 1 + cfg.prompt_len + arr.shape[1]
    if length > cfg.max_len:
        raise SequenceTooLong(f"Input of {length} positions exceeds max_len={cfg.max_len}")
    return torch.from_numpy(arr)


def keep_masks(model: ToyMaskedLM, mask: Optional[AblationMask]) -> Optional[list[torch.Tensor]]:
    """Per-layer 0/1 multipliers on v, or None for an empty mask (identity)."""
    if mask is None or len(mask) == 0:
        return None
    cfg = model.cfg
    if mask.n_neurons != cfg.n_neurons:
        raise IndexOutOfRange(f"mask covers {mask.n_neurons} neurons, model has {cfg.n_neurons}")
    keep = torch.ones(cfg.n_neurons, dtype=DTYPE)
    keep[sorted(mask.indices)] = 0.0
    return list(keep.view(cfg.layers, cfg.d_ff))


def forward_mlm(
    model: ToyMaskedLM,
    prompt: Union[PromptState, np.ndarray],
    tokens,
    mask: Optional[AblationMask] = None,
) -> tuple[float, float, np.ndarray]:
    """
    Forward one token sequence.

    Returns:
        (yes_logit, no_logit, activations) where activations is positions × L, layers
        concatenated in order; ablated neurons report 0.
    """
    ids = token_tensor(model, tokens)
    if ids.shape[0] != 1:
        raise InvalidConfig("forward_mlm takes a single sequence")
    with torch.no_grad():
        logits, pres = model(ids, prompt_tensor(model, prompt), keep=keep_masks(model, mask))
    acts = torch.cat([p[0] for p in pres], dim=-1).numpy()
    return float(logits[0, 0]), float(logits[0, 1]), acts
