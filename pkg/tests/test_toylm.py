import math

import numpy as np
import pytest
import torch

from src.core.errors import IndexOutOfRange, InvalidConfig, SequenceTooLong, UnknownToken
from src.core.models import BOS, AblationMask, ModelConfig
from src.ml.toylm import (
    DTYPE,
    LN_EPS,
    forward_mlm,
    gelu,
    init_model,
    keep_masks,
    params_checksum,
    prompt_tensor,
    token_tensor,
)


def _prompt(cfg, seed=0):
    return np.random.default_rng(seed).standard_normal((cfg.prompt_len, cfg.d_model)) * 0.5


def test_gelu_values():
    assert gelu(0.0) == 0.0
    assert gelu(10.0) == pytest.approx(10.0, abs=1e-12)
    phi_1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert gelu(1.0) == pytest.approx(phi_1, abs=1e-12)


def test_init_is_deterministic(tiny_cfg):
    a, b = init_model(tiny_cfg, 4), init_model(tiny_cfg, 4)
    assert params_checksum(a) == params_checksum(b)
    assert params_checksum(a) != params_checksum(init_model(tiny_cfg, 5))


def test_init_freezes_base(tiny_model):
    assert not any(p.requires_grad for p in tiny_model.parameters())
    assert not tiny_model.training


def test_heads_must_divide_d_model():
    with pytest.raises(InvalidConfig):
        init_model(ModelConfig(d_model=63, heads=4), 0)


def test_prompt_must_fit_context():
    with pytest.raises(InvalidConfig):
        init_model(ModelConfig(max_len=8, prompt_len=7), 0)


def test_empty_mask_is_pure(tiny_model, tiny_cfg):
    prompt = _prompt(tiny_cfg)
    tokens = [BOS, 9, 12, 15]
    first = forward_mlm(tiny_model, prompt, tokens, AblationMask.empty(tiny_cfg.n_neurons))
    again = forward_mlm(tiny_model, prompt, tokens, AblationMask.empty(tiny_cfg.n_neurons))
    unmasked = forward_mlm(tiny_model, prompt, tokens)
    assert first[:2] == again[:2] == unmasked[:2]
    assert np.array_equal(first[2], unmasked[2])


def test_ablated_neurons_report_zero(tiny_model, tiny_cfg):
    mask = AblationMask.of(tiny_cfg.n_neurons, [0, 5, tiny_cfg.d_ff + 3])
    _, _, acts = forward_mlm(tiny_model, _prompt(tiny_cfg), [BOS, 9, 10], mask)
    assert acts.shape == (1 + tiny_cfg.prompt_len + 3, tiny_cfg.n_neurons)
    assert not acts[:, [0, 5, tiny_cfg.d_ff + 3]].any()


def test_full_mask_leaves_only_output_bias(tiny_model, tiny_cfg):
    """With every neuron zeroed each FFN contributes exactly b_out."""
    prompt = prompt_tensor(tiny_model, _prompt(tiny_cfg))
    ids = token_tensor(tiny_model, [BOS, 9, 10])
    for block in tiny_model.blocks:
        block.mlp.b_out.copy_(torch.full_like(block.mlp.b_out, 0.1))
    mask = AblationMask.of(tiny_cfg.n_neurons, range(tiny_cfg.n_neurons))
    with torch.no_grad():
        masked, _ = tiny_model(ids, prompt, keep=keep_masks(tiny_model, mask))
        x, key_pad = tiny_model.embed(ids, prompt)
        for block in tiny_model.blocks:
            x = x + block.attn(block.ln1(x), key_pad)
            x = x + block.mlp.b_out
        h = tiny_model.ln_final(x[:, 0])
        h = tiny_model.ln_head(gelu(h @ tiny_model.W_head + tiny_model.b_head))
        oracle = h @ tiny_model.W_E[[4, 5]].T + tiny_model.b_U[[4, 5]]
    assert torch.allclose(masked, oracle, rtol=0, atol=1e-12)


def test_single_neuron_subtraction(tiny_model, tiny_cfg):
    """Zeroing neuron i of the last layer removes GELU(v_i) · W_out[i] at every position."""
    prompt = prompt_tensor(tiny_model, _prompt(tiny_cfg, 2))
    ids = token_tensor(tiny_model, [BOS, 11, 13, 17])
    last = tiny_cfg.layers - 1
    i = 6
    mask = AblationMask.of(tiny_cfg.n_neurons, [last * tiny_cfg.d_ff + i])
    with torch.no_grad():
        _, full = tiny_model.run_with_cache(ids, prompt)
        _, ablated = tiny_model.run_with_cache(ids, prompt, keep=keep_masks(tiny_model, mask))
    name = f"blocks.{last}.mlp"
    v = full[f"{name}.hook_pre"][0, :, i]
    expected = full[f"{name}.hook_mlp_out"][0] - gelu(v)[:, None] * tiny_model.blocks[last].mlp.W_out[i]
    assert torch.allclose(ablated[f"{name}.hook_mlp_out"][0], expected, rtol=0, atol=1e-12)


def test_first_layer_pre_activation_by_hand(tiny_cfg):
    """With attention output zeroed, layer-0 v is LN(x0) W_in + b_in."""
    model = init_model(tiny_cfg, 21)
    block = model.blocks[0]
    block.attn.W_O.zero_()
    block.attn.b_O.zero_()
    block.mlp.b_in.copy_(torch.linspace(-1, 1, tiny_cfg.d_ff, dtype=DTYPE))
    prompt = _prompt(tiny_cfg, 3)
    tokens = [BOS, 14]
    _, _, acts = forward_mlm(model, prompt, tokens)

    x0 = np.vstack([
        model.W_E[3].numpy(), prompt, model.W_E[BOS].numpy(), model.W_E[14].numpy(),
    ]) + model.W_pos[: tiny_cfg.prompt_len + 3].numpy()
    mu = x0.mean(axis=1, keepdims=True)
    var = x0.var(axis=1, keepdims=True)
    normed = (x0 - mu) / np.sqrt(var + LN_EPS)
    v = normed @ block.mlp.W_in.numpy() + block.mlp.b_in.numpy()
    assert np.allclose(acts[:, : tiny_cfg.d_ff], v, rtol=0, atol=1e-12)


def test_token_validation(tiny_model, tiny_cfg):
    with pytest.raises(UnknownToken):
        token_tensor(tiny_model, [BOS, tiny_cfg.vocab])
    with pytest.raises(SequenceTooLong):
        token_tensor(tiny_model, [BOS] * (tiny_cfg.max_len - tiny_cfg.prompt_len))


def test_mask_size_must_match_model(tiny_model):
    with pytest.raises(IndexOutOfRange):
        keep_masks(tiny_model, AblationMask.of(7, [1]))
