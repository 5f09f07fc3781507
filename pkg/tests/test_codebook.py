import numpy as np
import pytest
import torch
import torch.nn.functional as F

from handtraj.codebook import (CodebookConfig, ConditionedTrajectoryDecoder,
                               InterCode, ResidualQuantizer, TrajectoryEncoder,
                               codebook_loss, split_pose_params,
                               weighted_contact_centroid, STEP_INPUT_DIM,
                               POSE_PARAM_DIM, CONTACT_DIM)
from handtraj.hand import fk_batch


def _brute_force_rq(features, codewords):
    """Greedy nearest-codeword residual quantization, plain loops."""
    q_layers, k, e = codewords.shape
    quantized = np.zeros_like(features)
    indices = np.zeros((len(features), q_layers), dtype=np.int64)
    residual = features.copy()
    for q in range(q_layers):
        for i in range(len(features)):
            d = ((codewords[q] - residual[i]) ** 2).sum(axis=1)
            indices[i, q] = int(np.argmin(d))
        selected = codewords[q][indices[:, q]]
        quantized += selected
        residual -= selected
    return quantized, indices


def test_quantize_eval_matches_brute_force():
    torch.manual_seed(0)
    rq = ResidualQuantizer(num_quantizers=3, num_entries=16, code_dim=8)
    rq.codewords.normal_(generator=torch.Generator().manual_seed(1))
    feats = torch.randn(1000, 8, generator=torch.Generator().manual_seed(2))
    quantized, indices = rq.quantize_eval(feats)
    bq, bi = _brute_force_rq(feats.numpy().astype(np.float64),
                             rq.codewords.numpy().astype(np.float64))
    assert np.array_equal(indices.numpy(), bi)
    assert np.allclose(quantized.numpy(), bq, atol=1e-5)


def test_residual_error_non_increasing_in_q():
    feats = torch.randn(200, 8, generator=torch.Generator().manual_seed(3))
    errors = []
    for q in range(1, 7):
        rq = ResidualQuantizer(num_quantizers=q, num_entries=16, code_dim=8)
        torch.manual_seed(4)  # identical per-layer codewords across q
        for layer in range(q):
            gen = torch.Generator().manual_seed(100 + layer)
            rq.codewords[layer] = torch.randn(16, 8, generator=gen)
        quantized, _ = rq.quantize_eval(feats)
        errors.append(float(((quantized - feats) ** 2).mean()))
    for a, b in zip(errors, errors[1:]):
        assert b <= a + 1e-9


def test_straight_through_gradient_is_identity():
    rq = ResidualQuantizer(num_quantizers=2, num_entries=8, code_dim=4)
    feats = torch.randn(5, 4, requires_grad=True)
    res = rq.quantize_train(feats, temp=0.5, noise=False)
    upstream = torch.randn(5, 4)
    res.quantized.backward(upstream)
    assert torch.allclose(feats.grad, upstream)


def test_quantize_train_argmax_matches_eval_without_noise():
    rq = ResidualQuantizer(num_quantizers=3, num_entries=16, code_dim=8)
    rq.codewords.normal_(generator=torch.Generator().manual_seed(5))
    feats = torch.randn(50, 8, generator=torch.Generator().manual_seed(6))
    res = rq.quantize_train(feats, temp=0.5, noise=False)
    _, eval_idx = rq.quantize_eval(feats)
    assert torch.equal(res.indices, eval_idx)


def test_quantize_train_soft_rows_sum_to_one():
    rq = ResidualQuantizer(num_quantizers=2, num_entries=8, code_dim=4)
    feats = torch.randn(10, 4)
    res = rq.quantize_train(feats, temp=0.5, noise=True,
                            generator=torch.Generator().manual_seed(7))
    assert torch.allclose(res.soft.sum(dim=-1), torch.ones(10, 2), atol=1e-6)
    with pytest.raises(ValueError):
        rq.quantize_train(feats, temp=0.0)


def test_ema_update_matches_reference_formula():
    rq = ResidualQuantizer(num_quantizers=1, num_entries=4, code_dim=2,
                           ema_decay=0.9, dead_code_threshold=0.0)
    rq.codewords[0] = torch.tensor([[0.0, 0], [1, 0], [0, 1], [1, 1]])
    rq.ema_sum[0] = rq.codewords[0].clone()
    rq.ema_count[0] = torch.ones(4)
    residual = torch.tensor([[0.1, 0.0], [0.9, 0.1], [0.2, 0.1]])
    onehot = F.one_hot(torch.tensor([0, 1, 0]), 4).float()
    counts0 = rq.ema_count[0].clone()
    sums0 = rq.ema_sum[0].clone()
    rq.ema_update([residual], [onehot])
    d = 0.9
    exp_counts = d * counts0 + (1 - d) * onehot.sum(0)
    exp_sums = d * sums0 + (1 - d) * onehot.t() @ residual
    assert torch.allclose(rq.ema_count[0], exp_counts)
    assert torch.allclose(rq.ema_sum[0], exp_sums)
    assert torch.allclose(rq.codewords[0],
                          exp_sums / exp_counts.clamp(min=1e-6)[:, None])


def test_dead_code_reseeding():
    rq = ResidualQuantizer(num_quantizers=1, num_entries=4, code_dim=2,
                           ema_decay=0.5, dead_code_threshold=1.0)
    rq.ema_count[0] = torch.tensor([2.0, 0.01, 2.0, 2.0])
    residual = torch.tensor([[5.0, 5.0]])
    onehot = F.one_hot(torch.tensor([0]), 4).float()
    rq.ema_update([residual], [onehot],
                  generator=torch.Generator().manual_seed(8))
    # the dead entry was reseeded from the batch residuals
    assert torch.allclose(rq.codewords[0][1], residual[0])
    assert rq.ema_count[0][1] == 1.0


def test_farthest_point_init_covers_separated_clusters():
    gen = torch.Generator().manual_seed(9)
    means = torch.tensor([[0.0, 0], [10, 0], [0, 10], [10, 10]])
    data = (means.repeat_interleave(50, dim=0)
            + 0.01 * torch.randn(200, 2, generator=gen))
    rq = ResidualQuantizer(num_quantizers=1, num_entries=4, code_dim=2)
    rq.init_from_data(data)
    d = torch.cdist(means, rq.codewords[0])
    assert float(d.min(dim=1).values.max()) < 0.5  # one codeword per cluster


def test_encoder_decoder_shapes_and_validation():
    enc = TrajectoryEncoder(horizon=4, width=32)
    out = enc(torch.randn(2, 4, STEP_INPUT_DIM))
    assert out.shape == (2, 4, 32)
    with pytest.raises(ValueError):
        enc(torch.randn(2, 5, STEP_INPUT_DIM))

    dec = ConditionedTrajectoryDecoder(horizon=4, width=32, latent_dim=32)
    pose, logits = dec(torch.randn(2, 4, 32), torch.randn(2, 512),
                       torch.randn(2, 4, 768), torch.randn(2, 4, 32))
    assert pose.shape == (2, 4, POSE_PARAM_DIM)
    assert logits.shape == (2, 4, CONTACT_DIM)
    with pytest.raises(ValueError):
        dec(None, torch.randn(2, 512), torch.randn(2, 4, 768),
            torch.randn(2, 4, 32))
    with pytest.raises(ValueError):  # goal in forecasting-shaped decoder
        dec(torch.randn(2, 4, 32), torch.randn(2, 512),
            torch.randn(2, 4, 768), torch.randn(2, 4, 32),
            goal=torch.randn(2, 768))

    nolat = ConditionedTrajectoryDecoder(horizon=4, width=32, latent_dim=0)
    pose, _ = nolat(None, torch.randn(2, 512), torch.randn(2, 4, 768),
                    torch.randn(2, 4, 32))
    assert pose.shape == (2, 4, POSE_PARAM_DIM)
    with pytest.raises(ValueError):
        nolat(torch.randn(2, 4, 32), torch.randn(2, 512),
              torch.randn(2, 4, 768), torch.randn(2, 4, 32))


def test_config_validation():
    with pytest.raises(ValueError):
        CodebookConfig(gumbel_temp=0.0)
    with pytest.raises(ValueError):
        CodebookConfig(ema_decay=1.5)
    with pytest.raises(ValueError):
        CodebookConfig(num_entries=0)


def _loss_inputs(batch=2, t=3, seed=10):
    gen = torch.Generator().manual_seed(seed)
    pred_pose = torch.randn(batch, t, 99, generator=gen) * 0.1
    pred_pose[..., 90] += 1.0
    pred_pose[..., 94] += 1.0
    gt_pose = pred_pose + 0.05 * torch.randn(batch, t, 99, generator=gen)
    logits = torch.randn(batch, t, CONTACT_DIM, generator=gen)
    gt_contacts = (torch.rand(batch, t, CONTACT_DIM, generator=gen) > 0.9).float()
    beta = torch.randn(batch, 10, generator=gen) * 0.1
    with torch.no_grad():
        g_art, g_rot, g_trans = split_pose_params(gt_pose)
        beta_steps = beta.unsqueeze(1).expand(batch, t, 10)
        verts, _ = fk_batch(beta_steps.double(), g_art.double(),
                            g_rot.double(), g_trans.double())
    cents = (gt_contacts.double().unsqueeze(-1) * verts).sum(-2)
    cents = cents / gt_contacts.double().sum(-1, keepdim=True).clamp(min=1)
    return pred_pose, logits, gt_pose, gt_contacts, cents.float(), beta


def test_loss_terms_match_reimplementation():
    pred_pose, logits, gt_pose, gt_contacts, cents, beta = _loss_inputs()
    total, terms = codebook_loss(pred_pose, logits, gt_pose, gt_contacts,
                                 cents, beta)
    p_art, p_rot, p_trans = split_pose_params(pred_pose)
    g_art, g_rot, g_trans = split_pose_params(gt_pose)
    assert torch.allclose(terms["articulation"],
                          F.smooth_l1_loss(p_art, g_art))
    assert torch.allclose(terms["translation"], (p_trans - g_trans).abs().mean())
    assert torch.allclose(terms["rotation"], (p_rot - g_rot).abs().mean())
    assert torch.allclose(terms["contact_bce"], F.binary_cross_entropy(
        torch.sigmoid(logits), gt_contacts), atol=1e-6)
    # centroid oracle: explicit probability-weighted FK mean
    probs = torch.sigmoid(logits)
    beta_steps = beta.unsqueeze(1).expand(*pred_pose.shape[:-1], 10)
    verts, _ = fk_batch(beta_steps, p_art, p_rot, p_trans)
    manual = ((probs.unsqueeze(-1) * verts).sum(-2)
              / probs.sum(-1, keepdim=True))
    expected = (manual - cents).abs().mean(-1).mean()
    assert torch.allclose(terms["centroid"], expected, atol=1e-6)
    assert torch.allclose(total, sum(terms.values()))


def test_loss_skips_steps_without_contact():
    pred_pose, logits, gt_pose, gt_contacts, cents, beta = _loss_inputs()
    cents_nan = cents.clone()
    cents_nan[:, 1] = float("nan")
    _, terms = codebook_loss(pred_pose, logits, gt_pose, gt_contacts,
                             cents_nan, beta)
    sub = cents[:, [0, 2]]
    probs = torch.sigmoid(logits[:, [0, 2]])
    p_art, p_rot, p_trans = split_pose_params(pred_pose[:, [0, 2]])
    beta_steps = beta.unsqueeze(1).expand(-1, 2, 10)
    verts, _ = fk_batch(beta_steps, p_art, p_rot, p_trans)
    manual = weighted_contact_centroid(verts, probs)
    expected = (manual - sub).abs().mean(-1).mean()
    assert torch.allclose(terms["centroid"], expected, atol=1e-6)


def test_contact_loss_off_detaches_contact_head():
    pred_pose, logits, gt_pose, gt_contacts, cents, beta = _loss_inputs()
    pred_pose = pred_pose.clone().requires_grad_(True)
    logits = logits.clone().requires_grad_(True)
    total, terms = codebook_loss(pred_pose, logits, gt_pose, gt_contacts,
                                 cents, beta, use_contact_loss=False)
    assert "contact_bce" not in terms
    assert total.grad_fn is not None  # pose path still trains
    grad = torch.autograd.grad(total, logits, allow_unused=True)[0]
    assert grad is None  # zero gradient flow to contact logits


def test_loss_weights_scale_terms():
    pred_pose, logits, gt_pose, gt_contacts, cents, beta = _loss_inputs()
    base, terms = codebook_loss(pred_pose, logits, gt_pose, gt_contacts,
                                cents, beta)
    doubled, _ = codebook_loss(pred_pose, logits, gt_pose, gt_contacts,
                               cents, beta, weights={"translation": 2.0})
    assert torch.allclose(doubled - base, terms["translation"])


def test_intercode_structure():
    cfg = CodebookConfig(horizon=4, num_entries=8, code_dim=16,
                         num_quantizers=2)
    model = InterCode(cfg)
    steps = torch.randn(2, 4, STEP_INPUT_DIM)
    feats = model.encode(steps)
    assert feats.shape == (2, 4, 16)
    model.quantizer.init_from_data(feats)
    quantized, indices = model.tokenize(steps)
    assert quantized.shape == (2, 4, 16)
    assert indices.shape == (2, 4, 2)
