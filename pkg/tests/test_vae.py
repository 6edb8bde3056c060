import numpy as np
import pytest

from nurbsrep.datagen import make_cylinder_segment, make_plane
from nurbsrep.nurbs import surface_eval_many
from nurbsrep.preprocess import DegenerateSurfaceError, PaddedBundle, normalize, pack, to_model_range
from nurbsrep.vae import (
    LossBreakdown,
    NurbsFeature,
    TrainSettings,
    TrainingDiverged,
    VaeConfig,
    batch_loss,
    decode,
    decode_batch,
    embed_tokens,
    encode,
    encode_batch,
    init_params,
    loss,
    make_batch,
    positional_encoding,
    reconstruct_surface,
    train,
)

from oracles import central_difference, rel_error

SMALL = VaeConfig(pad_dim=5, knot_len=8, embed_dim=16, num_layers=2, num_heads=2,
                  latent_dim=8, decoder_hidden=24, seed=3)


def test_positional_encoding_at_zero():
    pe = positional_encoding(10, 8)
    assert pe[0].tolist() == [0.0, 1.0] * 4
    assert pe.shape == (10, 8)
    np.testing.assert_allclose(pe[3, 0], np.sin(3.0))
    np.testing.assert_allclose(pe[3, 3], np.cos(3.0 / 10000 ** (2 / 8)))


def test_embed_zero_bundle_is_positional(small_bundles):
    cfg = VaeConfig(pad_dim=10, knot_len=10, embed_dim=12, num_heads=3)
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    d = 10
    mask = np.zeros((d, d), bool)
    mask[:2, :2] = True
    b = PaddedBundle(np.zeros((d, d, 4)), np.zeros(d), np.zeros(d), mask, (2, 2), (4, 4))
    tok, key_mask = embed_tokens(make_batch([b]), params, cfg)
    assert tok.shape == (1, 100, 12)
    np.testing.assert_array_equal(tok.data[0], positional_encoding(100, 12))
    assert key_mask.sum() == 4


def test_default_latent_length():
    cfg = VaeConfig()
    params = init_params(cfg)
    b = to_model_range(pack(normalize(make_plane(np.random.default_rng(0)))[0], cfg.preprocess))
    f = encode(b, params, cfg, rng=np.random.default_rng(0))
    assert f.z.shape == f.mu.shape == f.log_var.shape == (48,)


def test_deterministic_encode(small_bundles):
    params = init_params(SMALL)
    f = encode(small_bundles[0], params, SMALL, deterministic=True)
    assert np.array_equal(f.z, f.mu)
    g = encode(small_bundles[0], params, SMALL, rng=np.random.default_rng(1))
    assert not np.array_equal(g.z, g.mu)
    assert np.array_equal(g.mu, f.mu)


def test_masking_invariance(small_bundles, rng):
    params = init_params(SMALL)
    for b in small_bundles:
        _, mu0, lv0 = encode_batch(make_batch([b]), params, SMALL, deterministic=True)
        noisy_pw = np.where(b.mask[..., None], b.p_w, rng.normal(0, 5, b.p_w.shape))
        mu_, mv_ = b.knot_masks()
        ku = np.where(mu_, b.knots_u, rng.normal(0, 5, b.knot_len))
        kv = np.where(mv_, b.knots_v, rng.normal(0, 5, b.knot_len))
        nb = PaddedBundle(noisy_pw, ku, kv, b.mask, b.true_dims, b.true_knot_lens, b.record)
        _, mu1, lv1 = encode_batch(make_batch([nb]), params, SMALL, deterministic=True)
        assert np.max(np.abs(mu1 - mu0)) < 1e-8
        assert np.max(np.abs(lv1 - lv0)) < 1e-8


def test_unmasked_perturbation_changes_mu(small_bundles):
    params = init_params(SMALL)
    b = small_bundles[0]
    pw = b.p_w.copy()
    pw[0, 0, 0] += 0.3
    nb = PaddedBundle(pw, b.knots_u, b.knots_v, b.mask, b.true_dims, b.true_knot_lens)
    assert not np.allclose(encode(nb, params, SMALL, deterministic=True).mu,
                           encode(b, params, SMALL, deterministic=True).mu)


def test_token_permutation_invariance_without_positions(small_bundles):
    cfg = VaeConfig(pad_dim=5, knot_len=8, embed_dim=16, num_layers=2, num_heads=2,
                    latent_dim=8, use_positional=False)
    params = init_params(cfg)
    b = small_bundles[-1]
    n, m = b.true_dims
    pw = b.p_w.copy()
    pw[:n, :m] = pw[:n, :m][::-1, ::-1]
    nb = PaddedBundle(pw, b.knots_u, b.knots_v, b.mask, b.true_dims, b.true_knot_lens)
    np.testing.assert_allclose(encode(nb, params, cfg, deterministic=True).mu,
                               encode(b, params, cfg, deterministic=True).mu, atol=1e-12)


def test_batch_matches_single(small_bundles):
    params = init_params(SMALL)
    _, mu, lv = encode_batch(make_batch(small_bundles[:5]), params, SMALL, deterministic=True)
    for i, b in enumerate(small_bundles[:5]):
        f = encode(b, params, SMALL, deterministic=True)
        np.testing.assert_allclose(f.mu, mu[i], atol=1e-12)


def test_all_masked_rejected():
    b = PaddedBundle(np.zeros((5, 5, 4)), np.zeros(8), np.zeros(8), np.zeros((5, 5), bool), (0, 0), (0, 0))
    with pytest.raises(ValueError, match="no unmasked"):
        encode(b, init_params(SMALL), SMALL)


def test_decode_shapes_and_determinism():
    params = init_params(SMALL)
    f = NurbsFeature(np.linspace(-1, 1, 8), np.zeros(8), np.zeros(8))
    a = decode(f, params, SMALL)
    b = decode(f, params, SMALL)
    assert a.p_w.shape == (5, 5, 4) and a.knots_u.shape == (8,) and a.knots_v.shape == (8,)
    assert a.p_w.tobytes() == b.p_w.tobytes()
    with pytest.raises(ValueError):
        decode(NurbsFeature(np.zeros(3), np.zeros(3), np.zeros(3)), params, SMALL)


def test_decode_like_carries_structure(small_bundles):
    params = init_params(SMALL)
    b = small_bundles[0]
    out = decode(encode(b, params, SMALL, deterministic=True), params, SMALL, like=b)
    assert out.true_dims == b.true_dims and out.true_knot_lens == b.true_knot_lens
    assert np.all(out.p_w[~b.mask] == 0)


def _identity_bundle():
    pw = np.zeros((3, 3, 4))
    pw[:2, :2] = 0.5
    mask = np.zeros((3, 3), bool)
    mask[:2, :2] = True
    return PaddedBundle(pw, np.array([-1, -1, 1, 1, 0.0]), np.array([-1, -1, 1, 1, 0.0]), mask, (2, 2), (4, 4))


def test_loss_examples():
    b = _identity_bundle()
    assert loss(b, b, np.zeros(4), np.zeros(4), 1.0).total == 0.0
    pw = b.p_w.copy()
    pw[1, 0, 2] += 0.5
    r = PaddedBundle(pw, b.knots_u, b.knots_v, b.mask, b.true_dims, b.true_knot_lens)
    lb = loss(b, r, np.zeros(4), np.zeros(4), 1.0)
    assert lb.recon_pw == 0.25 and lb.total == 0.25
    lb = loss(b, b, np.array([1.0, 0, 0, 0]), np.zeros(4), 1.0)
    assert lb.kl == 0.5 and lb.total == 0.5
    lb = loss(b, b, np.array([1.0, 0, 0, 0]), np.zeros(4), 1e-3)
    assert lb.total == pytest.approx(5e-4, abs=1e-18)


def test_loss_ignores_padding():
    b = _identity_bundle()
    pw = b.p_w.copy()
    pw[2, 2] = 9.0
    ku = b.knots_u.copy()
    ku[4] = 9.0
    r = PaddedBundle(pw, ku, b.knots_v, b.mask, b.true_dims, b.true_knot_lens)
    assert loss(b, r, np.zeros(4), np.zeros(4), 1.0).total == 0.0


def test_batch_loss_agrees_with_numpy_loss(small_bundles):
    params = init_params(SMALL)
    batch = make_batch(small_bundles[:3])
    eps = np.random.default_rng(0).standard_normal((3, 8))
    lb, _ = batch_loss(batch, params, SMALL, eps)
    z, mu, lv = encode_batch(batch, params, SMALL, deterministic=True)
    z = mu + np.exp(0.5 * lv) * eps
    pw, ku, kv = decode_batch(z, params, SMALL)
    parts = []
    for i, b in enumerate(small_bundles[:3]):
        r = PaddedBundle(pw[i], ku[i], kv[i], b.mask, b.true_dims, b.true_knot_lens)
        parts.append(loss(b, r, mu[i], lv[i], SMALL.kl_weight))
    assert lb.total == pytest.approx(np.mean([p.total for p in parts]), rel=1e-12)
    assert lb.kl == pytest.approx(np.mean([p.kl for p in parts]), rel=1e-12)


def test_gradients_small(small_bundles):
    cfg = VaeConfig(pad_dim=5, knot_len=8, embed_dim=8, num_layers=1, num_heads=2,
                    latent_dim=4, decoder_hidden=8, seed=1, kl_weight=0.1)
    params = init_params(cfg)
    batch = make_batch(small_bundles[:3])
    eps = np.random.default_rng(2).standard_normal((3, 4))
    _, grads = batch_loss(batch, params, cfg, eps, with_grad=True)
    for name in ("embed_u.w", "block0.qkv.w", "block0.ln1.g", "head.b", "dec_pw.0.w", "dec_v.1.b"):
        fd = central_difference(lambda: batch_loss(batch, params, cfg, eps)[0].total, params[name])
        assert rel_error(grads[name], fd) < 1e-6, name


def test_zero_lr_keeps_params(small_bundles):
    params = init_params(SMALL)
    out, hist = train(small_bundles, SMALL, TrainSettings(epochs=3, lr=0.0, batch_size=4))
    for k in params:
        assert np.array_equal(out[k], params[k])
    # only the reparameterization noise moves the reconstruction terms; the KL is fixed
    np.testing.assert_allclose([h.kl for h in hist], hist[0].kl, rtol=1e-12)


def test_training_is_deterministic(small_bundles):
    st = TrainSettings(epochs=2, lr=1e-3, batch_size=5)
    p1, h1 = train(small_bundles, SMALL, st)
    p2, h2 = train(small_bundles, SMALL, st)
    assert [h.as_dict() for h in h1] == [h.as_dict() for h in h2]
    assert all(p1[k].tobytes() == p2[k].tobytes() for k in p1)
    assert all(isinstance(v, float) for v in h1[0].as_dict().values())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_detected(small_bundles):
    with pytest.raises(TrainingDiverged):
        train(small_bundles[:1], SMALL, TrainSettings(epochs=5, lr=1e8, clip_norm=None, batch_size=1))


def test_overfit_single_surface():
    s = make_cylinder_segment(1.2, 1.0, 2.0)
    cfg = VaeConfig(pad_dim=3, knot_len=6, embed_dim=16, num_layers=2, num_heads=2,
                    latent_dim=8, decoder_hidden=32)
    b = to_model_range(pack(normalize(s)[0], cfg.preprocess))
    params, hist = train([b], cfg, TrainSettings(epochs=400, lr=1e-2, batch_size=1))
    assert hist[-1].total < 0.01 * hist[0].total
    out = decode(encode(b, params, cfg, deterministic=True), params, cfg, like=b)
    assert np.abs(out.p_w - b.p_w)[b.mask].max() < 0.02
    rec = reconstruct_surface(s, params, cfg)
    assert rec.degrees == s.degrees
    t = np.random.default_rng(0).uniform(0, 1, (2, 200))

    def at(surf):
        u0, u1, v0, v1 = surf.domain
        return surface_eval_many(surf, u0 + t[0] * (u1 - u0), v0 + t[1] * (v1 - v0))

    assert np.abs(at(rec) - at(s)).max() < 0.1


def test_untrained_reconstruction_is_valid_or_rejected(small_corpus):
    params = init_params(SMALL)
    for s in small_corpus:
        try:
            rec = reconstruct_surface(s, params, SMALL)
        except DegenerateSurfaceError:
            continue
        assert rec.dims[0] <= s.dims[0] and rec.dims[1] <= s.dims[1]


def test_config_validation():
    with pytest.raises(ValueError):
        VaeConfig(embed_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        VaeConfig(kl_weight=-1.0)
