import numpy as np
import pytest

from camalign.autodiff import ContractError, Tensor, backward, grad_of
from camalign.backbone import ModelConfig
from camalign.data import PAD, SyntheticSpec, build_vocab, generate_synthetic, tokenize
from camalign.losses import composite_loss, label_bce, report_cross_entropy
from camalign.model import CaptionModel


# -- loss terms ---------------------------------------------------------------------


def test_cross_entropy_zero_when_certain():
    dists = Tensor(np.eye(3)[[0, 2, 1]])
    assert float(report_cross_entropy(dists, [0, 2, 1]).data) == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_uniform_closed_form():
    dists = Tensor(np.full((2, 4), 0.25))
    out = report_cross_entropy(dists, [1, 3])
    assert float(out.data) == pytest.approx(np.log(4.0), abs=1e-12)


def test_cross_entropy_ignores_pads():
    dists = Tensor(np.full((2, 4), 0.25))
    base = report_cross_entropy(dists, [1, 3])
    padded = Tensor(np.full((4, 4), 0.25))
    with_pads = report_cross_entropy(padded, [1, 3, PAD, PAD])
    assert float(base.data) == pytest.approx(float(with_pads.data), abs=1e-15)


def test_cross_entropy_rejects_all_pad():
    with pytest.raises(ContractError):
        report_cross_entropy(Tensor(np.full((2, 4), 0.25)), [PAD, PAD])


def test_bce_zero_when_matching():
    probs = Tensor(np.array([1.0 - 1e-12, 1e-12, 1.0 - 1e-12]))
    out = label_bce(probs, np.array([1, 0, 1]))
    assert float(out.data) < 1e-10


def test_bce_half_closed_form():
    out = label_bce(Tensor(np.full(3, 0.5)), np.array([1, 0, 1]))
    assert float(out.data) == pytest.approx(np.log(2.0), abs=1e-12)


def test_bce_flip_symmetry(rng):
    p = rng.uniform(0.05, 0.95, size=4)
    y = np.array([1, 0, 1, 0])
    a = float(label_bce(Tensor(p), y).data)
    b = float(label_bce(Tensor(1.0 - p), 1 - y).data)
    assert a == pytest.approx(b, abs=1e-12)


def test_composite_weighted_sum_hand_case():
    total, breakdown = composite_loss(Tensor(2.0), Tensor(0.3), Tensor(0.4), lam=1.0, delta=0.15)
    assert float(total.data) == pytest.approx(2.36, abs=1e-12)
    assert breakdown.total == pytest.approx(2.36, abs=1e-12)


def test_composite_identity_exact(rng):
    ce, bce, mse = (Tensor(float(v)) for v in rng.uniform(0.1, 3.0, 3))
    lam, delta = 0.7, 0.3
    total, breakdown = composite_loss(ce, bce, mse, lam, delta)
    assert abs(breakdown.total - (breakdown.ce + lam * breakdown.bce + delta * breakdown.mse)) <= 1e-12
    assert abs(float(total.data) - breakdown.total) <= 1e-12


def test_composite_delta_zero_gates_mse():
    total_a, _ = composite_loss(Tensor(1.0), Tensor(0.5), Tensor(9.0), lam=1.0, delta=0.0)
    total_b, _ = composite_loss(Tensor(1.0), Tensor(0.5), Tensor(1.0), lam=1.0, delta=0.0)
    assert float(total_a.data) == float(total_b.data)


# -- integrated model ---------------------------------------------------------------


def micro_setup(variant="full", seed=0):
    spec = SyntheticSpec(grid=8, patches=2, classes=("solid", "cross", "dot"),
                         glyph_min=1, glyph_max=2, samples=6, seed=3)
    samples, _ = generate_synthetic(spec)
    vocab = build_vocab([s.report for s in samples])
    cfg = ModelConfig(layers=1, heads=2, dim=8, feat_dim=6, patch=4,
                      vocab=len(vocab), classes=3, max_len=12)
    model = CaptionModel(cfg, variant, np.random.default_rng(seed))
    return model, samples, vocab


def run_forward(model, sample, vocab, **kw):
    ids = tokenize(sample.report, vocab)
    args = dict(lam=1.0, delta=0.15, k=0.25)
    args.update(kw)
    return model.forward_train(sample.images, ids, sample.labels, **args)


def test_variant_gating():
    for variant, has_bce, has_mse in (("base", False, False),
                                      ("vdmae", True, False),
                                      ("full", True, True)):
        model, samples, vocab = micro_setup(variant)
        result = run_forward(model, samples[0], vocab)
        assert (result.breakdown.bce != 0.0) == has_bce
        assert (result.breakdown.mse != 0.0) == has_mse
        if variant == "base":
            assert result.visual_map is None and result.summary is None


def test_loss_breakdown_identity_on_model():
    model, samples, vocab = micro_setup("full")
    result = run_forward(model, samples[0], vocab)
    b = result.breakdown
    assert abs(float(result.total.data) - (b.ce + b.lam * b.bce + b.delta * b.mse)) <= 1e-12


def test_memory_width_equals_map_length_both_modes():
    model, samples, vocab = micro_setup("full")
    result = run_forward(model, samples[0], vocab)
    assert result.memory.shape[0] == result.visual_map.shape[0]
    base, samples_b, vocab_b = micro_setup("base")
    result_b = run_forward(base, samples_b[0], vocab_b)
    assert result_b.memory.shape[0] == base.extractor([samples_b[0].images[0]]).tokens.shape[0]


def test_detach_contract_on_model():
    model, samples, vocab = micro_setup("full")
    result = run_forward(model, samples[0], vocab)
    ids = tokenize(samples[0].report, vocab)
    ce_only = report_cross_entropy(result.decoder.dists, ids[1:])
    backward(ce_only)
    assert np.array_equal(grad_of(result.summary), np.zeros_like(result.summary.data))

    model2, samples2, vocab2 = micro_setup("full")
    result2 = run_forward(model2, samples2[0], vocab2)
    from camalign.consistency import consistency_loss
    backward(consistency_loss(result2.text_map, result2.visual_map))
    assert np.abs(grad_of(result2.summary)).sum() > 0


def test_perturbing_summary_never_changes_decoder_output():
    model, samples, vocab = micro_setup("full")
    sample = samples[0]
    memory, summary, _, _ = model.encode_images(sample.images)
    ids = tokenize(sample.report, vocab)
    before = model.decoder(ids[:-1], memory).dists.data
    summary.data += 1e6
    after = model.decoder(ids[:-1], memory).dists.data
    assert np.array_equal(before, after)


def test_pinned_map_overrides_computed():
    model, samples, vocab = micro_setup("full")
    n = model.extractor([samples[0].images[0]]).tokens.shape[0]
    pinned = np.linspace(0.0, 1.0, n)
    result = run_forward(model, samples[0], vocab, pinned_map=pinned)
    assert np.array_equal(result.visual_map, pinned)


def test_parameter_overhead_exact():
    full, _, _ = micro_setup("full")
    vdmae, _, _ = micro_setup("vdmae")
    base, _, _ = micro_setup("base")
    c, nc = full.cfg.feat_dim, full.cfg.classes
    assert vdmae.parameter_count() == full.parameter_count()
    assert full.parameter_count() - base.parameter_count() == nc * c + 2 * c


def test_checkpoint_roundtrip_through_model(tmp_path):
    from camalign.checkpoint import load_params, save_params
    model, samples, vocab = micro_setup("full")
    result = run_forward(model, samples[0], vocab)
    path = tmp_path / "ckpt.bin"
    save_params(path, model.params())
    clone, _, _ = micro_setup("full", seed=99)
    clone.load_state(load_params(path))
    result_clone = run_forward(clone, samples[0], vocab)
    assert float(result.total.data) == float(result_clone.total.data)


def test_two_view_sample_forward():
    spec = SyntheticSpec(grid=8, patches=2, classes=("solid", "cross", "dot"),
                         glyph_min=1, glyph_max=2, samples=4, seed=5, views=2)
    samples, _ = generate_synthetic(spec)
    vocab = build_vocab([s.report for s in samples])
    cfg = ModelConfig(layers=1, heads=2, dim=8, feat_dim=6, patch=4,
                      vocab=len(vocab), classes=3, max_len=16)
    model = CaptionModel(cfg, "full", np.random.default_rng(0))
    sample = next(s for s in samples if len(s.images) == 2)
    result = run_forward(model, sample, vocab)
    assert result.visual_map.shape == (8,)            # 2 views x 4 patches
    assert result.memory.shape[0] == 8
    assert np.isfinite(float(result.total.data))


def test_all_special_report_skips_consistency_term():
    # every content word unknown -> UNK -> masked -> the map term is skipped
    model, samples, vocab = micro_setup("full")
    sample = samples[0]
    ids = tokenize("zzz qqq", vocab)
    result = model.forward_train(sample.images, ids, sample.labels,
                                 lam=1.0, delta=0.15, k=0.25)
    assert result.breakdown.mse == 0.0
    assert result.text_map is None
    assert np.isfinite(float(result.total.data))


def test_step_fn_consistent_with_decoder():
    model, samples, vocab = micro_setup("full")
    step = model.step_fn(samples[0].images)
    logp = step([1, 5])
    assert logp.shape == (len(vocab),)
    assert abs(np.exp(logp).sum() - 1.0) < 1e-9
