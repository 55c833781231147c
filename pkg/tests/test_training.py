import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from dtcmr.denoise.data import TensorPair
from dtcmr.denoise.networks import UNet
from dtcmr.denoise.normalization import compute_norm_stats
from dtcmr.denoise.training import (DenoiserModel, TrainConfig, ensemble_predict,
                                    fit_norm_stats, loss_l1, train)
from dtcmr.exceptions import TrainingDiverged, ValidationError

TINY = TrainConfig(learning_rate=2e-3, epochs=3, batch_size=4, depth=2, width=4,
                   critic_width=4, crop_size=None, augment=False)


def make_pairs(n=4, size=24, seed=0, noise=2e-4):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    mask = (yy - size / 2) ** 2 + (xx - size / 2) ** 2 < (size / 3) ** 2
    pairs = []
    for i in range(n):
        base = np.array([1.5, 1.0, 0.6, 0.1, 0.05, -0.05])[:, None, None] * 1e-3
        target = (base * (1 + 0.1 * np.sin(xx / 4 + i))) * mask
        noisy = (target + noise * rng.normal(size=target.shape)) * mask
        pairs.append(TensorPair(f"s{i}", "1BH", "First", noisy, target, mask))
    return pairs


# --- loss ---------------------------------------------------------------

def test_l1_zero_and_offset():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(2, 6, 5, 5))
    m = rng.random((2, 5, 5)) > 0.4
    assert loss_l1(t, t, m) == 0.0
    assert loss_l1(t + 0.25, t, m) == pytest.approx(0.25, abs=1e-15)


@given(st.integers(0, 10_000))
def test_l1_loop_oracle_and_torch_agree(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(2, 2, 6, 4, 3))
    m = rng.random((2, 4, 3)) > 0.5
    m[0, 0, 0] = True
    total, count = 0.0, 0
    for n in range(2):
        for c in range(6):
            for i in range(4):
                for j in range(3):
                    if m[n, i, j]:
                        total += abs(p[n, c, i, j] - t[n, c, i, j])
                        count += 1
    assert loss_l1(p, t, m) == pytest.approx(total / count, rel=1e-12)
    tl = loss_l1(torch.as_tensor(p), torch.as_tensor(t), torch.as_tensor(m))
    assert float(tl) == pytest.approx(total / count, rel=1e-12)


def test_l1_empty_mask():
    with pytest.raises(ValidationError):
        loss_l1(np.ones((6, 2, 2)), np.zeros((6, 2, 2)), np.zeros((2, 2), bool))


# --- training -----------------------------------------------------------

def test_single_pair_overfit():
    pair = make_pairs(1, size=32, noise=3e-4)[0]
    cfg = TrainConfig(learning_rate=2e-3, epochs=500, batch_size=1, depth=2, width=8,
                      crop_size=None, augment=False)
    res = train(cfg, [pair], residual=False)
    losses = [h["train_loss"] for h in res.history]
    assert min(losses) < 0.1 * losses[0]


def test_weight_clipping_holds_after_every_critic_step():
    seen = []

    def hook(critic):
        seen.append(critic.max_abs_weight())

    res = train(TINY, make_pairs(), objective="wgan", critic_hook=hook)
    assert len(seen) == TINY.epochs * TINY.critic_steps  # one batch per epoch
    assert max(seen) <= TINY.clip_value
    assert res.critic is not None and "critic_loss" in res.history[0]


def test_bitwise_determinism():
    pairs = make_pairs()
    cfg = TrainConfig(learning_rate=2e-3, epochs=2, batch_size=2, depth=2, width=4,
                      critic_width=4, crop_size=16)
    a = train(cfg, pairs, objective="wgan").model.net.state_dict()
    b = train(cfg, pairs, objective="wgan").model.net.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_training_leaves_global_rng_alone():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    train(TINY, make_pairs())
    assert torch.equal(torch.rand(3), expected)


def test_nan_input_raises_diverged():
    pairs = make_pairs()
    stats = fit_norm_stats(pairs, "zscore")
    bad = pairs[0]
    noisy = bad.noisy.copy()
    noisy[0, bad.mask] = np.nan
    pairs[0] = TensorPair(bad.subject, bad.budget, bad.scheme, noisy, bad.target, bad.mask)
    with pytest.raises(TrainingDiverged) as info:
        train(TINY, pairs, norm_stats=stats)
    assert info.value.diagnostics["epoch"] == 0


def test_dataset_validation():
    with pytest.raises(ValidationError):
        train(TINY, [])
    pairs = make_pairs(2)
    dwi = TensorPair("d", "1BH", "First", np.zeros((7, 24, 24)), pairs[0].target,
                     pairs[0].mask, kind="dwi")
    with pytest.raises(ValidationError, match="mixed"):
        train(TINY, [pairs[0], dwi])
    with pytest.raises(ValidationError):
        train(TINY, pairs, objective="hinge")


def test_best_epoch_is_validation_argmin():
    pairs = make_pairs(6)
    cfg = TrainConfig(learning_rate=5e-3, epochs=6, batch_size=2, depth=2, width=4,
                      crop_size=None, augment=False)
    res = train(cfg, pairs[:4], pairs[4:])
    val = [h["val_loss"] for h in res.history]
    assert res.best_epoch == int(np.argmin(val))
    assert res.model.provenance["best_epoch"] == res.best_epoch


def test_residual_init_returns_input():
    pairs = make_pairs(2)
    stats = fit_norm_stats(pairs, "zscore")
    torch.manual_seed(0)
    model = DenoiserModel(UNet(6, 6, depth=2, width=4).double(), *stats)
    p = pairs[0]
    out = model.predict(p.noisy[None], p.mask[None])[0]
    assert np.allclose(out, p.noisy, rtol=0, atol=1e-18)


# --- ensembles ----------------------------------------------------------

def _random_model(seed, stats):
    torch.manual_seed(seed)
    net = UNet(6, 6, depth=2, width=4).double()
    with torch.no_grad():
        for prm in net.parameters():
            prm.normal_(0, 0.1)
    return DenoiserModel(net, *stats)


def test_single_member_ensemble_is_identical():
    pairs = make_pairs(2)
    stats = fit_norm_stats(pairs, "zscore")
    m = _random_model(1, stats)
    x, mask = pairs[0].noisy[None], pairs[0].mask[None]
    assert np.array_equal(ensemble_predict([m], x, mask), m.predict(x, mask))


def test_identical_members_and_mean_of_members():
    pairs = make_pairs(2)
    stats = fit_norm_stats(pairs, "zscore")
    x, mask = pairs[0].noisy[None], pairs[0].mask[None]
    a, b = _random_model(1, stats), _random_model(2, stats)
    assert np.allclose(ensemble_predict([a, a, a], x, mask), a.predict(x, mask), atol=1e-18)
    # z-score denormalisation is affine, so averaging commutes with it
    mean = (a.predict(x, mask) + b.predict(x, mask)) / 2
    assert np.allclose(ensemble_predict([a, b], x, mask), mean, atol=1e-18)


def test_ensemble_validation():
    pairs = make_pairs(2)
    a = _random_model(1, fit_norm_stats(pairs, "zscore"))
    other = compute_norm_stats([p.target * 2 for p in pairs], [p.mask for p in pairs], "zscore")
    b = _random_model(2, (other, other))
    x, mask = pairs[0].noisy[None], pairs[0].mask[None]
    with pytest.raises(ValidationError):
        ensemble_predict([], x, mask)
    with pytest.raises(ValidationError):
        ensemble_predict([a, b], x, mask)


def test_shared_stats_for_tensor_inputs():
    pairs = make_pairs(3)
    inp, tgt = fit_norm_stats(pairs, "zscore")
    assert inp is tgt


def test_bagging_variance_oracle():
    """Subset ensembles vary less across resamples than single members do."""
    import itertools

    pairs = make_pairs(2)
    stats = fit_norm_stats(pairs, "zscore")
    x, mask = pairs[1].noisy[None], pairs[1].mask[None]
    models = [_random_model(s, stats) for s in range(5)]
    members = np.stack([m.predict(x, mask)[0] for m in models])
    subsets = np.stack([ensemble_predict([models[i] for i in idx], x, mask)[0]
                        for idx in itertools.combinations(range(5), 3)])
    member_var = members.var(axis=0)[:, mask[0]]
    subset_var = subsets.var(axis=0)[:, mask[0]]
    # sampling without replacement: var of a 3-mean is (5-3)/(3*(5-1)) of the member var
    assert np.allclose(subset_var, member_var / 6, rtol=1e-6, atol=1e-30)
    assert subset_var.mean() <= member_var.mean()
