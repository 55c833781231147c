import numpy as np
import pytest
import torch

from dtcmr.denoise.checkpoint import load_model, save_model
from dtcmr.denoise.training import DenoiserModel, fit_norm_stats
from dtcmr.denoise.networks import UNet
from dtcmr.exceptions import ValidationError

from .test_training import make_pairs


@pytest.fixture
def model():
    pairs = make_pairs(2)
    torch.manual_seed(0)
    net = UNet(6, 6, depth=2, width=4).double()
    with torch.no_grad():
        for p in net.parameters():
            p.normal_(0, 0.1)
    return DenoiserModel(net, *fit_norm_stats(pairs, "zscore"), seed=3, config_hash="abc"), pairs


def test_round_trip_predictions_identical(tmp_path, model):
    m, pairs = model
    path = save_model(m, tmp_path / "m.dtdn", {"ladder_row": "WGUF"})
    back = load_model(path)
    x, mask = pairs[0].noisy[None], pairs[0].mask[None]
    assert np.array_equal(back.predict(x, mask), m.predict(x, mask))
    assert back.seed == 3 and back.config_hash == "abc"
    assert back.target_stats.same_as(m.target_stats)
    assert (tmp_path / "m.json").exists()


def test_bad_magic_and_truncation(tmp_path, model):
    m, _ = model
    path = save_model(m, tmp_path / "m.dtdn")
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValidationError, match="not a DTDN"):
        load_model(path)
    path.write_bytes(raw[:-16])
    with pytest.raises(ValidationError, match="truncated"):
        load_model(path)
    path.write_bytes(raw + b"\0" * 8)
    with pytest.raises(ValidationError):
        load_model(path)
    path.write_bytes(raw[:3])
    with pytest.raises(ValidationError, match="truncated"):
        load_model(path)
