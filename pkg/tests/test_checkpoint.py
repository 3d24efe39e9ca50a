import json

import numpy as np
import pytest

from fairgdiff.autoencoder import AutoencoderConfig, init_autoencoder
from fairgdiff.checkpoint import checkpoint_dict, load_checkpoint, params_from_dict, save_checkpoint
from fairgdiff.diffusion import DiffusionConfig, init_denoiser
from fairgdiff.errors import SchemaError, UntrainedModelError


def perturbed(params, seed=0):
    rng = np.random.default_rng(seed)
    for v in params.arrays.values():
        v += rng.standard_normal(v.shape) * np.float64(1 / 3)
    return params


def test_autoencoder_round_trip_bit_exact(tmp_path):
    p = perturbed(init_autoencoder(AutoencoderConfig(n_max=12, latent_dim=5), 3, seed=1))
    p.loss_trace = [1.0 / 3.0, 0.1]
    back = load_checkpoint(save_checkpoint(p, tmp_path / "ae.json"), kind="autoencoder")
    assert back.config == p.config and back.feature_dim == 3 and back.loss_trace == p.loss_trace
    assert set(back.arrays) == set(p.arrays)
    for k in p.arrays:
        assert back.arrays[k].shape == p.arrays[k].shape
        assert back.arrays[k].tobytes() == p.arrays[k].tobytes()


def test_diffusion_round_trip_bit_exact_with_header(tmp_path):
    p = perturbed(init_denoiser(DiffusionConfig(gamma2=0.0, steps=30, hidden=8), 4, 2))
    p.trained = True
    p.latent_scale = 0.123456789
    path = save_checkpoint(p, tmp_path / "d.json", extra={"config_hash": "h"})
    doc = json.loads(path.read_text())
    assert doc["kind"] == "diffusion" and doc["gamma1"] == 5.0 and doc["gamma2"] == 0.0
    assert doc["schedule"] == {"steps": 30, "beta_start": 1e-4, "beta_end": 0.02}
    assert doc["config_hash"] == "h"
    back = load_checkpoint(path, kind="diffusion")
    assert back.trained and back.latent_scale == p.latent_scale and back.config == p.config
    for k in p.arrays:
        assert back.arrays[k].tobytes() == p.arrays[k].tobytes()


def test_missing_checkpoint_is_untrained_error(tmp_path):
    with pytest.raises(UntrainedModelError):
        load_checkpoint(tmp_path / "nope.json", kind="diffusion")


def test_kind_mismatch_and_schema_version(tmp_path):
    p = init_autoencoder(AutoencoderConfig(n_max=5), 2)
    path = save_checkpoint(p, tmp_path / "ae.json")
    with pytest.raises(SchemaError):
        load_checkpoint(path, kind="diffusion")
    doc = checkpoint_dict(p)
    doc["schema_version"] = 99
    with pytest.raises(SchemaError):
        params_from_dict(doc)
    doc["schema_version"] = 1
    doc["kind"] = "mystery"
    with pytest.raises(SchemaError):
        params_from_dict(doc)
