import numpy as np
import pytest

from sketchret import data, training
from sketchret.errors import (ContractError, DimensionError, FormatError,
                              NumericalError, ValidationError)


def tiny_pool(seed=0, rows=6, dim=6, n_cats=2):
    spec = data.SyntheticSpec(seen_categories=n_cats, unseen_categories=1,
                              samples_per_category=rows, structure_dim=3,
                              appearance_dim=2, image_dim=dim, sketch_dim=dim,
                              noise=0.1, seed=seed)
    images, sketches, split = data.generate_synthetic(spec)
    pool, _, _ = data.apply_split(images, sketches, split)
    return pool


def tiny_config(**overrides):
    base = dict(image_dim=6, sketch_dim=6, n_categories=2, structure_dim=4,
                appearance_dim=4, latent_dim=2, hidden_dim=8, batch_size=4,
                epochs=2, seed=1)
    base.update(overrides)
    return training.TrainConfig(**base)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            tiny_config(epochs=0)
        with pytest.raises(ValidationError):
            tiny_config(reduction="median")

    def test_disabling_classification_is_flagged(self):
        with pytest.warns(UserWarning, match="classification"):
            tiny_config(use_classification=False)

    def test_round_trip_dict(self):
        cfg = tiny_config(lr=3e-4, use_kl=False)
        assert training.TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="momentum"):
            training.TrainConfig.from_dict({**tiny_config().to_dict(), "momentum": 0.9})

    def test_coerce(self):
        assert training.TrainConfig.coerce("epochs", "12") == 12
        assert training.TrainConfig.coerce("lr", "1e-3") == pytest.approx(1e-3)
        assert training.TrainConfig.coerce("use_kl", "false") is False
        assert training.TrainConfig.coerce("reduction", "sum") == "sum"
        with pytest.raises(ValidationError):
            training.TrainConfig.coerce("use_kl", "maybe")
        with pytest.raises(ValidationError):
            training.TrainConfig.coerce("turbo", "1")


class TestTrain:
    def test_smoke_one_epoch(self):
        ckpt = training.train(tiny_config(epochs=1), tiny_pool())
        assert set(ckpt.final_losses) == {"classification", "orthogonality", "kl",
                                          "sketch_recon", "image_recon", "total"}
        assert all(np.isfinite(v) for v in ckpt.final_losses.values())

    def test_determinism_across_runs(self, tmp_path):
        paths = []
        for run in range(2):
            ckpt = training.train(tiny_config(epochs=3), tiny_pool())
            p = tmp_path / f"run{run}.sck"
            training.save_checkpoint(ckpt, p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_loss_descends(self):
        history = []
        cfg = tiny_config(epochs=5, lr=1e-3, seed=2)
        training.train(cfg, tiny_pool(rows=12),
                       on_epoch=lambda e, b: history.append(b.total))
        assert history[4] < history[0]

    def test_pool_config_mismatch(self):
        with pytest.raises(ValidationError, match="image dim"):
            training.train(tiny_config(image_dim=9), tiny_pool())
        with pytest.raises(ValidationError, match="categories"):
            training.train(tiny_config(n_categories=5), tiny_pool())

    def test_non_finite_loss_aborts_with_context(self):
        pool = tiny_pool()
        huge = pool.images.values.copy()
        huge[...] = 1e30
        pool = data.TrainPool(
            images=data.FeatureSet(values=huge, labels=pool.images.labels,
                                   names=pool.images.names),
            sketches=pool.sketches)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError, match="epoch 0 batch 0"):
                training.train(tiny_config(), pool)

    def test_classification_only_leaves_generators_at_init(self):
        cfg = tiny_config(epochs=2, use_orthogonality=False, use_kl=False,
                          use_sketch_recon=False, use_image_recon=False)
        ckpt = training.train(cfg, tiny_pool())
        init = training.initial_model(cfg)
        touched, frozen = [], []
        for name, value in ckpt.params.items():
            same = np.array_equal(value, init.params[name].data)
            block = name.split(".")[0]
            if block in ("sketch_dec", "image_dec", "appear_var"):
                frozen.append(same)
            elif name.startswith(("img_struct_enc", "sk_struct_enc", "classifier")):
                touched.append(same)
        assert all(frozen)
        assert not any(touched)

    def test_kl_disabled_still_trains_and_records_toggle(self, tmp_path):
        cfg = tiny_config(use_kl=False)
        ckpt = training.train(cfg, tiny_pool())
        assert ckpt.final_losses["kl"] == 0.0
        path = tmp_path / "ablated.sck"
        training.save_checkpoint(ckpt, path)
        assert training.load_checkpoint(path).config.use_kl is False


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        ckpt = training.train(tiny_config(), tiny_pool())
        path = tmp_path / "model.sck"
        training.save_checkpoint(ckpt, path)
        back = training.load_checkpoint(path)
        assert back.config == ckpt.config
        assert back.final_losses == ckpt.final_losses
        for name in ckpt.params:
            assert back.params[name].tobytes() == ckpt.params[name].tobytes()

    def test_reload_reproduces_forward_pass(self, tmp_path):
        ckpt = training.train(tiny_config(), tiny_pool())
        path = tmp_path / "model.sck"
        training.save_checkpoint(ckpt, path)
        probe = np.linspace(0, 1, ckpt.config.image_dim, dtype=np.float32).reshape(1, -1)
        a, _ = ckpt.build_model().encode_image(probe)
        b, _ = training.load_checkpoint(path).build_model().encode_image(probe)
        assert a.data.tobytes() == b.data.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.sck"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            training.load_checkpoint(path)

    def test_truncation(self, tmp_path):
        ckpt = training.train(tiny_config(epochs=1), tiny_pool())
        path = tmp_path / "model.sck"
        training.save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:50])
        with pytest.raises(FormatError, match="truncated"):
            training.load_checkpoint(path)

    def test_params_inconsistent_with_config(self, tmp_path):
        ckpt = training.train(tiny_config(epochs=1), tiny_pool())
        ckpt.params["classifier.l.b"] = np.zeros(9, dtype=np.float32)
        path = tmp_path / "model.sck"
        training.save_checkpoint(ckpt, path)
        with pytest.raises(FormatError, match="config"):
            training.load_checkpoint(path)

    def test_load_into_mismatched_dims(self, tmp_path):
        ckpt = training.train(tiny_config(epochs=1), tiny_pool())
        other = tiny_config(hidden_dim=16).model_dims()
        from sketchret.model import DisentangleModel
        with pytest.raises((ContractError, DimensionError)):
            DisentangleModel.from_params(other, ckpt.params)
