import numpy as np
import pytest

from partvote.config import RunConfig, desk_config
from partvote.data import (EVAL_VARIANTS, SHAPE_SAMPLERS, LabeledObject,
                           augment_normal_noise, augment_occlusion,
                           perturb_eval_variant, synth_dataset, synth_object)
from partvote.geometry import PointCloud


class TestShapes:
    @pytest.mark.parametrize("shape", sorted(SHAPE_SAMPLERS))
    def test_unit_normals_centered(self, shape):
        rng = np.random.default_rng(1)
        cloud = synth_object(shape, 400, noise=0.0, rng=rng)
        assert len(cloud) == 400
        assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-9)
        assert np.linalg.norm(cloud.centroid) < 0.3 * cloud.bounding_radius

    def test_sphere_normals_radial(self):
        rng = np.random.default_rng(2)
        cloud = synth_object("sphere", 300, noise=0.0, rng=rng,
                             scale_range=(1.0, 1.0))
        r = np.linalg.norm(cloud.positions, axis=1)
        assert np.allclose(r, 1.0, atol=1e-9)
        assert np.allclose(cloud.positions, cloud.normals)

    def test_torus_on_surface(self):
        rng = np.random.default_rng(3)
        pos, nrm = SHAPE_SAMPLERS["torus"](500, rng)
        # implicit torus equation should be ~0 for sampled points
        # with R, r unknown: check the ring-distance spread is one constant
        ring = np.sqrt(pos[:, 0] ** 2 + pos[:, 1] ** 2)
        minor = np.sqrt((ring - ring.mean()) ** 2 + pos[:, 2] ** 2)
        assert minor.std() / minor.mean() < 0.25

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            synth_object("teapot", 10, 0.0, np.random.default_rng(0))

    def test_dataset_labels_and_ids(self):
        rng = np.random.default_rng(4)
        objs = synth_dataset(["sphere", "box"], 3, 64, 0.0, rng, split="test")
        assert len(objs) == 6
        assert [o.label for o in objs] == [0, 0, 0, 1, 1, 1]
        assert objs[4].object_id == "test/box/1"

    def test_deterministic_given_rng(self):
        a = synth_object("box", 100, 0.01, np.random.default_rng(5))
        b = synth_object("box", 100, 0.01, np.random.default_rng(5))
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.normals, b.normals)


class TestAugmentation:
    def test_normal_noise_mean_angle(self):
        rng = np.random.default_rng(6)
        cloud = synth_object("sphere", 4000, 0.0, rng, scale_range=(1.0, 1.0))
        sigma = 0.2
        out = augment_normal_noise(cloud, sigma, rng)
        assert np.array_equal(out.positions, cloud.positions)
        cos = np.clip(np.sum(out.normals * cloud.normals, axis=1), -1, 1)
        mean_angle = np.arccos(cos).mean()
        # |N(0, sigma)| has mean sigma * sqrt(2/pi)
        assert abs(mean_angle - sigma * np.sqrt(2 / np.pi)) < 0.01
        assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0)

    def test_zero_noise_identity(self):
        cloud = synth_object("box", 100, 0.0, np.random.default_rng(7))
        out = augment_normal_noise(cloud, 0.0, np.random.default_rng(8))
        assert np.array_equal(out.normals, cloud.normals)

    def test_negative_sigma(self):
        cloud = synth_object("box", 10, 0.0, np.random.default_rng(9))
        with pytest.raises(ValueError):
            augment_normal_noise(cloud, -0.1, np.random.default_rng(0))

    def test_occlusion_drops_hidden_hemisphere(self):
        rng = np.random.default_rng(10)
        cloud = synth_object("sphere", 1000, 0.0, rng, scale_range=(1.0, 1.0))
        out = augment_occlusion(cloud, rng)
        assert 0 < len(out) < len(cloud)
        # survivors form (roughly) a half sphere
        assert len(out) < 0.65 * len(cloud)

    def test_occlusion_members_are_subset(self):
        rng = np.random.default_rng(11)
        cloud = synth_object("cylinder", 300, 0.0, rng)
        out = augment_occlusion(cloud, rng)
        rows = {tuple(p) for p in cloud.positions}
        assert all(tuple(p) in rows for p in out.positions)


class TestEvalVariants:
    def make_obj(self, seed=12, n=600):
        rng = np.random.default_rng(seed)
        return LabeledObject(synth_object("box", n, 0.0, rng), label=1,
                             object_id="t/box/0")

    def test_none_is_passthrough(self):
        obj = self.make_obj()
        assert perturb_eval_variant(obj, "none", np.random.default_rng(0)) is obj

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            perturb_eval_variant(self.make_obj(), "t99", np.random.default_rng(0))

    def test_t25_crops_subset(self):
        obj = self.make_obj()
        out = perturb_eval_variant(obj, "t25", np.random.default_rng(1))
        assert out is not None
        assert 0 < len(out.cloud) <= len(obj.cloud)
        assert out.label == obj.label

    def test_t50_rs_scales_and_rotates(self):
        obj = self.make_obj()
        out = perturb_eval_variant(obj, "t50_rs", np.random.default_rng(2))
        assert out is not None
        # z components of normals survive a z-rotation unchanged in modulus
        assert np.allclose(np.linalg.norm(out.cloud.normals, axis=1), 1.0)

    def test_background_fraction(self):
        obj = self.make_obj()
        out = perturb_eval_variant(obj, "background", np.random.default_rng(3))
        clutter = len(out.cloud) - len(obj.cloud)
        frac = clutter / len(out.cloud)
        assert 0.44 <= frac <= 0.51
        assert out.has_background
        # the original points lead the array
        assert np.array_equal(out.cloud.positions[:len(obj.cloud)],
                              obj.cloud.positions)

    def test_degenerate_crop_returns_none(self):
        # a tiny cloud where a 50% shift can drop everything
        pos = np.random.default_rng(4).uniform(size=(20, 3))
        obj = LabeledObject(PointCloud(pos, np.tile([0, 0, 1.0], (20, 1))), 0)
        results = [perturb_eval_variant(obj, "t50_rs", np.random.default_rng(s))
                   for s in range(40)]
        assert any(r is None for r in results)

    def test_variant_names(self):
        assert EVAL_VARIANTS == ("none", "t25", "t50_rs", "background")


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig(seed=7, layer="kpconv", epochs=3, lr=5e-4,
                        kernel_origin=False)
        again = RunConfig.from_text(cfg.to_text())
        assert again == cfg

    def test_overrides_and_types(self):
        cfg = RunConfig()
        cfg.apply_overrides({"epochs": "5", "lr": "0.01", "kernel_origin": "false",
                             "classes": "sphere,torus"})
        assert cfg.epochs == 5 and isinstance(cfg.epochs, int)
        assert cfg.lr == 0.01
        assert cfg.kernel_origin is False
        assert cfg.class_list == ["sphere", "torus"]

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            RunConfig().apply_overrides({"lurning_rate": "0.1"})

    def test_bad_bool(self):
        with pytest.raises(ValueError):
            RunConfig().apply_overrides({"kernel_origin": "maybe"})

    def test_invalid_layer(self):
        with pytest.raises(ValueError):
            RunConfig(layer="conv2d")

    def test_comments_and_blanks_ignored(self):
        cfg = RunConfig.from_text("# comment\n\nepochs=2  # trailing\n")
        assert cfg.epochs == 2

    def test_desk_config_small(self):
        cfg = desk_config(epochs=5)
        assert cfg.max_parts < RunConfig().max_parts
        assert cfg.epochs == 5
        assert cfg.encoder_width_list == [32, 64]
