"""End-to-end pipeline, loss, training loop, synthetic data, checkpoints."""

import dataclasses

import numpy as np
import pytest

from pcfold import checkpoint, data, geometry, pipeline, tensor as T, train as train_mod
from pcfold.config import ConfigError, PipelineConfig, TrainConfig, parse_config_text
from pcfold.params import Tensor, named_tensors
from pcfold.rng import DOMAIN_DATA, DOMAIN_INIT, stream


def tiny_config(**overrides):
    """A deliberately small instance for fast end-to-end tests."""
    base = dict(n_input=48, k=8, d=8, heads=4, n_sparse=32, ratio=4, steps=2,
                kappa=4, c_enc=16, c_coarse=16, c_expand=8, sparse_width=16,
                dtype="float64")
    base.update(overrides)
    return PipelineConfig(**base).validate()


def _cloud(rng, n):
    return rng.uniform(-0.5, 0.5, size=(n, 3))


class TestForward:
    def test_output_counts(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        res = pipeline.forward(_cloud(np.random.default_rng(0), cfg.n_input), params, cfg)
        assert res.coarse_points.data.shape == (cfg.n_coarse, 3)
        assert res.sparse_points.data.shape == (cfg.n_sparse, 3)
        assert res.dense_points.data.shape == (cfg.n_dense, 3)
        assert cfg.n_coarse == (cfg.k // 2) * (cfg.d // 2)
        assert cfg.n_dense == cfg.ratio * cfg.n_sparse

    def test_deterministic(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        pts = _cloud(np.random.default_rng(1), cfg.n_input)
        a = pipeline.forward(pts, params, cfg)
        b = pipeline.forward(pts, params, cfg)
        assert np.array_equal(a.dense_points.data, b.dense_points.data)

    def test_coarse_points_permutation_invariant_bitwise(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        rng = np.random.default_rng(2)
        pts = _cloud(rng, cfg.n_input)
        base = pipeline.forward(pts, params, cfg)
        for _ in range(5):
            perm = rng.permutation(cfg.n_input)
            out = pipeline.forward(pts[perm], params, cfg)
            assert np.array_equal(out.coarse_points.data, base.coarse_points.data)
            assert np.array_equal(out.diagnostics.feature_map.values.data,
                                  base.diagnostics.feature_map.values.data)

    def test_too_few_points_rejected(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        with pytest.raises(ValueError):
            pipeline.forward(_cloud(np.random.default_rng(3), cfg.kappa - 1), params, cfg)

    def test_diagnostics_carry_feedback_states(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        res = pipeline.forward(_cloud(np.random.default_rng(4), cfg.n_input), params, cfg)
        assert len(res.diagnostics.states) == cfg.steps + 1
        assert res.diagnostics.attention.data.shape[0] == cfg.heads


class TestLoss:
    def _result(self, sparse, dense, coarse=None):
        return pipeline.ForwardResult(
            coarse_points=T.Tensor(np.asarray(coarse if coarse is not None else dense, dtype=np.float64)),
            sparse_points=T.Tensor(np.asarray(sparse, dtype=np.float64)),
            dense_points=T.Tensor(np.asarray(dense, dtype=np.float64)))

    def test_perfect_completion_is_zero(self):
        gt = _cloud(np.random.default_rng(5), 20)
        res = self._result(gt, gt)
        assert float(pipeline.loss(res, T.Tensor(gt)).data) == 0.0

    def test_hand_checked_value(self):
        sparse = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
        point = [[1.0, 0.0, 0.0]]
        res = self._result(sparse, point)
        assert float(pipeline.loss(res, T.Tensor(np.asarray(point))).data) == 2.0

    def test_coarse_flag_adds_third_term(self):
        rng = np.random.default_rng(6)
        sparse, dense, coarse, gt = (_cloud(rng, 10) for _ in range(4))
        res = self._result(sparse, dense, coarse)
        gt_t = T.Tensor(gt)
        base = float(pipeline.loss(res, gt_t).data)
        full = float(pipeline.loss(res, gt_t, coarse_term=True).data)
        assert abs(full - base - geometry.chamfer(coarse, gt)) < 1e-12

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        sparse, dense, gt = _cloud(rng, 8), _cloud(rng, 12), _cloud(rng, 10)
        t = np.array([2.0, -3.0, 0.5])
        a = float(pipeline.loss(self._result(sparse, dense), T.Tensor(gt)).data)
        b = float(pipeline.loss(self._result(sparse + t, dense + t), T.Tensor(gt + t)).data)
        assert abs(a - b) < 1e-10


class TestGfvBaseline:
    def test_output_count(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        out = pipeline.gfv_baseline_forward(_cloud(np.random.default_rng(8), cfg.n_input), params, cfg)
        assert out.data.shape == (cfg.n_coarse, 3)

    def test_permutation_invariant(self):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        rng = np.random.default_rng(9)
        pts = _cloud(rng, cfg.n_input)
        base = pipeline.gfv_baseline_forward(pts, params, cfg)
        out = pipeline.gfv_baseline_forward(pts[rng.permutation(cfg.n_input)], params, cfg)
        assert np.array_equal(out.data, base.data)


class TestTraining:
    def test_lr_schedule_hand_values(self):
        tcfg = TrainConfig()
        assert abs(tcfg.lr_for_epoch(10) - 1e-3 * 0.7) < 1e-12
        assert abs(tcfg.lr_for_epoch(20) - 1e-3 * 0.49) < 1e-12
        assert tcfg.lr_for_epoch(1) == 1e-3
        assert tcfg.lr_for_epoch(9) == 1e-3

    def test_adam_first_step_magnitude(self):
        tcfg = TrainConfig(lr=0.01)
        p = Tensor(np.asarray([1.0]), requires_grad=True)
        opt = train_mod.Adam({"p": p}, tcfg)
        p.grad = np.asarray([0.5])
        opt.step(tcfg.lr)
        # bias-corrected first step is a sign step of size lr (within eps)
        assert abs((1.0 - p.data[0]) - 0.01) < 1e-6

    def test_short_run_decreases_loss(self):
        cfg = tiny_config()
        tcfg = TrainConfig(epochs=5, batch_size=4, seed=0, n_ground_truth=128).validate()
        dataset = data.make_dataset(6, seed=3, point_budget=128, n_partial=cfg.n_input)
        result = train_mod.train(dataset, cfg, tcfg)
        assert len(result.log) == 5
        dense = [r.dense_cd for r in result.log]
        assert min(dense) < dense[0]

    def test_training_is_reproducible(self):
        cfg = tiny_config()
        tcfg = TrainConfig(epochs=2, batch_size=4, seed=1).validate()
        dataset = data.make_dataset(4, seed=4, point_budget=128, n_partial=cfg.n_input)
        a = train_mod.train(dataset, cfg, tcfg)
        b = train_mod.train(dataset, cfg, tcfg)
        for (n1, t1), (_, t2) in zip(named_tensors(a.params), named_tensors(b.params)):
            assert np.array_equal(t1.data, t2.data), n1

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_mod.train([], tiny_config(), TrainConfig())


class TestSyntheticData:
    def test_budget_is_exact(self):
        for kind in data.PRIMITIVES:
            spec = data.SyntheticShapeSpec(kind=kind, point_budget=200)
            partial, complete = data.gen_synthetic(spec, seed=0)
            assert len(complete) == 200
            assert 1 <= len(partial) <= 200

    def test_seed_determinism(self):
        spec = data.SyntheticShapeSpec(kind="torus", sizes=(1.0, 0.3, 1.0), point_budget=256)
        a = data.gen_synthetic(spec, seed=7)
        b = data.gen_synthetic(spec, seed=7)
        assert np.array_equal(a[0].points, b[0].points)
        assert np.array_equal(a[1].points, b[1].points)

    def test_sphere_occlusion_keeps_near_hemisphere(self):
        # the raster must be dense in surface points for the cull to
        # resolve front from back, hence the big budget and coarse grid
        spec = data.SyntheticShapeSpec(kind="sphere", sizes=(1.0, 1.0, 1.0),
                                       point_budget=4096, cull_resolution=16,
                                       view_direction=np.array([0.0, 0.0, 1.0]))
        partial, complete = data.gen_synthetic(spec, seed=1)
        # looking along +z keeps the near (low z) side; the silhouette ring
        # contributes the few far-side survivors
        raw = partial.points * partial.source_scale + partial.source_center
        assert np.mean(raw[:, 2] < 0) > 0.9
        assert raw[:, 2].max() <= 1.0 + 1e-9

    def test_partial_shares_normalization_with_complete(self):
        spec = data.SyntheticShapeSpec(kind="box", point_budget=512)
        partial, complete = data.gen_synthetic(spec, seed=2)
        assert partial.source_scale == complete.source_scale
        assert np.array_equal(partial.source_center, complete.source_center)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            data.SyntheticShapeSpec(kind="pyramid").validate()
        with pytest.raises(ValueError):
            data.SyntheticShapeSpec(kind="sphere", point_budget=10).validate()
        with pytest.raises(ValueError):
            data.SyntheticShapeSpec(kind="sphere", rotation=np.array([2.0, 0, 0, 0])).validate()

    def test_make_dataset_counts_and_determinism(self):
        a = data.make_dataset(3, seed=5, point_budget=128, n_partial=40)
        b = data.make_dataset(3, seed=5, point_budget=128, n_partial=40)
        assert len(a) == 3
        for (p1, c1), (p2, c2) in zip(a, b):
            assert len(p1) <= 40
            assert np.array_equal(p1.points, p2.points)
            assert np.array_equal(c1.points, c2.points)


class TestCheckpoint:
    def _roundtrip(self, tmp_path):
        cfg = tiny_config()
        params = pipeline.ModelParams.init(cfg, seed=0)
        path = tmp_path / "model.ckpt"
        checkpoint.save_checkpoint(path, params, cfg, train_cfg=TrainConfig())
        return cfg, params, path

    def test_roundtrip_bitwise(self, tmp_path):
        cfg, params, path = self._roundtrip(tmp_path)
        loaded, blob = checkpoint.load_checkpoint(path, expected_config=cfg)
        orig = dict(named_tensors(params))
        for name, t in named_tensors(loaded):
            assert np.array_equal(t.data, orig[name].data), name
        assert blob["pipeline"] == dataclasses.asdict(cfg)
        assert blob["design"] == checkpoint.DESIGN_METADATA

    def test_corrupt_magic_rejected(self, tmp_path):
        _, _, path = self._roundtrip(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        _, _, path = self._roundtrip(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)

    def test_config_mismatch_rejected(self, tmp_path):
        cfg, _, path = self._roundtrip(tmp_path)
        other = tiny_config(n_sparse=24)
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path, expected_config=other)


class TestConfig:
    def test_parse_round_trip(self):
        pipe, train = parse_config_text("n_input = 64\nsteps=3\nlr = 0.002\nepochs=7\n")
        assert pipe.n_input == 64 and pipe.steps == 3
        assert train.lr == 0.002 and train.epochs == 7

    def test_comments_and_blank_lines(self):
        pipe, _ = parse_config_text("# comment\n\nk=8  # trailing\nd=8\n")
        assert pipe.k == 8 and pipe.d == 8

    def test_full_preset(self):
        pipe, _ = parse_config_text("preset=full\n")
        assert pipe.k == 64 and pipe.heads == 32 and pipe.n_sparse == 1024

    def test_errors_carry_line_numbers(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("k=8\nnot a setting\n")
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("epochs=soon\n")
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("quantum=1\n")

    def test_validation_rules(self):
        with pytest.raises(ConfigError):
            PipelineConfig(k=7).validate()
        with pytest.raises(ConfigError):
            PipelineConfig(expansion_mode="shuffle").validate()
        with pytest.raises(ConfigError):
            TrainConfig(lr=-1.0).validate()


class TestRngStreams:
    def test_streams_are_reproducible(self):
        a = stream(0, DOMAIN_DATA, 3).uniform(size=5)
        b = stream(0, DOMAIN_DATA, 3).uniform(size=5)
        assert np.array_equal(a, b)

    def test_domains_are_independent(self):
        a = stream(0, DOMAIN_DATA).uniform(size=5)
        b = stream(0, DOMAIN_INIT).uniform(size=5)
        assert not np.array_equal(a, b)


def test_unused_branch_parameters_get_no_gradient():
    """Feedback mode never touches the multibranch or pooled-vector
    baseline parameters, so their gradients stay empty (exact zero)."""
    cfg = tiny_config()
    params = pipeline.ModelParams.init(cfg, seed=0)
    rng = np.random.default_rng(10)
    res = pipeline.forward(_cloud(rng, cfg.n_input), params, cfg)
    lv = pipeline.loss(res, T.Tensor(_cloud(rng, 64)))
    T.backward(lv)
    for name, t in named_tensors(params):
        if name.startswith(("expansion.branches", "gfv")):
            assert t.grad is None, name
