import os
import shutil
import tempfile
import unittest
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, balanced_accuracy_score, confusion_matrix, f1_score

from tmdc.core import Tensor
from tmdc.data import FULL_PATTERN, NOISE_GRID, Scenario, SynthSpec, gen_synthetic, prepare_scenario
from tmdc.errors import (
    ConfigError,
    DigestMismatchError,
    GroupMismatchError,
    MissingParameterError,
    ProtocolError,
    ShapeError,
)
from tmdc.model import LOSS_COLUMNS, AblationConfig
from tmdc.model.ablation import FULL, STANDARD_VARIANTS
from tmdc.training import (
    COSINE_LABELS,
    AdamState,
    TrainConfig,
    ablation_grid,
    adam_step,
    build_params,
    checkpoint_load,
    checkpoint_save,
    cosine_analysis,
    evaluate,
    export_embeddings,
    metrics_from_confusion,
    noise_grid,
    report_from_predictions,
    resume_imc,
    resume_imd,
    run_grid,
    run_scenario,
    save_imc_checkpoint,
    save_imd_checkpoint,
    train_imc,
    train_imd,
    write_loss_table,
)

SLOW = os.environ.get("TMDC_SLOW") == "1"


def _config(**changes):
    values = dict(dim=8, n_heads=2, batch_size=16, epochs_imd=2, epochs_imc=2, lr=3e-3, dropout=0.1, seed=0)
    values.update(changes)
    return TrainConfig(**values)


def _splits(n=80, seed=0):
    return gen_synthetic(SynthSpec(n_samples=n, seed=seed))


def _assert_same_params(case, a, b):
    sa, sb = a.state_dict(), b.state_dict()
    case.assertEqual(sorted(sa), sorted(sb))
    for name in sa:
        np.testing.assert_array_equal(sa[name], sb[name], err_msg=name)


class TestTrainConfig(unittest.TestCase):

    def test_profile_defaults(self):
        cfg = TrainConfig.from_profile("mosi")
        self.assertEqual(cfg.dim, 256)
        self.assertEqual(cfg.lr, 1e-4)
        self.assertEqual(cfg.task, "regression")
        self.assertEqual(cfg.n_out, 1)

    def test_profile_overrides_skip_none(self):
        cfg = TrainConfig.from_profile("synth", lr=None, dim=32)
        self.assertEqual(cfg.dim, 32)
        self.assertEqual(cfg.lr, 3e-3)
        self.assertEqual(cfg.profile, "synth")

    def test_unknown_profile(self):
        with self.assertRaises(ConfigError):
            TrainConfig.from_profile("avmnist")

    def test_heads_must_divide_dim(self):
        with self.assertRaises(ConfigError):
            TrainConfig(dim=10, n_heads=4)

    def test_invalid_values(self):
        for bad in (dict(dropout=1.0), dict(noise_sigma=-0.1), dict(lr=-1.0), dict(cross_owner="both"),
                    dict(task="regression", n_classes=2), dict(ablate=["msd", "mcd"]), dict(seed=-1)):
            with self.assertRaises(ConfigError, msg=str(bad)):
                TrainConfig(**bad)

    def test_pattern_and_ablate_are_normalized(self):
        cfg = TrainConfig(pattern="V,T", ablate=["IMC", "imc"])
        self.assertEqual(cfg.pattern, ("T", "V"))
        self.assertEqual(cfg.ablate, ["imc"])
        self.assertFalse(cfg.options.ablation.use_imc_complement)

    def test_dict_round_trip(self):
        cfg = _config(pattern=("A", "V"), ablate=["mcd"])
        self.assertEqual(TrainConfig.from_dict(cfg.to_dict()), cfg)
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict(dict(cfg.to_dict(), colour="red"))


class TestMetrics(unittest.TestCase):

    def test_binary_confusion(self):
        r = metrics_from_confusion([[2, 1], [1, 2]])
        self.assertEqual(r.kind, "binary")
        self.assertAlmostEqual(r.acc, 2 / 3)
        self.assertAlmostEqual(r.f1, 2 / 3)
        self.assertEqual(r.primary, r.acc)
        self.assertEqual(r.primary_name, "acc")

    def test_multiclass_wa_and_ua(self):
        # 第 4 类全部被判为第 1 类：UA 受影响更大
        r = metrics_from_confusion([[5, 0, 0, 0], [0, 5, 0, 0], [0, 0, 5, 0], [2, 0, 0, 0]])
        self.assertEqual(r.kind, "multiclass")
        self.assertAlmostEqual(r.wa, 15 / 17)
        self.assertAlmostEqual(r.ua, 0.75)
        self.assertLessEqual(r.ua, r.wa)
        self.assertEqual(r.primary, r.wa)
        self.assertEqual(r.per_class_recall, [1.0, 1.0, 1.0, 0.0])

    def test_ua_skips_classes_without_support(self):
        r = metrics_from_confusion([[3, 1, 0], [0, 2, 0], [0, 0, 0]])
        self.assertAlmostEqual(r.ua, (0.75 + 1.0) / 2)

    def test_invalid_confusion(self):
        with self.assertRaises(ShapeError):
            metrics_from_confusion([[1, 2, 3]])
        with self.assertRaises(ProtocolError):
            metrics_from_confusion([[0, 0], [0, 0]])

    def test_regression_excludes_zero_labels(self):
        outputs = np.array([[0.5], [-0.2], [0.1]])
        labels = np.array([1.0, 0.0, -2.0])
        r = report_from_predictions(outputs, labels, "regression", 1)
        self.assertEqual(r.n_excluded, 1)
        self.assertEqual(r.n_eval, 2)
        self.assertAlmostEqual(r.acc, 0.5)
        self.assertAlmostEqual(r.f1, 2 / 3)
        self.assertAlmostEqual(r.mae, (0.5 + 0.2 + 2.1) / 3)

    def test_classification_uses_argmax(self):
        outputs = np.array([[0.1, 0.9], [2.0, -1.0], [0.0, 0.3]])
        r = report_from_predictions(outputs, np.array([1, 0, 0]), "classification", 2)
        self.assertEqual(r.confusion, [[1, 1], [0, 1]])

    def test_matches_sklearn_reference(self):
        rng = np.random.default_rng(3)
        for n_classes in (2, 4):
            y_true = rng.integers(0, n_classes, size=200)
            y_pred = np.where(rng.random(200) < 0.6, y_true, rng.integers(0, n_classes, size=200))
            r = metrics_from_confusion(confusion_matrix(y_true, y_pred, labels=list(range(n_classes))))
            self.assertAlmostEqual(r.wa, accuracy_score(y_true, y_pred))
            self.assertAlmostEqual(r.ua, balanced_accuracy_score(y_true, y_pred))
            average = "binary" if n_classes == 2 else "macro"
            self.assertAlmostEqual(r.f1, f1_score(y_true, y_pred, average=average))


class TestAdam(unittest.TestCase):

    def test_first_step_matches_manual_update(self):
        tensors = {"w": Tensor([1.0, 2.0], requires_grad=True), "u": Tensor([3.0], requires_grad=True)}
        state = AdamState.create(tensors, ["w"], lr=0.1)
        g = np.array([0.5, -1.0])
        adam_step(tensors, {"w": g}, state)
        m = 0.1 * g
        v = 0.001 * g * g
        expected = np.array([1.0, 2.0]) - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
        np.testing.assert_allclose(tensors["w"].data, expected, rtol=1e-12)
        np.testing.assert_array_equal(tensors["u"].data, [3.0])
        self.assertEqual(state.step, 1)

    def test_missing_gradient(self):
        tensors = {"w": Tensor([1.0], requires_grad=True)}
        state = AdamState.create(tensors, lr=0.1)
        with self.assertRaises(ProtocolError):
            adam_step(tensors, {}, state)

    def test_unknown_name(self):
        with self.assertRaises(ProtocolError):
            AdamState.create({"w": Tensor([1.0])}, ["b"])


class TestTraining(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.raw = _splits()
        cls.config = _config()
        cls.full, cls.normalizer = prepare_scenario(cls.raw, Scenario(FULL_PATTERN, 0.0), 0)

    def test_zero_learning_rate_keeps_params(self):
        cfg = self.config.replace(lr=0.0, epochs_imd=1)
        initial = build_params(cfg, self.full.train)
        result = train_imd(cfg, self.full.train, initial.clone())
        _assert_same_params(self, result.params, initial)

    def test_imd_history_columns(self):
        result = train_imd(self.config, self.full.train)
        self.assertEqual(list(result.history.columns), ["epoch", *LOSS_COLUMNS, "total"])
        self.assertEqual(list(result.history["epoch"]), [1, 2])
        self.assertEqual(result.epochs_done, 2)
        with tempfile.TemporaryDirectory() as tmp:
            table = write_loss_table(result.history, Path(tmp) / "loss.csv")
            self.assertEqual(table.shape, (2, 19))
            self.assertEqual(pd.read_csv(Path(tmp) / "loss.csv").shape, (2, 19))

    def test_ablated_columns_are_empty(self):
        cfg = self.config.replace(ablate=["msd"], epochs_imd=1)
        history = train_imd(cfg, self.full.train).history
        self.assertTrue(history["L_s_A"].isna().all())
        self.assertFalse(history["L_c_A"].isna().any())

    def test_imd_needs_complete_data(self):
        partial, _ = prepare_scenario(self.raw, Scenario(("T", "V"), 0.0), 0, self.normalizer)
        with self.assertRaises(ProtocolError):
            train_imd(self.config, partial.train)

    def test_task_mismatch(self):
        with self.assertRaises(ConfigError):
            train_imd(self.config.replace(task="regression", n_classes=1), self.full.train)

    def test_imc_needs_init_unless_imd_ablated(self):
        with self.assertRaises(ConfigError):
            train_imc(self.config, self.full)
        result = train_imc(self.config.replace(ablate=["imd"], epochs_imc=1), self.full)
        self.assertEqual(result.epochs_done, 1)

    def test_imc_keeps_best_validation_params(self):
        imd = train_imd(self.config, self.full.train)
        splits, _ = prepare_scenario(self.raw, Scenario(("A", "T"), 0.0), 0, self.normalizer)
        result = train_imc(self.config.replace(pattern=("A", "T")), splits, imd.params)
        self.assertIn(result.best_epoch, (1, 2))
        self.assertEqual(result.val_report.primary, result.best_metric)
        self.assertEqual(evaluate(result.params, splits.val).primary, result.best_metric)
        self.assertEqual(list(result.history.columns), ["epoch", "loss", "val_acc"])

    def test_imc_does_not_touch_init(self):
        imd = train_imd(self.config, self.full.train)
        before = imd.params.clone()
        train_imc(self.config, self.full, imd.params)
        _assert_same_params(self, imd.params, before)

    def test_run_scenario_saves_both_stages(self):
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(self.config.replace(pattern=("V",)), self.raw, out_dir=tmp)
            self.assertTrue((Path(tmp) / "imd" / "index.json").exists())
            self.assertTrue((Path(tmp) / "imc" / "index.json").exists())
        self.assertIsNotNone(result.imd)
        self.assertEqual(result.test_report.kind, "binary")
        self.assertEqual(result.param_counts["trainable"], result.param_counts["total"])
        self.assertEqual(set(result.stage_seconds), {"imd", "imc"})
        self.assertTrue(all(s > 0.0 for s in result.stage_seconds.values()))


class TestCheckpoint(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.raw = _splits(60)
        cls.config = _config(epochs_imd=1)
        cls.full, _ = prepare_scenario(cls.raw, Scenario(FULL_PATTERN, 0.0), 0)
        cls.imd = train_imd(cls.config, cls.full.train)

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_save_load_save_keeps_digest(self):
        digest = checkpoint_save(self.tmp / "a", self.imd.params, self.imd.state, self.config)
        ckpt = checkpoint_load(self.tmp / "a")
        again = checkpoint_save(self.tmp / "b", ckpt.params, ckpt.state, ckpt.config)
        self.assertEqual(digest, again)
        self.assertEqual(ckpt.digest, digest)
        self.assertEqual(ckpt.state.step, self.imd.state.step)

    def test_float64_round_trip_is_exact(self):
        checkpoint_save(self.tmp / "c", self.imd.params, precision="float64")
        ckpt = checkpoint_load(self.tmp / "c")
        _assert_same_params(self, ckpt.params, self.imd.params)
        np.testing.assert_array_equal(
            evaluate(ckpt.params, self.full.test).confusion,
            evaluate(self.imd.params, self.full.test).confusion,
        )

    def test_corrupted_file(self):
        checkpoint_save(self.tmp / "d", self.imd.params)
        file = sorted((self.tmp / "d" / "params").glob("*.tmdf"))[0]
        raw = bytearray(file.read_bytes())
        raw[-1] ^= 0xFF
        file.write_bytes(bytes(raw))
        with self.assertRaises(DigestMismatchError):
            checkpoint_load(self.tmp / "d")

    def test_tampered_index(self):
        checkpoint_save(self.tmp / "e", self.imd.params)
        index = self.tmp / "e" / "index.json"
        index.write_text(index.read_text(encoding="utf-8").replace('"precision": "float32"',
                                                                   '"precision": "float64"'), encoding="utf-8")
        with self.assertRaises(DigestMismatchError):
            checkpoint_load(self.tmp / "e")

    def test_missing_file(self):
        checkpoint_save(self.tmp / "f", self.imd.params)
        sorted((self.tmp / "f" / "params").glob("*.tmdf"))[0].unlink()
        with self.assertRaises(MissingParameterError):
            checkpoint_load(self.tmp / "f")
        with self.assertRaises(MissingParameterError):
            checkpoint_load(self.tmp / "nothing-here")

    def test_group_mismatch(self):
        checkpoint_save(self.tmp / "g", self.imd.params, config=self.config)
        with self.assertRaises(GroupMismatchError):
            checkpoint_load(self.tmp / "g", expected=self.config.replace(ablate=["msd"]))
        # imd/imc 的消融不改变参数组
        checkpoint_load(self.tmp / "g", expected=self.config.replace(ablate=["imc"]))

    def test_resume_imd_matches_uninterrupted(self):
        cfg = self.config.replace(epochs_imd=4)
        straight = train_imd(cfg, self.full.train)
        partial = train_imd(cfg, self.full.train, n_epochs=2)
        save_imd_checkpoint(self.tmp / "imd", partial, cfg, "float64")
        resumed = resume_imd(self.tmp / "imd", cfg, self.full.train)
        _assert_same_params(self, resumed.params, straight.params)
        self.assertEqual(resumed.state.step, straight.state.step)
        np.testing.assert_allclose(resumed.history["total"], straight.history["total"], rtol=0, atol=0)

    def test_resume_imc_matches_uninterrupted(self):
        cfg = self.config.replace(epochs_imc=4)
        straight = train_imc(cfg, self.full, self.imd.params)
        partial = train_imc(cfg, self.full, self.imd.params, n_epochs=2)
        save_imc_checkpoint(self.tmp / "imc", partial, cfg, "float64")
        resumed = resume_imc(self.tmp / "imc", cfg, self.full)
        _assert_same_params(self, resumed.last_params, straight.last_params)
        _assert_same_params(self, resumed.params, straight.params)
        self.assertEqual(resumed.best_epoch, straight.best_epoch)
        self.assertEqual(resumed.test_report.confusion, straight.test_report.confusion)

    def test_resume_rejects_other_stage(self):
        save_imd_checkpoint(self.tmp / "imd", self.imd, self.config)
        with self.assertRaises(ConfigError):
            resume_imc(self.tmp / "imd", self.config, self.full)


class TestAnalysis(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.raw = _splits(60)
        cls.config = _config(epochs_imd=1)
        full, cls.normalizer = prepare_scenario(cls.raw, Scenario(FULL_PATTERN, 0.0), 0)
        cls.params = train_imd(cls.config, full.train).params
        cls.full = full

    def _check_matrix(self, matrix):
        self.assertEqual(list(matrix.index), list(COSINE_LABELS))
        values = matrix.to_numpy()
        self.assertTrue(np.all(np.isfinite(values)))
        np.testing.assert_allclose(values, values.T, atol=1e-12)
        np.testing.assert_array_equal(np.diag(values), 1.0)
        self.assertTrue(np.all(values <= 1.0) and np.all(values >= -1.0))

    def test_cosine_matrix_contract(self):
        self._check_matrix(cosine_analysis(self.params, self.full.test))

    def test_cosine_with_single_modality(self):
        audio_only, _ = prepare_scenario(self.raw, Scenario(("A",), 0.0), 0, self.normalizer)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            self._check_matrix(cosine_analysis(self.params, audio_only.test))

    def test_cosine_needs_both_denoisers(self):
        with self.assertRaises(ProtocolError):
            cosine_analysis(self.params, self.full.test, _config(ablate=["mcd"]).options)

    def test_export_embeddings(self):
        with tempfile.TemporaryDirectory() as tmp:
            emb = export_embeddings(self.params, self.full.test, Path(tmp) / "emb.tmdf")
            self.assertTrue((Path(tmp) / "emb.tmdf").exists())
        self.assertEqual(emb.shape, (len(self.full.test), 3 * self.config.dim))


class TestExperiments(unittest.TestCase):

    def test_small_grid(self):
        raw = _splits(60)
        cfg = _config(epochs_imd=1, epochs_imc=1)
        records = run_grid(cfg, raw, patterns=[("A",), ("T", "V")],
                           variants=(FULL, AblationConfig(use_imd_pretrain=False)), n_seeds=2)
        self.assertEqual(len(records), 2 * 2 * 2)
        self.assertEqual(sorted(records["seed"].unique()), [0, 1])
        self.assertEqual(set(records["variant"]), {"full", "w/o IMD"})
        self.assertEqual(set(records["pattern"]), {"A", "T,V"})
        self.assertTrue(records["primary"].between(0, 1).all())

    def test_grid_is_deterministic(self):
        raw = _splits(60)
        cfg = _config(epochs_imd=1, epochs_imc=1)
        a = run_grid(cfg, raw, patterns=[("T",)], sigmas=(0.0, 5.0))
        b = run_grid(cfg, raw, patterns=[("T",)], sigmas=(0.0, 5.0))
        pd.testing.assert_frame_equal(a, b)


@unittest.skipUnless(SLOW, "设置 TMDC_SLOW=1 运行耗时的方向性测试")
class TestDirectional(unittest.TestCase):

    def test_untrained_accuracy_is_chance(self):
        for seed in range(5):
            raw = _splits(2000, seed)
            cfg = _config(seed=seed, ablate=["imd"], epochs_imc=0)
            splits, _ = prepare_scenario(raw, cfg.scenario, seed)
            acc = train_imc(cfg, splits).test_report.acc
            self.assertTrue(0.4 <= acc <= 0.6, acc)

    def test_every_imd_loss_term_decreases(self):
        raw = _splits(2000)
        full, _ = prepare_scenario(raw, Scenario(FULL_PATTERN, 0.0), 0)
        for seed in range(5):
            cfg = TrainConfig.from_profile("synth", seed=seed, beta=0.1, dropout=0.0, epochs_imd=6)
            history = train_imd(cfg, full.train).history
            for name in LOSS_COLUMNS:
                self.assertLess(history[name].iloc[-1], history[name].iloc[0], f"seed={seed} {name}")

    def test_full_model_beats_single_modality(self):
        raw = _splits(1000)
        cfg = _config(dim=16, epochs_imd=8, epochs_imc=8)
        records = run_grid(cfg, raw, patterns=[("A",), FULL_PATTERN], n_seeds=3)
        mean = records.groupby("pattern")["primary"].mean()
        self.assertGreaterEqual(mean["A,T,V"], mean["A"])

    def test_ablation_ordering(self):
        raw = _splits(2000)
        cfg = TrainConfig.from_profile("synth")
        records = ablation_grid(cfg, raw, patterns=[("A",), ("T", "V")], n_seeds=5, variants=STANDARD_VARIANTS)
        mean = records.groupby(["pattern", "variant"])["acc"].mean()
        # 单模态时去掉模态间补全的下降最明显
        self.assertGreater(mean[("A", "full")], mean[("A", "w/o IMC")])
        for variant in STANDARD_VARIANTS[1:]:
            self.assertGreaterEqual(mean[("T,V", "full")], mean[("T,V", variant.label)], variant.label)

    def test_accuracy_falls_with_noise(self):
        raw = _splits(2000)
        cfg = TrainConfig.from_profile("synth", pattern=("T", "V"))
        records = noise_grid(cfg, raw, patterns=[("T", "V")], sigmas=NOISE_GRID, n_seeds=5)
        mean = records.groupby("noise_sigma")["acc"].mean().reindex(list(NOISE_GRID))
        rises = np.diff(mean.to_numpy())
        inversions = rises[rises > 0]
        self.assertLessEqual(len(inversions), 1, mean.to_dict())
        self.assertTrue(np.all(inversions <= 0.01), mean.to_dict())
        self.assertLess(mean[NOISE_GRID[-1]], mean[NOISE_GRID[0]])


if __name__ == '__main__':
    unittest.main()
