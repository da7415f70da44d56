import unittest

import numpy as np

from tmdc.core import Tape
from tmdc.data.corrupt import STANDARD_PATTERNS
from tmdc.data.dataset import MODALITIES, Batch
from tmdc.errors import ConfigError, ProtocolError
from tmdc.model import (
    GRADCHECK_TOLERANCE,
    LOSS_COLUMNS,
    AblationConfig,
    ModelOptions,
    apply_ablation,
    count_parameters,
    failed_checks,
    imc_forward,
    imc_loss,
    imd_forward,
    imd_loss,
    imd_loss_terms,
    init_params,
    mcd_forward,
    msd_forward,
    param_group,
    run_gradient_suite,
)
from tmdc.training.adam import collect_grads
from tmdc.utils import NoiseSource

FEAT_DIMS = (5, 6, 4)


def _batch(seed=0, pattern=MODALITIES, n=3, seq_len=4, n_classes=2):
    rng = np.random.default_rng(seed)
    inputs = {m: rng.standard_normal((n, seq_len + i, d)) for i, (m, d) in enumerate(zip(MODALITIES, FEAT_DIMS))}
    available = {m: m in pattern for m in MODALITIES}
    for m in MODALITIES:
        if not available[m]:
            inputs[m] = np.zeros_like(inputs[m])
    return Batch(inputs, rng.integers(0, n_classes, size=n), available)


class TestAblationConfig(unittest.TestCase):

    def test_from_flags(self):
        cfg = AblationConfig.from_flags(["IMC", "msd"])
        self.assertFalse(cfg.use_imc_complement)
        self.assertFalse(cfg.use_msd)
        self.assertEqual(cfg.removed, ["imc", "msd"])
        self.assertEqual(cfg.label, "w/o IMC w/o MSD")

    def test_cannot_remove_both_denoisers(self):
        with self.assertRaises(ConfigError):
            AblationConfig.from_flags(["msd", "mcd"])

    def test_unknown_flag(self):
        with self.assertRaises(ConfigError):
            AblationConfig.from_flags(["vib"])

    def test_apply_ablation_returns_new_options(self):
        options = ModelOptions(dropout=0.2)
        out = apply_ablation(AblationConfig(use_mcd=False), options)
        self.assertFalse(out.ablation.use_mcd)
        self.assertTrue(options.ablation.is_full)
        self.assertEqual(out.dropout, 0.2)


class TestParams(unittest.TestCase):

    def setUp(self):
        self.params = init_params(FEAT_DIMS, 4, 8, 2, n_heads=2, seed=0)

    def test_groups_cover_all_tensors(self):
        groups = self.params.groups()
        total = sum(len(v) for v in groups.values())
        self.assertEqual(total, len(self.params.named_tensors()))
        self.assertTrue(all(n.startswith("spe.") for n in groups["spe"]))
        self.assertTrue(all(n.startswith("fusion.") for n in groups["imc"]))
        self.assertEqual(param_group("com_heads.A.head_c.weight"), "com")

    def test_shared_conv_takes_widest_modality(self):
        self.assertEqual(self.params.com.conv.in_dim, max(FEAT_DIMS))

    def test_active_names_follow_ablation(self):
        names = self.params.active_names(AblationConfig(use_msd=False))
        self.assertFalse(any(n.startswith("spe.") for n in names))
        names = self.params.active_names(AblationConfig(use_mcd=False))
        self.assertFalse(any(param_group(n) == "com" for n in names))

    def test_init_is_seeded(self):
        other = init_params(FEAT_DIMS, 4, 8, 2, n_heads=2, seed=0)
        for name, arr in self.params.state_dict().items():
            np.testing.assert_array_equal(arr, other.state_dict()[name])

    def test_clone_is_independent(self):
        clone = self.params.clone()
        name = "fusion.fuse_head.weight"
        clone.named_tensors()[name].assign_(np.zeros(clone.named_tensors()[name].shape))
        self.assertFalse(np.all(self.params.named_tensors()[name].data == 0))

    def test_count_parameters(self):
        counts = count_parameters(self.params)
        self.assertEqual(counts["total"], counts["spe"] + counts["com"] + counts["imc"])
        self.assertEqual(counts["trainable"], counts["total"])
        ablated = count_parameters(self.params, AblationConfig(use_msd=False))
        self.assertEqual(ablated["trainable"], counts["total"] - counts["spe"])


class TestIMDStage(unittest.TestCase):

    def setUp(self):
        self.params = init_params(FEAT_DIMS, 4, 8, 2, n_heads=2, seed=1)
        self.batch = _batch(1)
        self.eval = NoiseSource.evaluation()

    def test_eighteen_terms(self):
        terms = imd_loss_terms(self.params, self.batch, "classification", self.eval)
        self.assertEqual(tuple(terms), LOSS_COLUMNS)
        self.assertEqual(len(terms), 18)

    def test_ablated_module_drops_terms(self):
        options = ModelOptions(ablation=AblationConfig(use_msd=False))
        terms = imd_loss_terms(self.params, self.batch, "classification", self.eval, options)
        self.assertEqual(len(terms), 9)
        self.assertFalse(any(name.startswith(("L_s_", "L_Spe_", "KL_s_")) for name in terms))

    def test_incomplete_batch_rejected(self):
        with self.assertRaises(ProtocolError):
            imd_loss_terms(self.params, _batch(1, ("T", "V")), "classification", self.eval)

    def test_beta_weights_kl_only(self):
        terms = imd_loss_terms(self.params, self.batch, "classification", self.eval)
        task = sum(t.item() for n, t in terms.items() if not n.startswith("KL_"))
        kl = sum(t.item() for n, t in terms.items() if n.startswith("KL_"))
        total = imd_loss(self.params, self.batch, "classification", 0.5, self.eval).item()
        self.assertAlmostEqual(total, task + 0.5 * kl, places=10)

    def test_shared_common_weight_affects_every_modality(self):
        before = imd_forward(self.params, self.batch, self.eval)
        w = self.params.com.vib.mu_head.weight
        w.assign_(w.data + 0.1)
        after = imd_forward(self.params, self.batch, self.eval)
        for m in MODALITIES:
            self.assertFalse(np.allclose(before.x_c(m).data, after.x_c(m).data))

    def test_specific_weight_is_private(self):
        before = imd_forward(self.params, self.batch, self.eval)
        w = self.params.spe["A"].vib.mu_head.weight
        w.assign_(w.data + 0.1)
        after = imd_forward(self.params, self.batch, self.eval)
        self.assertFalse(np.allclose(before.specific["A"].hat.data, after.specific["A"].hat.data))
        for m in ("T", "V"):
            np.testing.assert_array_equal(before.specific[m].hat.data, after.specific[m].hat.data)
            np.testing.assert_array_equal(before.specific[m].y_hat.data, after.specific[m].y_hat.data)


class TestIMCStage(unittest.TestCase):

    def setUp(self):
        self.params = init_params(FEAT_DIMS, 4, 8, 2, n_heads=2, seed=2)
        self.eval = NoiseSource.evaluation()

    def test_diagnostics_per_case(self):
        for pattern in STANDARD_PATTERNS:
            out = imc_forward(self.params, _batch(3, pattern), self.eval)
            self.assertEqual(out.diagnostics["case"], len(pattern))
            self.assertEqual(sorted(out.diagnostics["compensated"]), sorted(set(MODALITIES) - set(pattern)))
            self.assertEqual(out.fused.shape, (3, 4, 24))
            self.assertEqual(out.y_all.shape, (3, 2))

    def test_single_modality_repeats_cross_term(self):
        out = imc_forward(self.params, _batch(3, ("A",)), self.eval)
        np.testing.assert_array_equal(out.slots["T"].data, out.slots["V"].data)

    def test_masked_inputs_are_never_read(self):
        # 对每个不完整模式，扰动缺失模态的原始输入，y_All 逐位不变
        rng = np.random.default_rng(9)
        for pattern in STANDARD_PATTERNS[:-1]:
            batch = _batch(4, pattern)
            noisy = {m: (x if batch.available[m] else rng.standard_normal(x.shape) * 100)
                     for m, x in batch.inputs.items()}
            perturbed = Batch(noisy, batch.labels, batch.available)
            for options in (ModelOptions(), ModelOptions(dropout=0.3)):
                a = imc_forward(self.params, batch, NoiseSource.from_seed(5), options).y_all.data
                b = imc_forward(self.params, perturbed, NoiseSource.from_seed(5), options).y_all.data
                np.testing.assert_array_equal(a, b)

    def test_without_complement_missing_slots_are_zero(self):
        options = ModelOptions(ablation=AblationConfig(use_imc_complement=False))
        out = imc_forward(self.params, _batch(3, ("T", "V")), self.eval, options)
        np.testing.assert_array_equal(out.slots["A"].data, 0.0)
        self.assertEqual(out.diagnostics["compensated"], {})

    def test_cross_owner_changes_two_available_case(self):
        batch = _batch(3, ("A", "T"))
        kv = imc_forward(self.params, batch, self.eval, ModelOptions(cross_owner="kv-owner"))
        query = imc_forward(self.params, batch, self.eval, ModelOptions(cross_owner="query-owner"))
        np.testing.assert_array_equal(kv.slots["A"].data, query.slots["A"].data)
        self.assertFalse(np.allclose(kv.slots["V"].data, query.slots["V"].data))

    def test_dict_inputs_with_availability(self):
        batch = _batch(3, ("T",))
        out = imc_forward(self.params, {"T": batch.inputs["T"]}, self.eval,
                          available={"A": False, "T": True, "V": False})
        ref = imc_forward(self.params, batch, self.eval)
        np.testing.assert_array_equal(out.y_all.data, ref.y_all.data)

    def test_no_available_modality(self):
        with self.assertRaises(ProtocolError):
            imc_forward(self.params, {}, self.eval, available={m: False for m in MODALITIES})

    def test_missing_modality_gets_zero_gradient(self):
        batch = _batch(3, ("T", "V"))
        tensors = self.params.named_tensors()
        with Tape() as tape:
            loss = imc_loss(self.params, batch, "classification", NoiseSource.from_seed(1))
        tape.backward(loss)
        grads = collect_grads(tape, tensors, list(tensors))
        audio = [n for n in tensors if n.startswith("spe.A.")]
        self.assertTrue(audio)
        for n in audio:
            np.testing.assert_array_equal(grads[n], 0.0)
        self.assertTrue(any(np.any(grads[n] != 0) for n in tensors if n.startswith("spe.T.")))

    def test_without_msd_uses_common_path(self):
        options = ModelOptions(ablation=AblationConfig(use_msd=False))
        out = imc_forward(self.params, _batch(3), self.eval, options)
        self.assertEqual(out.y_all.shape, (3, 2))

    def test_every_parameter_receives_gradient(self):
        batch = _batch(5)
        tensors = self.params.named_tensors()
        with Tape() as tape:
            loss = (imd_loss(self.params, batch, "classification", 0.01, NoiseSource.from_seed(1))
                    + imc_loss(self.params, batch, "classification", NoiseSource.from_seed(2)))
        tape.backward(loss)
        grads = collect_grads(tape, tensors, list(tensors))
        # key 偏置只给每行注意力分数加同一个常数，softmax 后梯度恒为 0
        names = [n for n in tensors if not n.endswith(".key.bias")]
        live = [n for n in names if np.abs(grads[n]).max() > 1e-12]
        self.assertGreaterEqual(len(live) / len(names), 0.99)

    def test_without_complement_matches_full_when_nothing_missing(self):
        batch = _batch(6)
        full = imc_forward(self.params, batch, self.eval).y_all.data
        options = ModelOptions(ablation=AblationConfig(use_imc_complement=False))
        np.testing.assert_array_equal(imc_forward(self.params, batch, self.eval, options).y_all.data, full)


# ==================== 逐行 numpy 参考实现 ====================

def _np_affine(x, p):
    return x @ p.weight.data + p.bias.data


def _np_conv(x, conv, target_len):
    length = x.shape[0]
    padded = np.vstack([np.zeros((1, x.shape[1])), x, np.zeros((1, x.shape[1]))])
    out = np.stack([sum(padded[t + k] @ conv.kernel.data[k] for k in range(3)) + conv.bias.data
                    for t in range(length)])
    if length >= target_len:
        return out[:target_len]
    return np.vstack([out, np.zeros((target_len - length, out.shape[1]))])


def _np_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_mha(p, query, key_value):
    h, hd = p.n_heads, p.head_dim
    q, k, v = _np_affine(query, p.query), _np_affine(key_value, p.key), _np_affine(key_value, p.value)
    heads = []
    for i in range(h):
        cols = slice(i * hd, (i + 1) * hd)
        weights = _np_softmax(q[:, cols] @ k[:, cols].T / np.sqrt(hd))
        heads.append(weights @ v[:, cols])
    return _np_affine(np.hstack(heads), p.output)


def _np_vib(p, x, eps):
    mu = _np_affine(x, p.mu_head)
    sigma = np.logaddexp(0.0, _np_affine(x, p.sigma_head)) + 1e-6
    kl = np.mean(0.5 * np.sum(mu ** 2 + sigma ** 2 - 2 * np.log(sigma) - 1, axis=-1))
    return mu + eps * sigma, kl


def _np_branch(conv, vib, attn, resfc, head_rep, head_hat, x, seq_len, eps):
    """conv → VIB → MHA(X, X) + X → 残差全连接 → 两个预测头（单个样本）"""
    rep, kl = _np_vib(vib, _np_conv(x, conv, seq_len), eps)
    refined = _np_mha(attn, rep, rep) + rep
    hat = refined + _np_affine(refined, resfc)
    return rep, hat, _np_affine(rep.mean(axis=0), head_rep), _np_affine(hat.mean(axis=0), head_hat), kl


def _np_msd(params, x, m, eps):
    p = params.spe[m]
    return _np_branch(p.conv, p.vib, p.mha, p.resfc, p.head_s, p.head_spe, x, params.seq_len, eps)


def _np_mcd(params, x, m, eps):
    com, heads = params.com, params.com_heads[m]
    width = com.conv.in_dim
    x = np.hstack([x, np.zeros((x.shape[0], width - x.shape[1]))])
    return _np_branch(com.conv, com.vib, com.mha, com.resfc, heads.head_c, heads.head_com, x, params.seq_len, eps)


def _np_cross_entropy(logits, label):
    shifted = logits - logits.max()
    return -(shifted[label] - np.log(np.exp(shifted).sum()))


def _randomized(params, seed):
    rng = np.random.default_rng(seed)
    params.load_state_dict({n: rng.normal(0, 0.5, t.shape) for n, t in params.named_tensors().items()})
    return params


class TestReferenceForward(unittest.TestCase):
    """与逐行 numpy 实现逐项对照（偏置也随机化）"""

    def setUp(self):
        self.params = _randomized(init_params(FEAT_DIMS, 5, 8, 2, n_heads=2, seed=3), 30)

    def test_msd_forward(self):
        x = np.random.default_rng(31).standard_normal((4, 6))
        noise = NoiseSource.from_seed(32)
        out = msd_forward(self.params, x, "T", noise)
        rep, hat, y_s, y_spe, kl = _np_msd(self.params, x, "T", noise.draws[0])
        np.testing.assert_allclose(out.rep.data, rep, atol=1e-10)
        np.testing.assert_allclose(out.hat.data, hat, atol=1e-10)
        np.testing.assert_allclose(out.y_rep.data, y_s, atol=1e-10)
        np.testing.assert_allclose(out.y_hat.data, y_spe, atol=1e-10)
        self.assertAlmostEqual(out.kl.item(), kl, delta=1e-10)

    def test_mcd_forward_pads_to_shared_width(self):
        x = np.random.default_rng(33).standard_normal((4, 4))
        noise = NoiseSource.from_seed(34)
        out = mcd_forward(self.params, x, "V", noise)
        rep, hat, y_c, y_com, kl = _np_mcd(self.params, x, "V", noise.draws[0])
        np.testing.assert_allclose(out.rep.data, rep, atol=1e-10)
        np.testing.assert_allclose(out.hat.data, hat, atol=1e-10)
        np.testing.assert_allclose(out.y_rep.data, y_c, atol=1e-10)
        np.testing.assert_allclose(out.y_hat.data, y_com, atol=1e-10)
        self.assertAlmostEqual(out.kl.item(), kl, delta=1e-10)

    def test_imc_forward_with_audio_and_video(self):
        batch = _batch(35, ("A", "V"), n=2)
        out = imc_forward(self.params, batch, NoiseSource.evaluation())
        p = self.params
        for b in range(2):
            x_s, x_c = {}, {}
            for m in ("A", "V"):
                x = batch.inputs[m][b]
                zero = np.zeros((p.seq_len, p.dim))
                x_s[m] = _np_msd(p, x, m, zero)[0]
                x_c[m] = _np_mcd(p, x, m, zero)[0]

            def slot(attn_owner, query, kv):
                attended = _np_mha(p.spe[attn_owner].mha, query, kv)
                return attended + _np_affine(attended, p.fusion.all_resfc[attn_owner])

            slots = {m: slot(m, x_s[m], x_c[m]) for m in ("A", "V")}
            # 缺失的 T 由两个方向的交叉注意力相加补偿，参数归 key/value 所属模态
            slots["T"] = slot("V", x_c["A"], x_s["V"]) + slot("A", x_c["V"], x_s["A"])
            fused = np.hstack([slots[m] for m in MODALITIES])
            np.testing.assert_allclose(out.fused.data[b], fused, atol=1e-10)
            np.testing.assert_allclose(out.y_all.data[b], _np_affine(fused.mean(axis=0), p.fusion.fuse_head),
                                       atol=1e-10)

    def test_imd_loss_is_sum_of_independent_terms(self):
        batch = _batch(36, n=3)
        noise = NoiseSource.from_seed(37)
        beta = 0.05
        total = imd_loss(self.params, batch, "classification", beta, noise).item()
        # 抽样顺序：每个模态依次 MSD、MCD
        draws = iter(noise.draws)
        expected = 0.0
        for m in MODALITIES:
            for branch in (_np_msd, _np_mcd):
                eps = next(draws)
                losses, kls = [], []
                for b in range(3):
                    _, _, y_rep, y_hat, kl = branch(self.params, batch.inputs[m][b], m, eps[b])
                    label = int(batch.labels[b])
                    losses.append((_np_cross_entropy(y_rep, label), _np_cross_entropy(y_hat, label)))
                    kls.append(kl)
                expected += float(np.sum(np.mean(losses, axis=0))) + beta * float(np.mean(kls))
        self.assertAlmostEqual(total, expected, delta=1e-10)


class TestGradientSuite(unittest.TestCase):

    def test_all_checks_pass(self):
        results = run_gradient_suite(seed=0)
        self.assertIn("mha", results)
        self.assertIn("imd_loss", results)
        self.assertIn("imc_loss[A]", results)
        self.assertEqual(failed_checks(results), [])
        self.assertTrue(all(err < GRADCHECK_TOLERANCE for err in results.values()))

    def test_failed_checks(self):
        self.assertEqual(failed_checks({"a": 1e-6, "b": 1e-3}), ["b"])
        self.assertEqual(failed_checks({"a": float("nan")}), ["a"])


if __name__ == '__main__':
    unittest.main()
