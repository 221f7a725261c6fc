import numpy as np
import pytest

from rrnet import metrics as mt


def rand_case(rng, n=3, h=6, w=6):
    preds = [rng.random((h, w)) for _ in range(n)]
    gts = [(rng.random((h, w)) < 0.5).astype(np.float64) for _ in range(n)]
    return preds, gts


# -- brute-force reference for the max-F protocol ----------------------------

def ref_max_f(preds, gts, beta_sq=0.3):
    curve = []
    for k in range(256):
        ps, rs = [], []
        for p, g in zip(preds, gts):
            binp = np.floor(p * 255) > k
            bing = g >= 0.5
            tp = float((binp & bing).sum())
            pp = float(binp.sum())
            pos = float(bing.sum())
            ps.append(tp / pp if pp else 0.0)
            rs.append(tp / pos if pos else 0.0)
        P, R = float(np.mean(ps)), float(np.mean(rs))
        denom = beta_sq * P + R
        curve.append((1 + beta_sq) * P * R / denom if denom else 0.0)
    return max(curve), curve


class TestMae:
    def test_perfect(self):
        g = np.eye(4)
        assert mt.mae(g, g) == 0.0

    def test_worst_case(self):
        assert mt.mae(np.ones((3, 3)), np.zeros((3, 3))) == 1.0

    def test_hand_example(self):
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        g = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert mt.mae(p, g) == 0.25

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        p, g = rng.random((5, 5)), (rng.random((5, 5)) < 0.5).astype(float)
        assert mt.mae(p, g) == mt.mae(g, p)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        p, g = rng.random((4, 4)), (rng.random((4, 4)) < 0.5).astype(float)
        perm = rng.permutation(16)
        assert mt.mae(p, g) == pytest.approx(
            mt.mae(p.ravel()[perm].reshape(4, 4), g.ravel()[perm].reshape(4, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mt.mae(np.zeros((2, 2)), np.zeros((3, 3)))


class TestMaxF:
    def test_perfect_binary_prediction(self):
        g = np.zeros((6, 6))
        g[2:4, 2:4] = 1
        best, curve = mt.max_f_beta([g], [g])
        assert best == pytest.approx(1.0)

    def test_all_zero_prediction(self):
        g = np.zeros((4, 4))
        g[0, 0] = 1
        best, _ = mt.max_f_beta([np.zeros((4, 4))], [g])
        assert best == 0.0

    def test_known_pr_point(self):
        # precision 0.5, recall 1.0 => 1.3*0.5/(0.15+1.0) = 0.565217
        g = np.zeros((1, 4))
        g[0, :2] = 1
        p = np.ones((1, 4))  # predicts all positive at every threshold
        best, _ = mt.max_f_beta([p], [g])
        assert best == pytest.approx(1.3 * 0.5 / 1.15, abs=1e-10)

    def test_curve_shape_and_range(self):
        rng = np.random.default_rng(2)
        preds, gts = rand_case(rng)
        best, curve = mt.max_f_beta(preds, gts)
        assert len(curve) == 256
        assert all(0.0 <= v <= 1.0 for v in curve)
        assert best == max(curve)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            preds, gts = rand_case(rng, n=int(rng.integers(1, 4)),
                                   h=int(rng.integers(2, 7)),
                                   w=int(rng.integers(2, 7)))
            best, curve = mt.max_f_beta(preds, gts)
            ref_best, ref_curve = ref_max_f(preds, gts)
            np.testing.assert_allclose(curve, ref_curve, atol=1e-10)
            assert best == pytest.approx(ref_best, abs=1e-10)

    def test_sum_numerator_variant_differs(self):
        rng = np.random.default_rng(4)
        preds, gts = rand_case(rng)
        prod, _ = mt.max_f_beta(preds, gts, sum_numerator=False)
        alt, _ = mt.max_f_beta(preds, gts, sum_numerator=True)
        assert alt != prod

    def test_empty_input(self):
        with pytest.raises(ValueError):
            mt.max_f_beta([], [])

    def test_unpaired_input(self):
        with pytest.raises(ValueError):
            mt.max_f_beta([np.zeros((2, 2))], [])


class TestBer:
    def test_perfect(self):
        g = np.zeros((4, 4))
        g[1:3, 1:3] = 1
        assert mt.ber([g], [g]) == 0.0

    def test_all_positive_prediction(self):
        g = np.zeros((4, 4))
        g[0] = 1
        assert mt.ber([np.ones((4, 4))], [g]) == pytest.approx(50.0)

    def test_known_rates(self):
        # TPR 0.9, TNR 0.8 => 100*(1 - 0.5*1.7) = 15
        g = np.concatenate([np.ones((1, 10)), np.zeros((1, 10))], axis=0)
        p = g.copy()
        p[0, 0] = 0  # one of ten positives missed
        p[1, :2] = 1  # two of ten negatives hit
        assert mt.ber([p], [g]) == pytest.approx(15.0)

    def test_class_symmetry(self):
        rng = np.random.default_rng(5)
        preds = [rng.random((5, 5)) for _ in range(3)]
        gts = [(rng.random((5, 5)) < 0.5).astype(float) for _ in range(3)]
        a = mt.ber(preds, gts)
        b = mt.ber([1 - p for p in preds], [1 - g for g in gts])
        assert a == pytest.approx(b, abs=1e-10)

    def test_empty_class_contributes_no_error(self):
        g = np.ones((3, 3))  # no negatives anywhere
        assert mt.ber([g], [g]) == 0.0


class TestErrorMap:
    def test_perfect_is_black(self):
        g = np.eye(3)
        np.testing.assert_array_equal(mt.error_map(g, g), np.zeros((3, 3)))

    def test_inverted_is_white(self):
        g = (np.random.default_rng(6).random((4, 4)) < 0.5).astype(float)
        np.testing.assert_array_equal(mt.error_map(1 - g, g), np.ones((4, 4)))


class TestBoundaryMae:
    def test_perfect(self):
        g = np.zeros((8, 8))
        g[2:6, 2:6] = 1
        assert mt.boundary_mae(g, g, width=2) == 0.0

    def test_empty_band(self):
        z = np.zeros((6, 6))
        assert mt.boundary_mae(np.full((6, 6), 0.3), z, width=3) == 0.0

    def test_uniform_error_inside_band(self):
        g = np.zeros((8, 8))
        g[3:5, 3:5] = 1
        p = np.clip(g + 0.125, 0, 1)
        p[g > 0.5] = 1 - 0.125
        assert mt.boundary_mae(p, g, width=1) == pytest.approx(0.125)


class TestEvaluate:
    def test_report_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        preds, gts = rand_case(rng)
        rep = mt.evaluate(preds, gts, "toy", with_ber=True, boundary_width=2)
        path = tmp_path / "report.json"
        rep.save(path)
        back = mt.MetricReport.load(path)
        assert back.dataset == "toy"
        assert back.n_images == 3
        assert back.mae == rep.mae
        assert back.max_f_beta == rep.max_f_beta
        assert back.ber == rep.ber
        assert len(back.f_curve) == 256
