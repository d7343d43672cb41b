import numpy as np
import pytest

from resid_align.data_model import FeatureMatrix, Sampling, ValidationError
from resid_align.residual import concat_features, remove_feature
from resid_align.temporal import zscore_split

TINY = [1e-8]


def fm(values, name="f", offsets=(0,)):
    return FeatureMatrix(name=name, values=values, sampling=Sampling.per_tr(2.0),
                         story_offsets=np.asarray(offsets))


def split_mask(n_train, n_test):
    return np.array([True] * n_train + [False] * n_test)


def whiten(X):
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / Xc.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    return Xc @ vecs @ np.diag(vals ** -0.5) @ vecs.T


def make_instance(seed, n_train=120, n_test=40, d=3, D=8):
    """L with exactly standardized train block; W = L theta* + E with E
    orthogonal to L's train columns and exact unit train variance.
    Train and test rows are separate stories."""
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    L = rng.normal(size=(n, d))
    L[:n_train] = whiten(L[:n_train])
    theta = rng.normal(size=(d, D))
    theta *= 0.6 / np.linalg.norm(theta, axis=0)
    G = rng.normal(size=(n, D))
    P = L[:n_train] @ np.linalg.lstsq(L[:n_train], G[:n_train], rcond=None)[0]
    E = G.copy()
    E[:n_train] = G[:n_train] - P
    E[:n_train] -= E[:n_train].mean(axis=0)
    E[:n_train] *= np.sqrt(1.0 - 0.36) / E[:n_train].std(axis=0)
    W = L @ theta + E
    return L, W, E, split_mask(n_train, n_test)


class TestRemoveFeature:
    def test_perfect_removal(self, rng):
        L, W, E, split = make_instance(0)
        W_pure = L @ np.linalg.lstsq(L, W, rcond=None)[0]  # W exactly linear in L
        offs = (0, int(split.sum()))
        resid, record = remove_feature(fm(L, "L", offs), fm(W_pure, "W", offs), TINY, split,
                                       n_boots=2, chunk_len=10)
        # all train-split variance of the standardized target is explained
        assert np.abs(resid.values[split]).max() < 1e-5
        assert record.residual_name == "W_minus_L"

    def test_orthogonal_feature_leaves_w(self, rng):
        # L with zero train covariance against W: residual is standardized W
        n = 160
        L = rng.normal(size=(n, 2))
        W = rng.normal(size=(n, 5))
        split = split_mask(120, 40)
        L[split] = whiten(L[split])
        # zero train covariance against L, then exact unit train variance
        beta = np.linalg.lstsq(L[split], W[split], rcond=None)[0]
        W[split] = whiten(W[split] - L[split] @ beta)
        offs = (0, 120)
        resid, _ = remove_feature(fm(L, "L", offs), fm(W, "W", offs), TINY, split,
                                  n_boots=2, chunk_len=10)
        Wz = zscore_split(W, split)
        assert np.abs(resid.values[split] - Wz.values[split]).max() < 1e-6

    def test_orthogonal_complement_recovered(self):
        # W = L theta* + E with E ⊥ span(L): residual on train rows ≈ E
        L, W, E, split = make_instance(3)
        offs = (0, 120)
        resid, _ = remove_feature(fm(L, "L", offs), fm(W, "W", offs), TINY, split,
                                  n_boots=2, chunk_len=10)
        assert np.abs(resid.values[split] - E[split]).max() < 1e-6

    def test_train_orthogonality(self):
        for seed in range(5):
            L, W, _, split = make_instance(seed)
            offs = (0, 120)
            resid, _ = remove_feature(fm(L, "L", offs), fm(W, "W", offs), TINY, split,
                                      n_boots=2, chunk_len=10)
            Lz = zscore_split(L, split)
            inner = Lz.values[split].T @ resid.values[split] / split.sum()
            assert np.abs(inner).max() < 1e-8

    def test_idempotent(self):
        L, W, _, split = make_instance(4)
        offs = (0, 120)
        resid1, _ = remove_feature(fm(L, "L", offs), fm(W, "W", offs), TINY, split,
                                   n_boots=2, chunk_len=10)
        resid2, _ = remove_feature(fm(L, "L", offs), resid1, TINY, split, n_boots=2,
                                   chunk_len=10)
        assert np.abs(resid2.values[split] - resid1.values[split]).max() < 1e-6

    def test_variance_explained_range(self):
        L, W, _, split = make_instance(5)
        offs = (0, 120)
        _, record = remove_feature(fm(L, "L", offs), fm(W, "W", offs), TINY, split,
                                   n_boots=2, chunk_len=10)
        assert np.all(record.variance_explained <= 1.0 + 1e-12)
        # theta columns were scaled to norm 0.6 -> 36% of unit train variance
        assert record.variance_explained == pytest.approx(np.full(8, 0.36), abs=1e-6)

    def test_misaligned_inputs_rejected(self, rng):
        with pytest.raises(ValidationError, match="row-aligned"):
            remove_feature(fm(rng.normal(size=(10, 1)), "L"),
                           fm(rng.normal(size=(12, 2)), "W"), TINY, split_mask(6, 4))

    def test_underdetermined_rejected(self, rng):
        L = rng.normal(size=(10, 12))
        W = rng.normal(size=(10, 3))
        with pytest.raises(ValidationError, match="underdetermined"):
            remove_feature(fm(L, "L", (0, 6)), fm(W, "W", (0, 6)), TINY, split_mask(6, 4))

    def test_metadata_inherited(self):
        L, W, _, split = make_instance(6)
        resid, _ = remove_feature(fm(L, "L", (0, 120)), fm(W, "W", (0, 120)), TINY, split,
                                  n_boots=2, chunk_len=10)
        assert resid.sampling.kind == "per_TR"
        assert resid.name == "W_minus_L"

    def test_removal_never_helps_encoding_of_pure_L_targets(self):
        # statistical test over 20 seeds at alpha = 0.01
        from resid_align.data_model import ExperimentConfig
        from resid_align.encoding import fit_encoding
        from resid_align.stats import wilcoxon_signed_rank
        from resid_align.synth import SynthSpec, generate

        drops = []
        for seed in range(20):
            spec = SynthSpec(n_subjects=1, n_trs=160, n_voxels=6, n_stories=4, snr=8.0,
                             low_level_fraction=1.0, seed=seed)
            data = generate(spec)
            W, L = data.features["w"], data.features["lowlevel"]
            Y = data.responses[0]
            cfg = ExperimentConfig(lambda_grid=[0.1, 1.0, 10.0])
            cfg.ridge.n_boots, cfg.ridge.chunk_len = 2, 10
            before = fit_encoding(W, Y, cfg).r.mean()
            resid, _ = remove_feature(L, W, TINY, Y.train_mask, seed=seed,
                                      n_boots=2, chunk_len=10)
            after = fit_encoding(resid, Y, cfg).r.mean()
            drops.append(before - after)
        res = wilcoxon_signed_rank([(d, 0.0) for d in drops])
        assert np.mean(drops) > 0
        assert res.p_value < 0.01


class TestConcat:
    def test_columns_stack(self, rng):
        a = fm(rng.normal(size=(8, 2)), "a")
        b = fm(rng.normal(size=(8, 3)), "b")
        out = concat_features([a, b], "a+b")
        assert out.dim == 5
        assert np.array_equal(out.values[:, :2], a.values)
        assert out.name == "a+b"

    def test_misaligned_rejected(self, rng):
        a = fm(rng.normal(size=(8, 2)), "a")
        b = fm(rng.normal(size=(9, 2)), "b")
        with pytest.raises(ValidationError, match="aligned"):
            concat_features([a, b], "x")
