import numpy as np
import pytest

from neutsflow import numerics as nm
from neutsflow import operator as op
from neutsflow.errors import UsageError

from conftest import naive_dft, naive_idft


@pytest.fixture
def small_hyper():
    return op.OperatorHyper(history_len=16, horizon=8, channels=2, k=4, topk=3,
                            m_max=3, hidden=8)


@pytest.fixture
def small_params(small_hyper):
    return op.init_params(0, small_hyper)


# -- normalization -------------------------------------------------------------

def test_instance_normalize_hand_example():
    H = np.array([[1.0], [3.0]])
    Hn, stats = op.instance_normalize(H)
    assert np.allclose(Hn, [[-1.0], [1.0]])
    assert stats.mu[0] == pytest.approx(2.0)
    assert stats.sigma[0] == pytest.approx(1.0)   # population std


def test_instance_normalize_constant_channel():
    H = np.full((10, 2), 4.2)
    Hn, stats = op.instance_normalize(H, eps_norm=1e-5)
    assert np.abs(Hn).max() == 0.0
    assert np.allclose(stats.sigma, 1e-5)


def test_normalize_moments(rng):
    H = rng.normal(3.0, 2.5, size=(64, 4))
    Hn, _ = op.instance_normalize(H)
    assert np.abs(Hn.mean(axis=0)).max() < 1e-10
    assert np.abs(Hn.std(axis=0) - 1.0).max() < 1e-8


def test_normalize_denormalize_roundtrip(rng):
    H = rng.normal(size=(20, 3)) * 3.0 + 1.0
    Hn, stats = op.instance_normalize(H)
    assert np.abs(op.denormalize(Hn, stats) - H).max() < 1e-10


def test_denormalize_trivials(rng):
    stats = op.NormStats(mu=np.array([2.0, -1.0]), sigma=np.array([1.0, 1.0]))
    Y = np.zeros((5, 2))
    out = op.denormalize(Y, stats)
    assert np.allclose(out, np.broadcast_to([2.0, -1.0], (5, 2)))
    ident = op.NormStats(mu=np.zeros(2), sigma=np.ones(2))
    Yr = rng.normal(size=(5, 2))
    assert np.array_equal(op.denormalize(Yr, ident), Yr)


def test_denormalize_shape_mismatch():
    stats = op.NormStats(mu=np.zeros(3), sigma=np.ones(3))
    with pytest.raises(UsageError):
        op.denormalize(np.zeros((4, 2)), stats)


# -- spectral decomposition -------------------------------------------------------

def test_decompose_pure_cosine(rng):
    S = 32
    n = np.arange(S)
    x = np.cos(2 * np.pi * 4 * n / S)[:, None]
    trend, season = op.spectral_decompose(x, K=1)
    assert np.abs(season - x).max() < 1e-9
    assert np.abs(trend).max() < 1e-9


def test_decompose_all_modes_is_identity(rng):
    x = rng.normal(size=(20, 2))
    trend, season = op.spectral_decompose(x, K=20 // 2 + 1)
    assert np.abs(season - x).max() < 1e-9
    assert np.abs(trend).max() < 1e-9


def test_decompose_ramp_against_oracle():
    S = 16
    x = np.linspace(-1, 1, S)[:, None]
    trend, season = op.spectral_decompose(x, K=1)
    spec = naive_dft(x[:, 0])
    amps = np.abs(spec)
    keep = int(np.argmax(amps))
    filtered = np.zeros_like(spec)
    filtered[keep] = spec[keep]
    season_oracle = naive_idft(filtered, S)
    assert np.abs(season[:, 0] - season_oracle).max() < 1e-9
    assert np.abs(trend + season - x).max() < 1e-12


def test_decompose_exactness_property(rng):
    for _ in range(10):
        x = rng.normal(size=(24, 3))
        trend, season = op.spectral_decompose(x, K=4)
        assert np.abs(trend + season - x).max() < 1e-12


def test_decompose_k_out_of_range(rng):
    with pytest.raises(UsageError):
        op.spectral_decompose(rng.normal(size=(16, 1)), K=0)
    with pytest.raises(UsageError):
        op.spectral_decompose(rng.normal(size=(16, 1)), K=10)


def test_topk_tie_breaks_toward_low_frequency():
    S = 16
    n = np.arange(S)
    # two bins with exactly equal amplitude
    x = (np.cos(2 * np.pi * 2 * n / S) + np.cos(2 * np.pi * 5 * n / S))[:, None]
    mask = op.topk_bins(x, K=1)
    assert mask[2, 0] and not mask[5, 0]


def test_decompose_resolution_consistency(rng):
    # band-limited signal sampled at S and 2S over the same span selects the
    # same bins and yields season curves that agree on the coarse grid
    S = 32
    t_coarse = np.arange(S) / S
    t_fine = np.arange(2 * S) / (2 * S)

    def signal(t):
        return (np.sin(2 * np.pi * 3 * t) + 0.4 * np.cos(2 * np.pi * 7 * t)
                + 0.2 * np.sin(2 * np.pi * 11 * t))

    xc = signal(t_coarse)[:, None]
    xf = signal(t_fine)[:, None]
    _, season_c = op.spectral_decompose(xc, K=2)
    _, season_f = op.spectral_decompose(xf, K=2)
    assert np.abs(season_f[::2] - season_c).max() < 1e-9


# -- embed / assemble / expand -----------------------------------------------------

def test_embed_zero_history_zero_bias(small_hyper):
    params = op.init_params(0, small_hyper)
    H = np.zeros((16, 2))
    out = op.embed_history(H, params["mlp_w1_trend"], params["mlp_b1_trend"],
                           params["mlp_w2_trend"], params["mlp_b2_trend"])
    assert np.abs(out).max() == 0.0   # biases are zero-initialized


def test_embed_channel_sharing(rng, small_params):
    h = rng.normal(size=16)
    H = np.stack([h, h], axis=1)
    out = op.embed_history(H, small_params["mlp_w1_trend"], small_params["mlp_b1_trend"],
                           small_params["mlp_w2_trend"], small_params["mlp_b2_trend"])
    assert np.array_equal(out[:, 0], out[:, 1])


def test_embed_matches_loop_oracle(rng, small_params):
    H = rng.normal(size=(16, 2))
    w1, b1 = small_params["mlp_w1_trend"], small_params["mlp_b1_trend"]
    w2, b2 = small_params["mlp_w2_trend"], small_params["mlp_b2_trend"]
    out = op.embed_history(H, w1, b1, w2, b2)

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))

    for c in range(2):
        hidden = gelu(H[:, c] @ w1 + b1)
        expected = hidden @ w2 + b2
        assert np.abs(out[:, c] - expected).max() < 1e-12


def test_assemble_input_definition():
    G = np.array([[1.0], [2.0]])
    He = np.array([[3.0], [4.0]])
    z0 = op.assemble_input(G, He, 0.5)
    assert np.array_equal(z0, [[1.0, 3.0, 0.5], [2.0, 4.0, 0.5]])
    assert np.array_equal(op.assemble_input(G, He, 0.0)[:, -1], [0.0, 0.0])
    assert np.array_equal(op.assemble_input(G, He, 1.0)[:, -1], [1.0, 1.0])


def test_assemble_input_t_range():
    G = np.zeros((2, 1))
    with pytest.raises(UsageError):
        op.assemble_input(G, G, 1.5)


def test_dimension_expand_cases(rng):
    z0 = rng.normal(size=(4, 3))
    one = op.dimension_expand(z0, np.array([[1.0]]))
    assert one.shape == (4, 3, 1)
    assert np.array_equal(one[..., 0], z0)
    two = op.dimension_expand(z0, np.array([[1.0, -1.0]]))
    assert np.array_equal(two[..., 0], z0)
    assert np.array_equal(two[..., 1], -z0)
    w = rng.normal(size=(1, 5))
    out = op.dimension_expand(z0, w)
    for l in range(4):
        for c in range(3):
            for j in range(5):
                assert out[l, c, j] == pytest.approx(z0[l, c] * w[0, j], abs=1e-12)


# -- spectral layer / project -------------------------------------------------------

def _identity_kernel(k, M):
    W = np.zeros((k, k, M), dtype=np.complex128)
    for m in range(M):
        W[:, :, m] = np.eye(k)
    return W


def test_spectral_layer_identity_no_truncation(rng):
    L, c, k = 8, 3, 2
    z1 = rng.normal(size=(L, c, k))
    out = op.spectral_layer(z1, _identity_kernel(k, L // 2 + 1), m_max=L // 2 + 1)
    assert np.abs(out - z1).max() < 1e-9


def test_spectral_layer_dc_only_is_mean(rng):
    L, c, k = 8, 3, 2
    z1 = rng.normal(size=(L, c, k))
    out = op.spectral_layer(z1, _identity_kernel(k, 1), m_max=1)
    means = z1.mean(axis=0, keepdims=True)
    assert np.abs(out - np.broadcast_to(means, z1.shape)).max() < 1e-9


def test_spectral_layer_matches_bruteforce_oracle(rng):
    L, c, k, M = 8, 3, 2, 3
    z1 = rng.normal(size=(L, c, k))
    W = rng.normal(size=(k, k, M)) + 1j * rng.normal(size=(k, k, M))
    out = op.spectral_layer(z1, W, m_max=M)
    nbins = L // 2 + 1
    for cc in range(c):
        spectra = np.stack([naive_dft(z1[:, cc, i]) for i in range(k)])
        y_f = np.zeros((k, nbins), dtype=np.complex128)
        for o in range(k):
            for m in range(M):
                for i in range(k):
                    y_f[o, m] += spectra[i, m] * W[i, o, m]
        for o in range(k):
            expected = naive_idft(y_f[o], L)
            assert np.abs(out[:, cc, o] - expected).max() < 1e-9


def test_spectral_layer_truncation_monotone(rng):
    L, c, k = 16, 2, 2
    z1 = rng.normal(size=(L, c, k))
    errs = []
    for m_max in range(1, L // 2 + 2):
        out = op.spectral_layer(z1, _identity_kernel(k, min(m_max, L // 2 + 1)),
                                m_max=m_max)
        errs.append(np.linalg.norm(out - z1))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-9


def test_project_cases(rng):
    y = rng.normal(size=(6, 3, 2))
    w0 = np.zeros((6, 1))
    assert np.abs(op.project(y, w0, np.zeros(1))).max() == 0.0
    w_sum = np.ones((6, 1))
    out = op.project(y, w_sum, np.zeros(1))
    assert np.allclose(out[:, 0], y.reshape(6, 6).sum(axis=1))
    w = rng.normal(size=(6, 4))
    b = rng.normal(size=4)
    out = op.project(y, w, b)
    for l in range(6):
        assert np.abs(out[l] - (y[l].reshape(-1) @ w + b)).max() < 1e-12


# -- forward ------------------------------------------------------------------------

def test_forward_output_shape(rng, small_hyper, small_params):
    H = rng.normal(size=(16, 2))
    G = rng.normal(size=(8, 2))
    out = op.forward(small_params, small_hyper, H, G, 0.4)
    assert out.shape == (8, 2)


def test_forward_equals_staged_composition(rng, small_hyper, small_params):
    """The fused forward must match the documented stage-by-stage pipeline."""
    hyper, params = small_hyper, small_params
    H = rng.normal(size=(3, 16, 2))
    G = rng.normal(size=(3, 8, 2))
    t = rng.uniform(size=3)
    mu, sigma = op._batch_stats(H, hyper)
    Hn, Gn = (H - mu) / sigma, (G - mu) / sigma
    y = None
    for name, comp in op._components(Hn, hyper).items():
        he = op.embed_history(comp, params[f"mlp_w1_{name}"], params[f"mlp_b1_{name}"],
                              params[f"mlp_w2_{name}"], params[f"mlp_b2_{name}"])
        z0 = op.assemble_input(Gn, he, t)
        z1 = op.dimension_expand(z0, params["expand"])
        yr = op.spectral_layer(z1, params[f"kernel_{name}"], hyper.m_max)
        yb = op.project(yr, params[f"proj_w_{name}"], params[f"proj_b_{name}"])
        y = yb if y is None else y + yb
    staged = y * sigma + mu
    fused = op.forward(params, hyper, H, G, t)
    assert np.abs(fused - staged).max() < 1e-12


def test_forward_shift_equivariance(rng, small_hyper, small_params):
    H = rng.normal(size=(16, 2))
    G = rng.normal(size=(8, 2))
    c = np.array([5.0, -2.5])
    base = op.forward(small_params, small_hyper, H, G, 0.3)
    shifted = op.forward(small_params, small_hyper, H + c, G + c, 0.3)
    assert np.abs(shifted - (base + c)).max() < 1e-8


def test_forward_scale_equivariance(rng, small_hyper, small_params):
    H = rng.normal(size=(16, 2))
    G = rng.normal(size=(8, 2))
    s = 3.7
    base = op.forward(small_params, small_hyper, H, G, 0.9)
    scaled = op.forward(small_params, small_hyper, s * H, s * G, 0.9)
    assert np.abs(scaled - s * base).max() < 1e-8


def test_forward_no_normalization_breaks_shift(rng):
    hyper = op.OperatorHyper(history_len=16, horizon=8, channels=2, k=4, topk=3,
                             m_max=3, hidden=8, normalize=False)
    params = op.init_params(0, hyper)
    H = rng.normal(size=(16, 2))
    G = rng.normal(size=(8, 2))
    base = op.forward(params, hyper, H, G, 0.3)
    shifted = op.forward(params, hyper, H + 5.0, G + 5.0, 0.3)
    assert np.abs(shifted - (base + 5.0)).max() > 1e-3


def test_forward_bad_shapes(rng, small_hyper, small_params):
    with pytest.raises(UsageError, match="forward/normalize"):
        op.forward(small_params, small_hyper, rng.normal(size=(12, 2)),
                   rng.normal(size=(8, 2)), 0.1)
    with pytest.raises(UsageError, match="forward/assemble"):
        op.forward(small_params, small_hyper, rng.normal(size=(16, 2)),
                   rng.normal(size=(9, 2)), 0.1)


def test_forward_core_resolution_consistency(rng):
    """Discretization property of the operator core: feeding the same
    band-limited functions sampled at L and 2L (shared kernels, M below the
    coarse Nyquist) gives outputs agreeing on the coarse grid within 5%."""
    C, k, m_max = 1, 4, 6
    Lc, Lf = 32, 64
    hyper_c = op.OperatorHyper(history_len=Lc, horizon=Lc, channels=C, k=k,
                               topk=2, m_max=m_max, hidden=8)
    hyper_f = op.OperatorHyper(history_len=Lf, horizon=Lf, channels=C, k=k,
                               topk=2, m_max=m_max, hidden=8)
    params = op.init_params(3, hyper_c)

    tc = np.arange(Lc) / Lc
    tf = np.arange(Lf) / Lf

    def g_fun(t):
        return np.sin(2 * np.pi * 2 * t) + 0.3 * np.cos(2 * np.pi * 5 * t)

    def h_fun(t):
        return 0.5 * np.cos(2 * np.pi * 3 * t) - 0.2 * np.sin(2 * np.pi * t)

    def core(hyper, g, he, t):
        z0 = op.assemble_input(g, he, t)
        z1 = op.dimension_expand(z0, params["expand"])
        yr = op.spectral_layer(z1, params["kernel_trend"], hyper.m_max)
        return op.project(yr, params["proj_w_trend"], params["proj_b_trend"])

    # the spectral kernel sees matching mode indices at both rates; the
    # per-step projection is resolution-free
    out_c = core(hyper_c, g_fun(tc)[:, None], h_fun(tc)[:, None], 0.5)
    out_f = core(hyper_f, g_fun(tf)[:, None], h_fun(tf)[:, None], 0.5)
    num = np.linalg.norm(out_f[::2] - out_c)
    den = np.linalg.norm(out_c)
    assert num / den < 0.05


# -- init and checkpoint ---------------------------------------------------------------

def test_init_deterministic(small_hyper):
    p1 = op.init_params(7, small_hyper)
    p2 = op.init_params(7, small_hyper)
    p3 = op.init_params(8, small_hyper)
    for name in p1:
        assert np.array_equal(p1[name], p2[name])
    assert any(not np.array_equal(p1[n], p3[n]) for n in p1)


def test_init_forward_magnitude(rng):
    hyper = op.OperatorHyper(history_len=96, horizon=96, channels=7)
    params = op.init_params(0, hyper)
    H = rng.normal(size=(96, 7))
    G = rng.normal(size=(96, 7))
    out = op.forward(params, hyper, H, G, 0.5)
    mag = np.abs(out).max()
    assert 1e-3 <= mag <= 1e1


def test_parameter_count_reported(small_hyper, small_params):
    n = op.parameter_count(small_params)
    assert n > 0
    by_hand = 0
    for p in small_params.values():
        by_hand += p.size * (2 if np.iscomplexobj(p) else 1)
    assert n == by_hand


def test_checkpoint_bit_identical_forward(tmp_path, rng, small_hyper, small_params):
    path = op.save_checkpoint(tmp_path / "m.ntf", small_params, small_hyper,
                              seed=0, meta={"note": "test"})
    ck = op.load_checkpoint(path)
    H = rng.normal(size=(16, 2))
    G = rng.normal(size=(8, 2))
    a = op.forward(small_params, small_hyper, H, G, 0.25)
    b = op.forward(ck.params, op.OperatorHyper(**ck.hyper), H, G, 0.25)
    assert np.array_equal(a, b)
    assert ck.seed == 0
    assert ck.meta["note"] == "test"


def test_checkpoint_byte_stable(tmp_path, small_hyper, small_params):
    p1 = op.save_checkpoint(tmp_path / "a.ntf", small_params, small_hyper, seed=0)
    p2 = op.save_checkpoint(tmp_path / "b.ntf", small_params, small_hyper, seed=0)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ntf"
    bad.write_bytes(b"not a checkpoint")
    from neutsflow.errors import DataError
    with pytest.raises(DataError):
        op.load_checkpoint(bad)


# -- gradients through the full operator ------------------------------------------------

def test_gradcheck_full_forward(rng, small_hyper, small_params):
    H = rng.normal(size=(4, 16, 2))
    G = rng.normal(size=(4, 8, 2))
    t = rng.uniform(size=4)
    F = rng.normal(size=(4, 8, 2))

    def loss_fn(p):
        d = op.forward(p, small_hyper, H, G, t) - F
        return nm.mean(d * d)

    err = nm.grad_check(loss_fn, small_params, epsilon=1e-5, n_samples=150,
                        rng=np.random.default_rng(5))
    assert err < 1e-4
