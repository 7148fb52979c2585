import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from turboamp.learning import (HyperParams, beta_posterior, extract_support, gamma_posterior,
                               update_gm_variances, update_noise, update_precisions,
                               update_transitions)
from turboamp.measurement import MeasurementOperator
from turboamp.wavelet import QuadTreeIndex, build_tree_index


def hyper_for(tree, rng=None, model="bg"):
    hp = HyperParams.default(tree, model)
    if rng is not None:
        J = tree.J
        hp.gamma_level = rng.uniform(0.2, 5.0, (J + 1, 2))
        hp.beta_root = rng.uniform(0.2, 20.0, 2)
        hp.beta_approx = rng.uniform(0.2, 20.0, 2)
        hp.beta_trans11 = rng.uniform(0.2, 20.0, (J - 1, 2))
        hp.beta_trans00 = rng.uniform(0.2, 20.0, (J - 1, 2))
    return hp


# ------------------------------------------------- numerical-integration oracles

def gamma_precision_mean(shape, rate, values):
    """E[rho] under Gamma(shape, rate) prior times N(v; 0, 1/rho) likelihoods."""
    k = len(values)
    ss = float(np.sum(np.square(values)))

    def log_post(r):
        return (shape - 1 + 0.5 * k) * np.log(r) - (rate + 0.5 * ss) * r

    alpha, beta = shape + 0.5 * k, rate + 0.5 * ss
    mode = max(alpha - 1, 1e-3) / beta
    hi = (alpha + 60 * np.sqrt(alpha) + 60) / beta
    ref = log_post(mode)

    def integral(power):
        f = lambda r: r**power * np.exp(log_post(r) - ref) if r > 0 else 0.0
        return quad(f, 0, hi, points=[mode], epsabs=0, epsrel=1e-13, limit=400)[0]

    return integral(1) / integral(0)


def beta_prob_mean(c, d, successes, trials):
    """E[pi] under Beta(c, d) prior times Bernoulli likelihoods."""
    def log_post(p):
        return (c - 1 + successes) * np.log(p) + (d - 1 + trials - successes) * np.log1p(-p)

    a, b = c + successes, d + trials - successes
    mode = min(max((a - 1) / (a + b - 2) if a + b > 2 else 0.5, 1e-6), 1 - 1e-6)
    ref = log_post(mode)

    def integral(power):
        f = lambda p: p**power * np.exp(log_post(p) - ref) if 0 < p < 1 else 0.0
        return quad(f, 0, 1, points=[mode], epsabs=0, epsrel=1e-13, limit=400)[0]

    return integral(1) / integral(0)


def count_edges(tree, active, j):
    """Loop-based (parent active, both active, parent off, both off) counts."""
    s11 = t11 = s00 = t00 = 0
    for p in tree.level(j):
        for ch in tree.children[p]:
            if ch < 0:
                continue
            if active[p]:
                t11 += 1
                s11 += active[ch]
            else:
                t00 += 1
                s00 += not active[ch]
    return s11, t11, s00, t00


# ------------------------------------------------------------ extract_support

def test_all_negative_llr_gives_empty_support():
    tree = build_tree_index(16, 3)
    sup = extract_support(np.full(tree.n_total, -5.0), tree)
    np.testing.assert_array_equal(sup.k_counts, 0)
    np.testing.assert_array_equal(sup.succ11, 0)
    np.testing.assert_array_equal(sup.trials11, 0)


def test_active_family_counts_four_edges():
    tree = build_tree_index(8, 2)
    llr = np.full(tree.n_total, -1.0)
    root = tree.level(0)[0]
    llr[root] = 1.0
    llr[tree.children[root]] = 2.0
    sup = extract_support(llr, tree)
    assert sup.trials11[0] == 4
    assert sup.succ11[0] == 4


def test_zero_llr_is_inactive():
    tree = build_tree_index(8, 2)
    llr = np.zeros(tree.n_total)
    llr[0] = 1e-300
    sup = extract_support(llr, tree)
    np.testing.assert_array_equal(np.flatnonzero(sup.active), [0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_counts_match_loop_recount(seed):
    rng = np.random.default_rng(seed)
    tree = build_tree_index(16, 4)
    llr = rng.standard_normal(tree.n_total)
    sup = extract_support(llr, tree)
    for j in range(tree.J - 1):
        assert (sup.succ11[j], sup.trials11[j], sup.succ00[j], sup.trials00[j]) == \
            count_edges(tree, llr > 0, j)
    assert np.all(sup.succ11 <= sup.trials11)
    assert sup.k_counts.sum() == np.sum(llr > 0)


# ---------------------------------------------------------- update_precisions

def test_precision_hand_example():
    tree = QuadTreeIndex.from_parents([-1, -1], [0, 0])
    hp = HyperParams(gamma_noise=(1, 1), gamma_level=[[1, 1], [1.0, 0.1]], beta_root=(1, 1),
                     beta_approx=(1, 1), beta_trans11=np.empty((0, 2)),
                     beta_trans00=np.empty((0, 2)))
    sup = extract_support(np.array([1.0, 1.0]), tree)
    np.testing.assert_allclose(update_precisions(hp, sup, np.array([3.0, 4.0]))[1], 6.3,
                               rtol=1e-15)


def test_no_evidence_reproduces_prior_means():
    tree = build_tree_index(16, 3)
    rng = np.random.default_rng(0)
    hp = hyper_for(tree, rng)
    sup = extract_support(np.full(tree.n_total, -1.0), tree)
    np.testing.assert_array_equal(update_precisions(hp, sup, rng.standard_normal(tree.n_total)),
                                  hp.gamma_level[:, 1] / hp.gamma_level[:, 0])
    params = update_transitions(hp, sup)
    # with no active parent every pi11 trial count is zero
    np.testing.assert_array_equal(params.pi11, hp.beta_trans11[:, 0] / hp.beta_trans11.sum(1))


def test_doubling_means_quadruples_rate_increment():
    tree = build_tree_index(8, 2)
    rng = np.random.default_rng(1)
    hp = hyper_for(tree, rng)
    llr = rng.standard_normal(tree.n_total)
    mu = rng.standard_normal(tree.n_total)
    sup = extract_support(llr, tree)
    a = hp.gamma_level[:, 0] + 0.5 * sup.k_counts
    b = hp.gamma_level[:, 1]
    inc1 = update_precisions(hp, sup, mu) * a - b
    inc2 = update_precisions(hp, sup, 2 * mu) * a - b
    np.testing.assert_allclose(inc2, 4 * inc1, rtol=1e-10, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), extra=st.floats(0.01, 10))
def test_adding_active_coefficient_increases_rate(seed, extra):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(rng.integers(0, 6))
    a, b = 1.0 + rng.random(), 0.1 + rng.random()
    _, b1 = gamma_posterior(a, b, values.size, np.sum(values**2))
    _, b2 = gamma_posterior(a, b, values.size + 1, np.sum(values**2) + extra**2)
    assert b2 > b1


# ---------------------------------------------------------- update_transitions

def test_twelve_edge_transition_count():
    tree = build_tree_index(8, 3)
    hp = hyper_for(tree)
    hp.beta_trans11 = np.ones_like(hp.beta_trans11)
    llr = np.full(tree.n_total, -1.0)
    # three active roots give 12 edges; 7 of their children are active
    roots = tree.level(0)[:3]
    llr[roots] = 1.0
    llr[tree.children[roots].ravel()[:7]] = 1.0
    sup = extract_support(llr, tree)
    assert (sup.trials11[0], sup.succ11[0]) == (12, 7)
    np.testing.assert_allclose(update_transitions(hp, sup).pi11[0], 8 / 14, rtol=1e-15)


def test_ten_trials_seven_successes():
    # level-1 parents with 4, 4 and 2 children give exactly 10 edges
    parent = [-1, 0, 0, 0] + [1] * 4 + [2] * 4 + [3] * 2
    levels = [0] + [1] * 3 + [2] * 10
    tree = QuadTreeIndex.from_parents(parent, levels)
    hp = HyperParams(gamma_noise=(1, 1), gamma_level=np.ones((3, 2)), beta_root=(1, 1),
                     beta_approx=(1, 1), beta_trans11=[[1, 1], [1, 1]],
                     beta_trans00=[[1, 1], [1, 1]])
    llr = np.full(tree.n_total, -1.0)
    llr[:4] = 1.0
    llr[4:11] = 1.0
    sup = extract_support(llr, tree)
    assert (sup.trials11[1], sup.succ11[1]) == (10, 7)
    np.testing.assert_allclose(update_transitions(hp, sup).pi11[1], 8 / 12, rtol=1e-15)


def test_all_success_probability_increases_towards_one():
    prev = 0.0
    for t in (1, 10, 100, 1000, 10**6):
        c, d = beta_posterior(1.0, 1.0, t, t)
        p = c / (c + d)
        assert prev < p < 1
        prev = p


# --------------------------------------------------------------- update_noise

def test_noise_hand_example():
    op = MeasurementOperator(np.eye(2))
    hp = HyperParams.flat(2)
    hp.gamma_noise = np.array([1.0, 0.0])
    assert update_noise(hp, np.array([1.0, 1.0]), op, np.zeros(2)) == 0.5


def test_noise_zero_residual_limit():
    op = MeasurementOperator(np.eye(4))
    hp = HyperParams.flat(4)
    mu = np.arange(4.0)
    np.testing.assert_allclose(update_noise(hp, mu, op, mu), 1e-6 / 3, rtol=1e-14)


def test_noise_residual_scaling():
    rng = np.random.default_rng(3)
    op = MeasurementOperator(rng.standard_normal((5, 5)))
    hp = HyperParams.flat(5)
    y = rng.standard_normal(5)
    a = 1.0 + 2.5
    inc = update_noise(hp, y, op, np.zeros(5)) * a - 1e-6
    inc3 = update_noise(hp, 3 * y, op, np.zeros(5)) * a - 1e-6
    np.testing.assert_allclose(inc3, 9 * inc, rtol=1e-10)


# ------------------------------------------------------------ GM variances

def test_gm_variances_without_evidence():
    tree = build_tree_index(8, 2)
    hp = HyperParams.default(tree, "gm")
    large, _ = update_gm_variances(hp, np.full(tree.n_total, -1.0), np.ones(tree.n_total), tree)
    np.testing.assert_array_equal(large, hp.expected_variances())
    _, small = update_gm_variances(hp, np.full(tree.n_total, 1.0), np.zeros(tree.n_total), tree)
    np.testing.assert_array_equal(small, hp.expected_small_variances())
    # zero means still count as observations of the small-variance precision
    _, small = update_gm_variances(hp, np.full(tree.n_total, -1.0), np.zeros(tree.n_total), tree)
    counts = np.array(tree.sizes)
    a, b = hp.gamma_level_small.T
    np.testing.assert_allclose(small, b / (a + 0.5 * counts), rtol=1e-15)


def test_gm_split_population_recomputed():
    tree = build_tree_index(16, 3)
    rng = np.random.default_rng(5)
    hp = HyperParams.default(tree, "gm")
    llr = rng.standard_normal(tree.n_total)
    mu = rng.standard_normal(tree.n_total)
    large, small = update_gm_variances(hp, llr, mu, tree)
    for k, idx in enumerate(tree.level_sets):
        on = [n for n in idx if llr[n] > 0]
        off = [n for n in idx if llr[n] <= 0]
        aL, bL = hp.gamma_level[k]
        aS, bS = hp.gamma_level_small[k]
        np.testing.assert_allclose(large[k], (bL + 0.5 * sum(mu[n] ** 2 for n in on))
                                   / (aL + 0.5 * len(on)), rtol=1e-12)
        np.testing.assert_allclose(small[k], (bS + 0.5 * sum(mu[n] ** 2 for n in off))
                                   / (aS + 0.5 * len(off)), rtol=1e-12)


# ------------------------------------------------ integration oracle

@pytest.mark.parametrize("seed", range(10))
def test_updates_match_numerical_integration(seed):
    rng = np.random.default_rng(seed)
    tree = build_tree_index(16, 4)
    hp = hyper_for(tree, rng)
    llr = rng.standard_normal(tree.n_total) - 0.3
    mu = rng.standard_normal(tree.n_total) * 2
    sup = extract_support(llr, tree)

    variances = update_precisions(hp, sup, mu)
    for k, idx in enumerate(tree.level_sets):
        active = idx[llr[idx] > 0]
        oracle = gamma_precision_mean(*hp.gamma_level[k], mu[active])
        np.testing.assert_allclose(1 / variances[k], oracle, rtol=1e-8)

    params = update_transitions(hp, sup)
    n0 = tree.level(0)
    np.testing.assert_allclose(
        params.pi_root, beta_prob_mean(*hp.beta_root, np.sum(llr[n0] > 0), n0.size), rtol=1e-8)
    na = tree.level(-1)
    np.testing.assert_allclose(
        params.pi_approx, beta_prob_mean(*hp.beta_approx, np.sum(llr[na] > 0), na.size),
        rtol=1e-8)
    for j in range(tree.J - 1):
        s11, t11, s00, t00 = count_edges(tree, llr > 0, j)
        np.testing.assert_allclose(params.pi11[j], beta_prob_mean(*hp.beta_trans11[j], s11, t11),
                                   rtol=1e-8)
        np.testing.assert_allclose(params.pi00[j], beta_prob_mean(*hp.beta_trans00[j], s00, t00),
                                   rtol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_updated_parameters_stay_in_range(seed):
    rng = np.random.default_rng(seed)
    tree = build_tree_index(8, 3)
    hp = hyper_for(tree, rng)
    llr = rng.standard_normal(tree.n_total) * 3
    sup = extract_support(llr, tree)
    params = update_transitions(hp, sup)
    for p in [params.pi_root, params.pi_approx, *params.pi11, *params.pi00]:
        assert 0 < p < 1
    assert np.all(update_precisions(hp, sup, rng.standard_normal(tree.n_total)) > 0)


def test_hyperparams_reject_non_positive():
    with pytest.raises(ValueError):
        HyperParams(gamma_noise=(0, 1), gamma_level=[[1, 1]], beta_root=(1, 1),
                    beta_approx=(1, 1), beta_trans11=np.empty((0, 2)),
                    beta_trans00=np.empty((0, 2)))
