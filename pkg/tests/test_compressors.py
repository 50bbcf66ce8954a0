"""Tests for efbv.compressors.

Covers:
- scale_params, lambda_star, contraction_alpha scalar calculus
- closed-form (eta, omega, omega_av) per family
- wire messages: support, values, bits, zero-input rule
- top-k tie-breaking
- CompressorSpec validation and manifest round trip
"""

import math

import numpy as np
import pytest

from efbv.compressors import (
    Comp,
    CompressorSpec,
    Identity,
    Mix,
    NiceSampling,
    RandK,
    Scaled,
    TopK,
    catalog,
    compress,
    contraction_alpha,
    lambda_star,
    scale_params,
    theoretical_params,
    top_indices,
)
from efbv.errors import ConfigurationError, ContractViolation
from efbv.protocols import Compressor, RoundContext
from efbv.types import ClassParams, Dependence, Family


def _gen(seed=0):
    return np.random.default_rng(seed)


# -- scalar calculus ----------------------------------------------


def test_scale_params_formula():
    """eta' = lam*eta + 1 - lam, omega' = lam^2 omega."""
    p = ClassParams(eta=0.5, omega=4.0, omega_av=1.0)
    q = scale_params(p, 0.5)
    assert q.eta == pytest.approx(0.75)
    assert q.omega == pytest.approx(1.0)
    assert q.omega_av == pytest.approx(0.25)


def test_scale_params_identity_scaling():
    """lam = 1 leaves the parameters unchanged."""
    p = ClassParams(eta=0.3, omega=2.0, omega_av=0.2)
    assert scale_params(p, 1.0) == p


@pytest.mark.parametrize("lam1,lam2", [(0.5, 0.4), (0.9, 0.3), (1.0, 0.7)])
def test_scale_params_composes(lam1, lam2):
    """Scaling by lam1 then lam2 equals scaling once by lam1*lam2."""
    p = ClassParams(eta=0.3, omega=2.0, omega_av=0.5)
    twice = scale_params(scale_params(p, lam1), lam2)
    once = scale_params(p, lam1 * lam2)
    assert twice.eta == pytest.approx(once.eta)
    assert twice.omega == pytest.approx(once.omega)
    assert twice.omega_av == pytest.approx(once.omega_av)


@pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
def test_scale_params_rejects_bad_lambda(lam):
    """Scalings outside (0, 1] are configuration errors."""
    p = ClassParams(eta=0.0, omega=1.0, omega_av=1.0)
    with pytest.raises(ConfigurationError):
        scale_params(p, lam)


def test_lambda_star_unbiased():
    """eta = 0: lam* = 1 / (1 + omega)."""
    assert lambda_star(0.0, 3.0) == pytest.approx(0.25)


def test_lambda_star_capped_at_one():
    """A contractive operator needs no scaling."""
    assert lambda_star(0.5, 0.0) == 1.0
    assert lambda_star(0.0, 0.0) == 1.0


def test_lambda_star_validates():
    """eta must lie in [0, 1) and omega must be nonnegative."""
    with pytest.raises(ConfigurationError):
        lambda_star(1.0, 0.0)
    with pytest.raises(ConfigurationError):
        lambda_star(0.2, -1.0)


def test_contraction_alpha():
    """top-1 on d=4 is contractive with alpha = k/d."""
    p = theoretical_params(CompressorSpec.top_k(4, 1), 1)
    assert contraction_alpha(p) == pytest.approx(0.25)
    q = theoretical_params(CompressorSpec.rand_k(4, 1), 1)
    assert contraction_alpha(q) is None


# -- closed forms -------------------------------------------------


def test_identity_params():
    """The identity is exact: all parameters are zero."""
    p = theoretical_params(CompressorSpec.identity(5), 3)
    assert (p.eta, p.omega, p.omega_av) == (0.0, 0.0, 0.0)


def test_rand_k_params():
    """rand-1 on d=4: omega = 3, omega_av = omega / n."""
    p = theoretical_params(CompressorSpec.rand_k(4, 1), 8)
    assert p.eta == 0.0
    assert p.omega == pytest.approx(3.0)
    assert p.omega_av == pytest.approx(3.0 / 8)


def test_top_k_params():
    """top-1 on d=4: eta = sqrt(3/4), no variance."""
    p = theoretical_params(CompressorSpec.top_k(4, 1), 5)
    assert p.eta == pytest.approx(math.sqrt(0.75))
    assert p.omega == 0.0
    assert p.omega_av == 0.0


def test_mix_params():
    """mix-(1,1) on d=3."""
    p = theoretical_params(CompressorSpec.mix(3, 1, 1), 1)
    assert p.eta == pytest.approx(1.0 / math.sqrt(6.0))
    assert p.omega == pytest.approx(1.0 / 6.0)


def test_comp_params():
    """comp-(1,2) on d=3: eta = sqrt(1/3), omega = 1."""
    p = theoretical_params(CompressorSpec.comp(3, 1, 2), 1)
    assert p.eta == pytest.approx(math.sqrt(1.0 / 3.0))
    assert p.omega == pytest.approx(1.0)


def test_comp_params_mushrooms_shape():
    """comp-(1,56) on d=112 with n=1000."""
    p = theoretical_params(CompressorSpec.comp(112, 1, 56), 1000)
    assert p.eta == pytest.approx(0.7071, abs=1e-4)
    assert p.omega == pytest.approx(55.0)
    assert p.omega_av == pytest.approx(0.055)


def test_nice_sampling_params():
    """m=2, n=4: omega = 1, omega_av = 1/3."""
    p = theoretical_params(CompressorSpec.nice_sampling(6, 2, 4), 4)
    assert p.eta == 0.0
    assert p.omega == pytest.approx(1.0)
    assert p.omega_av == pytest.approx(1.0 / 3.0)


def test_nice_sampling_single_worker():
    """n = 1: omega_av = 0."""
    p = theoretical_params(CompressorSpec.nice_sampling(3, 1, 1), 1)
    assert p.omega_av == 0.0


def test_nice_sampling_worker_count_mismatch():
    """The pool size must match the worker count."""
    with pytest.raises(ConfigurationError):
        theoretical_params(CompressorSpec.nice_sampling(3, 2, 4), 5)


def test_scaled_params():
    """0.25 * rand-1 on d=4."""
    spec = CompressorSpec.scaled(CompressorSpec.rand_k(4, 1), 0.25)
    p = theoretical_params(spec, 2)
    assert p.eta == pytest.approx(0.75)
    assert p.omega == pytest.approx(0.1875)
    assert p.omega_av == pytest.approx(0.1875 / 2)


def test_joint_dependence_on_non_sampling_family():
    """No averaging gain is assumed: omega_av = omega."""
    p = theoretical_params(
        CompressorSpec.rand_k(4, 1), 8, Dependence.JOINT_NICE
    )
    assert p.omega_av == pytest.approx(p.omega)


def test_theoretical_params_rejects_zero_workers():
    """At least one worker is required."""
    with pytest.raises(ConfigurationError):
        theoretical_params(CompressorSpec.rand_k(4, 1), 0)


# -- messages -----------------------------------------------------


def test_rand_k_message_support_and_values():
    """k entries, each d/k times the input."""
    x = np.arange(1.0, 9.0)
    msg = RandK(8, 2).compress(x, _gen())
    assert msg.nnz == 2
    np.testing.assert_allclose(msg.values, 4.0 * x[msg.indices])
    assert np.all(np.diff(msg.indices) > 0)


def test_comp_message_bits():
    """comp-(k,k') always sends exactly k coordinates."""
    x = np.linspace(-1.0, 2.0, 20)
    msg = compress(CompressorSpec.comp(20, 2, 10), x, _gen())
    assert msg.nnz == 2
    assert msg.wire_bits == 2 * 64
    msg32 = Comp(20, 2, 10).compress(
        x, _gen(), bits_per_coordinate=32
    )
    assert msg32.wire_bits == 64


def test_comp_picks_from_top_k_prime():
    """Every draw lands in the top-k' support, scaled by k'/k."""
    x = np.array([4.0, 1.0, -3.0])
    for seed in range(10):
        msg = Comp(3, 1, 2).compress(x, _gen(seed))
        assert msg.indices[0] in (0, 2)
        np.testing.assert_allclose(
            msg.values, 2.0 * x[msg.indices]
        )


def test_zero_input_gives_empty_message():
    """A zero input costs nothing on the wire."""
    for op in (RandK(4, 2), TopK(4, 1), Mix(4, 1, 1), Identity(4)):
        msg = op.compress(np.zeros(4), _gen())
        assert msg.nnz == 0
        assert msg.wire_bits == 0
        np.testing.assert_array_equal(msg.to_dense(), np.zeros(4))


def test_selected_zero_coordinates_are_still_sent():
    """A nonzero input sends all k selected coordinates."""
    x = np.array([5.0, 0.0, 0.0, 0.0])
    msg = TopK(4, 2).compress(x, _gen())
    assert msg.nnz == 2
    assert msg.wire_bits == 128


def test_top_k_tie_break_prefers_lower_index():
    """Equal magnitudes go to the lower index."""
    np.testing.assert_array_equal(
        top_indices(np.ones(4), 2), [0, 1]
    )
    np.testing.assert_array_equal(
        top_indices(np.array([1.0, -3.0, 3.0, 2.0]), 1), [1]
    )


def test_top_k_is_deterministic():
    """top-k ignores the generator."""
    x = np.array([0.1, -2.0, 0.5, 3.0])
    a = TopK(4, 2).compress(x, _gen(1))
    b = TopK(4, 2).compress(x, _gen(2))
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.indices, [1, 3])


@pytest.mark.parametrize("d,k", [(10, 1), (10, 3), (25, 5)])
def test_top_k_contracts_random_inputs(d, k):
    """||top_k(x) - x||^2 <= (1 - k/d) ||x||^2 on random x."""
    gen = _gen(11)
    op = TopK(d, k)
    for _ in range(50):
        x = gen.standard_normal(d)
        err = op.compress(x, gen).to_dense() - x
        assert err @ err <= (1.0 - k / d) * (x @ x) + 1e-12


def test_mix_keeps_top_and_one_random_other():
    """mix-(1,1) keeps the largest entry plus one other."""
    x = np.array([4.0, 1.0, -3.0])
    msg = Mix(3, 1, 1).compress(x, _gen())
    assert 0 in msg.indices
    assert msg.nnz == 2
    np.testing.assert_allclose(msg.values, x[msg.indices])


def test_identity_sends_everything():
    """The identity sends all d coordinates."""
    x = np.array([1.0, -2.0, 3.0])
    msg = Identity(3).compress(x, _gen())
    np.testing.assert_array_equal(msg.to_dense(), x)
    assert msg.wire_bits == 3 * 64


def test_nice_sampling_needs_participants():
    """Nice sampling cannot compress without a participant set."""
    op = NiceSampling(3, 2, 4)
    with pytest.raises(ConfigurationError):
        op.compress(np.ones(3), _gen())


def test_nice_sampling_member_and_non_member():
    """Participants send n/m times x, the others send nothing."""
    op = NiceSampling(3, 2, 4)
    x = np.array([1.0, 2.0, 3.0])
    inside = op.compress(
        x, _gen(), RoundContext(worker=1, participants=frozenset({1, 3}))
    )
    np.testing.assert_allclose(inside.to_dense(), 2.0 * x)
    outside = op.compress(
        x, _gen(), RoundContext(worker=0, participants=frozenset({1, 3}))
    )
    assert outside.nnz == 0


def test_nice_sampling_draws_m_participants():
    """Exactly m distinct workers are drawn."""
    op = NiceSampling(3, 2, 5)
    chosen = op.draw_participants(_gen())
    assert len(chosen) == 2
    assert chosen <= set(range(5))


def test_scaled_message_carries_scale_header():
    """Scaling is a header: values and bits are the inner message's."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    inner = RandK(4, 2)
    msg = Scaled(inner, 0.5).compress(x, _gen(7))
    raw = inner.compress(x, _gen(7))
    assert msg.scale == 0.5
    np.testing.assert_array_equal(msg.values, raw.values)
    np.testing.assert_allclose(msg.to_dense(), 0.5 * raw.to_dense())
    assert msg.wire_bits == raw.wire_bits


def test_same_generator_seed_same_message():
    """Equal seeds give equal messages."""
    x = np.linspace(1.0, 2.0, 10)
    a = RandK(10, 3).compress(x, _gen(5))
    b = RandK(10, 3).compress(x, _gen(5))
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.values, b.values)


def test_dimension_mismatch_is_contract_violation():
    """Inputs of the wrong length are rejected."""
    with pytest.raises(ContractViolation):
        RandK(4, 1).compress(np.ones(5), _gen())


def test_non_finite_input_is_contract_violation():
    """NaN inputs are rejected."""
    with pytest.raises(ContractViolation):
        TopK(3, 1).compress(np.array([1.0, np.nan, 0.0]), _gen())


def test_sample_batch_shape():
    """Batches are size x d with the family's support size."""
    x = np.ones(6)
    batch = Mix(6, 1, 2).sample_batch(x, _gen(), 50)
    assert batch.shape == (50, 6)
    assert np.all((batch != 0).sum(axis=1) == 3)


def test_outcome_counts():
    """Outcome counts are the sizes of the finite laws."""
    assert RandK(4, 2).outcome_count() == 6
    assert Mix(5, 1, 2).outcome_count() == 6
    assert Comp(5, 1, 3).outcome_count() == 3
    assert NiceSampling(2, 2, 4).outcome_count() == 6
    assert TopK(5, 2).outcome_count() == 1


def test_operators_satisfy_protocol():
    """Concrete operators satisfy the Compressor protocol."""
    for op in (Identity(3), RandK(3, 1), Scaled(TopK(3, 1), 0.5)):
        assert isinstance(op, Compressor)


# -- specs --------------------------------------------------------


@pytest.mark.parametrize(
    "factory",
    [
        lambda: CompressorSpec.rand_k(4, 0),
        lambda: CompressorSpec.rand_k(4, 5),
        lambda: CompressorSpec.top_k(4, 0),
        lambda: CompressorSpec.mix(4, 2, 3),
        lambda: CompressorSpec.comp(4, 3, 2),
        lambda: CompressorSpec.nice_sampling(4, 5, 4),
        lambda: CompressorSpec.scaled(CompressorSpec.rand_k(4, 1), 0.0),
        lambda: CompressorSpec.scaled(CompressorSpec.rand_k(4, 1), 1.5),
        lambda: CompressorSpec.identity(0),
    ],
)
def test_spec_validation(factory):
    """Out-of-range spec parameters are configuration errors."""
    with pytest.raises(ConfigurationError):
        factory()


def test_spec_from_dict():
    """Manifest dictionaries build specs with readable labels."""
    spec = CompressorSpec.from_dict(
        {"family": "comp", "k": 1, "k_prime": 56}, 112
    )
    assert spec == CompressorSpec.comp(112, 1, 56)
    assert spec.label == "comp-(1,56)"


def test_spec_dict_round_trip_scaled():
    """Nested scaled specs survive to_dict / from_dict."""
    spec = CompressorSpec.scaled(CompressorSpec.mix(8, 1, 2), 0.4)
    assert CompressorSpec.from_dict(spec.to_dict(), 8) == spec


def test_spec_from_dict_rejects_unknown_keys():
    """Misspelled keys are rejected."""
    with pytest.raises(ConfigurationError):
        CompressorSpec.from_dict({"family": "rand_k", "kk": 2}, 4)


def test_spec_from_dict_rejects_unknown_family():
    """Unknown families are rejected."""
    with pytest.raises(ConfigurationError):
        CompressorSpec.from_dict({"family": "qsgd"}, 4)


def test_catalog_covers_every_family():
    """The certification catalog has one entry per family."""
    specs = catalog(16, 8)
    assert {s.family for s in specs} == set(Family)
    for spec in specs:
        assert spec.build().dim == 16
