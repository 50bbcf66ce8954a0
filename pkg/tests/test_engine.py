"""Tests for the EF-BV round loop (efbv.engine)."""

import numpy as np
import pytest

from efbv.compressors import CompressorSpec
from efbv.engine import (
    RunConfig,
    Simulator,
    average_records,
    bits_to_target,
    init,
    lyapunov,
    run,
    step,
)
from efbv.errors import (
    ConfigurationError,
    DivergenceError,
    MissingReferenceError,
)
from efbv.types import (
    Algorithm,
    Dependence,
    EngineState,
    HInit,
    Mode,
    RoundRecord,
)


def _config(spec, **kwargs):
    kwargs.setdefault("rounds", 20)
    kwargs.setdefault("seed", 3)
    return RunConfig(compressor=spec, **kwargs)


def _final_iterates(sim):
    states = []
    sim.run(callback=lambda s: states.append(s.copy()))
    return states


@pytest.fixture
def simulate(convex_problem, convex_reference):
    """run() on the convex problem with its cached reference."""

    def _run(cfg):
        return run(cfg, convex_problem, convex_reference)

    return _run


def _record(t, f_gap, bits=0.0):
    return RoundRecord(
        t=t,
        bits_per_node=bits,
        f_gap=f_gap,
        grad_norm_sq=0.0,
        lyapunov=f_gap,
        control_residual=0.0,
    )


# -- configuration ------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"rounds": -1},
        {"seed": -2},
        {"lam": 0.0},
        {"nu": 1.5},
        {"gamma": 0.0},
        {"cadence": 0},
        {"bits_per_coordinate": 0},
    ],
)
def test_run_config_validation(kwargs, comp_spec):
    """Out-of-range run settings are configuration errors."""
    with pytest.raises(ConfigurationError):
        RunConfig(compressor=comp_spec, **kwargs)


def test_dimension_mismatch(convex_problem):
    """The compressor dimension must match the problem's."""
    with pytest.raises(ConfigurationError):
        Simulator(_config(CompressorSpec.rand_k(5, 1)), convex_problem)


def test_regularizer_requires_kl_mode(l1_problem, comp_spec):
    """A nonsmooth regularizer is only accepted in KL mode."""
    with pytest.raises(ConfigurationError):
        Simulator(_config(comp_spec), l1_problem)
    sim = Simulator(_config(comp_spec, mode=Mode.KL), l1_problem)
    assert sim.gamma > 0


def test_nonconvex_penalty_requires_nonconvex_mode(
    nonconvex_problem, comp_spec
):
    """The nonconvex penalty needs nonconvex mode."""
    with pytest.raises(ConfigurationError):
        Simulator(_config(comp_spec), nonconvex_problem)
    Simulator(_config(comp_spec, mode=Mode.NONCONVEX), nonconvex_problem)


def test_simulator_exposes_tuned_constants(convex_problem, comp_spec):
    """The simulator uses the tuned lam, nu and gamma."""
    sim = Simulator(_config(comp_spec), convex_problem)
    assert sim.lam == pytest.approx(sim.tuned.lam)
    assert 0 < sim.lam < sim.nu <= 1.0
    assert sim.gamma == sim.tuned.gamma


# -- initialization -----------------------------------------------


def test_init_state_defaults(convex_problem, comp_spec):
    """Zero start: x, h_i and h are all zero."""
    state = init(_config(comp_spec), convex_problem)
    assert state.t == 0
    assert state.bits_total == 0
    np.testing.assert_array_equal(state.x, np.zeros(20))
    np.testing.assert_array_equal(state.h_list, np.zeros((10, 20)))
    np.testing.assert_array_equal(state.h, np.zeros(20))


def test_init_state_local_gradient(convex_problem, comp_spec):
    """h_i starts at grad f_i(x0) and h at their mean."""
    x0 = tuple(np.linspace(-0.1, 0.1, 20))
    cfg = _config(comp_spec, h_init=HInit.LOCAL_GRADIENT, x0=x0)
    state = init(cfg, convex_problem)
    grads = convex_problem.local_gradients(np.asarray(x0))
    np.testing.assert_allclose(state.h_list, grads)
    np.testing.assert_allclose(state.h, grads.mean(axis=0))


def test_init_state_rejects_bad_x0(convex_problem, comp_spec):
    """x0 must have length d."""
    with pytest.raises(ConfigurationError):
        init(_config(comp_spec, x0=(0.0, 1.0)), convex_problem)


# -- rounds -------------------------------------------------------


def test_identity_round_is_gradient_descent(convex_problem):
    """No compression: one round is x - gamma grad f(x)."""
    cfg = _config(CompressorSpec.identity(20))
    sim = Simulator(cfg, convex_problem, auto_reference=False)
    state = sim.init_state()
    new, record = sim.step(state)
    grad = convex_problem.gradient(state.x)
    np.testing.assert_allclose(new.x, -sim.gamma * grad, atol=1e-15)
    np.testing.assert_allclose(new.h, grad, atol=1e-15)
    assert record is None
    assert new.bits_total == 10 * 20 * 64


def test_step_does_not_mutate_input(convex_problem, comp_spec):
    """step() returns a new state and leaves its input alone."""
    sim = Simulator(_config(comp_spec), convex_problem)
    state = sim.init_state()
    before = state.copy()
    sim.step(state)
    np.testing.assert_array_equal(state.x, before.x)
    np.testing.assert_array_equal(state.h_list, before.h_list)
    assert state.t == 0


def test_server_aggregate_tracks_worker_mean(
    convex_problem, convex_reference, comp_spec
):
    """h stays the mean of the h_i."""
    sim = Simulator(_config(comp_spec), convex_problem, convex_reference)
    state = sim.init_state()
    for _ in range(15):
        state, _ = sim.step(state)
    np.testing.assert_allclose(
        state.h, state.h_list.mean(axis=0), atol=1e-12
    )


def test_exact_control_variates_give_exact_gradient(
    convex_problem, comp_spec
):
    """h_i = grad f_i makes every message empty."""
    cfg = _config(comp_spec, h_init=HInit.LOCAL_GRADIENT)
    sim = Simulator(cfg, convex_problem)
    state = sim.init_state()
    np.testing.assert_allclose(
        sim.gradient_estimate(state, 0),
        convex_problem.gradient(state.x),
    )
    new, _ = sim.step(state)
    assert new.bits_total == 0


def test_bits_per_round_for_comp(simulate, comp_spec):
    """comp-(2,10) sends 2 coordinates per worker per round."""
    records = simulate(_config(comp_spec, cadence=5))
    for rec in records:
        assert rec.bits_per_node == pytest.approx(2 * 64 * rec.t)


def test_bits_per_coordinate_setting(simulate, comp_spec):
    """The wire width scales the bit count."""
    cfg = _config(comp_spec, bits_per_coordinate=32, rounds=4)
    records = simulate(cfg)
    assert records[-1].bits_per_node == pytest.approx(4 * 2 * 32)


def test_joint_nice_sampling_bits(simulate):
    """Exactly m workers transmit every round."""
    spec = CompressorSpec.nice_sampling(20, 2, 10)
    cfg = _config(spec, dependence=Dependence.JOINT_NICE, cadence=1)
    records = simulate(cfg)
    for rec in records:
        assert rec.bits_per_node == pytest.approx(2 * 20 * 64 * rec.t / 10)


def test_record_schedule(simulate, comp_spec):
    """Records land on the cadence plus the final round."""
    records = simulate(_config(comp_spec, rounds=25))
    assert [r.t for r in records] == [0, 10, 20, 25]


def test_zero_rounds(simulate, comp_spec):
    """T = 0 records only the starting point."""
    records = simulate(_config(comp_spec, rounds=0))
    assert [r.t for r in records] == [0]


def test_run_is_deterministic(simulate, comp_spec):
    """Equal seeds give equal traces; another seed differs."""
    a = simulate(_config(comp_spec))
    b = simulate(_config(comp_spec))
    c = simulate(_config(comp_spec, seed=4))
    assert a == b
    assert a != c


def test_module_step_matches_simulator(convex_problem, comp_spec):
    """The module-level step matches Simulator.step."""
    cfg = _config(comp_spec)
    sim = Simulator(cfg, convex_problem)
    state = sim.init_state()
    a, _ = sim.step(state)
    b, _ = step(state, cfg, convex_problem)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.bits_total == b.bits_total


def test_run_converges(convex_problem, convex_reference, comp_spec):
    """The gap and the Lyapunov function decrease over a run."""
    cfg = _config(comp_spec, rounds=400, cadence=100)
    records = run(cfg, convex_problem, convex_reference)
    assert records[-1].f_gap < records[0].f_gap
    assert records[-1].lyapunov < records[0].lyapunov
    assert all(r.f_gap >= -1e-9 for r in records)


def test_final_state_is_kept(convex_problem, convex_reference, comp_spec):
    """The last state is available after run()."""
    sim = Simulator(
        _config(comp_spec, rounds=3), convex_problem, convex_reference
    )
    assert sim.final_state is None
    sim.run()
    assert sim.final_state is not None
    assert sim.final_state.t == 3


def test_divergence_is_reported(convex_problem, comp_spec):
    """A blown-up iterate raises with the round number."""
    sim = Simulator(_config(comp_spec), convex_problem)
    state = sim.init_state()
    blown = EngineState(
        x=np.full(20, 1e12),
        h_list=state.h_list,
        h=state.h,
        seed=state.seed,
    )
    with pytest.raises(DivergenceError) as info:
        sim.step(blown)
    assert info.value.t == 1


# -- specializations ----------------------------------------------


def test_ef_bv_with_ef21_scalings_is_ef21(
    convex_problem, convex_reference, comp_spec
):
    """EF-BV with nu = lam and EF21's gamma replays EF21 bit for bit."""
    ef21 = Simulator(
        _config(comp_spec, algorithm=Algorithm.EF21),
        convex_problem,
        convex_reference,
    )
    lam = ef21.lam
    efbv = Simulator(
        _config(comp_spec, lam=lam, nu=lam, gamma=ef21.gamma),
        convex_problem,
        convex_reference,
    )
    assert efbv.gamma == ef21.gamma
    for a, b in zip(_final_iterates(ef21), _final_iterates(efbv)):
        assert np.array_equal(a.x, b.x)
        assert a.bits_total == b.bits_total


def test_ef21_estimate_is_new_control_variate(
    convex_problem, convex_reference, comp_spec
):
    """With nu = lam the step uses g^t = h^{t+1} at every round."""
    cfg = _config(comp_spec, algorithm=Algorithm.EF21)
    sim = Simulator(cfg, convex_problem, convex_reference)
    state = sim.init_state()
    assert state.last_g is None
    for _ in range(10):
        state, _ = sim.step(state)
        assert np.linalg.norm(state.last_g - state.h) == 0.0


def test_ef_bv_with_unit_nu_is_diana(simulate, comp_spec):
    """EF-BV with nu = 1 is DIANA."""
    diana = _config(comp_spec, algorithm=Algorithm.DIANA)
    efbv = _config(comp_spec, nu=1.0)
    assert simulate(diana) == simulate(efbv)


def test_diana_estimate_is_unbiased(convex_problem):
    """DIANA's gradient estimate averages to the true gradient."""
    spec = CompressorSpec.rand_k(20, 5)
    cfg = _config(spec, algorithm=Algorithm.DIANA)
    sim = Simulator(cfg, convex_problem, auto_reference=False)
    state = sim.init_state()
    draws = 2000
    mean = np.mean(
        [sim.gradient_estimate(state, k) for k in range(draws)], axis=0
    )
    grads = convex_problem.local_gradients(state.x)
    # E||g - grad||^2 = (1/n^2) sum_i omega ||grad f_i||^2 for rand-k
    variance = 3.0 * float(np.sum(grads * grads)) / 10**2
    err = mean - convex_problem.gradient(state.x)
    assert float(err @ err) <= 10.0 * variance / draws


# -- Lyapunov and reference ---------------------------------------


def test_missing_reference(convex_problem, comp_spec):
    """Lyapunov values need a reference solution."""
    sim = Simulator(_config(comp_spec), convex_problem, auto_reference=False)
    with pytest.raises(MissingReferenceError):
        sim.reference
    with pytest.raises(MissingReferenceError):
        lyapunov(sim.init_state(), convex_problem, sim.tuned, None)


def test_lyapunov_adds_weighted_residual(
    convex_problem, convex_reference, comp_spec
):
    """Psi is the gap plus the weighted control residual."""
    sim = Simulator(_config(comp_spec), convex_problem, convex_reference)
    state = sim.init_state()
    gap = convex_problem.value(state.x) - convex_reference.optimum
    expected = gap + sim.tuned.lyapunov_weight * sim.control_residual(
        state
    )
    assert sim.lyapunov(state) == pytest.approx(expected)
    assert sim.record(state).lyapunov == pytest.approx(expected)


def test_lyapunov_without_control_term(convex_problem, convex_reference):
    """Identity compression: Psi is the optimality gap."""
    sim = Simulator(
        _config(CompressorSpec.identity(20)),
        convex_problem,
        convex_reference,
    )
    state = sim.init_state()
    assert sim.lyapunov(state) == pytest.approx(
        convex_problem.value(state.x) - convex_reference.optimum
    )


# -- trace helpers ------------------------------------------------


def test_average_records():
    """Averaging truncates to the shortest trace."""
    a = [_record(0, 1.0), _record(10, 0.5)]
    b = [_record(0, 3.0), _record(10, 1.5), _record(20, 0.1)]
    avg = average_records([a, b])
    assert [r.t for r in avg] == [0, 10]
    assert avg[1].f_gap == pytest.approx(1.0)


def test_average_records_rejects_misaligned():
    """Misaligned or empty trace sets are rejected."""
    with pytest.raises(ConfigurationError):
        average_records([[_record(0, 1.0)], [_record(5, 1.0)]])
    with pytest.raises(ConfigurationError):
        average_records([])


def test_bits_to_target():
    """Bits at the first record under the target, or None."""
    trace = [_record(0, 1.0, 0), _record(1, 1e-3, 8), _record(2, 1e-7, 16)]
    assert bits_to_target(trace, 1e-6) == 16
    assert bits_to_target(trace, 1e-9) is None
