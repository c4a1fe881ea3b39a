import numpy as np
import pytest

from matchlab import (
    GlitchSpec,
    Involution,
    Platform,
    ProductionFunction,
    SearchParams,
    design,
    enumerate_involutions,
    envelope_transfers,
    first_best_dse,
    first_best_platform,
    first_best_wage_coefficient,
    glitch,
    informational_rent,
    involution_rent,
    make_grid,
    optimal_exclusion,
    perfect_info_transfers,
    private_info_transfers,
    solve_dse,
    transfer_coefficient,
)

from conftest import cubic_production


# ---------------------------------------------------------------------------
# assortative platforms and their closed forms
# ---------------------------------------------------------------------------


def test_first_best_platform_is_identity():
    p = first_best_platform(make_grid(4), 0)
    assert np.array_equal(p.kernel, np.eye(4))
    assert p.consistency_defect() == 0.0


def test_first_best_platform_with_cutoff():
    p = first_best_platform(make_grid(4), 2)
    assert np.array_equal(p.kernel, np.eye(2))
    assert p.included.tolist() == [2, 3]


def test_first_best_dse_reference_values(params, f_xy):
    g = make_grid(40)
    st = first_best_dse(g, f_xy, params, 0)
    assert np.allclose(st.w, g.nodes ** 2 / 5.3, atol=1e-15)
    assert np.all(st.u == 1.0 / 3.0)
    assert st.bellman_residual < 1e-15


def test_first_best_dse_agrees_with_solver(params, f_xy):
    g = make_grid(64)
    closed = first_best_dse(g, f_xy, params, 5)
    solved = solve_dse(first_best_platform(g, 5), f_xy, params)
    assert np.max(np.abs(closed.w - solved.w)) < 1e-8
    assert np.max(np.abs(closed.u - solved.u)) < 1e-10


def test_first_best_dse_zero_production(params):
    g = make_grid(4)
    f0 = ProductionFunction.tabulated(g, np.zeros((4, 4)))
    assert np.all(first_best_dse(g, f0, params, 0).w == 0.0)


def test_perfect_info_extracts_everything(params, f_xy):
    g = make_grid(16)
    st = first_best_dse(g, f_xy, params, 0)
    t = perfect_info_transfers(st)
    assert np.array_equal(t, st.w)
    assert np.min(st.w - t) == 0.0
    profit = float(np.sum(t) * g.mass)
    assert profit == pytest.approx(np.sum(st.w) / 16, abs=1e-18)


# ---------------------------------------------------------------------------
# transfers
# ---------------------------------------------------------------------------


def test_envelope_on_constant_production(params):
    g = make_grid(12)
    fc = ProductionFunction.tabulated(g, np.full((12, 12), 0.7))
    st = first_best_dse(g, fc, params, 0)
    t = envelope_transfers(first_best_platform(g, 0), fc, params, st)
    assert np.array_equal(t, st.w)


def test_envelope_four_node_hand_computation(params, f_xy):
    """Trapezoid cumulation recomputed with bare scalars as the oracle."""
    g = make_grid(4)
    st = first_best_dse(g, f_xy, params, 0)
    t = envelope_transfers(first_best_platform(g, 0), f_xy, params, st)

    x = [0.125, 0.375, 0.625, 0.875]
    coeff = first_best_wage_coefficient(params)
    w = [coeff * xi * xi for xi in x]
    h = 0.25
    # wage slope: 3-point one-sided at the ends, centered inside
    wp = [(-3 * w[0] + 4 * w[1] - w[2]) / (2 * h),
          (w[2] - w[0]) / (2 * h),
          (w[3] - w[1]) / (2 * h),
          (3 * w[3] - 4 * w[2] + w[1]) / (2 * h)]
    theta_u = params.theta / 3.0
    slope = [theta_u * (x[i] - wp[i]) for i in range(4)]
    expected = [w[0]]
    cum = 0.0
    for i in range(1, 4):
        cum += 0.5 * (slope[i - 1] + slope[i]) * h
        expected.append(w[i] - cum)
    assert np.allclose(t, expected, atol=1e-15)


def test_envelope_requires_equilibrium(params, f_xy):
    g = make_grid(8)
    st = first_best_dse(g, f_xy, params, 0)
    from matchlab.core import DSEState

    broken = DSEState(w=st.w * 2.0, u=st.u.copy(), M=st.M.copy(),
                      bellman_residual=0, balance_residual=0)
    with pytest.raises(ValueError, match="does not solve"):
        envelope_transfers(first_best_platform(g, 0), f_xy, params, broken)


def test_private_info_coefficient_reference(params, f_xy):
    # theta = 10/11 at the reference rates, so the transfer scale is 5/53
    assert params.theta == pytest.approx(10.0 / 11.0, abs=1e-15)
    assert transfer_coefficient(params) == pytest.approx(5.0 / 53.0, abs=1e-15)
    g = make_grid(5)  # cutoff node value exactly 0.5
    t = private_info_transfers(g, f_xy, params, 2)
    expected = np.where(np.arange(5) >= 2, 5.0 / 53.0 * (g.nodes ** 2 + 0.25), 0.0)
    assert np.allclose(t, expected, atol=1e-15)


def test_private_info_binds_at_cutoff(params, f_xy):
    g = make_grid(5)
    t = private_info_transfers(g, f_xy, params, 2)
    w_cut = first_best_wage_coefficient(params) * 0.25
    assert t[2] == pytest.approx(w_cut, abs=1e-16)


def test_private_info_zero_production(params):
    g = make_grid(4)
    f0 = ProductionFunction.tabulated(g, np.zeros((4, 4)))
    assert np.all(private_info_transfers(g, f0, params, 1) == 0.0)


def test_participation_slack_nondecreasing(params, f_xy):
    # w - t = (w(x) - w(x_tilde)) / 2: nonnegative and nondecreasing
    g = make_grid(200)
    k = 60
    st = first_best_dse(g, f_xy, params, k)
    t = private_info_transfers(g, f_xy, params, k)
    slack = st.w[k:] - t[k:]
    assert slack[0] == pytest.approx(0.0, abs=1e-16)
    assert np.all(slack >= -1e-16)
    assert np.all(np.diff(slack) >= 0)


@pytest.mark.parametrize("n", [125, 250])
def test_envelope_matches_closed_form_under_refinement(params, n):
    g = make_grid(n)
    fc = cubic_production(g)
    st = first_best_dse(g, fc, params, 0)
    t_env = envelope_transfers(first_best_platform(g, 0), fc, params, st)
    t_closed = private_info_transfers(g, fc, params, 0)
    assert np.max(np.abs(t_env - t_closed)) <= 5.0 / n ** 2


# ---------------------------------------------------------------------------
# informational rent
# ---------------------------------------------------------------------------


def test_rent_against_analytic_derivative(params, f_xy):
    """Oracle: differentiate the closed-form wage analytically,
    m(x) = (1 - x) theta u (f_x(x,x) - w'(x)) with w'(x) = 2 coeff x."""
    g = make_grid(1000)
    st = first_best_dse(g, f_xy, params, 0)
    rent, total = informational_rent(first_best_platform(g, 0), f_xy, params, st)
    coeff = first_best_wage_coefficient(params)
    theta_u = params.theta / 3.0
    analytic = (1 - g.nodes) * theta_u * (g.nodes - 2 * coeff * g.nodes)
    assert np.max(np.abs(rent - analytic)) < 1e-6
    assert total == pytest.approx(np.sum(analytic) * g.mass, abs=1e-6)


def test_rent_constant_production(params):
    g = make_grid(10)
    fc = ProductionFunction.tabulated(g, np.full((10, 10), 0.3))
    st = first_best_dse(g, fc, params, 0)
    rent, total = informational_rent(first_best_platform(g, 0), fc, params, st)
    assert np.all(rent == 0.0)
    assert total == 0.0


def test_rent_vanishes_at_top(params, f_xy):
    g = make_grid(1000)
    st = first_best_dse(g, f_xy, params, 0)
    rent, _ = informational_rent(first_best_platform(g, 0), f_xy, params, st)
    # the (1 - x) weight kills the top node as the grid refines
    assert rent[-1] < 1e-4
    assert rent[-1] < rent[500]


# ---------------------------------------------------------------------------
# involutions
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("m,count", [(1, 1), (2, 2), (3, 4), (4, 10), (5, 26),
                                     (6, 76), (7, 232)])
def test_involution_counts(m, count):
    perms = list(enumerate_involutions(m))
    assert len(perms) == count
    assert len(set(perms)) == count
    for perm in perms:
        assert all(perm[perm[i]] == i for i in range(m))


def test_involution_classification():
    assert Involution.from_perm((0, 1, 2)).monotone == "increasing"
    assert Involution.from_perm((2, 1, 0)).monotone == "decreasing"
    assert Involution.from_perm((0, 2, 1)).monotone == "none"
    with pytest.raises(ValueError, match="involution"):
        Involution.from_perm((1, 2, 0))


def test_involution_rent_identity_matches_rent_total(params, f_xy):
    g = make_grid(100)
    st = first_best_dse(g, f_xy, params, 0)
    _, total = informational_rent(first_best_platform(g, 0), f_xy, params, st)
    ident = involution_rent(g, f_xy, params, 0, tuple(range(100)))
    assert ident == pytest.approx(total, abs=1e-4)


def test_reversal_costs_more_than_identity(params, f_xy):
    g = make_grid(40)
    ident = involution_rent(g, f_xy, params, 0, tuple(range(40)))
    reversal = involution_rent(g, f_xy, params, 0, tuple(range(39, -1, -1)))
    assert reversal > ident


def test_identity_minimizes_over_all_involutions(params, f_xy):
    g = make_grid(5)
    rents = {perm: involution_rent(g, f_xy, params, 0, perm)
             for perm in enumerate_involutions(5)}
    assert min(rents, key=rents.get) == tuple(range(5))


def test_involution_rent_rejects_non_involution(params, f_xy):
    with pytest.raises(ValueError):
        involution_rent(make_grid(3), f_xy, params, 0, (1, 2, 0))


# ---------------------------------------------------------------------------
# exclusion
# ---------------------------------------------------------------------------


def test_multiplicative_exclusion_example(f_xy):
    g = make_grid(1000)
    ex = optimal_exclusion(g, f_xy)
    assert abs(ex.x_tilde - 0.5) <= 1.0 / 1000
    assert ex.profit_curve[0] == pytest.approx(1.0 / 3.0, abs=2e-3)
    k_half = int(np.searchsorted(g.nodes, 0.5))
    assert ex.profit_curve[k_half] == pytest.approx(5.0 / 12.0, abs=2e-3)
    assert ex.cutoff_index == int(np.argmax(ex.profit_curve))
    assert not ex.full_inclusion  # phi has a sign change


def test_constant_bonus_makes_full_inclusion_optimal():
    g = make_grid(1000)
    fc = ProductionFunction.multiplicative_plus_constant(0.2)
    ex = optimal_exclusion(g, fc)
    assert ex.cutoff_index == 0
    assert ex.full_inclusion


def test_constant_production_full_inclusion():
    g = make_grid(50)
    f1 = ProductionFunction.tabulated(g, np.ones((50, 50)))
    ex = optimal_exclusion(g, f1)
    assert ex.cutoff_index == 0
    assert ex.profit_curve[0] == pytest.approx(2.0, abs=1e-12)
    assert ex.full_inclusion


def test_strictly_increasing_virtual_output_unique_cutoff():
    # f = xy + (x + y)/2 has phi = 2x^2 + x/2 - 1/2, strictly increasing,
    # with its root at (sqrt(17) - 1) / 8
    n = 200
    g = make_grid(n)
    x = g.nodes
    table = np.add.outer(x, x) / 2.0 + np.outer(x, x)
    dx = np.broadcast_to(x[None, :], (n, n)) + 0.5
    f3 = ProductionFunction.tabulated(g, table, dx_table=dx)
    ex = optimal_exclusion(g, f3)
    assert ex.unique
    root = (np.sqrt(17.0) - 1.0) / 8.0
    assert abs(ex.x_tilde - root) <= 1.0 / n
    sign_changes = np.where(np.diff(np.sign(ex.phi)) > 0)[0]
    assert len(sign_changes) == 1
    assert abs(sign_changes[0] + 1 - ex.cutoff_index) <= 1


# ---------------------------------------------------------------------------
# glitching
# ---------------------------------------------------------------------------


def test_glitch_limits(f_xy):
    g = make_grid(4)
    base = first_best_platform(g, 2)
    padded = np.eye(4)  # excluded nodes keep self-search rows
    assert np.array_equal(glitch(base, 0.0).kernel, padded)
    assert np.array_equal(glitch(base, 1.0).kernel, np.full((4, 4), 0.25))


def test_glitch_mixture_arithmetic():
    base = first_best_platform(make_grid(10), 0)
    mixed = glitch(base, GlitchSpec(0.01))
    assert mixed.kernel[0, 0] == pytest.approx(0.991, abs=1e-15)
    assert mixed.kernel[0, 1] == pytest.approx(0.001, abs=1e-18)
    assert mixed.cutoff == 0
    assert mixed.is_consistent
    assert np.allclose(mixed.kernel.sum(axis=1), 1.0, atol=1e-14)


def test_glitch_requires_consistency():
    g = make_grid(3)
    kernel = np.eye(3)
    kernel[0, 0] -= 1e-3
    kernel[0, 1] += 1e-3
    p = Platform(grid=g, cutoff=0, kernel=kernel, transfers=np.zeros(3))
    with pytest.raises(ValueError, match="consistent"):
        glitch(p, 0.5)


def test_glitch_epsilon_range():
    base = first_best_platform(make_grid(3), 0)
    with pytest.raises(ValueError):
        glitch(base, 1.5)


# ---------------------------------------------------------------------------
# end-to-end design
# ---------------------------------------------------------------------------


def test_design_accounting(params, f_xy):
    g = make_grid(100)
    result = design(g, f_xy, params, cutoff="auto")
    assert result.x_tilde == optimal_exclusion(g, f_xy).x_tilde
    k = result.platform.cutoff
    assert result.profit == float(np.sum(result.platform.transfers[k:]) * g.mass)
    assert result.rent_total >= 0.0


def test_design_fixed_cutoff(params, f_xy):
    g = make_grid(10)
    result = design(g, f_xy, params, cutoff=3)
    assert result.platform.cutoff == 3
    assert np.all(result.platform.transfers[:3] == 0.0)


# ---------------------------------------------------------------------------
# comparative statics of the closed forms
# ---------------------------------------------------------------------------


def test_meeting_rate_monotonicity(f_xy):
    g = make_grid(30)
    for alpha in (0.5, 1.0, 2.0):
        for r in (0.5, 1.0, 2.0):
            lo = first_best_dse(g, f_xy, SearchParams(1.0, alpha, r), 0)
            hi = first_best_dse(g, f_xy, SearchParams(2.0, alpha, r), 0)
            assert np.all(hi.w > lo.w)      # f(x,x) > 0 on the whole grid
            assert np.all(hi.u < lo.u)


def test_divorce_rate_monotonicity_matches_discount_side(f_xy):
    # the wage scale rises in alpha below the discount rate and falls above
    # it; tested where the two-sided comparison is exact (rho equal to r)
    g = make_grid(8)
    fdiag = g.nodes ** 2

    def scale(rho, alpha, r):
        return first_best_wage_coefficient(SearchParams(rho, alpha, r))

    assert scale(2.0, 1.0, 2.0) > scale(2.0, 0.5, 2.0)      # r > alpha: rising
    assert scale(0.5, 2.0, 0.5) < scale(0.5, 1.0, 0.5)      # r < alpha: falling
    # at rho = alpha = r the alpha-derivative vanishes: symmetric perturbation
    h = 1e-4
    gap = abs(scale(1.0, 1.0 + h, 1.0) - scale(1.0, 1.0 - h, 1.0))
    assert gap <= 1e-12
