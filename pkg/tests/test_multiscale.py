import numpy as np
import pytest

from hfa import (
    Box,
    LatticeBox,
    PotentialField,
    ResolventSingular,
    ResonantBox,
    ScfConfig,
    border_operator,
    build_hamiltonian,
    calibrate_truncation_decay,
    decompose,
    geometric_resolvent_residual,
    good_box_check,
    good_box_probability,
    hatted_hamiltonian,
    interaction_kernel_nnn,
    is_resonant,
    operator_norm,
    restrict,
    solve_fixed_point,
)
from hfa.errors import HfaError
from hfa.model import derived_seed
from hfa.multiscale import resonance_threshold

from conftest import chain_model, random_symmetric


def box_on_chain(length, center, radius):
    return Box(LatticeBox((length,)), (center,), radius)


class TestRestrict:
    def test_whole_domain(self):
        k = random_symmetric(5, seed=1)
        box = box_on_chain(5, 2, 10)
        assert np.array_equal(restrict(k, box), k)

    def test_single_site(self):
        k = random_symmetric(5, seed=1)
        box = box_on_chain(5, 3, 0)
        assert np.array_equal(restrict(k, box), [[k[3, 3]]])

    def test_central_block(self):
        k = random_symmetric(4, seed=2)
        box = box_on_chain(4, 1, 0)
        sub = restrict(k, Box(LatticeBox((4,)), (1,), 1))
        assert np.array_equal(sub, k[0:3, 0:3])

    def test_center_outside_domain_rejected(self):
        with pytest.raises(ValueError):
            box_on_chain(4, 9, 1)


class TestBorderOperator:
    def test_whole_domain_has_no_border(self):
        k = random_symmetric(6, seed=3)
        gamma = border_operator(k, box_on_chain(6, 2, 10))
        assert gamma.nnz == 0

    def test_nearest_neighbour_border_has_two_entries(self):
        box, pot, _, h = chain_model(10, 1.0, 0.5, 0.0, seed=4)
        sub = Box(box, (0,), 4)  # sites 0..4
        gamma = border_operator(h, sub).toarray()
        expected = np.zeros((10, 10))
        expected[4, 5] = h.matrix[4, 5]
        expected[5, 4] = h.matrix[5, 4]
        assert np.array_equal(gamma, expected)

    def test_interaction_tail_widens_the_border(self):
        # dress the hopping with an exchange tail of range 3
        box, pot, kernel, h = chain_model(30, 1.0, 1.0, 2.0, seed=4)
        result = solve_fixed_point(h, kernel, ScfConfig(mu_policy="mid_gap_linear"))
        k = result.h_min
        sub = Box(box, (10,), 5)
        gamma = border_operator(k, sub).toarray()
        inside = sub.inside_mask()
        expected = np.where(inside[:, None] ^ inside[None, :], k.matrix, 0.0)
        assert np.array_equal(gamma, expected)
        crossings = np.abs(np.subtract.outer(np.arange(30), np.arange(30)))[gamma != 0]
        assert crossings.max() == 3

    def test_decomposition_identity_is_exact(self):
        for seed in range(10):
            n = 6 + seed
            k = random_symmetric(n, seed)
            box = box_on_chain(n, seed % n, 1 + seed % 3)
            inner, gamma, outer = decompose(k, box)
            assert np.array_equal(inner + gamma.toarray() + outer, k)


class TestGeometricResolventIdentity:
    def test_small_random_instances(self):
        k = random_symmetric(8, seed=5)
        box = box_on_chain(8, 2, 2)  # sites 0..4
        inside = box.inside_mask()
        lam = 0.31 + 0.92j
        for x in np.nonzero(inside)[0]:
            for y in np.nonzero(~inside)[0]:
                assert geometric_resolvent_residual(k, box, lam, int(x), int(y)) < 1e-9

    def test_diagonal_operator_both_sides_vanish(self):
        k = np.diag([1.0, 2.0, 3.0, 4.0])
        box = box_on_chain(4, 0, 1)
        assert geometric_resolvent_residual(k, box, 0.5 + 1.0j, 0, 3) < 1e-15

    def test_disordered_chain_at_imaginary_energy(self):
        box, pot, _, h = chain_model(50, 1.0, 1.0, 0.0, seed=6)
        sub = Box(box, (20,), 8)
        assert geometric_resolvent_residual(h, sub, 1.0j, 20, 40) < 1e-9

    def test_rejects_lambda_on_spectrum(self):
        k = np.diag([1.0, 2.0, 3.0])
        box = box_on_chain(3, 0, 0)
        with pytest.raises(ResolventSingular):
            geometric_resolvent_residual(k, box, 2.0, 0, 2)

    def test_probe_sides_validated(self):
        k = random_symmetric(6, seed=1)
        box = box_on_chain(6, 1, 1)
        with pytest.raises(ValueError):
            geometric_resolvent_residual(k, box, 1.0j, 5, 4)


class TestHattedHamiltonian:
    def test_without_disorder_matches_restriction(self):
        length = 60
        box = LatticeBox((length,))
        pot = PotentialField.sample(box, 1.0, 0.0, seed=7)
        kernel = interaction_kernel_nnn(2.0)
        config = ScfConfig(mu_policy="mid_gap_linear")
        full = solve_fixed_point(build_hamiltonian(box, pot), kernel, config)
        hatted = hatted_hamiltonian((30,), 10, pot, kernel, config)
        assert np.array_equal(hatted.matrix, restrict(full.h_min, hatted.box))

    def test_independent_of_exterior_disorder(self):
        length = 80
        box = LatticeBox((length,))
        kernel = interaction_kernel_nnn(2.0)
        config = ScfConfig(mu_policy="mid_gap_linear")
        base = PotentialField.sample(box, 1.0, 1.0, seed=8)
        resampled_tail = PotentialField.sample(box, 1.0, 1.0, seed=9)
        outer = Box(box, (40,), 20).inside_mask()
        mixed = PotentialField(
            box=box,
            v0=base.v0,
            v_omega=np.where(outer, base.v_omega, resampled_tail.v_omega),
            xi=base.xi,
            w=base.w,
            seed=base.seed,
        )
        a = hatted_hamiltonian((40,), 10, base, kernel, config)
        b = hatted_hamiltonian((40,), 10, mixed, kernel, config)
        assert np.max(np.abs(a.matrix - b.matrix)) < 1e-12

    def test_truncation_error_decays_exponentially(self):
        length = 160
        box = LatticeBox((length,))
        pot = PotentialField.sample(box, 1.0, 1.0, seed=10)
        kernel = interaction_kernel_nnn(2.0)
        config = ScfConfig(mu_policy="mid_gap_linear")
        full = solve_fixed_point(build_hamiltonian(box, pot), kernel, config)
        cal = calibrate_truncation_decay(full, pot, kernel, (80,), (4, 8, 12, 16), config)
        assert cal.nu > 0
        assert cal.errors[0] > cal.errors[-1]
        assert cal.r_squared > 0.8

    def test_clipped_localisation_ball_rejected(self):
        box = LatticeBox((20,))
        pot = PotentialField.sample(box, 1.0, 1.0, seed=1)
        with pytest.raises(ValueError):
            hatted_hamiltonian((10,), 8, pot, interaction_kernel_nnn(0.0), ScfConfig())


def small_hatted(w, seed, radius=4, q=0.0, xi=0.0):
    length = 4 * radius + 2
    box = LatticeBox((length,))
    pot = PotentialField.sample(box, xi, w, seed)
    config = ScfConfig(mu_policy="aufbau", n_occupied=length // 2)
    return hatted_hamiltonian((2 * radius,), radius, pot, interaction_kernel_nnn(q), config)


class TestResonance:
    def test_far_energy_not_resonant(self):
        hatted = small_hatted(w=1.0, seed=2)
        lam = float(np.max(hatted.spectrum())) + 10.0
        verdict = is_resonant(lam, hatted, big_d=1.0, nu=0.5)
        assert not verdict.resonant
        assert verdict.margin == pytest.approx(10.0, abs=0.5)

    def test_exact_eigenvalue_is_resonant(self):
        hatted = small_hatted(w=1.0, seed=2)
        lam = float(hatted.spectrum()[3])
        assert is_resonant(lam, hatted, big_d=1.0, nu=0.5).resonant

    def test_threshold_monotone_in_d_and_radius(self):
        assert resonance_threshold(9, 2.0, 0.5) > resonance_threshold(9, 1.0, 0.5)
        assert resonance_threshold(4, 1.0, 0.5) > resonance_threshold(9, 1.0, 0.5)
        # enlarging D can only flip verdicts towards resonant
        hatted = small_hatted(w=1.0, seed=3)
        lam = float(hatted.spectrum()[0]) + 0.05
        weak = is_resonant(lam, hatted, big_d=1e-6, nu=1.0)
        strong = is_resonant(lam, hatted, big_d=10.0, nu=0.01)
        assert strong.threshold > weak.threshold
        if weak.resonant:
            assert strong.resonant

    def test_resonance_frequency_shrinks_with_disorder(self):
        lam = 1.0
        freqs = {}
        for w in (0.5, 4.0):
            hits = 0
            for i in range(200):
                hatted = small_hatted(w=w, seed=derived_seed(123, i))
                hits += is_resonant(lam, hatted, big_d=0.1, nu=1.0).resonant
            freqs[w] = hits / 200
        assert freqs[4.0] < freqs[0.5]


class TestGoodBox:
    def test_zero_rate_checks_row_sums_against_one(self):
        hatted = small_hatted(w=0.5, seed=4, radius=6, q=0.0, xi=2.0)
        lam = float(np.max(hatted.spectrum())) + 8.0
        report = good_box_check(lam, hatted, zeta_box=0.0, big_d=0.1, nu=1.0)
        # resolvent at a far energy is tiny, so every probe passes the <= 1 bound
        assert report.good and report.n_probes > 0

    def test_gap_energy_passes_with_margin(self):
        length = 42
        box = LatticeBox((length,))
        pot = PotentialField.sample(box, 2.0, 0.5, seed=42)
        kernel = interaction_kernel_nnn(0.3)
        config = ScfConfig(mu_policy="mid_gap_linear")
        hatted = hatted_hamiltonian((20,), 10, pot, kernel, config)
        lam = hatted.result.mu
        report = good_box_check(lam, hatted, zeta_box=0.2, big_d=1.0, nu=0.5)
        assert report.good
        assert report.worst_margin > 0.01

    def test_resonant_box_rejected(self):
        hatted = small_hatted(w=1.0, seed=5)
        lam = float(hatted.spectrum()[2])
        with pytest.raises(ResonantBox):
            good_box_check(lam, hatted, zeta_box=0.1, big_d=1.0, nu=0.5)

    def test_strong_disorder_mostly_good(self):
        radius = 20
        length = 4 * radius + 2
        box = LatticeBox((length,))
        kernel = interaction_kernel_nnn(0.2)
        config = ScfConfig(mu_policy="aufbau", n_occupied=length // 2, algorithm="oda", max_iter=800)
        passes = fails = 0
        for i in range(100):
            pot = PotentialField.sample(box, 0.0, 8.0, derived_seed(321, i))
            try:
                hatted = hatted_hamiltonian((2 * radius,), radius, pot, kernel, config)
                report = good_box_check(4.0, hatted, zeta_box=0.1, big_d=0.5, nu=0.5)
                passes += report.good
                fails += not report.good
            except (ResonantBox, HfaError):
                continue
        assert passes > fails

    def test_pair_probability_deterministic_without_disorder(self):
        kernel = interaction_kernel_nnn(0.2)
        est = good_box_probability(
            lam=3.0,
            radius=5,
            zeta_box=0.1,
            n_samples=4,
            seed=0,
            xi=2.0,
            w=0.0,
            kernel=kernel,
            big_d=0.5,
            nu=0.5,
        )
        assert est.estimate in (0.0, 1.0)
        assert est.stderr == 0.0

    def test_pair_probability_near_one_in_the_gap(self):
        kernel = interaction_kernel_nnn(0.3)
        config = ScfConfig(mu_policy="mid_gap_linear")
        est = good_box_probability(
            lam=0.55,  # inside the xi=2, w=0.5 gap
            radius=8,
            zeta_box=0.2,
            n_samples=12,
            seed=3,
            xi=2.0,
            w=0.5,
            kernel=kernel,
            big_d=1.0,
            nu=0.5,
            config=config,
        )
        assert est.n_failed == 0
        assert est.estimate >= 0.9
