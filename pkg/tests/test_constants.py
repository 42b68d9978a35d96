import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palslab import (
    DomainError,
    LatticeModel,
    PhysicalConstants,
    n3_from_alpha,
    planck_identity_residual,
    planck_mass,
)
from palslab.constants import RESIDUAL_TOLERANCE


class TestSiteCount:
    def test_reference_alpha(self):
        n3 = n3_from_alpha(PhysicalConstants().alpha)
        assert n3 == pytest.approx(1.302e19, rel=1e-3)

    def test_unit_alpha(self):
        assert n3_from_alpha(1.0) == pytest.approx(
            2.0**4.5 / (3.0 * math.pi**2), rel=1e-12
        )

    def test_doubling_alpha_divides_by_512(self):
        a = PhysicalConstants().alpha
        assert n3_from_alpha(2 * a) * 512.0 == pytest.approx(
            n3_from_alpha(a), rel=1e-12
        )

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            n3_from_alpha(0.0)
        with pytest.raises(DomainError):
            n3_from_alpha(-0.5)

    @settings(max_examples=50, deadline=None)
    @given(
        alpha=st.floats(min_value=1e-4, max_value=0.9),
        scale=st.floats(min_value=0.5, max_value=2.0),
    )
    def test_homogeneity_degree_minus_nine(self, alpha, scale):
        assert n3_from_alpha(scale * alpha) == pytest.approx(
            n3_from_alpha(alpha) / scale**9, rel=1e-9
        )


class TestPlanckMass:
    def test_reference_value(self):
        assert planck_mass(PhysicalConstants()) == pytest.approx(2.176e-5, rel=1e-3)

    def test_quadrupling_g_halves(self):
        pc = PhysicalConstants()
        scaled = PhysicalConstants(
            alpha=pc.alpha, m_p=pc.m_p, m_e=pc.m_e, hbar=pc.hbar, c=pc.c, G=4.0 * pc.G
        )
        assert planck_mass(scaled) == pytest.approx(planck_mass(pc) / 2.0, rel=1e-12)

    def test_vanishing_hbar_limit(self):
        pc = PhysicalConstants()
        small = PhysicalConstants(
            alpha=pc.alpha, m_p=pc.m_p, m_e=pc.m_e, hbar=1e-300, c=pc.c, G=pc.G
        )
        assert planck_mass(small) < 1e-130

    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(min_value=0.25, max_value=4.0))
    def test_homogeneity(self, s):
        pc = PhysicalConstants()
        scaled = PhysicalConstants(
            alpha=pc.alpha,
            m_p=pc.m_p,
            m_e=pc.m_e,
            hbar=s * pc.hbar,
            c=s * pc.c,
            G=s * pc.G,
        )
        # degree 1/2 in hbar and c, -1/2 in G: net sqrt(s)
        assert planck_mass(scaled) == pytest.approx(
            math.sqrt(s) * planck_mass(pc), rel=1e-12
        )


class TestIdentityResidual:
    def test_default_constants_within_tolerance(self):
        assert planck_identity_residual(PhysicalConstants()) <= RESIDUAL_TOLERANCE

    def test_zero_by_construction(self):
        # pick alpha so that n3 * (m_p + m_e) equals the Planck mass exactly
        pc = PhysicalConstants()
        target = planck_mass(pc) / (pc.m_p + pc.m_e)
        alpha = (2.0**4.5 / (3.0 * math.pi**2 * target)) ** (1.0 / 9.0)
        tuned = PhysicalConstants(
            alpha=alpha, m_p=pc.m_p, m_e=pc.m_e, hbar=pc.hbar, c=pc.c, G=pc.G
        )
        assert planck_identity_residual(tuned) == pytest.approx(0.0, abs=1e-12)

    def test_alpha_sensitivity_is_minus_nine(self):
        # first-order: d ln n3 / d ln alpha = -9, so a +1e-3 relative nudge
        # moves the signed identity ratio by about -9e-3
        pc = PhysicalConstants()
        mass = planck_mass(pc)

        def signed(alpha):
            return n3_from_alpha(alpha) * (pc.m_p + pc.m_e) / mass - 1.0

        shift = signed(pc.alpha * 1.001) - signed(pc.alpha)
        assert shift == pytest.approx(-9e-3, rel=0.05)


class TestLatticeModel:
    def test_defaults_consistent(self):
        lm = LatticeModel()
        assert lm.n3 > lm.n_nucleus > 0
        assert lm.n_nucleus == pytest.approx(5.2780e4)
        assert lm.tau_mu == pytest.approx(2e-6)
        assert lm.r_mu == pytest.approx(6e4)

    def test_ordering_enforced(self):
        with pytest.raises(DomainError):
            LatticeModel(n3=1.0, n_nucleus=2.0)
