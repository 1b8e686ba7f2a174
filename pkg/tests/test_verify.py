"""Tests for the oracle suite."""

import pytest

from policysearch.verify import (
    CheckResult,
    check_affine_invariance,
    check_em_newton,
    check_fisher_outer_product,
    check_gradient,
    check_returns,
    gibbs_suite,
    render_report,
    run_checks,
)


class TestChecks:
    """Tests for individual oracle checks."""

    def test_suite_is_seeded(self):
        a = gibbs_suite(4, seed=3)
        b = gibbs_suite(4, seed=3)

        assert [m.n_states for m, _, _ in a] == [m.n_states for m, _, _ in b]
        assert all((wa == wb).all() for (_, _, wa), (_, _, wb) in zip(a, b))

    def test_gradient_check_passes(self):
        assert check_gradient().passed

    def test_corrupted_gradient_is_caught(self):
        """An offset of 1e-3 in one component fails the gradient check."""
        result = check_gradient(corrupt_gradient=1e-3)

        assert not result.passed
        assert result.worst > result.threshold

    def test_fisher_and_em(self):
        assert check_fisher_outer_product().passed
        assert check_em_newton().passed

    def test_affine_and_returns(self):
        assert all(r.passed for r in check_affine_invariance())
        assert all(r.passed for r in check_returns())


class TestReport:
    """Tests for report rendering."""

    def test_render(self):
        results = [
            CheckResult("gradient-fd", 25, 1e-9, 1e-6, True),
            CheckResult("em-equals-newton", 20, 1e-3, 1e-8, False),
        ]

        report = render_report(results)

        lines = report.splitlines()
        assert lines[1].endswith("PASS")
        assert lines[2].endswith("FAIL")
        assert lines[-1] == "1/2 checks passed"

    @pytest.mark.slow
    def test_full_suite_passes_and_is_stable(self):
        """The whole suite passes and renders the same text twice."""
        first = run_checks()

        assert all(r.passed for r in first)
        assert render_report(first) == render_report(run_checks())
