"""Tests for conflict detection and gradient resolution."""

from typing import Any

import numpy as np
import pytest

from conflict_ppo.exceptions import ValidationError
from conflict_ppo.gradres import (
    GradientSet,
    _regulariser_phase,
    cosine_matrix,
    detect_conflicts,
    project,
    resolve,
    resolve_components,
)


def _random_set(gen, k, dim):
    labels = tuple(gen.choice(["task", "regulariser"], size=k).tolist())
    return GradientSet(gen.standard_normal((k, dim)), labels)


class TestGradientSet:
    """Tests for gradient set validation."""

    def test_default_names(self):
        """Test unnamed gradients are numbered."""
        gs = GradientSet(np.ones((2, 3)), ("task", "regulariser"))

        assert gs.names == ("g0", "g1")
        assert gs.tasks == [0]
        assert gs.regularisers == [1]

    def test_label_count(self):
        """Test one label per gradient."""
        with pytest.raises(ValidationError, match="labels"):
            GradientSet(np.ones((2, 3)), ("task",))

    def test_unknown_label(self):
        """Test labels are task or regulariser."""
        with pytest.raises(ValidationError, match="label"):
            GradientSet(np.ones((1, 3)), ("bonus",))  # type: ignore[arg-type]

    def test_needs_matrix(self):
        """Test a 1-d array is rejected."""
        with pytest.raises(ValidationError):
            GradientSet(np.ones(3), ("task",))


class TestDetection:
    """Tests for conflict statistics."""

    def test_counts_negative_pairs(self):
        """Test each negative inner product counts once."""
        vectors = np.array([[1.0, 0.0], [-1.0, 0.1], [0.0, 1.0]])
        stats = detect_conflicts(GradientSet(vectors, ("task", "task", "regulariser")))

        assert stats.conflict_count == 1
        assert stats.conflicting_pairs == [(0, 1)]
        assert stats.n_projections == 0

    def test_cosine_matrix(self):
        """Test cosines of opposite and orthogonal vectors."""
        cosine = cosine_matrix(np.array([[2.0, 0.0], [-1.0, 0.0], [0.0, 3.0]]))

        np.testing.assert_allclose(np.diag(cosine), 1.0)
        assert cosine[0, 1] == pytest.approx(-1.0)
        assert cosine[0, 2] == 0.0

    def test_zero_vector_cosines(self):
        """Test a zero gradient has zero cosines, including with itself."""
        cosine = cosine_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))

        np.testing.assert_array_equal(cosine[0], [0.0, 0.0])
        assert cosine[1, 1] == 1.0

    def test_matches_brute_force_count(self, rng):
        """Test the conflict count equals a pairwise loop over inner products."""
        for _ in range(50):
            k = int(rng.integers(2, 9))
            vectors = rng.standard_normal((k, 100))
            expected = [
                (i, j) for i in range(k) for j in range(i + 1, k) if vectors[i] @ vectors[j] < 0
            ]
            stats = detect_conflicts(GradientSet(vectors, ("task",) * k))

            assert stats.conflicting_pairs == expected
            assert stats.conflict_count == len(expected)


class TestProject:
    """Tests for the single projection."""

    def test_result_is_orthogonal(self, rng):
        """Test the projected vector is orthogonal to the reference."""
        gi, gj = rng.standard_normal(20), rng.standard_normal(20)
        out = project(gi, gj)

        assert abs(out @ gj) <= 1e-9 * np.linalg.norm(gi) * np.linalg.norm(gj)

    def test_zero_reference(self):
        """Test projecting against zero returns a copy."""
        gi = np.array([1.0, 2.0])
        out = project(gi, np.zeros(2))

        np.testing.assert_array_equal(out, gi)
        assert out is not gi


class TestResolve:
    """Tests for the resolution policies."""

    def test_priority_example(self):
        """Test a conflicting regulariser loses its component along the task."""
        gs = GradientSet(np.array([[1.0, 0.0], [-1.0, 1.0]]), ("task", "regulariser"))
        direction, stats = resolve(gs, np.random.default_rng(0))

        np.testing.assert_allclose(direction, [1.0, 1.0])
        assert stats.projection_magnitudes() == {(1, 0): pytest.approx(1.0)}
        assert stats.project_seconds >= 0.0

    def test_no_conflict_is_identity(self, rng):
        """Test vectors without conflicts are returned unchanged."""
        vectors = np.abs(rng.standard_normal((4, 10)))
        gs = GradientSet(vectors, ("task", "regulariser", "task", "regulariser"))
        for policy in ("priority", "symmetric"):
            projected, stats = resolve_components(gs, rng, policy)

            np.testing.assert_array_equal(projected, vectors)
            assert stats.n_projections == 0
            assert stats.project_seconds == 0.0

    def test_single_component_is_identity(self, rng):
        """Test K = 1 returns the gradient exactly."""
        vectors = rng.standard_normal((1, 8))
        direction, stats = resolve(GradientSet(vectors, ("task",)), rng)

        np.testing.assert_array_equal(direction, vectors[0])
        assert stats.conflict_count == 0

    def test_sum_policy_ignores_conflicts(self):
        """Test the sum policy reports conflicts without projecting."""
        vectors = np.array([[1.0, 0.0], [-1.0, 0.5]])
        projected, stats = resolve_components(
            GradientSet(vectors, ("task", "task")), np.random.default_rng(0), "sum"
        )

        np.testing.assert_array_equal(projected, vectors)
        assert stats.conflict_count == 1
        assert stats.n_projections == 0

    def test_symmetric_original_projects_both(self):
        """Test symmetric resolution against original vectors projects each side."""
        vectors = np.array([[1.0, 1.0], [-1.0, 0.0]])
        projected, stats = resolve_components(
            GradientSet(vectors, ("task", "task")), np.random.default_rng(0), "symmetric"
        )

        assert stats.n_projections == 2
        assert abs(projected[0] @ vectors[1]) < 1e-12
        assert abs(projected[1] @ vectors[0]) < 1e-12

    def test_symmetric_near_opposite_pair(self):
        """Test two nearly opposite gradients keep only their shared component."""
        eps = 0.1
        vectors = np.array([[1.0, eps], [-1.0, eps]])
        projected, stats = resolve_components(
            GradientSet(vectors, ("task", "task")), np.random.default_rng(0), "symmetric"
        )
        scale = 1.0 + eps**2

        np.testing.assert_allclose(projected[0], [2 * eps**2 / scale, 2 * eps / scale])
        np.testing.assert_allclose(projected[1], [-2 * eps**2 / scale, 2 * eps / scale])
        np.testing.assert_allclose(projected.sum(axis=0), [0.0, 4 * eps / scale], atol=1e-15)
        assert stats.n_projections == 2

    def test_symmetric_running_projects_once(self):
        """Test the second vector no longer conflicts with the updated first."""
        vectors = np.array([[1.0, 1.0], [-1.0, 0.0]])
        _, stats = resolve_components(
            GradientSet(vectors, ("task", "task")),
            np.random.default_rng(0),
            "symmetric",
            "running",
        )

        assert stats.n_projections == 1

    def test_priority_treats_labels_asymmetrically(self):
        """Test only the regulariser moves when a task and a regulariser conflict."""
        vectors = np.array([[1.0, 0.2], [-1.0, 0.5]])
        projected, _ = resolve_components(
            GradientSet(vectors, ("task", "regulariser")), np.random.default_rng(0)
        )

        np.testing.assert_array_equal(projected[0], vectors[0])
        assert abs(projected[1] @ vectors[0]) < 1e-12

    def test_regulariser_projected_against_every_task(self):
        """Test a regulariser conflicting with two orthogonal tasks ends orthogonal to both."""
        vectors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 1.0]])
        projected, stats = resolve_components(
            GradientSet(vectors, ("task", "task", "regulariser")), np.random.default_rng(3)
        )

        np.testing.assert_allclose(projected[2], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(projected[:2], vectors[:2])
        assert stats.n_projections == 2

    @pytest.mark.parametrize("reference", ["original", "running"])
    def test_three_opposed_tasks_keep_their_direction(self, reference):
        """Test no task is turned past a right angle by two opposing tasks."""
        vectors = np.array([[1.0, 0.0], [-0.9, 0.2], [-0.9, -0.2]])
        gs = GradientSet(vectors, ("task", "task", "task"))
        for seed in range(20):
            rng = np.random.default_rng(seed)
            projected, _ = resolve_components(gs, rng, "priority", reference)

            for i in range(3):
                assert projected[i] @ vectors[i] >= 0.0
            raw = np.linalg.norm(vectors, axis=1)
            assert np.all(np.linalg.norm(projected, axis=1) <= raw * (1 + 1e-12))

    def test_deterministic_given_generator(self, make_gradient_set):
        """Test equal generators give identical results."""
        gs = make_gradient_set(k=6, dim=30, seed=4)
        a, _ = resolve_components(gs, np.random.default_rng(9))
        b, _ = resolve_components(gs, np.random.default_rng(9))

        np.testing.assert_array_equal(a, b)

    def test_unknown_policy(self, make_gradient_set):
        """Test unknown policies are rejected."""
        policy: Any = "mean"
        with pytest.raises(ValidationError, match="policy"):
            resolve_components(make_gradient_set(), np.random.default_rng(0), policy)

    def test_unknown_reference(self, make_gradient_set):
        """Test unknown symmetric references are rejected."""
        with pytest.raises(ValidationError, match="reference"):
            resolve_components(
                make_gradient_set(), np.random.default_rng(0), "priority", "latest"
            )


class TestResolutionProperties:
    """Randomized invariants of resolution."""

    def test_norms_never_grow(self, rng):
        """Test every projected vector is no longer than its raw gradient."""
        for _ in range(300):
            gs = _random_set(rng, int(rng.integers(2, 9)), int(rng.integers(10, 200)))
            for policy in ("priority", "symmetric"):
                projected, _ = resolve_components(gs, rng, policy)
                raw = np.linalg.norm(gs.vectors, axis=1)

                assert np.all(np.linalg.norm(projected, axis=1) <= raw * (1 + 1e-12))

    def test_tasks_keep_direction_in_low_dimensions(self, rng):
        """Test every task keeps a non-negative inner product with its raw gradient."""
        for _ in range(10_000):
            gs = _random_set(rng, int(rng.integers(2, 9)), int(rng.integers(2, 12)))
            for reference in ("original", "running"):
                projected, _ = resolve_components(gs, rng, "priority", reference)

                for t in gs.tasks:
                    assert projected[t] @ gs.vectors[t] >= 0.0

    def test_invariants_over_many_sets(self, rng):
        """Test contraction, task direction and raw statistics over many random sets."""
        for _ in range(10_000):
            gs = _random_set(rng, int(rng.integers(2, 9)), int(rng.integers(10, 1001)))
            raw = np.linalg.norm(gs.vectors, axis=1)

            working = gs.vectors.copy()
            _regulariser_phase(working, gs.regularisers, gs.tasks, rng, [])
            np.testing.assert_array_equal(working[gs.tasks], gs.vectors[gs.tasks])

            i, j = rng.choice(gs.k, size=2, replace=False)
            out = project(gs.vectors[i], gs.vectors[j])
            assert abs(out @ gs.vectors[j]) <= 1e-9 * raw[i] * raw[j]

            for policy in ("priority", "symmetric"):
                projected, stats = resolve_components(gs, rng, policy)

                assert np.all(np.linalg.norm(projected, axis=1) <= raw * (1 + 1e-12))
                assert stats.conflict_count == detect_conflicts(gs).conflict_count
                if policy == "priority":
                    assert all(projected[t] @ gs.vectors[t] >= 0.0 for t in gs.tasks)

    def test_lone_task_is_untouched(self, rng):
        """Test a single task gradient passes priority resolution exactly."""
        for _ in range(300):
            k = int(rng.integers(2, 9))
            labels = ("task",) + ("regulariser",) * (k - 1)
            gs = GradientSet(rng.standard_normal((k, int(rng.integers(10, 200)))), labels)
            projected, _ = resolve_components(gs, rng)

            np.testing.assert_array_equal(projected[0], gs.vectors[0])

    def test_single_conflicting_regulariser_ends_orthogonal(self, rng):
        """Test a regulariser projected once is orthogonal to that task."""
        for _ in range(300):
            dim = int(rng.integers(10, 200))
            task = rng.standard_normal(dim)
            reg = rng.standard_normal(dim)
            if task @ reg >= 0:
                reg = -reg
            gs = GradientSet(np.stack([task, reg]), ("task", "regulariser"))
            projected, _ = resolve_components(gs, rng)

            scale = np.linalg.norm(task) * np.linalg.norm(reg)
            assert abs(projected[1] @ task) <= 1e-9 * scale

    def test_stats_describe_raw_vectors(self, rng):
        """Test conflict counts are measured before projection."""
        for _ in range(100):
            gs = _random_set(rng, int(rng.integers(2, 9)), 20)
            _, stats = resolve_components(gs, rng)

            assert stats.conflict_count == detect_conflicts(gs).conflict_count

    def test_direction_is_sum_of_projected(self, make_gradient_set):
        """Test resolve returns the sum of the projected vectors."""
        gs = make_gradient_set(k=5, dim=12, seed=2)
        projected, _ = resolve_components(gs, np.random.default_rng(1))
        direction, _ = resolve(gs, np.random.default_rng(1))

        np.testing.assert_allclose(direction, projected.sum(axis=0))
