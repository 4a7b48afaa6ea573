"""Tests for the point-mass environments."""

import dataclasses
import math

import numpy as np
import pytest

from conflict_ppo.envs import (
    DAMPING,
    DT,
    QUANTITY_RANGES,
    BandObjective,
    ScalarizedEnv,
    band_levels,
    default_bands,
    make_env,
    measure,
    validate_bands,
)
from conflict_ppo.exceptions import EpisodeDoneError, NumericalError, ValidationError


def _place(env, position, velocity):
    env.state = dataclasses.replace(
        env.state, position=np.asarray(position, float), velocity=np.asarray(velocity, float)
    )


class TestMakeEnv:
    """Tests for the environment registry."""

    def test_aligned_spec(self):
        """Test the aligned env has a goal task and an effort regulariser."""
        env = make_env("pointmass-aligned")

        assert env.reward_spec.names == ["goal", "effort"]
        assert env.reward_spec.labels == ["task", "regulariser"]

    def test_styled_default_bands(self):
        """Test the styled env adds one task per default band."""
        env = make_env("pointmass-styled")

        assert env.reward_spec.names == [
            "goal",
            "speed_band",
            "heading_band",
            "height_band",
            "effort",
        ]
        assert env.bands == default_bands()

    def test_conflict_spec(self):
        """Test the conflict env has two opposed tasks."""
        env = make_env("pointmass-conflict")

        assert env.reward_spec.names == ["right", "left", "effort"]
        assert env.goal_terminates is False

    def test_unknown_name_lists_valid_names(self):
        """Test an unknown env name names the valid set."""
        with pytest.raises(ValidationError) as exc_info:
            make_env("cartpole")

        assert "pointmass-aligned" in exc_info.value.message

    def test_bands_on_unstyled_env(self):
        """Test band objectives are only accepted by the styled env."""
        with pytest.raises(ValidationError, match="band"):
            make_env("pointmass-aligned", bands=default_bands())

    def test_repeated_quantity_names(self):
        """Test two bands on one quantity get numbered names."""
        bands = (BandObjective.from_level("speed", 0), BandObjective.from_level("speed", 3))
        env = make_env("pointmass-styled", bands=bands)

        assert env.reward_spec.names[1:3] == ["speed_band_1", "speed_band_2"]

    def test_same_seed_same_start(self):
        """Test a seed fixes the start position."""
        a = make_env("pointmass-aligned", seed=7)
        b = make_env("pointmass-aligned", seed=7)

        np.testing.assert_array_equal(a.reset(), b.reset())


class TestBands:
    """Tests for band objectives."""

    def test_levels_partition_range(self):
        """Test the five levels ascend and cover the quantity range."""
        for quantity, (lo, hi) in QUANTITY_RANGES.items():
            levels = band_levels(quantity)

            assert len(levels) == 5
            assert levels[0][0] == pytest.approx(lo)
            assert levels[-1][1] == pytest.approx(hi)
            for (_, upper), (lower, _) in zip(levels[:-1], levels[1:]):
                assert upper == pytest.approx(lower)

    def test_indicator_half_open(self):
        """Test the band includes lo and excludes hi."""
        band = BandObjective("speed", 0.2, 0.4)

        assert band.indicator(0.2) == 1.0
        assert band.indicator(0.4) == 0.0

    def test_empty_band(self):
        """Test lo must be below hi."""
        with pytest.raises(ValidationError, match="empty"):
            BandObjective("speed", 0.5, 0.5)

    def test_level_out_of_range(self):
        """Test levels run 0..4."""
        with pytest.raises(ValidationError):
            BandObjective.from_level("height", 5)

    def test_overlapping_bands(self):
        """Test overlapping bands on one quantity are rejected."""
        bands = (BandObjective("speed", 0.0, 0.5), BandObjective("speed", 0.4, 0.8))

        with pytest.raises(ValidationError, match="overlap"):
            validate_bands(bands)

    def test_too_many_bands(self):
        """Test at most four band objectives."""
        bands = tuple(BandObjective.from_level("speed", i) for i in range(5))

        with pytest.raises(ValidationError, match="1 to 4"):
            validate_bands(bands)

    def test_measure(self):
        """Test each measured quantity."""
        pos, vel, action = np.array([1.0, -0.5]), np.array([0.0, 2.0]), np.array([1.0, 1.0])

        assert measure("speed", pos, vel, action) == 2.0
        assert measure("heading", pos, vel, action) == pytest.approx(math.pi / 2)
        assert measure("height", pos, vel, action) == -0.5
        assert measure("effort", pos, vel, action) == 2.0

    def test_heading_undefined_at_rest(self):
        """Test a resting mass has no heading and earns no heading bonus."""
        assert math.isnan(measure("heading", np.zeros(2), np.zeros(2), np.zeros(2)))

        env = make_env("pointmass-styled", bands=(BandObjective.from_level("heading", 2),))
        _place(env, [0.0, 0.0], [0.0, 0.0])
        result = env.step(np.zeros(2))

        assert result.reward[1] == 0.0

    def test_heading_levels_cover_every_direction(self):
        """Test moving backwards lands in a heading level."""
        heading = measure("heading", np.zeros(2), np.array([-1.0, 0.01]), np.zeros(2))
        bands = [BandObjective.from_level("heading", level) for level in range(5)]

        assert sum(band.indicator(heading) for band in bands) == 1.0
        assert bands[4].indicator(heading) == 1.0


class TestStep:
    """Tests for the dynamics and rewards."""

    def test_euler_step_with_damping(self):
        """Test velocity integrates the action and is damped, position follows."""
        env = make_env("pointmass-aligned")
        _place(env, [0.0, 0.0], [0.0, 0.0])
        result = env.step(np.array([1.0, 0.0]))

        speed = DT * (1.0 - DAMPING)
        np.testing.assert_allclose(env.state.velocity, [speed, 0.0])
        np.testing.assert_allclose(env.state.position, [speed * DT, 0.0])
        assert result.reward[0] == pytest.approx(speed)
        assert result.reward[1] == pytest.approx(-0.1)

    def test_action_is_clipped(self):
        """Test actions beyond [-1, 1] act like the bound."""
        a = make_env("pointmass-aligned", seed=1)
        b = make_env("pointmass-aligned", seed=1)
        ra = a.step(np.array([5.0, -5.0]))
        rb = b.step(np.array([1.0, -1.0]))

        np.testing.assert_array_equal(ra.observation, rb.observation)
        np.testing.assert_array_equal(ra.reward, rb.reward)

    def test_observation_is_goal_offset_and_velocity(self):
        """Test the observation layout."""
        env = make_env("pointmass-aligned")
        _place(env, [1.0, 2.0], [0.1, -0.1])

        np.testing.assert_allclose(env.observation(), [4.0, -2.0, 0.1, -0.1])

    def test_opposed_rewards_cancel(self):
        """Test the conflict env's tasks are exact opposites."""
        env = make_env("pointmass-conflict")
        result = env.step(np.array([0.7, 0.2]))

        assert result.reward[0] == -result.reward[1]
        assert result.reward[0] > 0

    def test_band_reward(self):
        """Test a band pays its bonus while the quantity is inside it."""
        env = make_env("pointmass-styled", bands=(BandObjective.from_level("speed", 2),))
        _place(env, [0.0, 0.0], [0.5, 0.0])
        result = env.step(np.zeros(2))

        assert result.reward[1] == pytest.approx(0.3)

    def test_same_seed_same_trajectory(self):
        """Test equal seeds and actions give identical trajectories."""
        actions = np.random.default_rng(1).uniform(-1.5, 1.5, size=(40, 2))
        runs = []
        for _ in range(2):
            env = make_env("pointmass-styled", seed=4)
            runs.append([env.step(a) for a in actions])

        for a, b in zip(*runs):
            np.testing.assert_array_equal(a.observation, b.observation)
            np.testing.assert_array_equal(a.reward, b.reward)

    def test_rewards_replay_from_states(self):
        """Test each reward component recomputes from the stored states and actions."""
        env = make_env("pointmass-styled", seed=2)
        bands = default_bands()
        for action in np.random.default_rng(5).uniform(-1.5, 1.5, size=(60, 2)):
            prev = env.state.position.copy()
            result = env.step(action)
            pos, vel = env.state.position, env.state.velocity
            clipped = np.clip(action, -1.0, 1.0)
            to_goal = np.array([5.0, 0.0]) - prev
            expected = [
                float(vel @ to_goal) / float(np.hypot(*to_goal)),
                *(0.3 * band.indicator(measure(band.quantity, pos, vel, clipped))
                  for band in bands),
                -0.1 * float(clipped @ clipped),
            ]

            np.testing.assert_allclose(result.reward, expected, rtol=1e-12, atol=1e-15)
            if result.done or result.timeout:
                break

    def test_timeout(self):
        """Test the episode times out at episode_length."""
        env = make_env("pointmass-aligned", episode_length=2)

        assert env.step(np.zeros(2)).timeout is False
        result = env.step(np.zeros(2))
        assert result.timeout is True
        assert result.done is False

    def test_step_after_end_raises(self):
        """Test stepping a finished episode raises until reset."""
        env = make_env("pointmass-aligned", episode_length=1)
        env.step(np.zeros(2))

        with pytest.raises(EpisodeDoneError):
            env.step(np.zeros(2))
        env.reset()
        env.step(np.zeros(2))

    def test_leaving_arena_terminates(self):
        """Test crossing the arena wall ends the episode."""
        env = make_env("pointmass-aligned")
        _place(env, [9.99, 0.0], [0.9, 0.0])
        result = env.step(np.array([1.0, 0.0]))

        assert result.done is True
        assert result.timeout is False

    def test_goal_terminates_only_where_enabled(self):
        """Test reaching the goal ends aligned episodes but not conflict ones."""
        aligned = make_env("pointmass-aligned")
        conflict = make_env("pointmass-conflict")
        for env in (aligned, conflict):
            _place(env, [4.8, 0.0], [0.9, 0.0])

        assert aligned.step(np.zeros(2)).done is True
        assert conflict.step(np.zeros(2)).done is False

    def test_non_finite_action(self):
        """Test a NaN action raises NumericalError."""
        env = make_env("pointmass-aligned")

        with pytest.raises(NumericalError):
            env.step(np.array([np.nan, 0.0]))


class TestScalarizedEnv:
    """Tests for the single-reward wrapper."""

    def test_reward_is_component_sum(self):
        """Test the training reward sums the components, which are kept."""
        env = ScalarizedEnv(make_env("pointmass-aligned", seed=3))
        result = env.step(np.array([0.5, 0.5]))

        assert result.reward.shape == (1,)
        assert result.reward[0] == pytest.approx(result.components.sum())
        assert result.components.shape == (2,)

    def test_specs(self):
        """Test the wrapper trains on one component and logs all of them."""
        env = ScalarizedEnv(make_env("pointmass-styled"))

        assert env.reward_spec.names == ["total"]
        assert env.component_spec.k == 5
