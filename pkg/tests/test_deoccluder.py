import json
import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.dataprep import canonical_json
from src.errors import (
    AllCandidatesFailed,
    DegenerateInput,
    DenoiserFailure,
    EmptyCandidates,
    EstimatorFailure,
    InputError,
    ShapeMismatch,
    StepOutOfRange,
)
from src.deoccluder import (
    ConstantDenoiser,
    EpsilonDenoiser,
    IdentityDenoiser,
    LatentState,
    LinearShrinkDenoiser,
    NoiseSchedule,
    StrengthCandidates,
    adaptive_deocclude,
    ddim_step,
    generate_candidates,
    initial_latent,
    linear_schedule,
    repaint_run,
    repaint_trace,
    repaint_step,
    sample_background,
    score_candidates,
    select_control_strength,
    step_noise,
)


FIXTURES = Path(__file__).resolve().parent / "fixtures"


class StrengthDenoiser:
    """마스크 안쪽을 strength 값으로 채우는 토이 디노이저"""

    def __call__(self, x_t, x_masked, depth, t, strength):
        return np.full(np.shape(x_t), strength)


class TestSchedule(unittest.TestCase):
    def test_linear_schedule(self):
        schedule = linear_schedule()
        self.assertEqual(schedule.steps, 50)
        self.assertEqual(schedule.at(0), 1.0)
        self.assertTrue(np.all(np.diff(schedule.alpha_bar) < 0))
        cumulative = np.cumprod(1.0 - np.linspace(1e-4, 2e-2, 1000))
        self.assertAlmostEqual(schedule.at(50), cumulative[999], places=15)
        self.assertAlmostEqual(schedule.at(1), cumulative[19], places=15)

    def test_schedule_validation(self):
        with self.assertRaises(DegenerateInput):
            NoiseSchedule(np.array([1.0, 0.5, 0.7]))
        with self.assertRaises(DegenerateInput):
            NoiseSchedule(np.array([1.0, 0.0]))
        with self.assertRaises(StepOutOfRange):
            linear_schedule(10).at(11)
        with self.assertRaises(InputError):
            linear_schedule(0)

    def test_dict_round_trip(self):
        schedule = linear_schedule(10)
        np.testing.assert_array_equal(NoiseSchedule.from_dict(schedule.to_dict()).alpha_bar, schedule.alpha_bar)


class TestNoise(unittest.TestCase):
    def test_step_noise_is_seeded_per_step(self):
        np.testing.assert_array_equal(step_noise((3, 3), 7, 4), step_noise((3, 3), 7, 4))
        self.assertFalse(np.array_equal(step_noise((3, 3), 7, 4), step_noise((3, 3), 7, 5)))

    def test_background_at_step_zero_is_clean(self):
        x0 = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(sample_background(x0, 0, linear_schedule(), seed=1), x0)

    def test_background_with_explicit_noise(self):
        schedule = NoiseSchedule(np.array([1.0, 0.64]))
        out = sample_background(np.ones(2), 1, schedule, seed=0, noise=np.full(2, 2.0))
        np.testing.assert_allclose(out, [0.8 + 0.6 * 2.0] * 2)

    def test_initial_latent_uses_separate_slot(self):
        schedule = linear_schedule(5)
        state = initial_latent((2, 2), schedule, seed=3)
        self.assertEqual(state.t, 5)
        np.testing.assert_array_equal(state.x, step_noise((2, 2), 3, 6))

    def test_ddim_step_with_exact_noise(self):
        rng = np.random.default_rng(0)
        x0, eps = rng.normal(size=4), rng.normal(size=4)
        a_t, a_prev = 0.3, 0.7
        x_t = math.sqrt(a_t) * x0 + math.sqrt(1 - a_t) * eps
        np.testing.assert_allclose(ddim_step(x_t, eps, a_t, a_prev), math.sqrt(a_prev) * x0 + math.sqrt(1 - a_prev) * eps)

    def test_epsilon_denoiser_recovers_clean_latent(self):
        schedule = linear_schedule(10)
        x0 = np.random.default_rng(1).normal(size=(2, 4, 4))
        mask = np.ones((4, 4))

        # 정답 노이즈를 예측하는 ε-모델이면 마지막 스텝에서 x0를 복원
        def predict(x_t, x_masked, depth, t, strength):
            a = schedule.at(t)
            return (x_t - math.sqrt(a) * x0) / math.sqrt(1.0 - a)

        out = repaint_run(np.zeros_like(x0), mask, None, EpsilonDenoiser(predict, schedule), schedule, 1.0, seed=0)
        np.testing.assert_allclose(out, x0, atol=1e-9)


class TestRepaint(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.x0 = rng.normal(size=(4, 8, 8))
        self.mask = (rng.uniform(size=(8, 8)) < 0.5).astype(float)
        self.schedule = linear_schedule(50)

    def test_background_independent_of_denoiser(self):
        a = repaint_run(self.x0, self.mask, None, LinearShrinkDenoiser(0.5), self.schedule, 0.5, seed=2)
        b = repaint_run(self.x0, self.mask, None, ConstantDenoiser(-4.0), self.schedule, 0.5, seed=2)
        background = np.broadcast_to(self.mask == 0, self.x0.shape)
        np.testing.assert_array_equal(a[background], b[background])
        np.testing.assert_array_equal(a[background], self.x0[background])
        self.assertTrue(np.all(b[~background] == -4.0))

    def test_single_step_blend(self):
        state = LatentState(np.zeros_like(self.x0), 10)
        out = repaint_step(state, self.x0, self.mask, ConstantDenoiser(9.0), self.schedule, 0.5, seed=4)
        self.assertEqual(out.t, 9)
        inside = np.broadcast_to(self.mask == 1, self.x0.shape)
        self.assertTrue(np.all(out.x[inside] == 9.0))
        expected = sample_background(self.x0, 9, self.schedule, 4)
        np.testing.assert_array_equal(out.x[~inside], expected[~inside])

    def test_trace_matches_recorded_states(self):
        inputs = json.loads((FIXTURES / "repaint_inputs.json").read_text(encoding="utf-8"))
        schedule = NoiseSchedule(inputs["alpha_bar"])
        initial = LatentState(np.asarray(inputs["initial"], dtype=float), schedule.steps)
        states = repaint_trace(
            inputs["x0"],
            inputs["mask"],
            None,
            LinearShrinkDenoiser(inputs["factor"]),
            schedule,
            1.0,
            seed=0,
            initial=initial,
        )
        text = "".join(canonical_json({"t": s.t, "x": s.x.tolist()}) + "\n" for s in states)
        self.assertEqual(text, (FIXTURES / "repaint_trace.jsonl").read_text(encoding="utf-8"))

    def test_run_returns_last_traced_state(self):
        traced = list(repaint_trace(self.x0, self.mask, None, LinearShrinkDenoiser(0.5), self.schedule, 0.5, seed=6))
        self.assertEqual([s.t for s in traced], list(range(50, -1, -1)))
        final = repaint_run(self.x0, self.mask, None, LinearShrinkDenoiser(0.5), self.schedule, 0.5, seed=6)
        np.testing.assert_array_equal(final, traced[-1].x)

    def test_invalid_masks_and_steps(self):
        state = LatentState(np.zeros_like(self.x0), 10)
        with self.assertRaises(InputError):
            repaint_step(state, self.x0, self.mask * 0.5, IdentityDenoiser(), self.schedule, 0.5, 0)
        with self.assertRaises(ShapeMismatch):
            repaint_step(state, self.x0, np.ones((7, 7)), IdentityDenoiser(), self.schedule, 0.5, 0)
        with self.assertRaises(StepOutOfRange):
            repaint_step(LatentState(self.x0, 0), self.x0, self.mask, IdentityDenoiser(), self.schedule, 0.5, 0)

    def test_denoiser_failures(self):
        state = LatentState(np.zeros_like(self.x0), 3)

        def wrong_shape(x_t, x_masked, depth, t, strength):
            return np.zeros(3)

        def broken(x_t, x_masked, depth, t, strength):
            raise ValueError("boom")

        for denoiser in (wrong_shape, broken):
            with self.assertRaises(DenoiserFailure):
                repaint_step(state, self.x0, self.mask, denoiser, self.schedule, 0.5, 0)

    def test_candidates_independent_of_thread_count(self):
        candidates = StrengthCandidates()
        one = generate_candidates(self.x0, self.mask, None, StrengthDenoiser(), self.schedule, candidates, 5, threads=1)
        many = generate_candidates(self.x0, self.mask, None, StrengthDenoiser(), self.schedule, candidates, 5, threads=8)
        self.assertEqual(len(one), 6)
        for a, b in zip(one, many):
            np.testing.assert_array_equal(a, b)


class TestStrengthSelection(unittest.TestCase):
    def test_argmin_with_smaller_strength_on_tie(self):
        candidates = StrengthCandidates()
        self.assertEqual(select_control_strength(candidates, [5, 4, 3, 2, 1, 6]), (0.85, 4))
        self.assertEqual(select_control_strength(candidates, [2, 1, 1, 3, 3, 3]), (0.4, 1))

    def test_failures(self):
        candidates = StrengthCandidates()
        inf = math.inf
        self.assertEqual(select_control_strength(candidates, [inf, 2, inf, 1, inf, inf]), (0.7, 3))
        with self.assertRaises(AllCandidatesFailed):
            select_control_strength(candidates, [inf] * 6)
        with self.assertRaises(InputError):
            select_control_strength(candidates, [float("nan")] + [1.0] * 5)
        with self.assertRaises(ShapeMismatch):
            select_control_strength(candidates, [1.0])

    def test_candidate_validation(self):
        with self.assertRaises(EmptyCandidates):
            StrengthCandidates(())
        with self.assertRaises(InputError):
            StrengthCandidates((0.5, 0.25))
        with self.assertRaises(InputError):
            StrengthCandidates((0.0, 0.5))

    def test_score_candidates_marks_failures_infinite(self):
        gt = np.zeros((21, 3))

        def estimator(candidate):
            if candidate == "bad":
                raise EstimatorFailure("no hand found")
            return gt + np.array([candidate, 0.0, 0.0])

        scores = score_candidates(gt, estimator, [3.0, "bad", 1.0])
        self.assertEqual(scores[0], 3.0)
        self.assertEqual(scores[1], math.inf)
        self.assertEqual(scores[2], 1.0)

    def test_any_estimator_exception_is_a_candidate_failure(self):
        gt = np.zeros((21, 3))

        def estimator(candidate):
            if candidate == 0:
                raise RuntimeError("model crashed")
            if candidate == 1:
                return np.zeros((5, 3))
            return gt + np.array([0.0, float(candidate), 0.0])

        scores = score_candidates(gt, estimator, [0, 1, 2, 4])
        self.assertEqual(scores.tolist(), [math.inf, math.inf, 2.0, 4.0])
        self.assertEqual(select_control_strength(StrengthCandidates((0.25, 0.5, 0.75, 1.0)), scores), (0.75, 2))

    def test_non_finite_joints_are_skipped(self):
        gt = np.zeros((21, 3))

        def estimator(candidate):
            if candidate == "nan":
                return np.full((21, 3), np.nan)
            if candidate == "inf":
                return np.full((21, 3), -np.inf)
            return gt + np.array([float(candidate), 0.0, 0.0])

        scores = score_candidates(gt, estimator, ["nan", "2", "inf"])
        self.assertEqual(scores.tolist(), [math.inf, 2.0, math.inf])
        self.assertEqual(select_control_strength(StrengthCandidates((0.4, 0.7, 1.0)), scores), (0.7, 1))

    def test_all_non_finite_candidates_fail_selection(self):
        scores = score_candidates(np.zeros((21, 3)), lambda c: np.full((21, 3), np.nan), ["a", "b"])
        with self.assertRaises(AllCandidatesFailed):
            select_control_strength(StrengthCandidates((0.5, 1.0)), scores)

    def test_adaptive_deocclude_picks_best_strength(self):
        x0 = np.zeros((2, 4, 4))
        mask = np.zeros((4, 4))
        mask[1:3, 1:3] = 1.0
        gt = np.zeros((21, 3))

        def estimator(latent):
            return gt + np.array([abs(float(latent.max()) - 0.55), 0.0, 0.0])

        result = adaptive_deocclude(x0, mask, None, StrengthDenoiser(), linear_schedule(10), gt, estimator, threads=2)
        self.assertEqual(result.strength, 0.55)
        self.assertEqual(result.index, 2)
        self.assertEqual(result.scores.shape, (6,))
        self.assertTrue(np.all(result.latent[:, 1:3, 1:3] == 0.55))


if __name__ == "__main__":
    unittest.main()
