"""Smoke test for the ppod extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run:
    python python/smoke_test.py
"""

import math
import os
import tempfile

import ppod


def check_env():
    env = ppod.Env("grid.onebox.easy")
    obs = env.reset(3)
    assert len(obs) == env.obs_dim
    assert env.action_space()["kind"] == "discrete"
    total, done = 0.0, False
    while not done:
        obs, reward, done = env.step(0)
        total += reward
    assert total == 0.0
    assert "G" in env.render_ascii()

    reacher = ppod.Env("reacher.sparse")
    reacher.reset(0)
    obs, reward, done = reacher.step([0.5, -0.5])
    assert len(obs) == reacher.obs_dim and reward >= 0.0 and not done


def check_scheduler():
    s = ppod.ReplayScheduler(0.1, 0.3, 50, seed=7)
    draws = s.sample_sources(10000)
    freq = {k: draws.count(k) / len(draws) for k in ("dr", "dv", "env")}
    assert abs(freq["dr"] - 0.1) < 0.02 and abs(freq["dv"] - 0.3) < 0.02, freq
    while s.anneal():
        assert math.isclose(s.rho + s.phi, 0.4, abs_tol=1e-12)
    assert s.dv_cap == 0 and s.phi == 0.0 and math.isclose(s.rho, 0.4, abs_tol=1e-9)


def check_math():
    adv, ret = ppod.compute_gae([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [False, False, True], None, 0.5, 0.5)
    assert adv == [0.0625, 0.25, 1.0], adv
    assert ret == adv
    p = ppod.priority_probabilities([0.0, 1.0], 1.0)
    assert math.isclose(sum(p), 1.0) and p[1] > p[0]
    assert ppod.reacher_reward(0.25) == 0.75
    assert ppod.reacher_reward(1.5) == 0.0


def check_demo_and_training():
    with tempfile.TemporaryDirectory() as tmp:
        demo = os.path.join(tmp, "demo.jsonl")
        report = ppod.scripted_demo("grid.onebox.easy", 4, demo)
        assert report["episode_return"] == 1.0
        assert ppod.validate_demo(demo)["steps"] == report["steps"]
        assert ppod.replay_demo(demo)["first_mismatch"] is None

        out = os.path.join(tmp, "run")
        result = ppod.train(
            "[run]\ntotal_frames = 2048\neval_episodes = 5\n",
            {"run.demos": demo, "run.out_dir": out, "ppo.num_actors": "2"},
        )
        assert result["updates"] >= 1 and result["evals"]
        assert os.path.exists(os.path.join(out, "checkpoint.json"))
        ev = ppod.evaluate_checkpoint(os.path.join(out, "checkpoint.json"), 5)
        assert ev["episodes"] == 5
        assert ppod.run_command(["demo-validate", demo]) == 0
        assert ppod.run_command(["demo-validate", os.path.join(tmp, "missing.jsonl")]) != 0


if __name__ == "__main__":
    assert "grid.twobox.hard" in ppod.TASKS
    check_env()
    check_scheduler()
    check_math()
    check_demo_and_training()
    print("python smoke test passed")
