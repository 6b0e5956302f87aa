use ppod_core::config::{Algo, RunConfig};
use ppod_core::envs::scripted::scripted_episode;
use ppod_core::envs::{Env, TaskId};
use ppod_core::replay::Trajectory;
use ppod_core::train::{load_policy, train_loop, RunState, METRICS_HEADER};

fn quick(task: TaskId, algo: Algo, frames: u64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.task = task;
    cfg.algo = algo;
    cfg.total_frames = frames;
    cfg.eval_episodes = 4;
    cfg.eval_interval = 2;
    cfg.train.num_actors = 2;
    cfg.train.num_steps = 128;
    cfg.train.hidden = vec![16];
    cfg
}

fn demo(task: TaskId, seed: u64) -> Vec<Trajectory> {
    vec![scripted_episode(&mut Env::new(task), seed, 1).unwrap()]
}

#[test]
fn zero_frames_still_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 0);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let out = train_loop(cfg.clone(), demo(TaskId::OneBoxEasy, 1)).unwrap();
    assert_eq!(out.state.updates, 0);
    assert!(out.metrics.is_empty());
    let (loaded, _, params) = load_policy(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(loaded, cfg);
    assert_eq!(params, out.state.params);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim(), METRICS_HEADER);
}

#[test]
fn runs_are_deterministic_in_serial_and_parallel() {
    let run = |parallel: bool| {
        let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 1024);
        cfg.parallel = parallel;
        train_loop(cfg, demo(TaskId::OneBoxEasy, 3)).unwrap()
    };
    let a = run(false);
    let b = run(false);
    let c = run(true);
    assert_eq!(a.state.params, b.state.params);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.state.params, c.state.params);
}

#[test]
fn every_algorithm_trains_on_every_task_kind() {
    for task in [TaskId::TwoBoxHard, TaskId::ReacherSparse] {
        for algo in [Algo::Ppod, Algo::Ppo, Algo::PpoBc, Algo::Bc] {
            let mut cfg = quick(task, algo, 512);
            cfg.bc_steps = 20;
            cfg.reward_buffer = true;
            let demos = if algo == Algo::Ppo { Vec::new() } else { demo(task, 4) };
            let out = train_loop(cfg, demos).unwrap_or_else(|e| panic!("{task} {algo:?}: {e}"));
            assert!(out.state.updates > 0, "{task} {algo:?}");
            assert!(out.final_eval().is_some());
        }
    }
}

#[test]
fn replay_frames_do_not_count_against_the_budget() {
    let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 2048);
    cfg.rho = 0.5;
    cfg.phi = 0.0;
    let out = train_loop(cfg, demo(TaskId::OneBoxEasy, 5)).unwrap();
    assert!(out.state.live_frames >= 2048);
    assert!(out.state.replay_frames > 0);
    let per_update = 2 * 128;
    assert_eq!(out.state.live_frames + out.state.replay_frames, out.state.updates * per_update);
}

#[test]
fn replay_only_schedule_terminates() {
    let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 64);
    cfg.rho = 1.0;
    cfg.phi = 0.0;
    let out = train_loop(cfg, demo(TaskId::OneBoxEasy, 6)).unwrap();
    assert_eq!(out.state.live_frames, 0);
    assert!(out.state.replay_frames >= 64 * 20);
}

#[test]
fn demo_width_mismatch_is_rejected() {
    let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 0);
    cfg.frame_stack = 2;
    let err = RunState::new(cfg, demo(TaskId::OneBoxEasy, 1)).unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
}

#[test]
fn successes_move_into_the_reward_buffer() {
    let mut cfg = quick(TaskId::OneBoxEasy, Algo::Ppod, 0);
    cfg.dv_capacity = 3;
    cfg.buffer_size = 4;
    let mut st = RunState::new(cfg, demo(TaskId::OneBoxEasy, 1)).unwrap();
    let mut rollout = ppod_core::train::Rollout::default();
    for s in 10..14 {
        let mut t = scripted_episode(&mut Env::new(TaskId::OneBoxEasy), s, 1).unwrap();
        t.origin = ppod_core::replay::Origin::SelfSuccess;
        rollout.completed.push(t);
    }
    st.absorb_episodes(&rollout).unwrap();
    assert_eq!(st.store.sched.dv_cap, 0);
    assert_eq!(st.store.dr.len(), 4);
    assert_eq!(st.store.dr.demo_count(), 1);
    assert!((st.store.sched.rho - 0.4).abs() < 1e-12);
}
