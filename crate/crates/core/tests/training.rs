use std::fs;

use mipriv::envs::{EnvConfig, SnapConfig, VpnEnv};
use mipriv::grad::{baseline_update, return_grad, BaselineParams};
use mipriv::mdp::{sample_batch, PolicyParams};
use mipriv::numerics::{AdamConfig, AdamState};
use mipriv::trainer::{
    batch_seed, entropy_coef, latest_checkpoint, load_checkpoint, preset, resume_training,
    run_training, TrainConfig, Trainer, METRICS_FILE,
};
use mipriv::Error;

fn small_vpn(lambda: f64) -> TrainConfig {
    let mut cfg = preset("vpn_unconstrained").unwrap();
    cfg.env = EnvConfig::Vpn(VpnEnv::with_horizon(4));
    cfg.policy.hidden = vec![16];
    cfg.baseline.hidden = vec![16];
    cfg.dual.lambdas = vec![lambda];
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.seed = 5;
    cfg
}

#[test]
fn zero_multipliers_reduce_to_reinforce() {
    let cfg = small_vpn(0.0);
    let mut trainer = Trainer::new(cfg.clone()).unwrap();

    let env = cfg.env.build().unwrap();
    let mut policy: PolicyParams = trainer.policy.clone();
    let mut baseline: BaselineParams = trainer.baseline.clone();
    let mut padam = AdamState::for_params(&policy.params, AdamConfig::with_lr(cfg.policy.lr));
    let mut badam = AdamState::for_params(&baseline.params, AdamConfig::with_lr(cfg.baseline.lr));

    for epoch in 0..cfg.epochs {
        trainer.train_epoch().unwrap();

        let batch = sample_batch(
            env.as_ref(),
            &policy,
            batch_seed(cfg.seed, epoch),
            cfg.batch_size,
        )
        .unwrap();
        let beta = entropy_coef(epoch, cfg.epochs, &cfg.entropy);
        let mut g = return_grad(env.as_ref(), &batch, &policy, &baseline, beta).unwrap();
        g.scale(-1.0);
        padam.step(&mut policy.params, &g).unwrap();
        baseline_update(env.as_ref(), &batch, &mut baseline, &mut badam).unwrap();

        assert_eq!(
            trainer.policy.params.as_slice(),
            policy.params.as_slice(),
            "epoch {epoch}"
        );
        assert_eq!(
            trainer.baseline.params.as_slice(),
            baseline.params.as_slice(),
            "epoch {epoch}"
        );
    }
}

#[test]
fn same_seed_gives_identical_metrics() {
    let cfg = small_vpn(1.0);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_training(&cfg, a.path()).unwrap();
    let mut det = cfg.clone();
    det.deterministic = true;
    run_training(&det, b.path()).unwrap();
    let ma = fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    let mb = fs::read_to_string(b.path().join(METRICS_FILE)).unwrap();
    assert_eq!(ma.lines().count(), cfg.epochs);
    assert_eq!(ma, mb);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let mut cfg = small_vpn(1.0);
    cfg.deterministic = true;
    cfg.checkpoint_every = 5;
    let full = tempfile::tempdir().unwrap();
    let finished = run_training(&cfg, full.path()).unwrap();

    let part = tempfile::tempdir().unwrap();
    copy_dir(full.path(), part.path());
    fs::write(
        part.path().join("checkpoints").join("LATEST"),
        "epoch-000005",
    )
    .unwrap();
    // Lines past the checkpoint are what a crash would leave behind; resume drops them.
    let resumed = resume_training(part.path()).unwrap();

    assert_eq!(resumed.epoch, cfg.epochs);
    let a = fs::read_to_string(full.path().join(METRICS_FILE)).unwrap();
    let b = fs::read_to_string(part.path().join(METRICS_FILE)).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        finished.policy.params.as_slice(),
        resumed.policy.params.as_slice()
    );
}

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_state() {
    let mut cfg = small_vpn(1.0);
    cfg.epochs = 3;
    let out = tempfile::tempdir().unwrap();
    let trained = run_training(&cfg, out.path()).unwrap();
    let loaded = load_checkpoint(&latest_checkpoint(out.path()).unwrap()).unwrap();
    assert_eq!(loaded.epoch, 3);
    assert_eq!(
        loaded.policy.params.as_slice(),
        trained.policy.params.as_slice()
    );
    assert_eq!(
        loaded.baseline.params.as_slice(),
        trained.baseline.params.as_slice()
    );
    assert_eq!(loaded.dual, trained.dual);
}

#[test]
fn divergence_leaves_a_diagnostic_line() {
    let mut cfg = preset("snap_unconstrained").unwrap();
    let mut env = SnapConfig::default();
    // Squared shortfalls overflow to infinity at this unit.
    env.reward_unit = 1e-305;
    cfg.env = EnvConfig::Snap(env);
    cfg.batch_size = 8;
    let out = tempfile::tempdir().unwrap();
    let err = run_training(&cfg, out.path())
        .err()
        .expect("training should diverge");
    let Error::Divergence { epoch, .. } = &err else {
        panic!("expected divergence, got {err}");
    };
    let epoch = epoch.expect("divergence carries its epoch");
    let metrics = fs::read_to_string(out.path().join(METRICS_FILE)).unwrap();
    let last = metrics.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["epoch"], epoch);
    assert!(v["diverged"].is_string());
    assert_eq!(metrics.lines().count(), epoch + 1);
}

#[test]
fn multipliers_stay_non_negative_under_coordinate_descent() {
    let mut cfg = small_vpn(0.2);
    cfg.dual.mode = mipriv::trainer::DualMode::CoordinateDescent;
    cfg.dual.epsilons = vec![1.0];
    cfg.dual.step = 0.5;
    let mut t = Trainer::new(cfg).unwrap();
    let seed_lambdas = t.dual.lambdas.clone();
    while !t.done() {
        t.train_epoch().unwrap();
        assert!(t.dual.lambdas.iter().all(|l| *l >= 0.0));
    }
    assert!(t
        .dual
        .lambdas
        .iter()
        .zip(&seed_lambdas)
        .all(|(a, b)| a <= b));
}
