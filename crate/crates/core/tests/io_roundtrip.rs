use surestep::io::{self, Meta, ScenarioFile};
use surestep::noise_models::AblationMask;
use surestep::optimizer::{optimize, OptimizerConfig};
use surestep::sim_harness::{make_baseline, sample_scenario, scenario_seed, ScenarioBounds};

#[test]
fn sampled_scenarios_survive_toml() {
    let bounds = ScenarioBounds {
        camera_moves: 2,
        ..ScenarioBounds::default()
    };
    for i in 0..20 {
        let mut s = sample_scenario(scenario_seed(17, i), &bounds).unwrap();
        s.seed = i as u64;
        let file = ScenarioFile::from_scenario(&s, &AblationMask::ALL, &OptimizerConfig::default(), 1.0);
        let loaded = ScenarioFile::parse(&file.to_toml().unwrap())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(loaded.scenario, s);
        assert_eq!(loaded.mask, AblationMask::ALL);
        assert_eq!(loaded.optimizer, OptimizerConfig::default());
    }
}

#[test]
fn optimized_trajectories_survive_json() {
    let s = sample_scenario(scenario_seed(18, 0), &ScenarioBounds::default()).unwrap();
    let traj = optimize(
        &make_baseline(&s).unwrap(),
        &s.problem(AblationMask::ALL),
        &OptimizerConfig::default(),
    )
    .unwrap()
    .trajectory;
    let file = ScenarioFile::from_scenario(&s, &AblationMask::ALL, &OptimizerConfig::default(), 1.0);
    let meta = Meta::new("optimize", s.seed, &file);
    let text = io::trajectory_json(&traj, &s.cameras, &meta);
    assert_eq!(io::read_trajectory_json(&text).unwrap(), traj);
}

#[test]
fn unknown_keys_are_rejected() {
    let s = sample_scenario(scenario_seed(19, 0), &ScenarioBounds::default()).unwrap();
    let file = ScenarioFile::from_scenario(&s, &AblationMask::ALL, &OptimizerConfig::default(), 1.0);
    assert!(ScenarioFile {
        seed: u64::MAX,
        ..file.clone()
    }
    .to_toml()
    .is_err());
    let text = ScenarioFile { seed: 19, ..file }.to_toml().unwrap();
    assert!(ScenarioFile::parse(&format!("typo_field = 3\n{text}")).is_err());
}
