use std::path::PathBuf;

use pikachu_core::scenario::{Scenario, ScenarioError};
use pikachu_core::sim;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load(name: &str) -> Scenario {
    Scenario::parse(&std::fs::read_to_string(root().join("scenarios").join(name)).unwrap()).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(root().join("scenarios/golden").join(name)).unwrap()
}

#[test]
fn honest_5_matches_golden_log() {
    let report = sim::run(&load("honest_5.scn")).unwrap();
    assert!(report.ok(), "{:?}", report.violations);
    assert_eq!(report.log.text(), golden("honest_5.jsonl"));
}

#[test]
fn lra_attack_matches_golden_log() {
    let report = sim::run(&load("lra_attack.scn")).unwrap();
    assert!(report.ok(), "{:?}", report.violations);
    assert_eq!(report.log.text(), golden("lra_attack.jsonl"));
}

#[test]
fn init_5_matches_golden_log() {
    let report = sim::run_init(&load("init_5.scn")).unwrap();
    assert!(report.ok(), "{:?}", report.violations);
    assert_eq!(report.log.text(), golden("init_5.jsonl"));
}

#[test]
fn another_seed_changes_the_log() {
    let mut s = load("honest_5.scn");
    let a = sim::run(&s).unwrap().log.text();
    s.seed += 1;
    let b = sim::run(&s).unwrap();
    assert!(b.ok());
    assert_ne!(a, b.log.text());
}

#[test]
fn faulty_members_are_survived_and_named() {
    let mut s = load("honest_5.scn");
    s.adversary = toml::from_str::<toml::Table>(
        r#"
[[adversary]]
action = "bad-share"
participant = 2
config = 1
recipients = [3]

[[adversary]]
action = "withhold-partial"
participant = 4
config = 2
"#,
    )
    .unwrap()["adversary"]
        .clone()
        .try_into()
        .unwrap();
    s.validate().unwrap();
    let report = sim::run(&s).unwrap();
    assert!(report.ok(), "{:?}", report.violations);
    assert_eq!(report.checkpoints_confirmed(), 6);
    assert!(report.dkg_misbehaving[&1].contains(&2));
}

#[test]
fn remove_flag_drops_misbehaving_members() {
    let mut s = load("honest_5.scn");
    s.params.remove_misbehaving = true;
    s.adversary = vec![pikachu_core::scenario::AdversaryAction::AbortDkg { participant: 3, config: 0 }];
    s.validate().unwrap();
    let report = sim::run(&s).unwrap();
    assert!(report.log.lines().iter().any(|l| l.contains("\"misbehaving\":[3]")));
    assert!(report.records.len() > 1);
}

#[test]
fn invalid_scenarios_report_locations() {
    let text = std::fs::read_to_string(root().join("scenarios/honest_5.scn")).unwrap();
    let bad = text.replacen("id = 1\n", "id = 40\n", 1);
    match Scenario::parse(&bad) {
        Err(ScenarioError::Invalid { location, .. }) => assert!(location.starts_with("schedule["), "{location}"),
        other => panic!("{other:?}"),
    }
    let attack = std::fs::read_to_string(root().join("scenarios/lra_attack.scn")).unwrap();
    let too_recent = attack.replace("config = 2", "config = 3");
    match Scenario::parse(&too_recent) {
        Err(ScenarioError::Invalid { location, .. }) => assert_eq!(location, "adversary[1]"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Scenario::parse("version = 2\nseed = 1\nparticipants = 3\n"), Err(ScenarioError::Invalid { .. })));
    assert!(matches!(Scenario::parse("version = 1\nseed = 1\nparticipants = 3\nbogus = 1\n"), Err(ScenarioError::Parse(_))));
}
