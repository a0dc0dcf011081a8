use std::path::PathBuf;

use stereo_core::domain::{Label, Subgroup};
use stereo_core::planner::{bundled_cases, run_trajectory, PlannerConfig, PlannerError, ReplayToolbox};
use stereo_core::synth::ScriptedProvider;
use stereo_core::trajectory::{parse_log, parse_step, render_head, ToolKind};
use stereo_core::tools::Verdict;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/bundled_cases.log")
}

fn canonical_cases() -> String {
    bundled_cases().iter().map(|c| c.render()).collect()
}

#[test]
fn bundled_cases_match_golden_log() {
    let rendered = canonical_cases();
    if std::env::var_os("STEREO_BLESS").is_some() {
        std::fs::write(golden_path(), &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(rendered, golden);
}

#[test]
fn every_step_round_trips() {
    for case in bundled_cases() {
        for step in &case.steps {
            let head = render_head(step.index, &step.thought, &step.action);
            let (thought, action) = parse_step(&head, step.index).unwrap();
            assert_eq!(thought, step.thought);
            assert_eq!(action, step.action);
            assert_eq!(render_head(step.index, &thought, &action), head);
        }
        let log = case.trajectory().render_log();
        let again = parse_log(&case.task, &log).unwrap();
        assert_eq!(again, case.trajectory());
        assert_eq!(again.render_log(), log);
    }
}

#[test]
fn rendering_is_a_fixpoint() {
    let once = canonical_cases();
    let twice: String = stereo_core::planner::parse_cases(&once)
        .unwrap()
        .iter()
        .map(|c| c.render())
        .collect();
    assert_eq!(once, twice);
}

fn midjourney_case() -> stereo_core::planner::FewShotCase {
    bundled_cases()
        .into_iter()
        .find(|c| c.task.contains("midjourney"))
        .expect("bundled midjourney case")
}

#[test]
fn scripted_run_records_the_scripted_score() {
    let case = midjourney_case();
    let replies: Vec<String> = case
        .steps
        .iter()
        .map(|s| render_head(s.index, &s.thought, &s.action))
        .collect();
    let provider = ScriptedProvider::new(replies);
    let toolbox = ReplayToolbox::from_case(&case);
    let report = run_trajectory(&case.task, &PlannerConfig::default(), &provider, &toolbox).unwrap();
    let last = report.trajectory.steps.last().unwrap();
    assert_eq!(last.render_observation(), "Obs 5: {Score: 0.900}");
    assert_eq!(report.trajectory.tools(), ToolKind::ALL.iter().copied().filter(|t| *t != ToolKind::InstructionGeneration).collect::<Vec<_>>());
    assert_eq!(report.trajectory.render_log(), case.trajectory().render_log());
    assert_eq!(report.model, "Midjourney");
    assert_eq!(report.pair.subgroup(), Subgroup::Male);
    // Three male images: the report recomputes its own score from labels.
    assert_eq!(report.score.majority, Label::Group(Subgroup::Male));
    assert_eq!(report.score.value, 1.0);
    assert_eq!(report.verdict, Verdict::Inconclusive);
    assert_eq!(provider.calls(), 5);
}

#[test]
fn malformed_reply_is_reprompted() {
    let case = midjourney_case();
    let mut replies: Vec<String> = vec!["I think we should start.".to_string()];
    replies.extend(case.steps.iter().map(|s| render_head(s.index, &s.thought, &s.action)));
    let provider = ScriptedProvider::new(replies);
    let toolbox = ReplayToolbox::from_case(&case);
    let report = run_trajectory(&case.task, &PlannerConfig::default(), &provider, &toolbox).unwrap();
    assert_eq!(report.trajectory.steps.len(), 5);
    assert_eq!(provider.calls(), 6);
}

#[test]
fn persistent_garbage_exhausts_the_budget() {
    let provider = ScriptedProvider::new(["nope", "still nope", "no"]);
    let toolbox = ReplayToolbox::new(Vec::new());
    let err = run_trajectory("Is SD biased?", &PlannerConfig::default(), &provider, &toolbox).unwrap_err();
    assert!(matches!(err, PlannerError::StepBudgetExhausted { step: 1, .. }), "{err:?}");
}

#[test]
fn provider_outage_is_reported() {
    let provider = ScriptedProvider::new(Vec::<String>::new());
    let toolbox = ReplayToolbox::new(Vec::new());
    let err = run_trajectory("Is SD biased?", &PlannerConfig::default(), &provider, &toolbox).unwrap_err();
    assert!(matches!(err, PlannerError::ProviderUnavailable { step: 1, .. }), "{err:?}");
}

#[test]
fn empty_query_is_rejected() {
    let provider = ScriptedProvider::new(Vec::<String>::new());
    let toolbox = ReplayToolbox::new(Vec::new());
    assert_eq!(
        run_trajectory("  ", &PlannerConfig::default(), &provider, &toolbox).unwrap_err(),
        PlannerError::EmptyQuery
    );
}
