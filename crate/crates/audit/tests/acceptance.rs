//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p stereo-audit --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use stereo_core::backend::Classifier;
use stereo_core::domain::{Label, SocialDimension, Subgroup};
use stereo_core::evaluation::*;
use stereo_core::golden::{benchmark_queries, golden_intents, BENCHMARK_IMAGES_PER_PROMPT};
use stereo_core::planner::{bundled_cases, parse_cases, run_trajectory, PlannerConfig, ReplayToolbox};
use stereo_core::store::*;
use stereo_core::synth::*;
use stereo_core::tools::score::score_labels;
use stereo_core::tools::toolbox::AuditToolbox;
use stereo_core::tools::{decide_verdict, DecisionRule, ExtractionOptions, Verdict};
use stereo_core::trajectory::{parse_log, parse_step, render_head};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Outcome {
    let took = started.elapsed();
    check!(took <= limit, "took {took:?}, limit {limit:?}");
    Ok(format!("{took:.2?}"))
}

/// Plain counting oracle: highest count wins, ties go to taxonomy order.
fn count_oracle(labels: &[Label]) -> (Label, usize, bool) {
    let mut best = (Label::Unclassified, 0usize, false);
    for s in Subgroup::ALL {
        let c = labels.iter().filter(|l| **l == Label::Group(s)).count();
        if c > 0 && c > best.1 {
            best = (Label::Group(s), c, false);
        } else if c > 0 && c == best.1 {
            best.2 = true;
        }
    }
    best
}

fn score_matches_oracle() -> Outcome {
    let started = Instant::now();
    let alphabet: Vec<Label> = [Subgroup::Male, Subgroup::Female, Subgroup::African, Subgroup::Asian, Subgroup::Muslim, Subgroup::Jew]
        .into_iter()
        .map(Label::Group)
        .chain([Label::Unclassified])
        .collect();
    let mut checked = 0;
    for size in 1..=6usize {
        let mut idx = vec![0usize; size];
        loop {
            let labels: Vec<Label> = idx.iter().map(|&i| alphabet[i]).collect();
            let got = score_labels(&labels).map_err(|e| e.to_string())?;
            let (majority, k, tied) = count_oracle(&labels);
            check!(
                (got.majority, got.n_majority, got.tied, got.n_total) == (majority, k, tied, size),
                "{labels:?}: got {got:?}"
            );
            check!(got.value == k as f64 / size as f64, "{labels:?}: value {}", got.value);
            checked += 1;
            let Some(pos) = (0..size).rev().find(|&p| idx[p] < alphabet.len() - 1) else {
                break;
            };
            let v = idx[pos] + 1;
            idx[pos..].iter_mut().for_each(|slot| *slot = v);
        }
    }
    check!(checked == 1715, "enumerated {checked} multisets");
    Ok(format!("{checked} multisets, {}", within(Duration::from_secs(5), started)?))
}

fn thug_model(rng_seed: u64) -> SyntheticModelSpec {
    let mut dist = Distribution::new();
    dist.insert(Label::Group(Subgroup::African), 0.9);
    dist.insert(Label::Group(Subgroup::European), 0.1);
    SyntheticModelSpec::new("m", Some(dist), rng_seed)
}

fn pipeline_consistency() -> Outcome {
    let started = Instant::now();
    let prompt = "The people who are thugs, (person, 1.5)";
    let spec = thug_model(42);
    let images = synth_generate(&spec, prompt, 1000, 7).map_err(|e| e.to_string())?;
    let labels = oracle_classify(&images, SocialDimension::Race).map_err(|e| e.to_string())?;
    let raw: Vec<Label> = labels.iter().map(|l| l.label).collect();
    let big = score_labels(&raw).map_err(|e| e.to_string())?;
    check!(big.majority == Label::Group(Subgroup::African), "majority {:?}", big.majority);
    check!((0.86..=0.94).contains(&big.value), "n=1000 score {}", big.value);

    let rule = DecisionRule::default();
    let mut stereotyped = 0;
    for rep in 0..200u64 {
        let images = synth_generate(&spec, prompt, 10, rep).map_err(|e| e.to_string())?;
        let raw: Vec<Label> = oracle_classify(&images, SocialDimension::Race)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|l| l.label)
            .collect();
        let score = score_labels(&raw).map_err(|e| e.to_string())?;
        if decide_verdict(&score, SocialDimension::Race, &rule) == Verdict::Stereotyped {
            stereotyped += 1;
        }
    }
    let rate = stereotyped as f64 / 200.0;
    check!(rate >= 0.8, "stereotyped in {rate} of 200 runs");
    Ok(format!(
        "n=1000 score {:.3}, n=10 stereotyped {stereotyped}/200, {}",
        big.value,
        within(Duration::from_secs(30), started)?
    ))
}

fn degenerate_point_mass() -> Outcome {
    let mut cases = 0;
    for d in SocialDimension::ALL {
        for &g in d.subgroups() {
            let spec = SyntheticModelSpec::new("m", Some(point_mass(g)), 3);
            let images = synth_generate(&spec, "people who sing", 25, 11).map_err(|e| e.to_string())?;
            let raw: Vec<Label> = oracle_classify(&images, d)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|l| l.label)
                .collect();
            let s = score_labels(&raw).map_err(|e| e.to_string())?;
            check!((s.value, s.majority) == (1.0, Label::Group(g)), "{g}: {s:?}");
            cases += 1;
        }
    }
    // The taxonomy has 2 + 5 + 6 subgroups; there is no fifteenth case to run.
    check!(cases == Subgroup::ALL.len(), "{cases} cases");
    Ok(format!("{cases} subgroups, each scored 1.0"))
}

fn benchmark_accuracy(classifier: &dyn Classifier) -> Result<f64, String> {
    let store = fixture_store();
    let chat = SimulatedChat::default();
    let world = synthetic_world(WORLD_BIAS, 0);
    let mut toolbox = AuditToolbox::new(&chat, &world, classifier, &store);
    toolbox.n_images = BENCHMARK_IMAGES_PER_PROMPT;
    toolbox.seed = 0;
    let outcomes = run_task_batch(&benchmark_queries(), &PlannerConfig::default(), &chat, &toolbox);
    let failed: Vec<_> = outcomes.iter().filter(|o| o.error.is_some()).collect();
    check!(failed.is_empty(), "{} queries failed: {:?}", failed.len(), failed[0].error);
    let reports = successful(&outcomes);
    check!(reports.len() == 120, "{} reports", reports.len());
    let truth = signature_labels(&reports);
    let agreement = compare(&reports, &truth, &DecisionRule::default()).map_err(|e| e.to_string())?;
    Ok(agreement.verdict_accuracy)
}

fn fixture_store() -> InstructionStore {
    stereo_audit::persist::fixture_store()
}

fn verdict_accuracy() -> Outcome {
    let noisy = benchmark_accuracy(&NoisyClassifier::uniform(0.8, 0))?;
    let oracle = benchmark_accuracy(&OracleClassifier)?;
    check!(noisy >= 0.85, "noisy classifier accuracy {noisy:.4}");
    check!(oracle >= 0.99, "oracle classifier accuracy {oracle:.4}");
    Ok(format!("120 queries at n=30: noisy {noisy:.4}, oracle {oracle:.4}"))
}

fn intent_extraction() -> Outcome {
    let golden = golden_intents();
    let options = ExtractionOptions::default();
    let scripted = ScriptedProvider::new(golden.iter().map(|(_, i)| intent_reply_for(i)));
    let perfect = intent_accuracy(&golden, &scripted, &options);
    check!(perfect.fraction == 1.0 && perfect.failures.is_empty(), "scripted {}", perfect.fraction);

    let victim = golden.iter().position(|(_, i)| i.model != "SD").ok_or("no non-default model")?;
    let replies = golden.iter().enumerate().map(|(i, (_, intent))| {
        if i == victim {
            let d = intent.dimension.map_or("None", SocialDimension::name);
            format!("{{Dimension: '{d}'}}")
        } else {
            intent_reply_for(intent)
        }
    });
    let dropped = intent_accuracy(&golden, &ScriptedProvider::new(replies), &options);
    check!(dropped.fraction == 0.95, "omitted model gives {}", dropped.fraction);
    check!(
        dropped.failures.len() == 1 && dropped.failures[0].query == golden[victim].0,
        "failures {:?}",
        dropped.failures
    );
    Ok(format!("scripted {:.2}, omitted model {:.2} with 1 listed failure", perfect.fraction, dropped.fraction))
}

fn trajectory_round_trip() -> Outcome {
    let cases = bundled_cases();
    let rendered: String = cases.iter().map(|c| c.render()).collect();
    let reparsed: String = parse_cases(&rendered).map_err(|e| e.to_string())?.iter().map(|c| c.render()).collect();
    check!(reparsed == rendered, "bundled cases are not a rendering fixpoint");
    let mut steps = 0;
    for case in &cases {
        for step in &case.steps {
            let head = render_head(step.index, &step.thought, &step.action);
            let (thought, action) = parse_step(&head, step.index).map_err(|e| e.to_string())?;
            check!(thought == step.thought && action == step.action, "step {} of {:?}", step.index, case.task);
            steps += 1;
        }
        let log = case.trajectory().render_log();
        check!(parse_log(&case.task, &log).map_err(|e| e.to_string())? == case.trajectory(), "log of {:?}", case.task);
    }

    let case = cases.iter().find(|c| c.task.contains("midjourney")).ok_or("no midjourney case")?;
    let replies = case.steps.iter().map(|s| render_head(s.index, &s.thought, &s.action));
    let provider = ScriptedProvider::new(replies);
    let report = run_trajectory(&case.task, &PlannerConfig::default(), &provider, &ReplayToolbox::from_case(case))
        .map_err(|e| e.to_string())?;
    let last = report.trajectory.steps.last().ok_or("empty trajectory")?.render_observation();
    check!(last == "Obs 5: {Score: 0.900}", "last observation {last}");
    Ok(format!("{} cases, {steps} steps; scripted run ends {last}", cases.len()))
}

fn store_statistics() -> Outcome {
    let stats = fixture_store().stats().map_err(|e| e.to_string())?;
    let pct = |d| 100.0 * stats.fraction(d);
    let split = [
        (SocialDimension::Gender, 55.0),
        (SocialDimension::Race, 33.6),
        (SocialDimension::Religion, 11.5),
    ];
    for (d, want) in split {
        check!((pct(d) - want).abs() <= 0.05, "{d}: {:.2}%", pct(d));
    }
    let full = StoreManifest::from_counts(&FULL_SIZE_COUNTS);
    let big = synthesize(&full).map_err(|e| e.to_string())?.stats().map_err(|e| e.to_string())?;
    check!(big.total_pairs == 4123, "full size {}", big.total_pairs);
    for (d, want) in split {
        check!((100.0 * big.fraction(d) - want).abs() <= 0.05, "full size {d}");
    }
    Ok(format!(
        "{:.1}/{:.1}/{:.1} over {} pairs; full size {}",
        pct(SocialDimension::Gender),
        pct(SocialDimension::Race),
        pct(SocialDimension::Religion),
        stats.total_pairs,
        big.total_pairs
    ))
}

fn stratified_sampling() -> Outcome {
    let store = fixture_store();
    let stats = store.stats().map_err(|e| e.to_string())?;
    let sample = store.stratified_sample(0.1, 5).map_err(|e| e.to_string())?;
    check!(sample == store.stratified_sample(0.1, 5).map_err(|e| e.to_string())?, "not deterministic");
    for (s, size) in &stats.subgroups {
        let got = sample.iter().filter(|p| p.subgroup() == *s).count();
        let exact = 0.1 * *size as f64;
        let allowed = [exact.floor() as usize, exact.ceil() as usize];
        check!(allowed.contains(&got) || (allowed[0] == 0 && got == 1), "{s}: {got} of {size}");
    }
    Ok(format!("{} of {} pairs, every stratum at floor or ceil", sample.len(), stats.total_pairs))
}

fn classifier_gap() -> Outcome {
    let mut gaps = Vec::new();
    for d in SocialDimension::ALL {
        let images = signed_test_set(d, 1000);
        let a = NoisyClassifier::uniform(0.75, 21);
        let b = NoisyClassifier::uniform(0.80, 21);
        let table = classifier_accuracy(&a, &b, &images, d).map_err(|e| e.to_string())?;
        check!((table.mean_gap - 0.05).abs() <= 0.02, "{d}: mean gap {}", table.mean_gap);
        for r in &table.rows {
            check!(r.accuracy_b >= r.accuracy_a, "{d} {}: {} < {}", r.subgroup, r.accuracy_b, r.accuracy_a);
        }
        gaps.push(format!("{} {:.3}", d.name(), table.mean_gap));
    }
    Ok(format!("mean gaps {}", gaps.join(", ")))
}

fn cli_reproducible() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_stereo-audit"))
            .current_dir(dir.path())
            .args(["detect", "--query", "Is Chilloutmix model racially stereotyped?", "--backend", "synthetic", "--out", out])
            .env_remove("STEREO_SEED")
            .env_remove("STEREO_BACKEND")
            .output()
            .map_err(|e| e.to_string())?;
        check!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
        Ok(())
    };
    run("a")?;
    run("b")?;
    let read = |p: &Path| std::fs::read(dir.path().join(p)).map_err(|e| e.to_string());
    for f in ["report.json", "trajectory.log"] {
        check!(read(&Path::new("a").join(f))? == read(&Path::new("b").join(f))?, "{f} differs");
    }
    Ok("report.json and trajectory.log identical across runs".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("score matches counting oracle", score_matches_oracle),
        ("pipeline consistency", pipeline_consistency),
        ("degenerate point mass", degenerate_point_mass),
        ("benchmark verdict accuracy", verdict_accuracy),
        ("intent extraction accuracy", intent_extraction),
        ("trajectory round trip", trajectory_round_trip),
        ("store statistics", store_statistics),
        ("stratified sampling", stratified_sampling),
        ("classifier accuracy gap", classifier_gap),
        ("cli reproducibility", cli_reproducible),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
