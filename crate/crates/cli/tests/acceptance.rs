//! Acceptance suite. One test per criterion; each prints a PASS line with its
//! measured quantities. Run with
//! `cargo test -p stepsmc-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use stepsmc_cli::manifest::Manifest;
use stepsmc_cli::runner::run_benchmark;
use stepsmc_core::rng::{derive_rng, derive_seed, stream};
use stepsmc_core::synthetic::{
    hmm_as_backends, hmm_exact_filtering, mean_tv_distance, noisy_task_backends, pf_filtering_estimates,
    DiscreteHmm, HmmRewardSpace, NoisyRewardTask,
};
use stepsmc_core::{
    accept_swap, best_of_n, dvts, particle_filter, particle_gibbs, select_answer, softmax_distribution,
    swap_probability, AggregationMode, PFConfig, Prompt, SelectionRule, WeightTransform,
};
use stepsmc_gateway::{
    EmulatorSpec, GatewayConfig, GenerationRequest, MockBehavior, MockServer, PolicyClient,
    PrmScoreRequest, RewardClient, ScoreMode, REWARD_TOKEN,
};

#[path = "../../core/tests/corpus_data.rs"]
mod corpus_data;

fn pass(criterion: &str, started: Instant, detail: &str) {
    println!(
        "[acceptance] {criterion}: PASS ({detail}; {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: published softmax distribution reproduced.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_softmax_reproduction() {
    let started = Instant::now();
    let dist = softmax_distribution(&[2.1, -1.2, 1.3, 0.1], 1.0).unwrap();
    let expected = [0.617, 0.023, 0.277, 0.083];
    for (index, (&p, e)) in dist.probs().iter().zip(expected).enumerate() {
        assert!(
            (p - e).abs() <= 1e-3,
            "prob[{index}] = {p} differs from {e} by more than 1e-3"
        );
    }
    pass(
        "criterion 1 (softmax reproduction)",
        started,
        &format!("probs {:?} within 1e-3", dist.probs()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: HMM oracle equivalence and particle convergence.
// ---------------------------------------------------------------------------

/// Independent oracle: filtering marginals by exhaustive path enumeration.
fn enumeration_filtering(hmm: &DiscreteHmm, observations: &[usize]) -> Vec<Vec<f64>> {
    let n = hmm.n_states();
    let mut marginals = Vec::new();
    for t in 0..observations.len() {
        let length = t + 1;
        let path_count = n.pow(length as u32);
        assert!(path_count <= 1_000_000);
        let mut mass = vec![0.0_f64; n];
        for code in 0..path_count {
            let mut digits = Vec::with_capacity(length);
            let mut rest = code;
            for _ in 0..length {
                digits.push(rest % n);
                rest /= n;
            }
            let mut weight = hmm.initial()[digits[0]] * hmm.emission()[digits[0]][observations[0]];
            for k in 1..length {
                weight *=
                    hmm.transition()[digits[k - 1]][digits[k]] * hmm.emission()[digits[k]][observations[k]];
            }
            mass[digits[length - 1]] += weight;
        }
        let total: f64 = mass.iter().sum();
        assert!(total > 0.0);
        marginals.push(mass.into_iter().map(|m| m / total).collect());
    }
    marginals
}

#[test]
fn criterion_2_hmm_oracle_equivalence() {
    let started = Instant::now();

    // Exact filtering matches enumeration on 20 random instances.
    let mut worst = 0.0_f64;
    for instance in 0..20 {
        let mut rng = derive_rng(2_000 + instance, &[]);
        let hmm = DiscreteHmm::random(3, 3, 5, &mut rng);
        let (_, observations) = hmm.sample_sequence(&mut rng);
        let fast = hmm_exact_filtering(&hmm, &observations).unwrap();
        let brute = enumeration_filtering(&hmm, &observations);
        for (row_fast, row_brute) in fast.iter().zip(&brute) {
            for (a, b) in row_fast.iter().zip(row_brute) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-10, "max |forward - enumeration| = {worst:e}");

    // Bootstrap-configured particle filter converges to the exact marginals.
    let mut rng = derive_rng(777, &[]);
    let hmm = DiscreteHmm::random(3, 3, 5, &mut rng);
    let (_, observations) = hmm.sample_sequence(&mut rng);
    let exact = hmm_exact_filtering(&hmm, &observations).unwrap();
    let (transition, reward) = hmm_as_backends(&hmm, &observations, HmmRewardSpace::LogLikelihood).unwrap();
    let prompt = Prompt::new("hmm", "filtering").unwrap();

    let seeds = 100;
    let mut mean_tv = Vec::new();
    for n_particles in [128usize, 2048] {
        let mut total = 0.0;
        for seed in 0..seeds {
            let cfg = PFConfig {
                n_particles,
                max_steps: hmm.horizon() + 2,
                aggregation: AggregationMode::Last,
                softmax_temperature: 1.0,
                weight_transform: WeightTransform::Raw,
                seed: 40_000 + seed,
                ..PFConfig::default()
            };
            let outcome = particle_filter(&prompt, &transition, &reward, &cfg, None).unwrap();
            total += mean_tv_distance(&pf_filtering_estimates(&outcome, hmm.n_states()), &exact);
        }
        mean_tv.push(total / seeds as f64);
    }
    assert!(mean_tv[1] < 0.05, "mean TV at N=2048 is {}", mean_tv[1]);
    assert!(
        mean_tv[1] < mean_tv[0],
        "mean TV did not decrease: N=128 {} vs N=2048 {}",
        mean_tv[0],
        mean_tv[1]
    );
    pass(
        "criterion 2 (HMM oracle equivalence)",
        started,
        &format!(
            "enumeration err {worst:.2e}; mean TV N=128 {:.4}, N=2048 {:.4} over {seeds} seeds",
            mean_tv[0], mean_tv[1]
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: sampling beats search under reward noise.
// ---------------------------------------------------------------------------

/// Frozen regression floors, established by a calibration sweep before being
/// pinned: particle filtering at budget 16 on (branching 4, depth 4,
/// sigma 0.3) scored ~0.95, parallel-subtree beam search ~0.58, best-of-n
/// ~0.06 over 2000 instances.
const MIN_MARGIN_OVER_DVTS: f64 = 0.15;
const MIN_MARGIN_OVER_BON: f64 = 0.50;

fn one_sided_paired_p(differences: &[f64]) -> f64 {
    let n = differences.len() as f64;
    let mean = differences.iter().sum::<f64>() / n;
    let var = differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let z = mean / se;
    let normal = Normal::new(0.0, 1.0).unwrap();
    1.0 - normal.cdf(z)
}

#[test]
fn criterion_3_sampling_beats_search_under_noise() {
    let started = Instant::now();
    let instances = 1000;
    let budget = 16;
    let prompt = Prompt::new("noisy", "find the path").unwrap();

    let mut pf_hits = Vec::with_capacity(instances);
    let mut dvts_hits = Vec::with_capacity(instances);
    let mut bon_hits = Vec::with_capacity(instances);

    for instance in 0..instances {
        let task = NoisyRewardTask::random(4, 4, 0.3, derive_seed(31_337, &[instance as u64]));
        let (transition, reward) = noisy_task_backends(&task);
        let seed = derive_seed(88_000, &[instance as u64]);

        let cfg = PFConfig {
            n_particles: budget,
            max_steps: task.depth + 2,
            aggregation: AggregationMode::Last,
            softmax_temperature: 0.1,
            weight_transform: WeightTransform::Raw,
            seed,
            ..PFConfig::default()
        };
        let outcome = particle_filter(&prompt, &transition, &reward, &cfg, None).unwrap();
        let selection = select_answer(
            &prompt,
            &outcome.particles,
            cfg.aggregation,
            Some(&reward),
            derive_seed(seed, &[stream::SELECT]),
        )
        .unwrap();
        pf_hits.push(task.is_correct(&outcome.particles[selection.index]) as u8 as f64);

        let beam = dvts(
            &prompt,
            &transition,
            &reward,
            budget,
            4,
            AggregationMode::Last,
            task.depth + 2,
            derive_seed(seed, &[stream::DVTS]),
            &NoisyRewardTask::answer_of,
        )
        .unwrap();
        dvts_hits.push(task.is_correct(beam.winning_particle()) as u8 as f64);

        let bon = best_of_n(
            &prompt,
            &transition,
            &reward,
            budget,
            SelectionRule::Bon,
            task.depth + 2,
            derive_seed(seed, &[stream::ROLLOUT]),
            &NoisyRewardTask::answer_of,
        )
        .unwrap();
        bon_hits.push(task.is_correct(bon.winning_particle()) as u8 as f64);
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let pf_acc = mean(&pf_hits);
    let dvts_acc = mean(&dvts_hits);
    let bon_acc = mean(&bon_hits);

    let dvts_diffs: Vec<f64> = pf_hits.iter().zip(&dvts_hits).map(|(a, b)| a - b).collect();
    let bon_diffs: Vec<f64> = pf_hits.iter().zip(&bon_hits).map(|(a, b)| a - b).collect();
    let p_dvts = one_sided_paired_p(&dvts_diffs);
    let p_bon = one_sided_paired_p(&bon_diffs);

    assert!(pf_acc >= dvts_acc, "PF {pf_acc} below DVTS {dvts_acc}");
    assert!(pf_acc >= bon_acc, "PF {pf_acc} below BoN {bon_acc}");
    assert!(p_dvts < 0.05, "PF vs DVTS one-sided p = {p_dvts}");
    assert!(p_bon < 0.05, "PF vs BoN one-sided p = {p_bon}");
    assert!(
        pf_acc - dvts_acc >= MIN_MARGIN_OVER_DVTS,
        "margin over DVTS {:.4} below frozen floor {MIN_MARGIN_OVER_DVTS}",
        pf_acc - dvts_acc
    );
    assert!(
        pf_acc - bon_acc >= MIN_MARGIN_OVER_BON,
        "margin over BoN {:.4} below frozen floor {MIN_MARGIN_OVER_BON}",
        pf_acc - bon_acc
    );
    pass(
        "criterion 3 (sampling vs search robustness)",
        started,
        &format!(
            "PF {pf_acc:.3} vs DVTS {dvts_acc:.3} (p={p_dvts:.2e}) vs BoN {bon_acc:.3} (p={p_bon:.2e}) over {instances} instances"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: perfect-reward degeneracies.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_perfect_reward_degeneracy() {
    let started = Instant::now();
    let prompt = Prompt::new("noisy", "find the path").unwrap();

    // Best-of-n equals pass@n exactly on the same rollouts.
    let mut bon_accuracy = Vec::new();
    for n in [1usize, 2, 4, 8] {
        let mut bon_correct = 0usize;
        let seeds = 300;
        for seed in 0..seeds {
            let task = NoisyRewardTask::random(4, 3, 0.0, derive_seed(9_000, &[n as u64, seed]));
            let (transition, reward) = noisy_task_backends(&task);
            let outcome = best_of_n(
                &prompt,
                &transition,
                &reward,
                n,
                SelectionRule::Bon,
                task.depth + 2,
                derive_seed(9_100, &[n as u64, seed]),
                &NoisyRewardTask::answer_of,
            )
            .unwrap();
            let bon_hit = task.is_correct(outcome.winning_particle());
            let pass_at_n = outcome.rollouts.iter().any(|r| task.is_correct(&r.particle));
            assert_eq!(bon_hit, pass_at_n, "bon@{n} diverged from pass@{n} at seed {seed}");
            bon_correct += bon_hit as usize;
        }
        bon_accuracy.push((n, bon_correct as f64 / seeds as f64));
    }

    // Particle filtering accuracy is monotone non-decreasing in N within
    // 95% confidence intervals.
    let seeds = 400;
    let mut curve = Vec::new();
    for n_particles in [1usize, 2, 4, 8, 16] {
        let mut hits = 0usize;
        for seed in 0..seeds {
            let task = NoisyRewardTask::random(4, 3, 0.0, derive_seed(9_200, &[seed]));
            let (transition, reward) = noisy_task_backends(&task);
            let cfg = PFConfig {
                n_particles,
                max_steps: task.depth + 2,
                aggregation: AggregationMode::Last,
                softmax_temperature: 0.1,
                weight_transform: WeightTransform::Raw,
                seed: derive_seed(9_300, &[n_particles as u64, seed]),
                ..PFConfig::default()
            };
            let outcome = particle_filter(&prompt, &transition, &reward, &cfg, None).unwrap();
            let selection =
                select_answer(&prompt, &outcome.particles, cfg.aggregation, Some(&reward), seed).unwrap();
            hits += task.is_correct(&outcome.particles[selection.index]) as usize;
        }
        curve.push(hits as f64 / seeds as f64);
    }
    for window in curve.windows(2) {
        let (low, high) = (window[0], window[1]);
        let se = ((low * (1.0 - low) + high * (1.0 - high)) / seeds as f64).sqrt();
        assert!(
            high - low >= -1.96 * se,
            "accuracy decreased beyond the 95% interval: {curve:?}"
        );
    }
    pass(
        "criterion 4 (perfect-reward degeneracy)",
        started,
        &format!("bon@n == pass@n for n in {{1,2,4,8}} (acc {bon_accuracy:?}); PF curve {curve:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: algorithmic invariants.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_algorithmic_invariants() {
    let started = Instant::now();
    let prompt = Prompt::new("inv", "invariants").unwrap();

    // Reference preservation in every Gibbs iteration past the first.
    let task = NoisyRewardTask::random(4, 4, 0.3, 51);
    let (transition, reward) = noisy_task_backends(&task);
    let cfg = PFConfig {
        n_particles: 8,
        max_steps: task.depth + 2,
        aggregation: AggregationMode::Last,
        softmax_temperature: 0.1,
        weight_transform: WeightTransform::Raw,
        seed: 53,
        ..PFConfig::default()
    };
    let gibbs = particle_gibbs(&prompt, &transition, &reward, &cfg, 4).unwrap();
    for it in 1..gibbs.iterations.len() {
        let reference = &gibbs.iterations[it - 1].particles[gibbs.references[it - 1].index];
        let outcome = &gibbs.iterations[it];
        for round in &outcome.rounds {
            assert_eq!(*round.sampled_indices.last().unwrap(), cfg.n_particles - 1);
            let held = round.pre_resample.last().unwrap();
            assert_eq!(held.steps(), &reference.steps()[..held.len()]);
        }
        assert_eq!(outcome.particles.last().unwrap().steps(), reference.steps());
    }

    // Empirical swap acceptance within the 99% binomial interval over 10k
    // decisions, at two acceptance levels.
    for (w_hot, w_cold) in [(0.4, 0.9), (0.2, 0.8)] {
        let acceptance = swap_probability(w_hot, w_cold, 2.0, 1.0);
        let trials = 10_000u32;
        let mut rng = derive_rng(59, &[w_hot.to_bits()]);
        let accepted = (0..trials).filter(|_| accept_swap(acceptance, &mut rng)).count();
        let rate = accepted as f64 / trials as f64;
        let half_width = 2.5758 * (acceptance * (1.0 - acceptance) / trials as f64).sqrt();
        assert!(
            (rate - acceptance).abs() <= half_width,
            "swap rate {rate} vs acceptance {acceptance} (99% interval ±{half_width:.4})"
        );
    }

    // Softmax shift invariance to 1e-12.
    let mut rng = derive_rng(61, &[]);
    for case in 0..200 {
        let len = 2 + (case % 16);
        let weights: Vec<f64> =
            (0..len).map(|_| stepsmc_core::rng::derive_seed(case as u64, &[]) as f64 / u64::MAX as f64 * 8.0 - 4.0
                + (case as f64 * 0.01)).collect();
        let shift = (stepsmc_core::rng::derive_seed(7_000 + case as u64, &[]) % 1000) as f64 / 10.0 - 50.0;
        let base = softmax_distribution(&weights, 0.7).unwrap();
        let shifted_weights: Vec<f64> = weights.iter().map(|w| w + shift).collect();
        let shifted = softmax_distribution(&shifted_weights, 0.7).unwrap();
        for (a, b) in base.probs().iter().zip(shifted.probs()) {
            assert!((a - b).abs() <= 1e-12, "shift invariance violated: {a} vs {b}");
        }
    }
    let _ = &mut rng;

    // Particle count conservation at every round of every algorithm.
    let outcome = particle_filter(&prompt, &transition, &reward, &cfg, None).unwrap();
    for round in &outcome.rounds {
        assert_eq!(round.pre_resample.len(), cfg.n_particles);
        assert_eq!(round.sampled_indices.len(), cfg.n_particles);
    }
    for iteration in &gibbs.iterations {
        for round in &iteration.rounds {
            assert_eq!(round.pre_resample.len(), cfg.n_particles);
        }
    }

    // Byte determinism of synthetic run records across two consecutive runs.
    let mut manifest = Manifest::default();
    manifest.run.questions = 6;
    manifest.run.seed = 97;
    manifest.engine.particles = 8;
    manifest.engine.softmax_temperature = 0.1;
    let first = run_benchmark(&manifest, None).unwrap();
    let second = run_benchmark(&manifest, None).unwrap();
    for (a, b) in first.records.iter().zip(&second.records) {
        assert_eq!(a.canonical_json(), b.canonical_json());
    }
    assert_eq!(first.digest, second.digest);

    pass(
        "criterion 5 (algorithmic invariants)",
        started,
        &format!(
            "reference preserved over {} iterations; swap CIs hold; shift invariance 1e-12; run digest {}",
            gibbs.iterations.len(),
            first.digest
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: wire-format golden tests and mock end-to-end replay.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_wire_formats_and_mock_replay() {
    let started = Instant::now();
    let golden_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../gateway/tests/golden");

    let prompt = Prompt::new("math-0001", "What is 12 + 30?")
        .unwrap()
        .with_system("Answer step by step and box the final answer.");
    let steps: Vec<stepsmc_core::Step> = (1..=3)
        .map(|k| {
            stepsmc_core::Step::continuing(format!(
                " {k}: [Concise description]\n[Brief explanation and calculations]"
            ))
            .unwrap()
        })
        .collect();

    // Request bodies are bit-identical to the pinned fixtures.
    let per_step = PrmScoreRequest::new(&prompt, &steps, ScoreMode::PerStep);
    let whole = PrmScoreRequest::new(&prompt, &steps, ScoreMode::Whole);
    let generation = GenerationRequest::new(&prompt, &steps[..2], 512, 0.8, Some(7));
    for (name, actual) in [
        ("prm_per_step.json", per_step.body_json()),
        ("orm_whole.json", whole.body_json()),
        ("chat_completion.json", generation.body_json("test-model")),
    ] {
        let expected = std::fs::read_to_string(golden_dir.join(name)).unwrap();
        assert_eq!(actual, expected, "golden mismatch for {name}");
    }

    // Boundary placement: one marker after every step, or one terminal one.
    assert_eq!(per_step.rendered_input().matches(REWARD_TOKEN).count(), steps.len());
    assert_eq!(whole.rendered_input().matches(REWARD_TOKEN).count(), 1);
    assert!(whole.rendered_input().trim_end().ends_with(REWARD_TOKEN));

    // Mock end-to-end particle filter run at N=4, replayed deterministically.
    let server = MockServer::start(MockBehavior::Emulator(EmulatorSpec {
        steps_per_answer: 2,
        answers: vec![],
        default_answer: "42".into(),
        score_seed: 9,
    }))
    .unwrap();
    let config = GatewayConfig {
        policy_url: server.url(),
        reward_url: server.url(),
        initial_backoff: std::time::Duration::from_millis(1),
        ..GatewayConfig::default()
    };
    let policy = PolicyClient::new(&config).unwrap();
    let reward = RewardClient::new(&config).unwrap();
    let cfg = PFConfig {
        n_particles: 4,
        max_steps: 8,
        aggregation: AggregationMode::Last,
        softmax_temperature: 0.5,
        seed: 4242,
        ..PFConfig::default()
    };
    let question = Prompt::new("q-mock", "What is 6 x 7?").unwrap();
    let first = particle_filter(&question, &policy, &reward, &cfg, None).unwrap();
    let second = particle_filter(&question, &policy, &reward, &cfg, None).unwrap();
    assert_eq!(first.particles.len(), 4);
    assert!(first.particles.iter().all(|p| p.is_finished()));
    assert_eq!(
        serde_json::to_vec(&first).unwrap(),
        serde_json::to_vec(&second).unwrap()
    );

    pass(
        "criterion 6 (wire formats and mock replay)",
        started,
        "golden bodies bit-identical; mock N=4 run replays byte-identically",
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: parser corpus and fuzzing.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_parser_corpus() {
    let started = Instant::now();
    let cases = corpus_data::full_corpus();
    assert!(cases.len() >= 100, "corpus has only {} cases", cases.len());
    let mut failures = 0usize;
    for (output, gold, expected) in &cases {
        if corpus_data::grade(output, gold) != *expected {
            failures += 1;
        }
    }
    assert_eq!(failures, 0, "{failures} corpus failures");

    // 10^5 fuzz inputs without a crash.
    use rand::RngCore;
    let mut rng = derive_rng(0xF7, &[]);
    let fragments = ["\\boxed{", "}", "{", "\\", "$", "frac", "\\boxed{y}", "## Step", "π"];
    for _ in 0..100_000 {
        let mut input = String::new();
        for _ in 0..(rng.next_u32() % 8) {
            let choice = rng.next_u32() as usize;
            if choice.is_multiple_of(3) {
                input.push_str(fragments[choice % fragments.len()]);
            } else {
                let bytes: Vec<u8> = (0..(choice % 9)).map(|_| rng.next_u32() as u8).collect();
                input.push_str(&String::from_utf8_lossy(&bytes));
            }
        }
        let _ = stepsmc_core::extract_boxed(&input);
    }
    pass(
        "criterion 7 (parser corpus)",
        started,
        &format!("{} corpus cases at 100%; 100000 fuzz inputs without failure", cases.len()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: what this suite does not claim.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_non_reproducibility_statement() {
    let started = Instant::now();
    // Published leaderboard accuracies for this family of methods are
    // measured with GPU-hosted policy and reward models and are not
    // reproducible at desk scale. The live mode exists to attempt them
    // against real endpoints outside CI; criteria 1 through 7 are the
    // verification suite this artifact stands on.
    let config = GatewayConfig::default();
    assert_eq!(config.generation_timeout.as_secs(), 120);
    assert_eq!(config.scoring_timeout.as_secs(), 60);
    pass(
        "criterion 8 (non-reproducibility statement)",
        started,
        "live-model accuracies are out-of-CI by design; synthetic oracles stand in",
    );
}
