//! Benchmark runner: dispatches questions to the configured method and
//! backend, collects run records, and streams them to disk in question order
//! whatever the completion order.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use stepsmc_core::rng::{derive_seed, stream};
use stepsmc_core::synthetic::{noisy_task_backends, NoisyRewardTask};
use stepsmc_core::{
    accuracy, answers_equal, best_of_n, dvts, extract_boxed, parallel_tempering, particle_filter,
    particle_gibbs, select_answer, EngineTelemetry, FilterOutcome, Particle, Prompt, RewardBackend,
    SelectionRule, TransitionBackend,
};
use stepsmc_gateway::{PolicyClient, RewardClient};

use crate::dataset::ingest_dataset;
use crate::manifest::{BackendKind, Manifest, Method};
use crate::record::{records_digest, RecordTelemetry, RoundSnapshot, RunRecord};

/// Outcome of one benchmark run.
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub accuracy: Option<f64>,
    /// Digest over canonical record bytes; stable for synthetic runs.
    pub digest: String,
}

/// One question's inputs.
struct Question {
    index: usize,
    prompt: Prompt,
    gold: String,
    task: Option<NoisyRewardTask>,
}

/// Run every question of the manifest, optionally appending records to `out`.
pub fn run_benchmark(manifest: &Manifest, out: Option<&Path>) -> Result<RunSummary> {
    let method = manifest.method()?;
    let manifest_toml = manifest.to_toml();
    let questions = build_questions(manifest)?;
    if questions.is_empty() {
        bail!("no questions to run");
    }

    // Live clients are shared across questions; synthetic backends are cheap
    // and built per question.
    let live = match manifest.backend.kind {
        BackendKind::Live => {
            let config = manifest.gateway_config();
            let policy = PolicyClient::new(&config).context("policy client")?;
            let reward = RewardClient::new(&config).context("reward client")?;
            Some((Arc::new(policy), Arc::new(reward)))
        }
        BackendKind::Noisy => None,
    };

    let run_one = |question: &Question| -> RunRecord {
        run_question(manifest, method, &manifest_toml, question, live.as_ref())
    };

    let records = run_ordered(&questions, manifest.run.workers.max(1), run_one, out)?;
    let accuracy = accuracy(records.iter().map(|r| r.correct));
    let digest = records_digest(records.iter());
    Ok(RunSummary {
        records,
        accuracy,
        digest,
    })
}

fn build_questions(manifest: &Manifest) -> Result<Vec<Question>> {
    match (&manifest.run.dataset, manifest.backend.kind) {
        (Some(path), BackendKind::Live) => {
            let records = ingest_dataset(path)?;
            records
                .into_iter()
                .enumerate()
                .map(|(index, r)| {
                    Ok(Question {
                        index,
                        prompt: Prompt::new(r.id, r.problem).map_err(|e| anyhow::anyhow!("{e}"))?,
                        gold: r.answer,
                        task: None,
                    })
                })
                .collect()
        }
        (None, BackendKind::Live) => bail!("live mode requires a dataset file"),
        (_, BackendKind::Noisy) => {
            let section = &manifest.backend.noisy;
            (0..manifest.run.questions)
                .map(|index| {
                    let task_seed = derive_seed(manifest.run.seed, &[stream::TASK, index as u64]);
                    let mut task =
                        NoisyRewardTask::random(section.branching, section.depth, section.sigma, task_seed);
                    task.wrong_step_reward = section.wrong_step_reward;
                    task.deterministic_noise = section.deterministic_noise;
                    let prompt = Prompt::new(
                        format!("noisy-{index:04}"),
                        format!(
                            "Recover the hidden path in a tree with branching {} and depth {}.",
                            section.branching, section.depth
                        ),
                    )
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                    Ok(Question {
                        index,
                        gold: task.gold_answer(),
                        task: Some(task),
                        prompt,
                    })
                })
                .collect()
        }
    }
}

fn snapshots_of(chain: usize, iteration: usize, outcome: &FilterOutcome) -> Vec<RoundSnapshot> {
    outcome
        .rounds
        .iter()
        .map(|r| RoundSnapshot {
            chain,
            iteration,
            round: r.round,
            weights: r.weights.clone(),
            probs: r.probs.clone(),
            sampled_indices: r.sampled_indices.clone(),
            particle_digests: r.pre_resample.iter().map(Particle::digest).collect(),
        })
        .collect()
}

fn run_question(
    manifest: &Manifest,
    method: Method,
    manifest_toml: &str,
    question: &Question,
    live: Option<&(Arc<PolicyClient>, Arc<RewardClient>)>,
) -> RunRecord {
    let question_seed = derive_seed(manifest.run.seed, &[stream::QUESTION, question.index as u64]);
    let started = Instant::now();
    let retries_before = live.map(|(p, r)| {
        p.counters().snapshot().retries + r.counters().snapshot().retries
    });

    let mut record = RunRecord {
        question_id: question.prompt.question_id().to_string(),
        method: method.as_str().to_string(),
        budget: manifest.budget().unwrap_or(0),
        dataset_id: manifest.dataset_id(),
        seed: question_seed,
        manifest_toml: manifest_toml.to_string(),
        backend_deterministic: live.is_none(),
        rounds: Vec::new(),
        selected_answer: None,
        gold_answer: question.gold.clone(),
        correct: false,
        error: None,
        telemetry: RecordTelemetry::default(),
    };

    // Synthetic backends live for the question; live clients are borrowed.
    let synthetic = question.task.as_ref().map(noisy_task_backends);
    let (transition, reward): (&dyn TransitionBackend, &dyn RewardBackend) = match (&synthetic, live) {
        (Some((t, r)), _) => (t, r),
        (None, Some((p, r))) => (p.as_ref(), r.as_ref()),
        (None, None) => {
            record.error = Some("no backend available".into());
            return record;
        }
    };
    let answer_of = |particle: &Particle| -> Option<String> {
        match &question.task {
            Some(_) => NoisyRewardTask::answer_of(particle),
            None => extract_boxed(&particle.rendered_text()),
        }
    };

    let outcome = execute_method(manifest, method, question, question_seed, transition, reward, &answer_of);
    match outcome {
        Ok((answer, snapshots, telemetry)) => {
            record.correct = answer
                .as_deref()
                .map(|a| answers_equal(a, &question.gold))
                .unwrap_or(false);
            record.selected_answer = answer;
            record.rounds = snapshots;
            record.telemetry.generation_calls = telemetry.generation_calls;
            record.telemetry.scoring_calls = telemetry.scoring_calls;
        }
        Err(e) => {
            record.error = Some(e.to_string());
        }
    }
    record.telemetry.wall_ms = started.elapsed().as_millis() as u64;
    if let (Some(before), Some((p, r))) = (retries_before, live) {
        let after = p.counters().snapshot().retries + r.counters().snapshot().retries;
        record.telemetry.transport_retries = after.saturating_sub(before);
    }
    record
}

type MethodOutcome = (Option<String>, Vec<RoundSnapshot>, EngineTelemetry);

fn execute_method(
    manifest: &Manifest,
    method: Method,
    question: &Question,
    question_seed: u64,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    answer_of: &dyn Fn(&Particle) -> Option<String>,
) -> Result<MethodOutcome> {
    let cfg = manifest.pf_config(question_seed)?;
    let selection_seed = derive_seed(question_seed, &[stream::SELECT]);
    match method {
        Method::Pf => {
            let outcome = particle_filter(&question.prompt, transition, reward, &cfg, None)?;
            let selection = select_answer(
                &question.prompt,
                &outcome.particles,
                cfg.aggregation,
                Some(reward),
                selection_seed,
            )?;
            Ok((
                answer_of(&outcome.particles[selection.index]),
                snapshots_of(0, 0, &outcome),
                outcome.telemetry,
            ))
        }
        Method::Pg => {
            let gibbs = particle_gibbs(&question.prompt, transition, reward, &cfg, manifest.engine.iterations)?;
            let selection = select_answer(
                &question.prompt,
                gibbs.final_particles(),
                cfg.aggregation,
                Some(reward),
                selection_seed,
            )?;
            let mut snapshots = Vec::new();
            for (iteration, outcome) in gibbs.iterations.iter().enumerate() {
                snapshots.extend(snapshots_of(0, iteration, outcome));
            }
            let telemetry = gibbs.telemetry();
            Ok((
                answer_of(&gibbs.final_particles()[selection.index]),
                snapshots,
                telemetry,
            ))
        }
        Method::Pt => {
            let alloc = manifest.allocation()?;
            let tempering = parallel_tempering(&question.prompt, transition, reward, &cfg, &alloc)?;
            let mut snapshots = Vec::new();
            for (chain, history) in tempering.chains.iter().enumerate() {
                for (iteration, outcome) in history.iterations.iter().enumerate() {
                    snapshots.extend(snapshots_of(chain, iteration, outcome));
                }
            }
            // The answer comes from the coldest chain.
            let coldest = tempering.chains.last().expect("at least one chain");
            let selection = select_answer(
                &question.prompt,
                coldest.final_particles(),
                cfg.aggregation,
                Some(reward),
                selection_seed,
            )?;
            let telemetry = tempering.telemetry();
            Ok((
                answer_of(&coldest.final_particles()[selection.index]),
                snapshots,
                telemetry,
            ))
        }
        Method::Bon | Method::Wbon | Method::Pass1 => {
            let (n, rule) = match method {
                Method::Bon => (manifest.engine.particles, SelectionRule::Bon),
                Method::Wbon => (manifest.engine.particles, SelectionRule::Wbon),
                _ => (1, SelectionRule::Bon),
            };
            let outcome = best_of_n(
                &question.prompt,
                transition,
                reward,
                n,
                rule,
                manifest.engine.max_steps,
                question_seed,
                answer_of,
            )?;
            Ok((
                outcome.rollouts[outcome.winner].answer.clone(),
                Vec::new(),
                outcome.telemetry,
            ))
        }
        Method::Dvts => {
            let outcome = dvts(
                &question.prompt,
                transition,
                reward,
                manifest.engine.particles,
                manifest.engine.dvts_width,
                manifest.aggregation()?,
                manifest.engine.max_steps,
                question_seed,
                answer_of,
            )?;
            Ok((
                outcome.leaves[outcome.winner].answer.clone(),
                Vec::new(),
                outcome.telemetry,
            ))
        }
    }
}

/// Run all questions with a bounded worker pool. Records are returned in
/// question order, and streamed to `out` in question order as soon as each
/// prefix completes; a single writer owns the file.
fn run_ordered<F>(questions: &[Question], workers: usize, run_one: F, out: Option<&Path>) -> Result<Vec<RunRecord>>
where
    F: Fn(&Question) -> RunRecord + Sync,
{
    let mut writer: Option<Box<dyn Write>> = match out {
        Some(path) => Some(Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ))),
        None => None,
    };

    let count = questions.len();
    let (sender, receiver) = mpsc::channel::<(usize, RunRecord)>();
    let cursor = AtomicUsize::new(0);

    let records = std::thread::scope(|scope| -> Result<Vec<RunRecord>> {
        for _ in 0..workers.min(count) {
            let sender = sender.clone();
            let cursor = &cursor;
            let run_one = &run_one;
            scope.spawn(move || loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                if index >= count {
                    break;
                }
                let record = run_one(&questions[index]);
                if sender.send((index, record)).is_err() {
                    break;
                }
            });
        }
        drop(sender);

        let mut pending = std::collections::BTreeMap::new();
        let mut ordered: Vec<Option<RunRecord>> = (0..count).map(|_| None).collect();
        let mut next_to_write = 0usize;
        for (index, record) in receiver {
            pending.insert(index, record);
            while let Some(record) = pending.remove(&next_to_write) {
                if let Some(w) = writer.as_mut() {
                    writeln!(w, "{}", record.to_json_line()).context("writing record")?;
                }
                ordered[next_to_write] = Some(record);
                next_to_write += 1;
            }
        }
        if let Some(w) = writer.as_mut() {
            w.flush().context("flushing records")?;
        }
        Ok(ordered.into_iter().map(|r| r.expect("all questions ran")).collect())
    })?;

    Ok(records)
}

/// Human summary line for a completed run.
pub fn summary_line(manifest: &Manifest, summary: &RunSummary) -> String {
    format!(
        "method={} budget={} questions={} accuracy={} digest={}",
        manifest.run.method,
        manifest.budget().unwrap_or(0),
        summary.records.len(),
        summary
            .accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        summary.digest,
    )
}
