//! Subcommand implementations.

use std::collections::HashSet;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use exgen_core::checkpoint::Checkpoint;
use exgen_core::config::RunConfig;
use exgen_core::corpus::synth::generate_synthetic_corpus;
use exgen_core::corpus::{ingest_slam, split_history, Exercise, Grammar, LabelConvention};
use exgen_core::decoder::constrained_beam_search;
use exgen_core::generator::{make_training_examples, ControlSpec, GenModel};
use exgen_core::joint::{sequence_difficulty, train_joint as joint_train};
use exgen_core::metrics::{evaluate_generation, GenEvalItem};
use exgen_core::nn::{Adam, ParameterStore};
use exgen_core::recommender::{expectimax_gen_step, expectimax_select, ExpectationMode};
use exgen_core::simulator::{
    calibration_csv, calibration_summary, efficiency_csv, efficiency_series, grid_csv,
    run_calibration, run_efficiency, run_regularization_grid, EfficiencyRun, GridConfig, Policy,
};
use exgen_core::tracer::{
    auc_of_predictions, collect_predictions, train_tracer, AucLevel, DktModel,
};

use crate::artifacts::{write_artifact, DirLock, Meta};
use crate::corpus_file::CorpusFile;

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(RunConfig::from_json(&raw)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn build_models(cfg: &RunConfig, vocab_size: usize) -> Result<(DktModel, GenModel)> {
    Ok((
        DktModel::new(vocab_size, cfg.tracer.clone())?,
        GenModel::new(vocab_size, cfg.generator.clone())?,
    ))
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct IngestArgs {
    /// 5-column TSV: user, exercise id, token index, token, label.
    #[arg(long)]
    pub input: PathBuf,
    /// Label convention of the input file.
    #[arg(long, value_parser = ["one-is-error", "one-is-correct"], default_value = "one-is-error")]
    pub labels: String,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let convention = if args.labels == "one-is-error" {
        LabelConvention::OneIsError
    } else {
        LabelConvention::OneIsCorrect
    };
    let (vocab, histories) = ingest_slam(&args.input, convention)?;
    let corpus = CorpusFile {
        vocab,
        histories,
        students: None,
        grammar: None,
    };
    corpus.save(&args.output)?;
    println!(
        "{}",
        serde_json::json!({
            "students": corpus.histories.len(),
            "words": corpus.vocab.n_words(),
            "output": args.output,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Words per open word class in the synthetic grammar.
    #[arg(long, default_value_t = 35)]
    pub class_size: usize,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let grammar = Grammar::synthetic(args.class_size);
    let (vocab, histories, students) = generate_synthetic_corpus(&grammar, &cfg.corpus)?;
    let corpus = CorpusFile {
        vocab,
        histories,
        students: Some(students),
        grammar: Some(grammar),
    };
    corpus.save(&args.output)?;
    println!(
        "{}",
        serde_json::json!({
            "students": corpus.histories.len(),
            "words": corpus.vocab.n_words(),
            "output": args.output,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainKtArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn train_kt(args: TrainKtArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let _lock = DirLock::acquire(&args.output_dir)?;
    let meta = Meta::new(&cfg)?;

    let model = DktModel::new(corpus.vocab.len(), cfg.tracer.clone())?;
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.init(&mut store, &mut rng)?;
    let mut opt = Adam::new(cfg.joint.learning_rate);
    let losses = train_tracer(&model, &mut store, &mut opt, &corpus.histories, args.epochs, cfg.seed)?;

    let ckpt = Checkpoint::new(cfg.clone(), cfg.seed, corpus.vocab.clone(), store);
    ckpt.save(args.output_dir.join("model.json"))?;
    write_artifact(
        args.output_dir.join("train-kt.json"),
        &meta,
        &serde_json::json!({ "epoch_losses": losses }),
    )?;
    println!("{}", serde_json::json!({ "final_loss": losses.last() }));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainGenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint with a trained tracer.
    #[arg(long)]
    pub tracer: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn train_gen(args: TrainGenArgs) -> Result<()> {
    let corpus = CorpusFile::load(&args.corpus)?;
    let ckpt = Checkpoint::load(&args.tracer)?;
    let cfg = match &args.config {
        Some(_) => load_config(&args.config)?,
        None => ckpt.config.clone(),
    };
    let _lock = DirLock::acquire(&args.output_dir)?;
    let meta = Meta::new(&cfg)?;

    let (tracer, gen) = build_models(&cfg, corpus.vocab.len())?;
    let mut store = ckpt.params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gen.init(&mut store, &mut rng)?;

    let mut examples = Vec::new();
    for h in &corpus.histories {
        examples.extend(make_training_examples(
            &tracer,
            &store,
            h,
            cfg.generator.sample_ratio,
            &mut rng,
        )?);
    }
    let mut opt = Adam::new(cfg.joint.learning_rate);
    let losses = exgen_core::generator::train_generator(
        &gen,
        &mut store,
        &mut opt,
        &examples,
        args.epochs,
        cfg.seed,
    )?;

    let out = Checkpoint::new(cfg.clone(), cfg.seed, corpus.vocab.clone(), store);
    out.save(args.output_dir.join("model.json"))?;
    write_artifact(
        args.output_dir.join("train-gen.json"),
        &meta,
        &serde_json::json!({ "epoch_nll": losses }),
    )?;
    println!("{}", serde_json::json!({ "final_nll": losses.last() }));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainJointArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn train_joint(args: TrainJointArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let _lock = DirLock::acquire(&args.output_dir)?;
    let meta = Meta::new(&cfg)?;

    let (tracer, gen) = build_models(&cfg, corpus.vocab.len())?;
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    tracer.init(&mut store, &mut rng)?;
    gen.init(&mut store, &mut rng)?;

    let epochs = joint_train(&tracer, &gen, &mut store, &corpus.histories, &cfg.joint, cfg.seed)?;

    let ckpt = Checkpoint::new(cfg.clone(), cfg.seed, corpus.vocab.clone(), store);
    ckpt.save(args.output_dir.join("model.json"))?;
    write_artifact(
        args.output_dir.join("train-joint.json"),
        &meta,
        &serde_json::json!({ "epochs": epochs }),
    )?;
    println!(
        "{}",
        serde_json::json!({ "final": epochs.last() })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub student: String,
    #[arg(long)]
    pub difficulty: f64,
    /// Comma-separated target words.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long)]
    pub no_lookahead: bool,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let cfg = &ckpt.config;
    let (tracer, gen) = build_models(cfg, ckpt.vocab.len())?;
    let history = corpus.history(&args.student)?;
    let state = tracer.trace(&ckpt.params, history, history.len())?;

    let mut targets = Vec::new();
    for t in &args.targets {
        let id = ckpt
            .vocab
            .id(t)
            .with_context(|| format!("target word '{t}' not in vocabulary"))?;
        targets.push(id);
    }
    let control = ControlSpec {
        mastery: state.mastery.clone(),
        difficulty: args.difficulty,
        targets,
    };
    let mut decode = cfg.decode.clone();
    if args.no_lookahead {
        decode.use_lookahead = false;
    }
    let result = constrained_beam_search(&gen, &ckpt.params, &control, &decode)?;
    let realized = sequence_difficulty(&result.tokens, &state.mastery);
    println!(
        "{}",
        serde_json::json!({
            "text": ckpt.vocab.text(&result.tokens),
            "tokens": result.tokens,
            "logprob": result.logprob,
            "score": result.score,
            "finished": result.finished,
            "realized_difficulty": realized,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub student: String,
    /// "gen" decodes a fresh exercise; "pool" picks from the corpus.
    #[arg(long, value_parser = ["gen", "pool"], default_value = "gen")]
    pub policy: String,
    /// Cap on exact outcome enumeration before Monte Carlo kicks in.
    #[arg(long, default_value_t = 256)]
    pub mc_samples: usize,
}

pub fn recommend(args: RecommendArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let cfg = &ckpt.config;
    let (tracer, gen) = build_models(cfg, ckpt.vocab.len())?;
    let history = corpus.history(&args.student)?;
    let mut state = tracer.initial_state();
    for it in &history.interactions {
        tracer.advance(&ckpt.params, &mut state, it)?;
    }
    let mode = ExpectationMode::MonteCarlo {
        samples: args.mc_samples,
        seed: cfg.seed,
    };
    let exercise = match args.policy.as_str() {
        "gen" => expectimax_gen_step(&tracer, &gen, &ckpt.params, &state, &cfg.decode, mode)?,
        _ => {
            let pool: Vec<Exercise> = corpus
                .histories
                .iter()
                .flat_map(|h| h.interactions.iter().map(|i| i.exercise.clone()))
                .collect();
            let i = expectimax_select(&tracer, &ckpt.params, &state, &pool, mode)?;
            pool[i].clone()
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "text": ckpt.vocab.text(&exercise.tokens),
            "tokens": exercise.tokens,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Grammar JSON; enables the grammaticality metric.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let cfg = &ckpt.config;
    let meta = Meta::new(cfg)?;
    let (tracer, gen) = build_models(cfg, ckpt.vocab.len())?;

    // tracer AUC on each student's held-out tail
    let mut preds = Vec::new();
    let mut training_sentences: HashSet<Vec<usize>> = HashSet::new();
    let mut items = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for h in &corpus.histories {
        let (train, dev, test) = split_history(h, (0.8, 0.1, 0.1))?;
        for it in train.interactions.iter().chain(&dev.interactions) {
            training_sentences.insert(it.exercise.tokens.clone());
        }
        if test.is_empty() {
            continue;
        }
        let mut context = train;
        context.interactions.extend(dev.interactions);
        preds.extend(collect_predictions(&tracer, &ckpt.params, &context, &test)?);

        // one generation per held-out interaction, conditioned on the
        // context state
        let state = {
            let mut st = tracer.initial_state();
            for it in &context.interactions {
                tracer.advance(&ckpt.params, &mut st, it)?;
            }
            tracer.read_state(&ckpt.params, &st)
        };
        for it in &test.interactions {
            let ex = exgen_core::generator::make_training_example(
                &state,
                it,
                cfg.generator.sample_ratio,
                &mut rng,
            );
            let decoded =
                constrained_beam_search(&gen, &ckpt.params, &ex.control, &cfg.decode)?;
            items.push(GenEvalItem {
                tokens: decoded.tokens,
                reference: it.exercise.tokens.clone(),
                targets: ex.control.targets.clone(),
                requested_difficulty: ex.control.difficulty,
                mastery: ex.control.mastery.clone(),
            });
        }
    }
    let word_auc = auc_of_predictions(&preds, AucLevel::Word)?;
    let exercise_auc = auc_of_predictions(&preds, AucLevel::Exercise)?;
    let grammar = match &args.grammar {
        Some(p) => Some(Grammar::from_json(&std::fs::read_to_string(p)?)?),
        None => corpus.grammar.clone(),
    };
    let report = evaluate_generation(
        &items,
        &training_sentences,
        grammar.as_ref().map(|g| (g, &corpus.vocab)),
    )?;
    write_artifact(
        &args.output,
        &meta,
        &serde_json::json!({
            "word_auc": word_auc,
            "exercise_auc": exercise_auc,
            "generation": report,
        }),
    )?;
    println!(
        "{}",
        serde_json::json!({ "word_auc": word_auc, "exercise_auc": exercise_auc })
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_parser = ["calibration", "efficiency", "grid"])]
    pub kind: String,
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let corpus = CorpusFile::load(&args.corpus)?;
    let cfg = &ckpt.config;
    let _lock = DirLock::acquire(&args.output_dir)?;
    let meta = Meta::new(cfg)?;
    let (tracer, gen) = build_models(cfg, ckpt.vocab.len())?;
    let students = corpus
        .students
        .as_ref()
        .context("simulations need a synthetic corpus with oracle students")?;

    match args.kind.as_str() {
        "calibration" => {
            let records = run_calibration(
                &tracer,
                &gen,
                &ckpt.params,
                students,
                &corpus.histories,
                &cfg.sim.calibration,
            )?;
            std::fs::write(
                args.output_dir.join("calibration.csv"),
                calibration_csv(&records),
            )?;
            write_artifact(
                args.output_dir.join("calibration.json"),
                &meta,
                &serde_json::json!({
                    "records": records,
                    "summary": calibration_summary(&records),
                }),
            )?;
        }
        "efficiency" => {
            let pool: Vec<Exercise> = corpus
                .histories
                .iter()
                .flat_map(|h| h.interactions.iter().map(|i| i.exercise.clone()))
                .collect();
            let mut all = Vec::new();
            for policy in [Policy::ExpectimaxGen, Policy::ExpectimaxPool, Policy::Random] {
                all.extend(run_efficiency(
                    &tracer,
                    &gen,
                    &ckpt.params,
                    &corpus.histories,
                    &pool,
                    policy,
                    &cfg.sim.efficiency,
                )?);
            }
            std::fs::write(args.output_dir.join("efficiency.csv"), efficiency_csv(&all))?;
            write_artifact(args.output_dir.join("efficiency.json"), &meta, &all)?;
        }
        _ => {
            let mut train = Vec::new();
            let mut eval_pairs = Vec::new();
            for h in &corpus.histories {
                let (tr, dv, te) = split_history(h, (0.8, 0.1, 0.1))?;
                let mut context = tr.clone();
                context.interactions.extend(dv.interactions);
                train.push(tr);
                if !te.is_empty() {
                    eval_pairs.push((context, te));
                }
            }
            let grid_cfg = GridConfig {
                lambda1s: vec![0.0, 0.5],
                lambda2s: vec![0.0, 0.05, 0.1, 0.5],
                base: cfg.tracer.clone(),
                epochs: cfg.joint.pretrain_tracer_epochs,
                learning_rate: cfg.joint.learning_rate,
                seed: cfg.seed,
            };
            let cells = run_regularization_grid(corpus.vocab.len(), &train, &eval_pairs, &grid_cfg)?;
            std::fs::write(args.output_dir.join("grid.csv"), grid_csv(&cells))?;
            write_artifact(args.output_dir.join("grid.json"), &meta, &cells)?;
        }
    }
    println!("{}", serde_json::json!({ "output_dir": args.output_dir }));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct PlotDataArgs {
    /// Efficiency artifact produced by `simulate --kind efficiency`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn plot_data(args: PlotDataArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&raw)?;
    let runs: Vec<EfficiencyRun> = serde_json::from_value(
        doc.get("data")
            .cloned()
            .context("artifact has no data field")?,
    )?;
    let series = efficiency_series(&runs);
    std::fs::write(&args.output, serde_json::to_string_pretty(&series)?)?;
    println!("{}", serde_json::json!({ "series": series.len() }));
    Ok(())
}
