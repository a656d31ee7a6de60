//! Simulation studies: difficulty calibration, learning efficiency under
//! different recommendation policies, and a regularization grid for the
//! tracer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::synth::SyntheticStudentModel;
use crate::corpus::types::{Exercise, Interaction, LearningHistory};
use crate::corpus::vocab::{WordId, N_RESERVED};
use crate::decoder::{constrained_beam_search, DecodeConfig};
use crate::error::{Error, Result};
use crate::generator::{ControlSpec, GenModel};
use crate::joint::sequence_difficulty;
use crate::nn::{Adam, ParameterStore};
use crate::recommender::{expectimax_gen_step, expectimax_select, ExpectationMode};
use crate::tracer::{auc_of_predictions, collect_predictions, train_tracer, AucLevel, DktModel, TracerConfig};

// ---------------------------------------------------------------------------
// Difficulty calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbilityGroup {
    Bottom,
    Middle,
    Top,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Difficulty requests per student.
    pub n_requests: usize,
    pub d_range: (f64, f64),
    pub seed: u64,
    pub decode: DecodeConfig,
    /// When set, the traced state advances with the simulated responses.
    pub advance_state: bool,
    /// Condition every request on the population-mean traced mastery
    /// instead of the per-student estimate. Models a fully non-adaptive
    /// system: nothing in the pipeline sees the individual student.
    pub population_mastery: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_requests: 50,
            d_range: (1.0, 3.0),
            seed: 11,
            decode: DecodeConfig::default(),
            advance_state: false,
            population_mastery: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub student_id: String,
    pub group: AbilityGroup,
    pub requested: f64,
    pub realized: f64,
    /// |ln(realized / requested)|, with the realized value floored to avoid
    /// a singular log.
    pub abs_log_ratio: f64,
}

/// Split students into bottom 10% / middle 80% / top 10% by mean true
/// mastery.
pub fn ability_groups(students: &[SyntheticStudentModel]) -> Vec<AbilityGroup> {
    let n = students.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mean = |s: &SyntheticStudentModel| {
        s.true_mastery[N_RESERVED..].iter().sum::<f64>()
            / (s.true_mastery.len() - N_RESERVED) as f64
    };
    idx.sort_by(|&a, &b| mean(&students[a]).partial_cmp(&mean(&students[b])).unwrap());
    let cut = (n as f64 * 0.1).ceil() as usize;
    let mut groups = vec![AbilityGroup::Middle; n];
    for &i in &idx[..cut.min(n)] {
        groups[i] = AbilityGroup::Bottom;
    }
    for &i in &idx[n.saturating_sub(cut)..] {
        groups[i] = AbilityGroup::Top;
    }
    groups
}

/// Request random difficulties from the generator and measure how far the
/// realized difficulty (under each student's true mastery) lands from the
/// request.
pub fn run_calibration(
    tracer: &DktModel,
    gen: &GenModel,
    store: &ParameterStore,
    students: &[SyntheticStudentModel],
    histories: &[LearningHistory],
    cfg: &CalibrationConfig,
) -> Result<Vec<CalibrationRecord>> {
    if students.len() != histories.len() {
        return Err(Error::Run(format!(
            "{} students but {} histories",
            students.len(),
            histories.len()
        )));
    }
    if students.is_empty() {
        return Err(Error::Run("no students to simulate".into()));
    }
    let groups = ability_groups(students);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words: Vec<WordId> = (N_RESERVED..tracer.vocab_size).collect();
    let population = if cfg.population_mastery {
        let mut mean = vec![0.0; tracer.vocab_size];
        for history in histories {
            let mut state = tracer.initial_state();
            for it in &history.interactions {
                tracer.advance(store, &mut state, it)?;
            }
            for (m, v) in mean.iter_mut().zip(tracer.read_state(store, &state).mastery) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= histories.len() as f64;
        }
        Some(mean)
    } else {
        None
    };
    let mut records = Vec::with_capacity(students.len() * cfg.n_requests);
    for ((student, history), &group) in students.iter().zip(histories).zip(&groups) {
        let mut state = tracer.initial_state();
        for it in &history.interactions {
            tracer.advance(store, &mut state, it)?;
        }
        let mut oracle = student.clone();
        for _ in 0..cfg.n_requests {
            let requested = rng.gen_range(cfg.d_range.0..cfg.d_range.1);
            let target = *words.choose(&mut rng).unwrap();
            let mastery = match &population {
                Some(p) => p.clone(),
                None => tracer.read_state(store, &state).mastery,
            };
            let control = ControlSpec {
                mastery,
                difficulty: requested,
                targets: vec![target],
            };
            let decoded = constrained_beam_search(gen, store, &control, &cfg.decode)?;
            let realized = sequence_difficulty(&decoded.tokens, &oracle.true_mastery);
            let abs_log_ratio = ((realized.max(1e-3)) / requested).ln().abs();
            records.push(CalibrationRecord {
                student_id: oracle.student_id.clone(),
                group,
                requested,
                realized,
                abs_log_ratio,
            });
            if cfg.advance_state && !decoded.tokens.is_empty() {
                let labels: Vec<u8> = decoded
                    .tokens
                    .iter()
                    .map(|&w| u8::from(rng.gen_bool(oracle.correct_probability(w).clamp(0.0, 1.0))))
                    .collect();
                let it = Interaction {
                    exercise: Exercise {
                        tokens: decoded.tokens.clone(),
                    },
                    labels,
                    seq_index: state.n_interactions + 1,
                };
                tracer.advance(store, &mut state, &it)?;
                for &w in &it.exercise.tokens {
                    oracle.practice(w);
                }
            }
        }
    }
    Ok(records)
}

/// Mean |log ratio| per ability group.
pub fn calibration_summary(records: &[CalibrationRecord]) -> Vec<(AbilityGroup, f64, usize)> {
    [AbilityGroup::Bottom, AbilityGroup::Middle, AbilityGroup::Top]
        .into_iter()
        .filter_map(|g| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.group == g)
                .map(|r| r.abs_log_ratio)
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some((g, vals.iter().sum::<f64>() / vals.len() as f64, vals.len()))
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Learning efficiency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Pick the best single word, then generate an exercise for it.
    ExpectimaxGen,
    /// Pick the best exercise from a fixed pool.
    ExpectimaxPool,
    /// Uniform random pool exercise.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencyConfig {
    pub n_steps: usize,
    pub seed: u64,
    pub decode: DecodeConfig,
    pub expectation: ExpectationMode,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        EfficiencyConfig {
            n_steps: 30,
            seed: 17,
            decode: DecodeConfig::default(),
            expectation: ExpectationMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyRun {
    pub policy: Policy,
    pub student_id: String,
    /// Mean predicted mastery before step 1 and after each step.
    pub trajectory: Vec<f64>,
    pub final_mean_mastery: f64,
    /// Fraction of administered exercises not administered earlier in the
    /// same run.
    pub novel_fraction: f64,
}

/// Simulate a curriculum with the tracer standing in for the student: the
/// policy picks each exercise, responses are sampled from the tracer's own
/// predictions (no real students exist to answer), and the metric is the
/// tracer's mean predicted mastery. Each run starts from the state traced
/// over the student's recorded history.
pub fn run_efficiency(
    tracer: &DktModel,
    gen: &GenModel,
    store: &ParameterStore,
    histories: &[LearningHistory],
    pool: &[Exercise],
    policy: Policy,
    cfg: &EfficiencyConfig,
) -> Result<Vec<EfficiencyRun>> {
    if histories.is_empty() {
        return Err(Error::Run("no students to simulate".into()));
    }
    if pool.is_empty() && policy != Policy::ExpectimaxGen {
        return Err(Error::Run("pool policies need a non-empty pool".into()));
    }
    let mean_state =
        |m: &[f64]| m[N_RESERVED..].iter().sum::<f64>() / (m.len() - N_RESERVED) as f64;
    let mut runs = Vec::with_capacity(histories.len());
    for (si, history) in histories.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (si as u64).wrapping_mul(0x9e3779b9));
        let mut state = tracer.initial_state();
        for it in &history.interactions {
            tracer.advance(store, &mut state, it)?;
        }
        let mut mastery = tracer.read_state(store, &state).mastery;
        let mut seen: Vec<Vec<WordId>> = Vec::new();
        let mut novel = 0usize;
        let mut trajectory = vec![mean_state(&mastery)];
        for _ in 0..cfg.n_steps {
            let exercise = match policy {
                Policy::ExpectimaxGen => {
                    expectimax_gen_step(tracer, gen, store, &state, &cfg.decode, cfg.expectation)?
                }
                Policy::ExpectimaxPool => {
                    let i = expectimax_select(tracer, store, &state, pool, cfg.expectation)?;
                    pool[i].clone()
                }
                Policy::Random => pool.choose(&mut rng).unwrap().clone(),
            };
            if !seen.contains(&exercise.tokens) {
                novel += 1;
                seen.push(exercise.tokens.clone());
            }
            let labels: Vec<u8> = exercise
                .tokens
                .iter()
                .map(|&w| u8::from(rng.gen_bool(mastery[w].clamp(0.0, 1.0))))
                .collect();
            let it = Interaction {
                exercise,
                labels,
                seq_index: state.n_interactions + 1,
            };
            tracer.advance(store, &mut state, &it)?;
            mastery = tracer.read_state(store, &state).mastery;
            trajectory.push(mean_state(&mastery));
        }
        runs.push(EfficiencyRun {
            policy,
            student_id: history.student_id.clone(),
            final_mean_mastery: *trajectory.last().unwrap(),
            novel_fraction: novel as f64 / cfg.n_steps.max(1) as f64,
            trajectory,
        });
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Regularization grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub lambda1s: Vec<f64>,
    pub lambda2s: Vec<f64>,
    pub base: TracerConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub word_auc: f64,
    pub exercise_auc: f64,
}

/// Train one tracer per (lambda1, lambda2) cell and score AUC on held-out
/// interactions. Each history is split so its tail is evaluated against a
/// state traced through its head.
pub fn run_regularization_grid(
    vocab_size: usize,
    train: &[LearningHistory],
    eval_pairs: &[(LearningHistory, LearningHistory)],
    cfg: &GridConfig,
) -> Result<Vec<GridCell>> {
    if train.is_empty() || eval_pairs.is_empty() {
        return Err(Error::Run("grid needs train and eval histories".into()));
    }
    let mut cells = Vec::new();
    for &l1 in &cfg.lambda1s {
        for &l2 in &cfg.lambda2s {
            let tcfg = TracerConfig {
                lambda1: l1,
                lambda2: l2,
                ..cfg.base.clone()
            };
            let model = DktModel::new(vocab_size, tcfg)?;
            let mut store = ParameterStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            model.init(&mut store, &mut rng)?;
            let mut opt = Adam::new(cfg.learning_rate);
            train_tracer(&model, &mut store, &mut opt, train, cfg.epochs, cfg.seed)?;
            let mut preds = Vec::new();
            for (context, eval) in eval_pairs {
                preds.extend(collect_predictions(&model, &store, context, eval)?);
            }
            cells.push(GridCell {
                lambda1: l1,
                lambda2: l2,
                word_auc: auc_of_predictions(&preds, AucLevel::Word)?,
                exercise_auc: auc_of_predictions(&preds, AucLevel::Exercise)?,
            });
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// Statistics and export
// ---------------------------------------------------------------------------

/// Two-sided paired t-test; returns (t statistic, p value).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Run(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Run("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if mean == 0.0 {
            Ok((0.0, 1.0))
        } else {
            Ok((f64::INFINITY * mean.signum(), 0.0))
        };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Run(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

/// One plottable series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Mean trajectory per policy, as plot series.
pub fn efficiency_series(runs: &[EfficiencyRun]) -> Vec<Series> {
    let mut out = Vec::new();
    for policy in [Policy::ExpectimaxGen, Policy::ExpectimaxPool, Policy::Random] {
        let group: Vec<&EfficiencyRun> = runs.iter().filter(|r| r.policy == policy).collect();
        if group.is_empty() {
            continue;
        }
        let len = group.iter().map(|r| r.trajectory.len()).min().unwrap();
        let y: Vec<f64> = (0..len)
            .map(|t| group.iter().map(|r| r.trajectory[t]).sum::<f64>() / group.len() as f64)
            .collect();
        out.push(Series {
            name: format!("{policy:?}"),
            x: (0..len).map(|t| t as f64).collect(),
            y,
        });
    }
    out
}

/// CSV with header; one row per calibration record.
pub fn calibration_csv(records: &[CalibrationRecord]) -> String {
    let mut s = String::from("student_id,group,requested,realized,abs_log_ratio\n");
    for r in records {
        s.push_str(&format!(
            "{},{:?},{},{},{}\n",
            r.student_id, r.group, r.requested, r.realized, r.abs_log_ratio
        ));
    }
    s
}

/// CSV with header; one row per efficiency run.
pub fn efficiency_csv(runs: &[EfficiencyRun]) -> String {
    let mut s = String::from("policy,student_id,final_mean_mastery,novel_fraction\n");
    for r in runs {
        s.push_str(&format!(
            "{:?},{},{},{}\n",
            r.policy, r.student_id, r.final_mean_mastery, r.novel_fraction
        ));
    }
    s
}

/// CSV with header; one row per grid cell.
pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("lambda1,lambda2,word_auc,exercise_auc\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{}\n",
            c.lambda1, c.lambda2, c.word_auc, c.exercise_auc
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::Grammar;
    use crate::corpus::synth::{generate_synthetic_corpus, SynthConfig};
    use crate::generator::GeneratorConfig;

    fn tiny_world() -> (
        DktModel,
        GenModel,
        ParameterStore,
        Vec<SyntheticStudentModel>,
        Vec<LearningHistory>,
    ) {
        let g = Grammar::synthetic(35);
        let cfg = SynthConfig {
            n_students: 12,
            n_interactions: 4,
            ..Default::default()
        };
        let (vocab, histories, students) = generate_synthetic_corpus(&g, &cfg).unwrap();
        let tracer = DktModel::new(
            vocab.len(),
            TracerConfig {
                hidden_size: 4,
                n_layers: 1,
                embed_dim: 4,
                lambda1: 0.5,
                lambda2: 0.1,
                max_tokens: 512,
            },
        )
        .unwrap();
        let gen = GenModel::new(
            vocab.len(),
            GeneratorConfig {
                hidden_size: 4,
                n_layers: 1,
                embed_dim: 4,
                ..GeneratorConfig::default()
            },
        )
        .unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        tracer.init(&mut store, &mut rng).unwrap();
        gen.init(&mut store, &mut rng).unwrap();
        (tracer, gen, store, students, histories)
    }

    #[test]
    fn ability_groups_cover_extremes() {
        let (_, _, _, students, _) = tiny_world();
        let groups = ability_groups(&students);
        assert_eq!(groups.len(), students.len());
        let bottom = groups.iter().filter(|g| **g == AbilityGroup::Bottom).count();
        let top = groups.iter().filter(|g| **g == AbilityGroup::Top).count();
        // ceil(12 * 0.1) = 2
        assert_eq!(bottom, 2);
        assert_eq!(top, 2);
        // extremes really are extreme
        let mean = |s: &SyntheticStudentModel| {
            s.true_mastery[N_RESERVED..].iter().sum::<f64>()
                / (s.true_mastery.len() - N_RESERVED) as f64
        };
        let worst_top = students
            .iter()
            .zip(&groups)
            .filter(|(_, g)| **g == AbilityGroup::Top)
            .map(|(s, _)| mean(s))
            .fold(f64::INFINITY, f64::min);
        let best_bottom = students
            .iter()
            .zip(&groups)
            .filter(|(_, g)| **g == AbilityGroup::Bottom)
            .map(|(s, _)| mean(s))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_top >= best_bottom);
    }

    #[test]
    fn calibration_runs_and_is_deterministic() {
        let (tracer, gen, store, students, histories) = tiny_world();
        let cfg = CalibrationConfig {
            n_requests: 2,
            decode: DecodeConfig {
                beam_size: 2,
                max_steps: 5,
                lookahead_depth: 1,
                ..DecodeConfig::default()
            },
            ..Default::default()
        };
        let a = run_calibration(&tracer, &gen, &store, &students[..3], &histories[..3], &cfg)
            .unwrap();
        let b = run_calibration(&tracer, &gen, &store, &students[..3], &histories[..3], &cfg)
            .unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        for r in &a {
            assert!(r.requested >= 1.0 && r.requested < 3.0);
            assert!(r.abs_log_ratio.is_finite());
        }
        let summary = calibration_summary(&a);
        assert!(!summary.is_empty());
    }

    #[test]
    fn efficiency_policies_run_with_bounded_states() {
        let (tracer, gen, store, _students, histories) = tiny_world();
        let pool: Vec<Exercise> = histories
            .iter()
            .flat_map(|h| h.interactions.iter().map(|i| i.exercise.clone()))
            .take(8)
            .collect();
        let cfg = EfficiencyConfig {
            n_steps: 5,
            decode: DecodeConfig {
                beam_size: 2,
                max_steps: 4,
                lookahead_depth: 1,
                ..DecodeConfig::default()
            },
            ..Default::default()
        };
        for policy in [Policy::ExpectimaxGen, Policy::ExpectimaxPool, Policy::Random] {
            let runs =
                run_efficiency(&tracer, &gen, &store, &histories[..2], &pool, policy, &cfg)
                    .unwrap();
            assert_eq!(runs.len(), 2);
            for r in &runs {
                assert_eq!(r.trajectory.len(), 6);
                // mean predicted state stays a probability at every step
                assert!(r.trajectory.iter().all(|&m| m > 0.0 && m < 1.0));
                assert!(r.novel_fraction > 0.0 && r.novel_fraction <= 1.0);
            }
        }
        let gen_only = run_efficiency(
            &tracer,
            &gen,
            &store,
            &histories[..1],
            &[],
            Policy::ExpectimaxGen,
            &cfg,
        );
        assert!(gen_only.is_ok());
        assert!(
            run_efficiency(&tracer, &gen, &store, &histories[..1], &[], Policy::Random, &cfg)
                .is_err()
        );
    }

    #[test]
    fn grid_produces_all_cells() {
        let (_, _, _, _, histories) = tiny_world();
        let vocab_size = 35 * 3 + 14 + N_RESERVED;
        let mut eval_pairs = Vec::new();
        for h in &histories[..4] {
            let (train_part, _, test) =
                crate::corpus::split_history(h, (0.5, 0.25, 0.25)).unwrap();
            eval_pairs.push((train_part, test));
        }
        let cfg = GridConfig {
            lambda1s: vec![0.0, 0.5],
            lambda2s: vec![0.0, 0.1],
            base: TracerConfig {
                hidden_size: 3,
                n_layers: 1,
                embed_dim: 3,
                lambda1: 0.0,
                lambda2: 0.0,
                max_tokens: 512,
            },
            epochs: 1,
            learning_rate: 1e-3,
            seed: 5,
        };
        let cells =
            run_regularization_grid(vocab_size, &histories[4..8], &eval_pairs, &cfg).unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            assert!(c.word_auc >= 0.0 && c.word_auc <= 1.0);
            assert!(c.exercise_auc >= 0.0 && c.exercise_auc <= 1.0);
        }
    }

    #[test]
    fn paired_t_test_matches_known_value() {
        // d = [1, 2, 3]: mean 2, sd 1, t = 2 / (1/sqrt(3)) = 3.4641
        let a = [2.0, 4.0, 6.0];
        let b = [1.0, 2.0, 3.0];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert!((t - 3.4641016151377544).abs() < 1e-12);
        // two-sided p for t=3.464, df=2 is about 0.0742
        assert!((p - 0.0742).abs() < 2e-3, "p {p}");
        // identical samples
        let (t0, p0) = paired_t_test(&b, &b).unwrap();
        assert_eq!(t0, 0.0);
        assert_eq!(p0, 1.0);
        assert!(paired_t_test(&a, &b[..2]).is_err());
    }

    #[test]
    fn csv_and_series_shapes() {
        let runs = vec![EfficiencyRun {
            policy: Policy::Random,
            student_id: "s".into(),
            trajectory: vec![0.1, 0.2, 0.3],
            final_mean_mastery: 0.3,
            novel_fraction: 1.0,
        }];
        let series = efficiency_series(&runs);
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].y, vec![0.1, 0.2, 0.3]);
        assert!(efficiency_csv(&runs).lines().count() == 2);
        assert!(grid_csv(&[]).lines().count() == 1);
    }
}
