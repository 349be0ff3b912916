//! Named ablation sweeps: train the variants a sweep needs, track a held-out
//! suite with each setting, and collect one table row per setting.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{InferConfig, TrackMode};
use crate::metrics::EvalReport;
use crate::model::{ArMot, ObjectTokenMode};
use crate::pipeline::{score_videos, train_model};
use crate::scalar::Scalar;
use crate::sequence::IdPolicy;
use crate::simdata::{generate_suite, SuiteConfig, Video};
use crate::trainer::id_accuracy;

pub const TAU_LOSS_GRID: [usize; 6] = [1, 2, 3, 5, 10, 15];
pub const ALPHA_GRID: [f64; 6] = [0.4, 0.5, 0.6, 0.7, 0.8, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationSuite {
    TauLoss,
    Tmf,
    Raa,
    Tokens,
    Alpha,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 5] = [
        Self::TauLoss,
        Self::Tmf,
        Self::Raa,
        Self::Tokens,
        Self::Alpha,
    ];

    /// Held-out data used when `ablate.eval = "auto"`.
    pub fn default_eval(self) -> EvalPreset {
        match self {
            Self::TauLoss | Self::Tmf => EvalPreset::Occlusion,
            _ => EvalPreset::Training,
        }
    }
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TauLoss => "tauloss",
            Self::Tmf => "tmf",
            Self::Raa => "raa",
            Self::Tokens => "tokens",
            Self::Alpha => "alpha",
        })
    }
}

impl FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown ablation suite {s:?} (tauloss, tmf, raa, tokens, alpha)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPreset {
    #[default]
    Auto,
    Easy,
    Training,
    Occlusion,
}

/// `ablate.*` keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub eval: EvalPreset,
    pub eval_scenarios: usize,
    /// Added to the run seed so held-out scenes never coincide with training ones.
    pub eval_seed_offset: u64,
    pub accuracy_clip_len: usize,
    pub accuracy_clips_per_video: usize,
    pub tau_losses: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            eval: EvalPreset::Auto,
            eval_scenarios: 10,
            eval_seed_offset: 1000,
            accuracy_clip_len: 4,
            accuracy_clips_per_video: 3,
            tau_losses: TAU_LOSS_GRID.to_vec(),
            alphas: ALPHA_GRID.to_vec(),
        }
    }
}

impl AblateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_scenarios == 0
            || self.accuracy_clip_len < 2
            || self.accuracy_clips_per_video == 0
        {
            return Err(Error::InvalidConfig(
                "ablate needs eval_scenarios >= 1, accuracy_clip_len >= 2, accuracy_clips_per_video >= 1".into(),
            ));
        }
        if self.tau_losses.is_empty() || self.alphas.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation grids must not be empty".into(),
            ));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidConfig(
                "ablate.alphas must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn eval_suite(&self, suite: AblationSuite, run_seed: u64) -> SuiteConfig {
        let seed = run_seed.wrapping_add(self.eval_seed_offset);
        let preset = match self.eval {
            EvalPreset::Auto => suite.default_eval(),
            p => p,
        };
        match preset {
            EvalPreset::Easy => SuiteConfig::easy(self.eval_scenarios, seed),
            EvalPreset::Occlusion => SuiteConfig::occlusion_heavy(self.eval_scenarios, seed),
            EvalPreset::Training | EvalPreset::Auto => {
                SuiteConfig::training(self.eval_scenarios, seed)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: AblationSuite,
    pub setting: String,
    pub report: EvalReport,
    /// Teacher-forced ID accuracy on the held-out suite.
    pub id_accuracy: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn rows_for(&self, suite: AblationSuite) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.suite == suite)
    }

    pub fn row(&self, suite: AblationSuite, setting: &str) -> Option<&AblationRow> {
        self.rows_for(suite).find(|r| r.setting == setting)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>7}\n",
            "suite", "setting", "HOTA", "DetA", "AssA", "MOTA", "IDF1", "IDSW", "IDacc"
        );
        for r in &self.rows {
            let m = &r.report;
            out.push_str(&format!(
                "{:<8} {:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>5} {:>7.4}\n",
                r.suite.to_string(),
                r.setting,
                m.hota,
                m.det_a,
                m.ass_a,
                m.mota,
                m.idf1,
                m.idsw,
                r.id_accuracy
            ));
        }
        out
    }
}

struct Runner<'a> {
    base: &'a RunConfig,
    train: &'a [Video],
    eval: &'a [Video],
    log: &'a mut dyn Write,
    table: AblationTable,
}

impl Runner<'_> {
    fn train<T: Scalar>(&mut self, cfg: &RunConfig) -> Result<ArMot<T>> {
        let (model, report) = train_model::<T>(cfg, self.train, self.log)?;
        log::info!(
            "trained {} steps in {:.1}s, final ce {:.4}",
            report.steps,
            report.seconds,
            report.epoch_ce.last().copied().unwrap_or(f64::NAN)
        );
        Ok(model)
    }

    fn score<T: Scalar>(
        &mut self,
        suite: AblationSuite,
        setting: String,
        model: &ArMot<T>,
        infer: &InferConfig,
    ) -> Result<()> {
        let (score, _) = score_videos(model, self.eval, infer)?;
        let a = &self.base.ablate;
        let acc = id_accuracy(
            model,
            self.eval,
            a.accuracy_clip_len,
            a.accuracy_clips_per_video,
            IdPolicy::SmallestFree,
            self.base.train.seed,
        )?;
        log::info!(
            "{suite} {setting}: HOTA {:.4} AssA {:.4} IDacc {:.4}",
            score.combined.hota,
            score.combined.ass_a,
            acc.value()
        );
        self.table.rows.push(AblationRow {
            suite,
            setting,
            report: score.combined,
            id_accuracy: acc.value(),
        });
        Ok(())
    }

    fn window_infer(&self) -> InferConfig {
        InferConfig {
            mode: TrackMode::Window,
            ..self.base.infer.clone()
        }
    }

    fn run<T: Scalar>(&mut self, suite: AblationSuite) -> Result<()> {
        let mut cfg = self.base.clone();
        cfg.model.tmf = false;
        match suite {
            AblationSuite::TauLoss => {
                let model = self.train::<T>(&cfg)?;
                for tau in self.base.ablate.tau_losses.clone() {
                    let infer = InferConfig {
                        tau_loss: tau,
                        ..self.window_infer()
                    };
                    self.score(suite, format!("tau_loss={tau}"), &model, &infer)?;
                }
            }
            AblationSuite::Tmf => {
                let model = self.train::<T>(&cfg)?;
                let infer = self.window_infer();
                self.score(suite, format!("window T={}", infer.window), &model, &infer)?;
                // Strict starvation: the previous frame only, no lost-track entries.
                self.score(
                    suite,
                    "window T=1".into(),
                    &model,
                    &InferConfig {
                        window: 1,
                        lost_entries: false,
                        ..infer.clone()
                    },
                )?;
                self.score(
                    suite,
                    "window T=1 +lost".into(),
                    &model,
                    &InferConfig { window: 1, ..infer },
                )?;
                cfg.model.tmf = true;
                let model = self.train::<T>(&cfg)?;
                let infer = InferConfig {
                    mode: TrackMode::Tmf,
                    ..self.base.infer.clone()
                };
                self.score(suite, "tmf".into(), &model, &infer)?;
            }
            AblationSuite::Raa => {
                for raa in [true, false] {
                    cfg.model.raa = raa;
                    let model = self.train::<T>(&cfg)?;
                    let infer = self.window_infer();
                    self.score(
                        suite,
                        format!("raa={}", if raa { "on" } else { "off" }),
                        &model,
                        &infer,
                    )?;
                }
            }
            AblationSuite::Tokens => {
                for mode in [ObjectTokenMode::Query, ObjectTokenMode::Box] {
                    cfg.model.object_tokens = mode;
                    let model = self.train::<T>(&cfg)?;
                    let infer = self.window_infer();
                    self.score(suite, format!("tokens={mode}"), &model, &infer)?;
                }
            }
            AblationSuite::Alpha => {
                cfg.model.object_tokens = ObjectTokenMode::Box;
                for alpha in self.base.ablate.alphas.clone() {
                    cfg.model.alpha = alpha;
                    let model = self.train::<T>(&cfg)?;
                    let infer = self.window_infer();
                    self.score(suite, format!("alpha={alpha:.1}"), &model, &infer)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs `suites` against already generated training and held-out videos.
pub fn run_ablation_on<T: Scalar>(
    suites: &[AblationSuite],
    base: &RunConfig,
    train: &[Video],
    eval: &[Video],
    log: &mut dyn Write,
) -> Result<AblationTable> {
    base.validate()?;
    let mut runner = Runner {
        base,
        train,
        eval,
        log,
        table: AblationTable::default(),
    };
    for &s in suites {
        runner.run::<T>(s)?;
    }
    Ok(runner.table)
}

/// Generates training data from `base.data` and each suite's held-out data, then runs the sweeps.
pub fn run_ablation<T: Scalar>(
    suites: &[AblationSuite],
    base: &RunConfig,
    log: &mut dyn Write,
) -> Result<AblationTable> {
    let train = generate_suite(&base.data)?;
    let mut table = AblationTable::default();
    for &s in suites {
        let eval = generate_suite(&base.ablate.eval_suite(s, base.data.seed))?;
        table
            .rows
            .extend(run_ablation_on::<T>(&[s], base, &train, &eval, log)?.rows);
    }
    Ok(table)
}
