use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_start, run_trial, SimConfig, SimError, TrialRecord};
use crate::hand_model::CommandModel;
use crate::reach_mdp::ReachPolicy;
use crate::session::PlannerMode;

pub const CSV_HEADER: [&str; 9] = [
    "seed",
    "mode",
    "dx",
    "dy",
    "dz",
    "n_commands",
    "guide_time_s",
    "net_movement_m",
    "success",
];

/// Per-axis offset magnitude drawn uniformly from `[min, max]` with a random sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartDistribution {
    pub min: f64,
    pub max: f64,
}

impl Default for StartDistribution {
    fn default() -> Self {
        Self { min: 0.1, max: 0.6 }
    }
}

impl StartDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|_, _| {
            let m = rng.random_range(self.min..=self.max);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }
}

/// Seed of trial `index` under `master`; independent of how many trials run.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl MetricSummary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if s.is_empty() {
            f64::NAN
        } else if s.len() % 2 == 1 {
            s[s.len() / 2]
        } else {
            (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0
        };
        Self { mean, sd, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub n_commands: MetricSummary,
    pub guide_time: MetricSummary,
    pub net_hand_movement: MetricSummary,
    pub success_rate: f64,
}

impl ModeSummary {
    fn of(trials: &[TrialRecord]) -> Self {
        let col = |f: fn(&TrialRecord) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        Self {
            n_commands: MetricSummary::of(&col(|t| t.metrics.n_commands as f64)),
            guide_time: MetricSummary::of(&col(|t| t.metrics.guide_time)),
            net_hand_movement: MetricSummary::of(&col(|t| t.metrics.net_hand_movement)),
            success_rate: trials.iter().filter(|t| t.metrics.success).count() as f64
                / trials.len() as f64,
        }
    }
}

/// Mean of discrete minus continuous over paired trials, with a percentile
/// bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl PairedDifference {
    pub fn excludes_zero(&self) -> bool {
        self.ci_high < 0.0 || self.ci_low > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub trials: usize,
    pub master_seed: u64,
    pub config: SimConfig,
    pub start_distribution: StartDistribution,
    pub bootstrap_resamples: usize,
    pub discrete: ModeSummary,
    pub continuous: ModeSummary,
    pub diff_n_commands: PairedDifference,
    pub diff_guide_time: PairedDifference,
    pub diff_net_hand_movement: PairedDifference,
}

impl ComparisonSummary {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let row = |name: &str, d: &MetricSummary, c: &MetricSummary, diff: &PairedDifference| {
            format!(
                "{name:<18} {:>9.3} {:>8.3} {:>9.3} {:>8.3} {:>10.3} [{:.3}, {:.3}]\n",
                d.mean, d.sd, c.mean, c.sd, diff.mean, diff.ci_low, diff.ci_high
            )
        };
        out.push_str(&format!(
            "paired trials: {}  master seed: {}  bootstrap resamples: {}\n",
            self.trials, self.master_seed, self.bootstrap_resamples
        ));
        out.push_str("human parameters are synthetic placeholders, not measured values\n");
        out.push_str(&format!(
            "{:<18} {:>9} {:>8} {:>9} {:>8} {:>10} {}\n",
            "metric", "disc mean", "disc sd", "cont mean", "cont sd", "diff", "95% CI"
        ));
        let (d, c) = (&self.discrete, &self.continuous);
        out.push_str(&row(
            "n_commands",
            &d.n_commands,
            &c.n_commands,
            &self.diff_n_commands,
        ));
        out.push_str(&row(
            "guide_time_s",
            &d.guide_time,
            &c.guide_time,
            &self.diff_guide_time,
        ));
        out.push_str(&row(
            "net_movement_m",
            &d.net_hand_movement,
            &c.net_hand_movement,
            &self.diff_net_hand_movement,
        ));
        out.push_str(&format!(
            "{:<18} {:>9.3} {:>8} {:>9.3}\n",
            "success_rate", d.success_rate, "", c.success_rate
        ));
        out.push_str(&format!(
            "medians (disc/cont): n_commands {}/{}  guide_time_s {:.3}/{:.3}  net_movement_m {:.3}/{:.3}\n",
            d.n_commands.median,
            c.n_commands.median,
            d.guide_time.median,
            c.guide_time.median,
            d.net_hand_movement.median,
            c.net_hand_movement.median
        ));
        out
    }
}

pub fn bootstrap_mean_ci(
    diffs: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> PairedDifference {
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    PairedDifference {
        mean,
        ci_low: at(alpha),
        ci_high: at(1.0 - alpha),
    }
}

/// Run `trials` paired episodes (same start offset and seed for both planners).
/// Returns the summary and every trial, discrete first within each pair.
pub fn compare(
    policy: &Arc<ReachPolicy>,
    model: &CommandModel,
    config: &SimConfig,
    start: &StartDistribution,
    trials: usize,
    master_seed: u64,
) -> Result<(ComparisonSummary, Vec<TrialRecord>), SimError> {
    const RESAMPLES: usize = 2000;
    let pairs: Vec<(TrialRecord, TrialRecord)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(master_seed, i);
            let offset = draw_start(start, seed);
            let d = run_trial(
                PlannerMode::Discrete,
                Some(policy),
                model,
                config,
                offset,
                seed,
            )?;
            let c = run_trial(
                PlannerMode::Continuous,
                Some(policy),
                model,
                config,
                offset,
                seed,
            )?;
            Ok((d, c))
        })
        .collect::<Result<_, SimError>>()?;
    let (disc, cont): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let diff = |f: fn(&TrialRecord) -> f64, k: u64| {
        let ds: Vec<f64> = disc.iter().zip(&cont).map(|(d, c)| f(d) - f(c)).collect();
        bootstrap_mean_ci(&ds, RESAMPLES, 0.95, master_seed ^ k)
    };
    let summary = ComparisonSummary {
        trials,
        master_seed,
        config: *config,
        start_distribution: *start,
        bootstrap_resamples: RESAMPLES,
        discrete: ModeSummary::of(&disc),
        continuous: ModeSummary::of(&cont),
        diff_n_commands: diff(|t| t.metrics.n_commands as f64, 1),
        diff_guide_time: diff(|t| t.metrics.guide_time, 2),
        diff_net_hand_movement: diff(|t| t.metrics.net_hand_movement, 3),
    };
    let all = disc
        .into_iter()
        .zip(cont)
        .flat_map(|(d, c)| [d, c])
        .collect();
    Ok((summary, all))
}

/// Run `trials` episodes of one planner; trial `i` uses `trial_seed(master_seed, i)`.
pub fn simulate_batch(
    mode: PlannerMode,
    policy: &Arc<ReachPolicy>,
    model: &CommandModel,
    config: &SimConfig,
    start: &StartDistribution,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<TrialRecord>, SimError> {
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(master_seed, i);
            run_trial(
                mode,
                Some(policy),
                model,
                config,
                draw_start(start, seed),
                seed,
            )
        })
        .collect()
}

/// One CSV row per trial.
pub fn write_trials_csv<W: Write>(trials: &[TrialRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for t in trials {
        out.write_record([
            t.seed.to_string(),
            t.mode.to_string(),
            t.start_offset[0].to_string(),
            t.start_offset[1].to_string(),
            t.start_offset[2].to_string(),
            t.metrics.n_commands.to_string(),
            t.metrics.guide_time.to_string(),
            t.metrics.net_hand_movement.to_string(),
            t.metrics.success.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
