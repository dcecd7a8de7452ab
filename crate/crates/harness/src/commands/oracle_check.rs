use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use topp_core::{
    binary_search_top_p, oracle_top_p, AttentionWeights, BinarySearchConfig, ThresholdP,
};

use crate::report::CsvOut;
use crate::{fields, HarnessError};

pub const CONTEXT_LENGTHS: [usize; 5] = [16, 64, 256, 1024, 4096];
pub const THRESHOLDS: [f64; 6] = [0.5, 0.8, 0.85, 0.9, 0.95, 0.99];
pub const TEMPERATURES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
/// One trial in this many draws logits from a small integer lattice, which
/// forces tied weights.
pub const TIE_PERIOD: usize = 8;

pub const ORACLE_CHECK_COLUMNS: [&str; 10] = [
    "trial",
    "n",
    "p",
    "temperature",
    "tied",
    "oracle_budget",
    "pruner_budget",
    "iterations",
    "pruner_mass",
    "ok",
];

#[derive(Debug, Clone, Copy)]
pub struct OracleCheckOptions {
    pub seed: u64,
    pub trials: usize,
    /// Pruner settings; `p` is drawn per trial.
    pub prune: BinarySearchConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCheckSummary {
    pub trials: usize,
    pub failures: usize,
    pub tied_trials: usize,
}

struct Trial {
    n: usize,
    p: f64,
    temperature: f64,
    tied: bool,
    weights: AttentionWeights<f64>,
}

/// Trial `index` reads stream `index` of the seed, so any trial can be
/// replayed alone.
fn draw_trial(seed: u64, index: usize) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = CONTEXT_LENGTHS[rng.random_range(0..CONTEXT_LENGTHS.len())];
    let p = THRESHOLDS[rng.random_range(0..THRESHOLDS.len())];
    let tied = index % TIE_PERIOD == TIE_PERIOD - 1;
    let (temperature, logits): (f64, Vec<f64>) = if tied {
        (1.0, (0..n).map(|_| rng.random_range(0..4) as f64).collect())
    } else {
        let t = TEMPERATURES[rng.random_range(0..TEMPERATURES.len())];
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (t, z.into_iter().map(|z| z / t).collect())
    };
    let weights = AttentionWeights::from_logits(&logits).expect("finite logits");
    Trial {
        n,
        p,
        temperature,
        tied,
        weights,
    }
}

/// Compares the binary-search pruner with the sorting oracle. A trial passes
/// when the pruned mass reaches `p` and the selection equals the oracle's,
/// except that tokens tied with the pruner's threshold may be added.
pub fn cmd_oracle_check(
    opts: &OracleCheckOptions,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<OracleCheckSummary, HarnessError> {
    let log_err = |e| HarnessError::io(Path::new("<log>"), e);
    if opts.trials == 0 {
        writeln!(log, "oracle-check: zero trials requested, nothing checked").map_err(log_err)?;
    }
    let mut csv = match out {
        Some(p) => Some(CsvOut::create(Some(p), &ORACLE_CHECK_COLUMNS)?),
        None => None,
    };
    let mut summary = OracleCheckSummary {
        trials: opts.trials,
        failures: 0,
        tied_trials: 0,
    };
    for index in 0..opts.trials {
        let t = draw_trial(opts.seed, index);
        let mut cfg = opts.prune;
        cfg.p = ThresholdP::new(t.p).expect("grid value");
        let outcome = binary_search_top_p(t.weights.as_slice(), &cfg)?;
        let oracle = oracle_top_p(&t.weights, cfg.p);
        let mass = outcome.selection.mass_under(&t.weights)?;
        let w = t.weights.as_slice();
        let distinct = {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|p| p[0] != p[1])
        };
        summary.tied_trials += !distinct as usize;

        let failure = if mass < t.p - topp_core::MASS_SLACK {
            Some(format!("mass {mass} below p"))
        } else if distinct && outcome.selection.indices() != oracle.indices() {
            Some(format!(
                "selected {} tokens, oracle {}",
                outcome.selection.len(),
                oracle.len()
            ))
        } else if !oracle.is_subset_of(&outcome.selection) {
            Some("selection misses oracle tokens".to_string())
        } else if outcome
            .selection
            .indices()
            .iter()
            .any(|&i| !oracle.contains(i) && w[i] != outcome.threshold)
        {
            Some("extra tokens beyond the threshold tie".to_string())
        } else {
            None
        };

        if let Some(reason) = &failure {
            summary.failures += 1;
            writeln!(
                log,
                "FAIL trial={index} seed={} n={} p={} temperature={} tied={}: {reason}",
                opts.seed, t.n, t.p, t.temperature, t.tied
            )
            .map_err(log_err)?;
        }
        if let Some(csv) = csv.as_mut() {
            csv.row(&fields![
                index,
                t.n,
                t.p,
                t.temperature,
                t.tied,
                oracle.len(),
                outcome.selection.len(),
                outcome.iterations,
                mass,
                failure.is_none(),
            ])?;
        }
    }
    if let Some(csv) = csv {
        csv.finish()?;
    }
    writeln!(
        log,
        "oracle-check: {} trials, {} failures, {} with ties",
        summary.trials, summary.failures, summary.tied_trials
    )
    .map_err(log_err)?;
    Ok(summary)
}
