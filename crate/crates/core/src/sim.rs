//! Data generation from the random-coefficient mixture model
//! `Y_i = X_iᵀB_i + ε_i`.
//!
//! Mixture scenarios:
//! * clusterwise: known groups with one coefficient vector per group;
//! * smooth drift: `B_i` follows a Gaussian random walk in `i`;
//! * outlier contamination: a majority shares one vector `b`, the rest carry
//!   large perturbations of it.
//!
//! The periodic scenario reproduces the recording experiment: every group is
//! a time series made of a common two-frequency signal, a few random
//! frequencies with random phase, and noise, over a dictionary of sine and
//! cosine pairs.
//!
//! Every random component draws from its own ChaCha20 stream of the seed,
//! so outputs are bit-identical across runs and independent of evaluation
//! order.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{consecutive_blocks, known_groups, random_subsample, stream_rng, Grouping};
use crate::linalg::{gram, CovarianceMatrix};

const STREAM_DESIGN: u64 = 1 << 40;
const STREAM_NOISE: u64 = (1 << 40) + 1;
const STREAM_COEF: u64 = (1 << 40) + 2;
const STREAM_CONTAMINATION: u64 = (1 << 40) + 3;
const STREAM_GROUP_BASE: u64 = 1 << 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Clusterwise,
    SmoothDrift,
    OutlierContamination,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Clusterwise => "clusterwise",
            Scenario::SmoothDrift => "smooth_drift",
            Scenario::OutlierContamination => "outlier_contamination",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusterwise" => Ok(Scenario::Clusterwise),
            "smooth_drift" | "smooth-drift" => Ok(Scenario::SmoothDrift),
            "outlier_contamination" | "outlier-contamination" | "outliers" => Ok(Scenario::OutlierContamination),
            other => Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSimConfig {
    pub n: usize,
    pub p: usize,
    pub num_groups: usize,
    pub scenario: Scenario,
    pub noise_sd: f64,
    pub coefficient_scale: f64,
    /// Share of contaminated samples; must stay below one half so that a
    /// majority exists.
    pub contamination_fraction: f64,
    /// Outlier perturbations have standard deviation
    /// `outlier_scale · coefficient_scale` per coordinate.
    pub outlier_scale: f64,
    /// Subsample size for the contamination scenario; `⌊n/G⌋` when unset.
    pub group_size: Option<usize>,
    /// Clusterwise only: every group reuses one design block and the
    /// recorded Σ is that block's Gram matrix, so each group's empirical
    /// Gram matrix equals Σ exactly. Requires `G` to divide `n`.
    #[serde(default)]
    pub shared_design: bool,
    pub seed: u64,
}

impl Default for MixtureSimConfig {
    fn default() -> Self {
        MixtureSimConfig {
            n: 1000,
            p: 5,
            num_groups: 50,
            scenario: Scenario::Clusterwise,
            noise_sd: 1.0,
            coefficient_scale: 1.0,
            contamination_fraction: 0.0,
            outlier_scale: 10.0,
            group_size: None,
            shared_design: false,
            seed: 0,
        }
    }
}

impl MixtureSimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n == 0 || self.p == 0 {
            return bad(format!("n and p must be positive, got n={}, p={}", self.n, self.p));
        }
        if self.num_groups == 0 || self.num_groups > self.n {
            return bad(format!("need 1 <= G <= n, got G={}", self.num_groups));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        if !(self.coefficient_scale >= 0.0 && self.coefficient_scale.is_finite()) {
            return bad(format!("coefficient_scale must be finite and >= 0, got {}", self.coefficient_scale));
        }
        if !(self.contamination_fraction >= 0.0 && self.contamination_fraction < 0.5) {
            return bad(format!(
                "contamination_fraction must lie in [0, 0.5), got {}",
                self.contamination_fraction
            ));
        }
        if self.scenario != Scenario::OutlierContamination && self.contamination_fraction != 0.0 {
            return bad("contamination_fraction only applies to the outlier_contamination scenario".into());
        }
        if !(self.outlier_scale >= 0.0 && self.outlier_scale.is_finite()) {
            return bad(format!("outlier_scale must be finite and >= 0, got {}", self.outlier_scale));
        }
        if self.shared_design && (self.scenario != Scenario::Clusterwise || self.n % self.num_groups != 0) {
            return bad("shared_design needs the clusterwise scenario and G dividing n".into());
        }
        if let Some(m) = self.group_size {
            if m == 0 || m > self.n {
                return bad(format!("group_size must lie in 1..=n, got {m}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSimConfig {
    /// Length `P` of every recording.
    pub n_per_group: usize,
    pub num_groups: usize,
    /// Number of frequencies `2πj/P`, `j = 1..=dict_size`.
    pub dict_size: usize,
    pub common_components: usize,
    pub per_group_components: usize,
    pub noise_sd: f64,
    pub common_amplitude: f64,
    pub group_amplitude: f64,
    pub seed: u64,
}

impl Default for PeriodicSimConfig {
    fn default() -> Self {
        PeriodicSimConfig {
            n_per_group: 300,
            num_groups: 50,
            dict_size: 100,
            common_components: 2,
            per_group_components: 7,
            noise_sd: 1.0,
            common_amplitude: 1.0,
            group_amplitude: 1.0,
            seed: 0,
        }
    }
}

impl PeriodicSimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.num_groups == 0 || self.dict_size == 0 {
            return bad("num_groups and dict_size must be positive".into());
        }
        if self.n_per_group <= 2 * self.dict_size {
            return bad(format!(
                "recording length {} must exceed twice the dictionary size {} for an identifiable fit",
                self.n_per_group, self.dict_size
            ));
        }
        if self.common_components + self.per_group_components > self.dict_size {
            return bad(format!(
                "common ({}) plus per-group ({}) components exceed the dictionary size {}",
                self.common_components, self.per_group_components, self.dict_size
            ));
        }
        for (name, v) in [
            ("noise_sd", self.noise_sd),
            ("common_amplitude", self.common_amplitude),
            ("group_amplitude", self.group_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub grouping: Grouping,
    /// `true_b[(i, j)]` is coordinate `j` of `B_i`.
    pub true_b: DMatrix<f64>,
    /// Within-group averages of `B_i`, one per group.
    pub group_b: Vec<DVector<f64>>,
    /// Majority coefficient in the contamination scenario.
    pub majority_b: Option<DVector<f64>>,
    pub sigma: CovarianceMatrix,
    /// Noiseless common effect over one recording (periodic scenario).
    pub common_signal: Option<DVector<f64>>,
    /// Coefficients of the common effect (periodic scenario).
    pub common_b: Option<DVector<f64>>,
    pub scenario: String,
    pub seed: u64,
    pub noise_sd: f64,
    /// Echo of the generating configuration.
    pub config: serde_json::Value,
}

impl SimOutput {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Integer labels when groups partition the samples (known or block
    /// groupings); `None` for overlapping subsamples.
    pub fn labels(&self) -> Option<Vec<i64>> {
        if self.grouping.strategy == crate::groups::Strategy::RandomSubsample {
            return None;
        }
        let mut labels = vec![-1i64; self.n()];
        for (g, idx) in self.grouping.groups.iter().enumerate() {
            for &i in idx {
                labels[i] = g as i64;
            }
        }
        Some(labels)
    }
}

/// The noise vector `ε` used for `seed`, replayed independently of the
/// rest of the simulation.
pub fn replay_noise(seed: u64, n: usize, noise_sd: f64) -> DVector<f64> {
    let mut rng = stream_rng(seed, STREAM_NOISE);
    DVector::from_iterator(n, (0..n).map(|_| noise_sd * normal(&mut rng)))
}

/// `Y_i = X_iᵀB_i + ε_i` row by row.
pub fn responses(x: &DMatrix<f64>, true_b: &DMatrix<f64>, noise: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| x.row(i).dot(&true_b.row(i)) + noise[i])
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    // Row-major draw order.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = sd * normal(rng);
        }
    }
    m
}

fn gaussian_vector(rng: &mut ChaCha20Rng, len: usize, sd: f64) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| sd * normal(rng)))
}

fn group_means(true_b: &DMatrix<f64>, grouping: &Grouping) -> Vec<DVector<f64>> {
    grouping
        .groups
        .iter()
        .map(|idx| {
            let mut acc = DVector::zeros(true_b.ncols());
            for &i in idx {
                acc += true_b.row(i).transpose();
            }
            acc / idx.len() as f64
        })
        .collect()
}

pub fn simulate_mixture(cfg: &MixtureSimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let (n, p, seed) = (cfg.n, cfg.p, cfg.seed);
    let mut sigma = CovarianceMatrix::identity(p);
    let x = if cfg.shared_design {
        let block_len = n / cfg.num_groups;
        let block = gaussian_matrix(&mut stream_rng(seed, STREAM_DESIGN), block_len, p, 1.0);
        sigma = gram(&block, true);
        DMatrix::from_fn(n, p, |i, j| block[(i % block_len, j)])
    } else {
        gaussian_matrix(&mut stream_rng(seed, STREAM_DESIGN), n, p, 1.0)
    };
    let mut true_b = DMatrix::zeros(n, p);
    let mut majority_b = None;

    let grouping = match cfg.scenario {
        Scenario::Clusterwise => {
            let blocks = consecutive_blocks(n, cfg.num_groups)?;
            let mut labels = vec![0i64; n];
            for (g, idx) in blocks.groups.iter().enumerate() {
                let b = gaussian_vector(&mut stream_rng(seed, STREAM_GROUP_BASE + g as u64), p, cfg.coefficient_scale);
                for &i in idx {
                    true_b.set_row(i, &b.transpose());
                    labels[i] = g as i64;
                }
            }
            known_groups(&labels)?
        }
        Scenario::SmoothDrift => {
            let mut rng = stream_rng(seed, STREAM_COEF);
            let step_sd = cfg.coefficient_scale / (n as f64).sqrt();
            let mut b = gaussian_vector(&mut rng, p, cfg.coefficient_scale);
            for i in 0..n {
                if i > 0 {
                    b += gaussian_vector(&mut rng, p, step_sd);
                }
                true_b.set_row(i, &b.transpose());
            }
            consecutive_blocks(n, cfg.num_groups)?
        }
        Scenario::OutlierContamination => {
            let b = gaussian_vector(&mut stream_rng(seed, STREAM_COEF), p, cfg.coefficient_scale);
            for i in 0..n {
                true_b.set_row(i, &b.transpose());
            }
            let mut rng = stream_rng(seed, STREAM_CONTAMINATION);
            let count = (cfg.contamination_fraction * n as f64).round() as usize;
            let mut outliers = rand::seq::index::sample(&mut rng, n, count).into_vec();
            outliers.sort_unstable();
            let sd = cfg.outlier_scale * cfg.coefficient_scale;
            for &i in &outliers {
                // Perturbations are kept in the half-space {u : uᵀΣb ≥ 0}
                // (Σ = I here), where they leave the maximin point at b.
                let mut u = gaussian_vector(&mut rng, p, sd);
                if u.dot(&b) < 0.0 {
                    u = -u;
                }
                true_b.set_row(i, &(&b + u).transpose());
            }
            majority_b = Some(b);
            let m = cfg.group_size.unwrap_or(n / cfg.num_groups);
            random_subsample(n, cfg.num_groups, m, seed)?
        }
    };

    let noise = replay_noise(seed, n, cfg.noise_sd);
    let y = responses(&x, &true_b, &noise);
    let group_b = group_means(&true_b, &grouping);
    Ok(SimOutput {
        x,
        y,
        group_b,
        grouping,
        true_b,
        majority_b,
        sigma,
        common_signal: None,
        common_b: None,
        scenario: cfg.scenario.as_str().to_string(),
        seed,
        noise_sd: cfg.noise_sd,
        config: serde_json::to_value(cfg)?,
    })
}

/// Sine/cosine dictionary over `0..P`: columns `2(j−1)` and `2(j−1)+1` hold
/// `sin(2πjt/P)` and `cos(2πjt/P)`.
pub fn periodic_dictionary(length: usize, dict_size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(length, 2 * dict_size, |t, c| {
        let j = (c / 2 + 1) as f64;
        let angle = 2.0 * PI * j * t as f64 / length as f64;
        if c % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

pub fn simulate_periodic(cfg: &PeriodicSimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let (len, groups, k) = (cfg.n_per_group, cfg.num_groups, cfg.dict_size);
    let dict = periodic_dictionary(len, k);
    let p = 2 * k;
    let n = len * groups;

    let mut rng = stream_rng(cfg.seed, STREAM_COEF);
    let mut common_freqs = rand::seq::index::sample(&mut rng, k, cfg.common_components).into_vec();
    common_freqs.sort_unstable();
    let mut common = DVector::zeros(p);
    for &j in &common_freqs {
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        common[2 * j] = cfg.common_amplitude * phase.cos();
        common[2 * j + 1] = cfg.common_amplitude * phase.sin();
    }
    let others: Vec<usize> = (0..k).filter(|j| !common_freqs.contains(j)).collect();

    let mut x = DMatrix::zeros(n, p);
    let mut true_b = DMatrix::zeros(n, p);
    let mut labels = vec![0i64; n];
    for g in 0..groups {
        let mut rng = stream_rng(cfg.seed, STREAM_GROUP_BASE + g as u64);
        let mut b = common.clone();
        for pick in rand::seq::index::sample(&mut rng, others.len(), cfg.per_group_components) {
            let j = others[pick];
            // Independent sine and cosine amplitudes give a random phase.
            b[2 * j] += cfg.group_amplitude * normal(&mut rng);
            b[2 * j + 1] += cfg.group_amplitude * normal(&mut rng);
        }
        let rows = g * len..(g + 1) * len;
        x.rows_mut(rows.start, len).copy_from(&dict);
        for i in rows {
            true_b.set_row(i, &b.transpose());
            labels[i] = g as i64;
        }
    }

    let grouping = known_groups(&labels)?;
    let noise = replay_noise(cfg.seed, n, cfg.noise_sd);
    let y = responses(&x, &true_b, &noise);
    let group_b = group_means(&true_b, &grouping);
    Ok(SimOutput {
        common_signal: Some(&dict * &common),
        common_b: Some(common),
        sigma: gram(&dict, true),
        x,
        y,
        grouping,
        group_b,
        true_b,
        majority_b: None,
        scenario: "periodic".to_string(),
        seed: cfg.seed,
        noise_sd: cfg.noise_sd,
        config: serde_json::to_value(cfg)?,
    })
}
