//! End-to-end runs of the simulation studies: the periodic-signal
//! comparison, the outlier comparison, the bound certificate and the plot
//! data for the figures.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::aggregate::{magging_with_tol, mean_aggregate, pooled_result, AggregationResult};
use crate::error::{Error, Result};
use crate::estimators::{fit_ensemble, fit_pooled, Ensemble, EstimatorSpec};
use crate::groups::stream_rng;
use crate::linalg::{quad_form, CovarianceMatrix};
use crate::maximin::{maximin_point, robustness_delta, theorem1_certificate, BoundCertificate, SupportSpec};
use crate::sim::{simulate_mixture, simulate_periodic, MixtureSimConfig, PeriodicSimConfig, Scenario, SimOutput};

/// Number of recordings shown in the periodic figure.
pub const FIG3_SHOWN_GROUPS: usize = 11;

/// One row of tidy plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub value: f64,
    pub series: String,
}

fn mse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

#[derive(Debug, Clone)]
pub struct PeriodicComparison {
    pub sim: SimOutput,
    pub ensemble: Ensemble,
    pub pooled: AggregationResult,
    pub mean: AggregationResult,
    pub magging: AggregationResult,
    /// Mean squared distance to the common signal over one recording.
    pub mse_pooled: f64,
    pub mse_mean: f64,
    pub mse_magging: f64,
}

impl PeriodicComparison {
    /// The shared dictionary design of one recording.
    pub fn dictionary(&self) -> DMatrix<f64> {
        let len = self.sim.grouping.groups[0].len();
        self.sim.x.rows(0, len).into_owned()
    }

    pub fn common_signal(&self) -> &DVector<f64> {
        self.sim.common_signal.as_ref().expect("periodic simulation carries the common signal")
    }
}

/// Simulates the periodic recordings, fits every recording and the pooled
/// data with `spec`, and compares pooled, mean and Magging estimates of the
/// common signal.
pub fn run_periodic(cfg: &PeriodicSimConfig, spec: &EstimatorSpec, tol: f64) -> Result<PeriodicComparison> {
    let sim = simulate_periodic(cfg)?;
    let ensemble = fit_ensemble(&sim.x, &sim.y, &sim.grouping, spec)?;
    let pooled = pooled_result(&fit_pooled(&sim.x, &sim.y, spec)?);
    let mean = mean_aggregate(&ensemble)?;
    let magging = magging_with_tol(&ensemble, tol)?;
    let dict = sim.x.rows(0, cfg.n_per_group).into_owned();
    let common = sim.common_signal.clone().expect("periodic simulation carries the common signal");
    let signal_mse = |r: &AggregationResult| -> Result<f64> { Ok(mse(&r.predict(&dict)?, &common)) };
    Ok(PeriodicComparison {
        mse_pooled: signal_mse(&pooled)?,
        mse_mean: signal_mse(&mean)?,
        mse_magging: signal_mse(&magging)?,
        sim,
        ensemble,
        pooled,
        mean,
        magging,
    })
}

/// Tidy series for the four-panel periodic figure: data generation (common
/// signal and the non-common part of each shown group), recordings,
/// per-group estimates, and the pooled, mean and Magging aggregates.
pub fn fig3_series(cmp: &PeriodicComparison) -> Result<Vec<SeriesPoint>> {
    let dict = cmp.dictionary();
    let len = dict.nrows();
    let common_b = cmp.sim.common_b.as_ref().expect("periodic simulation carries the common coefficients");
    let shown = FIG3_SHOWN_GROUPS.min(cmp.ensemble.len());
    let mut out = Vec::new();
    let mut push = |label: String, values: &DVector<f64>| {
        out.extend(values.iter().enumerate().map(|(t, &v)| SeriesPoint { x: t as f64, value: v, series: label.clone() }));
    };
    push("generation:common".into(), cmp.common_signal());
    for g in 0..shown {
        let extra = &dict * (&cmp.sim.group_b[g] - common_b);
        push(format!("generation:g{:02}", g + 1), &extra);
    }
    for g in 0..shown {
        let idx = &cmp.sim.grouping.groups[g];
        let rec = DVector::from_iterator(len, idx.iter().map(|&i| cmp.sim.y[i]));
        push(format!("recording:g{:02}", g + 1), &rec);
    }
    for g in 0..shown {
        let est = (&dict * &cmp.ensemble.thetas[g]).add_scalar(cmp.ensemble.intercepts[g]);
        push(format!("estimate:g{:02}", g + 1), &est);
    }
    for agg in [&cmp.pooled, &cmp.mean, &cmp.magging] {
        push(format!("aggregate:{}", agg.scheme), &agg.predict(&dict)?);
    }
    push("aggregate:common".into(), cmp.common_signal());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierComparison {
    /// Σ-norm distances to the majority coefficient vector.
    pub dist_magging: f64,
    pub dist_mean: f64,
    pub magging: AggregationResult,
    pub mean: AggregationResult,
}

/// Fits the subsampled groups of a contamination scenario and measures how
/// far Magging and mean aggregation land from the majority coefficient.
pub fn run_outlier(cfg: &MixtureSimConfig, spec: &EstimatorSpec, tol: f64) -> Result<OutlierComparison> {
    if cfg.scenario != Scenario::OutlierContamination {
        return Err(Error::InvalidInput("outlier comparison needs the outlier_contamination scenario".into()));
    }
    let sim = simulate_mixture(cfg)?;
    let ens = fit_ensemble(&sim.x, &sim.y, &sim.grouping, spec)?;
    let b = sim.majority_b.as_ref().expect("contamination scenario records the majority vector");
    let magging = magging_with_tol(&ens, tol)?;
    let mean = mean_aggregate(&ens)?;
    let dist = |r: &AggregationResult| quad_form(&(&r.theta - b), sim.sigma.matrix()).max(0.0).sqrt();
    Ok(OutlierComparison { dist_magging: dist(&magging), dist_mean: dist(&mean), magging, mean })
}

/// Fits one member per known group of a clusterwise simulation and checks
/// the Magging error against `6η₁ + 4η₂κ²`, with the group coefficients as
/// the support.
pub fn certify_simulation(sim: &SimOutput, spec: &EstimatorSpec, tol: f64) -> Result<BoundCertificate> {
    let ens = fit_ensemble(&sim.x, &sim.y, &sim.grouping, spec)?;
    let support = SupportSpec::new(sim.group_b.clone(), sim.sigma.clone())?;
    let magging = magging_with_tol(&ens, tol)?;
    theorem1_certificate(&sim.x, &ens, &support, &magging, tol)
}

/// Same as [`certify_simulation`] for data loaded from files.
pub fn certify(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grouping: &crate::groups::Grouping,
    group_b: Vec<DVector<f64>>,
    sigma: CovarianceMatrix,
    spec: &EstimatorSpec,
    tol: f64,
) -> Result<BoundCertificate> {
    let ens = fit_ensemble(x, y, grouping, spec)?;
    let support = SupportSpec::new(group_b, sigma)?;
    let magging = magging_with_tol(&ens, tol)?;
    theorem1_certificate(x, &ens, &support, &magging, tol)
}

/// Plot data for the robustness geometry in two dimensions.
///
/// Two panels from one random support around `(2, 0)`: `halfspace` adds a
/// point in `{b : (b − b*)ᵀΣb* ≥ 0}`, which leaves the maximin point
/// unchanged, and `shift` adds a point on the far side, which moves it
/// towards the origin. Series carry the hull vertices (`support`), the
/// added point and the maximin points before and after.
pub fn robustness_series(seed: u64, tol: f64) -> Result<Vec<SeriesPoint>> {
    let mut rng = stream_rng(seed, 0);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let points: Vec<DVector<f64>> = (0..4)
        .map(|_| DVector::from_vec(vec![2.0 + noise.sample(&mut rng), noise.sample(&mut rng)]))
        .collect();
    let spec = SupportSpec::new(points, CovarianceMatrix::identity(2))?;
    let before = maximin_point(&spec, tol)?.point;
    let unit = before.normalize();
    let perp = DVector::from_vec(vec![-unit[1], unit[0]]);
    let halfspace = &before + &unit * 1.5 + &perp * 3.0;
    let shift = &before * 0.25 + &perp * 2.0;

    let mut out = Vec::new();
    let mut point = |panel: &str, label: &str, v: &DVector<f64>| {
        out.push(SeriesPoint { x: v[0], value: v[1], series: format!("{panel}:{label}") });
    };
    for (panel, new_point) in [("halfspace", &halfspace), ("shift", &shift)] {
        let (old, new) = robustness_delta(&spec, new_point, tol)?;
        for b in spec.points() {
            point(panel, "support", b);
        }
        point(panel, "new_point", new_point);
        point(panel, "maximin_before", &old.point);
        point(panel, "maximin_after", &new.point);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sigma_norm_sq;

    fn small_periodic(seed: u64) -> PeriodicSimConfig {
        PeriodicSimConfig { n_per_group: 96, num_groups: 12, dict_size: 30, per_group_components: 4, seed, ..Default::default() }
    }

    #[test]
    fn pooled_equals_mean_for_ols_on_shared_dictionary() {
        let cmp = run_periodic(&small_periodic(3), &EstimatorSpec::ols(), 1e-10).unwrap();
        assert!((&cmp.pooled.theta - &cmp.mean.theta).amax() < 1e-10);
        assert!(cmp.mse_magging < cmp.mse_mean);
    }

    #[test]
    fn no_common_effect_drives_magging_to_zero() {
        let relative_norm = |num_groups: usize| {
            let cfg = PeriodicSimConfig { common_components: 0, num_groups, ..small_periodic(9) };
            let cmp = run_periodic(&cfg, &EstimatorSpec::ols(), 1e-10).unwrap();
            let dict = cmp.dictionary();
            let member = cmp.ensemble.thetas.iter().map(|t| (&dict * t).norm()).sum::<f64>() / num_groups as f64;
            cmp.magging.predict(&dict).unwrap().norm() / member
        };
        let (few, many) = (relative_norm(6), relative_norm(120));
        assert!(many < 0.5 * few && many < 0.2, "{few} -> {many}");
    }

    #[test]
    fn fig3_series_layout() {
        let cmp = run_periodic(&small_periodic(1), &EstimatorSpec::ols(), 1e-10).unwrap();
        let series = fig3_series(&cmp).unwrap();
        let mut labels: Vec<&str> = series.iter().map(|s| s.series.as_str()).collect();
        labels.dedup();
        assert_eq!(labels.len(), 1 + 3 * 11 + 4);
        for l in ["generation:common", "recording:g11", "estimate:g01", "aggregate:pooled", "aggregate:mean", "aggregate:magging"] {
            assert!(labels.contains(&l), "missing {l}");
        }
        assert_eq!(series.len(), labels.len() * 96);
    }

    #[test]
    fn noiseless_certificate_is_exact() {
        let cfg = MixtureSimConfig { n: 300, p: 5, num_groups: 3, noise_sd: 0.0, shared_design: true, seed: 4, ..Default::default() };
        let cert = certify_simulation(&simulate_mixture(&cfg).unwrap(), &EstimatorSpec::ols(), 1e-12).unwrap();
        assert!(cert.eta1 <= 1e-10, "{cert:?}");
        assert_eq!(cert.eta2, 0.0);
        assert!(cert.lhs <= 1e-10, "{cert:?}");
        assert!(cert.holds);
    }

    #[test]
    fn outlier_run_reports_distances() {
        let cfg = MixtureSimConfig {
            scenario: Scenario::OutlierContamination,
            contamination_fraction: 0.2,
            n: 1000,
            num_groups: 20,
            seed: 2,
            ..Default::default()
        };
        let r = run_outlier(&cfg, &EstimatorSpec::ols(), 1e-10).unwrap();
        assert!(r.dist_magging.is_finite() && r.dist_mean > 0.0);
        assert!(run_outlier(&MixtureSimConfig::default(), &EstimatorSpec::ols(), 1e-10).is_err());
    }

    #[test]
    fn robustness_panels() {
        let series = robustness_series(0, 1e-12).unwrap();
        let get = |label: &str| {
            let p = series.iter().find(|s| s.series == label).unwrap();
            DVector::from_vec(vec![p.x, p.value])
        };
        let keep = &get("halfspace:maximin_after") - &get("halfspace:maximin_before");
        assert!(keep.amax() <= 1e-6);
        let s = DMatrix::identity(2, 2);
        let before = sigma_norm_sq(&get("shift:maximin_before"), &s).unwrap();
        let after = sigma_norm_sq(&get("shift:maximin_after"), &s).unwrap();
        assert!(after < before - 1e-3);
        assert_eq!(robustness_series(0, 1e-12).unwrap(), series);
    }
}
