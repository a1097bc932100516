use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use magging::aggregate::{magging_with_tol, mean_aggregate, pooled_result, stacked_aggregate_with_tol, AggregationResult, Scheme};
use magging::estimators::{fit_ensemble, fit_pooled, Ensemble, EstimatorSpec};
use magging::experiments::{fig3_series, robustness_series, run_periodic, SeriesPoint};
use magging::io::{format_f64, read_dataset_file, read_matrix_file, read_metadata, write_simulation, Dataset, SimMetadata};
use magging::linalg::CovarianceMatrix;
use magging::maximin::{default_grid_radius, maximin_by_definition, maximin_point, SupportSpec};
use magging::sim::{simulate_mixture, simulate_periodic, MixtureSimConfig, PeriodicSimConfig, Scenario};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::args::estimator_spec;
use crate::{CertifyArgs, CliError, FigureArgs, FitArgs, Format, OracleArgs, ScenarioArg, SimulateArgs, EXIT_BOUND_VIOLATED};

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(out: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let mut w = open_output(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(CliError::input)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_rows(out: Option<&Path>, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(open_output(out)?);
    w.write_record(header).map_err(CliError::input)?;
    for row in rows {
        w.write_record(&row).map_err(CliError::input)?;
    }
    w.flush()?;
    Ok(())
}

fn aggregate(
    scheme: &Scheme,
    ens: &Ensemble,
    data: &Dataset,
    spec: &EstimatorSpec,
    tol: f64,
) -> Result<AggregationResult, CliError> {
    match scheme {
        Scheme::Mean => mean_aggregate(ens).map_err(CliError::estimation),
        Scheme::Magging => magging_with_tol(ens, tol).map_err(CliError::solver),
        Scheme::Pooled => Ok(pooled_result(&fit_pooled(&data.x, &data.y, spec).map_err(CliError::estimation)?)),
        Scheme::Stacked(cfg) => stacked_aggregate_with_tol(ens, &data.x, &data.y, cfg, tol).map_err(CliError::estimation),
    }
}

/// Mean squared distance between the aggregate's signal over the first
/// recording and the recorded common signal.
fn common_signal_mse(result: &AggregationResult, x: &DMatrix<f64>, common: &[f64]) -> Result<f64, CliError> {
    let len = common.len();
    if len == 0 || x.nrows() < len {
        return Err(CliError::input("common signal is longer than the dataset"));
    }
    let fit = result.predict(&x.rows(0, len).into_owned()).map_err(CliError::input)?;
    Ok((fit - DVector::from_column_slice(common)).norm_squared() / len as f64)
}

pub fn fit(a: &FitArgs) -> Result<i32, CliError> {
    let data = read_dataset_file(&a.input).map_err(CliError::input)?;
    let (n, p) = data.x.shape();
    let grouping = a.groups.build(n, data.groups.as_deref(), a.seed).map_err(CliError::input)?;
    let spec = estimator_spec(a.estimator, a.intercept, a.standardize).map_err(CliError::input)?;
    if !(a.tol > 0.0) {
        return Err(CliError::input(format!("--tol must be > 0, got {}", a.tol)));
    }
    let common = match &a.meta {
        Some(path) => read_metadata(path).map_err(CliError::input)?.common_signal,
        None => None,
    };
    eprintln!("fit: n={n}, p={p}, {} groups ({}), {} scheme(s)", grouping.len(), grouping.strategy.as_str(), a.schemes.len());

    let ens = fit_ensemble(&data.x, &data.y, &grouping, &spec).map_err(CliError::estimation)?;
    let mut results = Vec::with_capacity(a.schemes.len());
    for scheme in &a.schemes {
        let mut r = aggregate(scheme, &ens, &data, &spec, a.tol)?;
        if let Some(c) = &common {
            r.diagnostics.insert("mse_common_signal".into(), common_signal_mse(&r, &data.x, c)?);
        }
        results.push(r);
    }

    match a.format {
        Format::Json => write_json(
            a.out.as_deref(),
            &json!({
                "n": n,
                "p": p,
                "grouping": {
                    "strategy": grouping.strategy.as_str(),
                    "num_groups": grouping.len(),
                    "sizes": grouping.groups.iter().map(Vec::len).collect::<Vec<_>>(),
                    "seed": grouping.seed,
                },
                "estimator": spec,
                "members": ens.members,
                "thetas": ens.thetas.iter().map(|t| t.as_slice().to_vec()).collect::<Vec<_>>(),
                "results": results.iter().map(AggregationResult::to_json_value).collect::<Vec<_>>(),
            }),
        )?,
        Format::Csv => {
            let mut rows = Vec::new();
            for r in &results {
                let scheme = r.scheme.to_string();
                let mut row = |field: &str, index: usize, value: f64| {
                    rows.push(vec![scheme.clone(), field.to_string(), index.to_string(), format_f64(value)]);
                };
                for (g, &w) in r.weights.iter().enumerate() {
                    row("weight", g, w);
                }
                for (j, &t) in r.theta.iter().enumerate() {
                    row("theta", j, t);
                }
                row("intercept", 0, r.intercept);
                for (k, &v) in &r.diagnostics {
                    row(&format!("diag:{k}"), 0, v);
                }
            }
            write_rows(a.out.as_deref(), &["scheme", "field", "index", "value"], rows.into_iter())?
        }
    }
    Ok(0)
}

pub fn simulate(a: &SimulateArgs) -> Result<i32, CliError> {
    let sim = match a.scenario {
        ScenarioArg::Periodic => {
            let d = PeriodicSimConfig::default();
            let cfg = PeriodicSimConfig {
                n_per_group: a.n_per_group.unwrap_or(d.n_per_group),
                num_groups: a.num_groups.unwrap_or(d.num_groups),
                dict_size: a.dict_size.unwrap_or(d.dict_size),
                common_components: a.common_components.unwrap_or(d.common_components),
                per_group_components: a.per_group_components.unwrap_or(d.per_group_components),
                noise_sd: a.noise_sd.unwrap_or(d.noise_sd),
                common_amplitude: a.common_amplitude.unwrap_or(d.common_amplitude),
                group_amplitude: a.group_amplitude.unwrap_or(d.group_amplitude),
                seed: a.seed,
            };
            simulate_periodic(&cfg)
        }
        mixture => {
            let scenario = match mixture {
                ScenarioArg::Clusterwise => Scenario::Clusterwise,
                ScenarioArg::SmoothDrift => Scenario::SmoothDrift,
                _ => Scenario::OutlierContamination,
            };
            let d = MixtureSimConfig::default();
            let cfg = MixtureSimConfig {
                n: a.n.unwrap_or(d.n),
                p: a.p.unwrap_or(d.p),
                num_groups: a.num_groups.unwrap_or(d.num_groups),
                scenario,
                noise_sd: a.noise_sd.unwrap_or(d.noise_sd),
                coefficient_scale: a.coefficient_scale.unwrap_or(d.coefficient_scale),
                contamination_fraction: a.contamination.unwrap_or(d.contamination_fraction),
                outlier_scale: a.outlier_scale.unwrap_or(d.outlier_scale),
                group_size: a.group_size,
                shared_design: a.shared_design,
                seed: a.seed,
            };
            simulate_mixture(&cfg)
        }
    }
    .map_err(CliError::input)?;
    let (csv_path, meta_path) = write_simulation(&sim, &a.out).map_err(CliError::input)?;
    eprintln!("simulate: {} (n={}, p={}, {} groups)", sim.scenario, sim.n(), sim.p(), sim.grouping.len());
    write_json(None, &json!({ "csv": csv_path, "meta": meta_path }))?;
    Ok(0)
}

pub fn oracle(a: &OracleArgs) -> Result<i32, CliError> {
    let pts = read_matrix_file(&a.support).map_err(CliError::input)?;
    let points: Vec<DVector<f64>> = pts.row_iter().map(|r| r.transpose()).collect();
    let sigma = match &a.sigma {
        Some(path) => CovarianceMatrix::new(read_matrix_file(path).map_err(CliError::input)?).map_err(CliError::input)?,
        None => CovarianceMatrix::identity(pts.ncols()),
    };
    let spec = SupportSpec::new(points, sigma).map_err(CliError::input)?;
    let mm = maximin_point(&spec, a.tol).map_err(CliError::solver)?;
    let mut report = mm.to_json_value();
    if a.grid_check {
        let radius = a.grid_radius.unwrap_or_else(|| default_grid_radius(&spec));
        let grid = maximin_by_definition(&spec, a.grid_step, radius).map_err(CliError::input)?;
        let diff = (&grid.point - &mm.point).amax();
        report["grid_check"] = json!({
            "point": grid.point.as_slice(),
            "worst_case_explained_variance": -grid.value,
            "evaluated": grid.evaluated,
            "step": a.grid_step,
            "radius": radius,
            "max_abs_diff": diff,
        });
    }
    write_json(a.out.as_deref(), &report)?;
    Ok(0)
}

fn default_meta_path(input: &Path) -> PathBuf {
    let s = input.to_string_lossy();
    PathBuf::from(format!("{}.meta.json", s.strip_suffix(".csv").unwrap_or(&s)))
}

fn load_ground_truth(path: &Path) -> Result<SimMetadata, CliError> {
    if !path.exists() {
        return Err(CliError::input(format!("no ground-truth metadata at {}", path.display())));
    }
    read_metadata(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn certify(a: &CertifyArgs) -> Result<i32, CliError> {
    let data = read_dataset_file(&a.input).map_err(CliError::input)?;
    let meta = load_ground_truth(&a.meta.clone().unwrap_or_else(|| default_meta_path(&a.input)))?;
    if meta.n != data.x.nrows() || meta.p != data.x.ncols() {
        return Err(CliError::input(format!(
            "metadata describes n={}, p={} but the dataset has {}x{}",
            meta.n,
            meta.p,
            data.x.nrows(),
            data.x.ncols()
        )));
    }
    let spec = estimator_spec(a.estimator, false, false).map_err(CliError::input)?;
    let ens = fit_ensemble(&data.x, &data.y, &meta.grouping, &spec).map_err(CliError::estimation)?;
    let support = SupportSpec::new(meta.group_b_vectors(), meta.sigma.clone()).map_err(CliError::input)?;
    let mg = magging_with_tol(&ens, a.tol).map_err(CliError::solver)?;
    let cert = magging::maximin::theorem1_certificate(&data.x, &ens, &support, &mg, a.tol).map_err(CliError::solver)?;
    eprintln!("certify: lhs {:e} vs bound {:e}: {}", cert.lhs, cert.bound, if cert.holds { "holds" } else { "VIOLATED" });
    write_json(a.out.as_deref(), &serde_json::to_value(&cert).map_err(CliError::input)?)?;
    Ok(if cert.holds { 0 } else { EXIT_BOUND_VIOLATED })
}

fn series_rows(series: Vec<SeriesPoint>) -> impl Iterator<Item = Vec<String>> {
    series.into_iter().map(|s| vec![format_f64(s.x), format_f64(s.value), s.series])
}

pub fn figure(a: &FigureArgs) -> Result<i32, CliError> {
    match a.experiment.as_str() {
        "fig3" => {
            let cfg = PeriodicSimConfig { seed: a.seed, ..Default::default() };
            let cmp = run_periodic(&cfg, &EstimatorSpec::ols(), a.tol).map_err(CliError::estimation)?;
            eprintln!(
                "fig3: MSE to common signal: pooled {:.4e}, mean {:.4e}, magging {:.4e}",
                cmp.mse_pooled, cmp.mse_mean, cmp.mse_magging
            );
            let series = fig3_series(&cmp).map_err(CliError::solver)?;
            write_rows(a.out.as_deref(), &["time", "value", "series"], series_rows(series))?;
        }
        "robustness" => {
            let series = robustness_series(a.seed, a.tol).map_err(CliError::solver)?;
            write_rows(a.out.as_deref(), &["x", "y", "series"], series_rows(series))?;
        }
        other => return Err(CliError::input(format!("unknown experiment '{other}'; expected fig3 or robustness"))),
    }
    Ok(0)
}
