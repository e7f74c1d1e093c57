use crate::config::Effective;
use crate::manifest::{num, opt, Outputs};
use crate::*;
use anyhow::{bail, Context, Result};
use maxent_ts::calibration::{calibrate_multivariate, calibrate_series, oracle};
use maxent_ts::data::{compute_margins, empirical_quantiles, load_matrix, DataMatrix};
use maxent_ts::finance::{backtest_suite, out_of_sample_eval, rolling_var, OosConfig, OosRow, VarModel, VarModelSpec};
use maxent_ts::multivariate::{ConstraintSpec, EnsembleModel};
use maxent_ts::stats::{
    anomaly_scan, correlation_spectrum, empirical_moments, ensemble_spectrum, kde, ks_compare, ks_one_sample, linear_grid,
    moment_distribution, mp_density, mp_edges, silverman_bandwidth, Axis, Moment,
};
use maxent_ts::univariate::{Criterion, Family, UnivariateModel};
use serde_json::json;
use std::path::Path;

/// A model file holds either kind of model under a `kind` tag.
pub enum AnyModel {
    Multivariate(EnsembleModel),
    Univariate(UnivariateModel),
}

impl AnyModel {
    fn to_json(&self) -> Result<serde_json::Value> {
        let (kind, body) = match self {
            AnyModel::Multivariate(m) => ("multivariate", m.to_json()?),
            AnyModel::Univariate(m) => ("univariate", m.to_json()?),
        };
        Ok(json!({ "kind": kind, "model": serde_json::from_str::<serde_json::Value>(&body)? }))
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read model file {}", path.display()))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("model file {} is not JSON", path.display()))?;
        let body = v.get("model").map(|m| m.to_string()).unwrap_or_default();
        let m = match v.get("kind").and_then(|k| k.as_str()) {
            Some("multivariate") => AnyModel::Multivariate(EnsembleModel::from_json(&body)?),
            Some("univariate") => AnyModel::Univariate(UnivariateModel::from_json(&body)?),
            _ => bail!("model file {} has no recognised kind", path.display()),
        };
        Ok(m)
    }

    fn multivariate(self, what: &str) -> Result<EnsembleModel> {
        match self {
            AnyModel::Multivariate(m) => Ok(m),
            AnyModel::Univariate(_) => bail!("{what} needs a multivariate model"),
        }
    }
}

fn load_data(path: &Path, eff: &Effective, center: bool) -> Result<DataMatrix> {
    let m = load_matrix(path, &eff.format())?;
    Ok(if center { m.center_rows()? } else { m })
}

pub fn dispatch(cmd: &Command, eff: &Effective) -> Result<u8> {
    let mut out = Outputs::new(&eff.out_dir)?;
    let (name, code) = match cmd {
        Command::Calibrate(a) => ("calibrate", calibrate(a, eff, &mut out)?),
        Command::Sample(a) => ("sample", sample(a, eff, &mut out)?),
        Command::Validate(a) => ("validate", validate(a, eff, &mut out)?),
        Command::Anomaly(a) => ("anomaly", anomaly(a, eff, &mut out)?),
        Command::Spectrum(a) => ("spectrum", spectrum(a, eff, &mut out)?),
        Command::Portfolio(a) => ("portfolio", portfolio(a, eff, &mut out)?),
        Command::Var(a) => ("var", var(a, eff, &mut out)?),
        Command::Oracle(a) => ("oracle", oracle_cmd(a, &mut out)?),
        Command::Generate(a) => ("generate", generate(a, eff, &mut out)?),
    };
    out.finish(name, &serde_json::to_value(cmd)?, eff, code as i32)?;
    Ok(code)
}

fn calibrate(a: &CalibrateArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    let data = load_data(&a.input, eff, a.center)?;
    let opts = eff.calibration();
    let (model, result) = match a.row {
        Some(r) => {
            if r >= data.n_rows() {
                bail!("row {r} out of range, the input has {} rows", data.n_rows());
            }
            let series = data.observed_row(r);
            let grid = empirical_quantiles(&series, &a.quantiles, !a.bounded)?;
            let family = match a.family {
                FamilyArg::H1 => Family::H1,
                FamilyArg::H2 => Family::H2,
                FamilyArg::BinSums => Family::BinSumsSquares,
            };
            let (m, res) = calibrate_series(&series, &grid, family, &opts)?;
            (AnyModel::Univariate(m), res)
        }
        None => {
            if data.max_centering_error() > 1e-8 {
                log::warn!("rows of {} are not centered; pass --center to subtract row means", a.input.display());
            }
            let spec = match a.variant {
                Some(VariantArg::Full) => ConstraintSpec::full(),
                Some(VariantArg::NoMissing) => ConstraintSpec::no_missing(),
                Some(VariantArg::SumsOnly) => ConstraintSpec::sums_only(),
                Some(VariantArg::SumsColumnCounts) => ConstraintSpec::sums_and_column_counts(),
                None if data.has_missing() => ConstraintSpec::full(),
                None => ConstraintSpec::no_missing(),
            };
            let (m, res) = calibrate_multivariate(&spec, &compute_margins(&data), &opts)?;
            (AnyModel::Multivariate(m), res)
        }
    };
    out.write_json("model.json", &model.to_json()?)?;
    out.write_json("calibration.json", &result)?;
    let rows: Vec<Vec<String>> = result
        .residuals
        .iter()
        .map(|r| vec![r.name.clone(), num(r.target), num(r.expected), num(r.rel_err)])
        .collect();
    out.write_csv("residuals.csv", &["constraint", "target", "expected", "rel_err"], &rows)?;
    if result.converged {
        log::info!("converged in {} iterations", result.iterations);
        Ok(0)
    } else {
        eprintln!(
            "calibration did not converge after {} iterations (max relative error {:.3e})",
            result.iterations, result.max_rel_constraint_err
        );
        Ok(EXIT_UNCONVERGED)
    }
}

fn sample(a: &SampleArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    if a.n == 0 {
        bail!("--n must be positive");
    }
    match AnyModel::load(&a.model)? {
        AnyModel::Univariate(m) => {
            let rows: Vec<Vec<String>> = m.sample(a.n, eff.seed).into_iter().map(|v| vec![num(v)]).collect();
            out.write_csv("samples.csv", &["value"], &rows)?;
        }
        AnyModel::Multivariate(m) => {
            let mut rows = Vec::new();
            for (k, d) in m.sample_matrices(a.n, eff.seed)?.iter().enumerate() {
                for i in 0..d.n_rows() {
                    for t in 0..d.n_cols() {
                        rows.push(vec![k.to_string(), i.to_string(), t.to_string(), opt(d.get(i, t))]);
                    }
                }
            }
            out.write_csv("samples.csv", &["replicate", "row", "col", "value"], &rows)?;
        }
    }
    Ok(0)
}

const MOMENTS: [Moment; 4] = [Moment::Mean, Moment::Variance, Moment::Skewness, Moment::Kurtosis];

fn validate(a: &ValidateArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    if !(a.band > 0.0 && a.band < 0.5) {
        bail!("--band must lie in (0, 0.5)");
    }
    let data = load_data(&a.io.input, eff, a.io.center)?;
    let model = match AnyModel::load(&a.io.model)? {
        AnyModel::Univariate(m) => {
            if a.row >= data.n_rows() {
                bail!("row {} out of range, the input has {} rows", a.row, data.n_rows());
            }
            let series = data.observed_row(a.row);
            let ks = ks_one_sample(&series, &|x| m.cdf(x), eff.significance)?;
            let summary = json!({
                "row": a.row,
                "ks": ks,
                "aic": m.information_criterion(Criterion::Aic).ok(),
                "bic": m.information_criterion(Criterion::Bic).ok(),
            });
            out.write_json("validate.json", &summary)?;
            return Ok(0);
        }
        AnyModel::Multivariate(m) => m,
    };
    let (lo, hi) = (a.band, 1.0 - a.band);
    let mut moment_rows = Vec::new();
    let mut moment_summary = Vec::new();
    for axis in [Axis::Row, Axis::Column] {
        for moment in MOMENTS {
            let dist = moment_distribution(&model, moment, axis, eff.n_rep, eff.seed)?;
            let emp = empirical_moments(&data, moment, axis);
            for (k, e) in emp.iter().enumerate() {
                let defined = !dist.samples[k].is_empty();
                moment_rows.push(vec![
                    format!("{axis:?}").to_lowercase(),
                    format!("{moment:?}").to_lowercase(),
                    k.to_string(),
                    opt(*e),
                    if defined { num(dist.mean(k)) } else { String::new() },
                    if defined { num(dist.quantile(k, lo)) } else { String::new() },
                    if defined { num(dist.quantile(k, hi)) } else { String::new() },
                    match (e, defined) {
                        (Some(v), true) => dist.contains(k, *v, lo, hi).to_string(),
                        _ => String::new(),
                    },
                ]);
            }
            moment_summary.push(json!({
                "axis": axis,
                "moment": moment,
                "compatible_fraction": dist.compatible_fraction(&emp, lo, hi),
            }));
        }
    }
    out.write_csv(
        "moments.csv",
        &["axis", "moment", "target", "empirical", "ensemble_mean", "lower", "upper", "inside"],
        &moment_rows,
    )?;
    let mut ks_rows = Vec::new();
    let mut ks_summary = Vec::new();
    for axis in [Axis::Row, Axis::Column] {
        let s = ks_compare(&data, &model, axis, eff.n_rep, eff.seed, eff.significance)?;
        for (k, r) in s.results.iter().enumerate() {
            ks_rows.push(match r {
                Some(r) => vec![format!("{axis:?}").to_lowercase(), k.to_string(), num(r.statistic), num(r.p_value), r.reject.to_string()],
                None => vec![format!("{axis:?}").to_lowercase(), k.to_string(), String::new(), String::new(), String::new()],
            });
        }
        ks_summary.push(json!({
            "axis": axis,
            "compatible_fraction": s.compatible_fraction(),
            "insufficient": s.insufficient,
        }));
    }
    out.write_csv("ks.csv", &["axis", "target", "statistic", "p_value", "reject"], &ks_rows)?;
    out.write_json(
        "validate.json",
        &json!({ "band": [lo, hi], "n_rep": eff.n_rep, "moments": moment_summary, "ks": ks_summary }),
    )?;
    Ok(0)
}

fn anomaly(a: &AnomalyArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    let data = load_data(&a.io.input, eff, a.io.center)?;
    let model = AnyModel::load(&a.io.model)?.multivariate("anomaly")?;
    let report = anomaly_scan(&data, &model, a.coverage, a.fcr_q)?;
    let rows: Vec<Vec<String>> = report
        .flags
        .iter()
        .map(|f| {
            vec![
                data.row_ids()[f.row].clone(),
                data.col_ids()[f.col].clone(),
                num(f.value),
                num(f.lower),
                num(f.upper),
            ]
        })
        .collect();
    out.write_csv("anomalies.csv", &["row", "col", "value", "lower", "upper"], &rows)?;
    out.write_json(
        "anomaly.json",
        &json!({
            "report": report,
            "flag_rate": report.flag_rate(),
            "nominal_rate": report.nominal_rate(),
        }),
    )?;
    Ok(0)
}

fn spectrum(a: &SpectrumArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    if a.points < 2 {
        bail!("--points must be at least 2");
    }
    let data = load_data(&a.io.input, eff, a.io.center)?;
    let model = AnyModel::load(&a.io.model)?.multivariate("spectrum")?;
    let emp = correlation_spectrum(&data)?;
    let ens = ensemble_spectrum(&model, eff.n_rep, eff.seed, None)?;
    let q = data.n_rows() as f64 / data.n_cols() as f64;
    let (mp_lo, mp_hi) = mp_edges(q);
    let top = emp
        .iter()
        .chain(&ens.eigenvalues)
        .fold(if q < 1.0 { mp_hi } else { 0.0 }, |m, &v| m.max(v));
    let grid = linear_grid(0.0, 1.05 * top, a.points);
    let ens_d = kde(&ens.eigenvalues, &grid, ens.bandwidth);
    let emp_d = kde(&emp, &grid, silverman_bandwidth(&emp));
    let rows: Vec<Vec<String>> = grid
        .iter()
        .enumerate()
        .map(|(k, &l)| vec![num(l), num(ens_d[k]), opt(mp_density(l, q).ok()), num(emp_d[k])])
        .collect();
    out.write_csv("spectrum.csv", &["lambda", "ensemble", "marchenko_pastur", "empirical"], &rows)?;
    let lmax: Vec<Vec<String>> = ens.lambda_max.iter().enumerate().map(|(k, &v)| vec![k.to_string(), num(v)]).collect();
    out.write_csv("lambda_max.csv", &["replicate", "lambda_max"], &lmax)?;
    out.write_json(
        "spectrum.json",
        &json!({
            "q": q,
            "mp_edges": if q < 1.0 { Some([mp_lo, mp_hi]) } else { None },
            "empirical_lambda_max": emp.first(),
            "empirical_lambda_min": emp.last(),
            "ensemble_bandwidth": ens.bandwidth,
            "replicates": eff.n_rep,
            "failures": ens.failures,
        }),
    )?;
    Ok(0)
}

fn band_cells(b: Option<&maxent_ts::finance::Band>) -> [String; 3] {
    match b {
        Some(b) => [num(b.mean), num(b.p05), num(b.p95)],
        None => Default::default(),
    }
}

fn portfolio(a: &PortfolioArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    let data = load_matrix(&a.input, &eff.format())?;
    let modes: Vec<bool> = match a.mode {
        ModeArg::Raw => vec![false],
        ModeArg::Detrended => vec![true],
        ModeArg::Both => vec![false, true],
    };
    let opts = eff.calibration();
    let mut results: Vec<(&str, Vec<OosRow>)> = Vec::new();
    for detrend in modes {
        let cfg = OosConfig {
            sizes: a.sizes.clone(),
            qs: a.q.clone(),
            horizon: a.horizon,
            portfolios: a.portfolios,
            detrend,
            seed: eff.seed,
        };
        results.push((if detrend { "detrended" } else { "raw" }, out_of_sample_eval(&data, &cfg, &opts)?));
    }
    let (mut risk, mut sharpe, mut windows) = (Vec::new(), Vec::new(), Vec::new());
    for (mode, rows) in &results {
        for r in rows {
            let key = [mode.to_string(), r.size.to_string(), num(r.q), r.portfolio.to_string()];
            risk.push(key.iter().cloned().chain(band_cells(r.risk.as_ref())).collect());
            sharpe.push(key.iter().cloned().chain(band_cells(r.sharpe.as_ref())).collect());
            for w in &r.windows {
                windows.push(key.iter().cloned().chain([w.start.to_string(), num(w.variance), opt(w.sharpe)]).collect());
            }
        }
    }
    let head = ["mode", "size", "q", "portfolio", "mean", "p05", "p95"];
    out.write_csv("risk.csv", &head, &risk)?;
    out.write_csv("sharpe.csv", &head, &sharpe)?;
    out.write_csv("windows.csv", &["mode", "size", "q", "portfolio", "start", "variance", "sharpe"], &windows)?;
    let body: serde_json::Map<String, serde_json::Value> =
        results.iter().map(|(m, r)| Ok((m.to_string(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
    out.write_json("portfolio.json", &body)?;
    Ok(0)
}

fn series_of(data: &DataMatrix, row: usize) -> Result<Vec<f64>> {
    let (n, t) = data.shape();
    let series = if t == 1 && n > 1 {
        data.observed_col(0)
    } else {
        if row >= n {
            bail!("row {row} out of range, the input has {n} rows");
        }
        data.observed_row(row)
    };
    let expected = if t == 1 && n > 1 { n } else { t };
    if series.len() != expected {
        bail!("the return series has missing values");
    }
    Ok(series)
}

fn var(a: &VarArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    let data = load_matrix(&a.input, &eff.format())?;
    let r = series_of(&data, a.row)?;
    let kinds: Vec<VarModel> = if a.model.eq_ignore_ascii_case("all") {
        vec![VarModel::M1, VarModel::M2, VarModel::M3]
    } else {
        vec![a.model.parse()?]
    };
    if a.alpha.is_empty() {
        bail!("--alpha needs at least one level");
    }
    let opts = eff.calibration();
    let l2 = a.l2.unwrap_or_else(|| (a.window + 1).saturating_sub(a.l1));
    let (mut var_rows, mut test_rows, mut reports) = (Vec::new(), Vec::new(), Vec::new());
    for kind in kinds {
        let spec = VarModelSpec { kind, window: a.window, l1: a.l1, l2, level: a.alpha[0] };
        let rv = rolling_var(&r, &spec, &a.alpha, &opts)?;
        for (l, &level) in rv.levels.iter().enumerate() {
            for (k, &day) in rv.days.iter().enumerate() {
                var_rows.push(vec![
                    day.to_string(),
                    num(r[day]),
                    format!("{kind:?}"),
                    num(level),
                    num(rv.var[l][k]),
                    rv.exceptions[l][k].to_string(),
                ]);
            }
            let rep = backtest_suite(&rv.exceptions[l], level, eff.significance)?;
            eprintln!(
                "{kind:?} at {level}: {} exceptions in {} days, {} of {} tests passed",
                rep.exception_count,
                rep.n_obs,
                rep.tests.iter().filter(|t| t.pass).count(),
                rep.tests.len()
            );
            for t in &rep.tests {
                test_rows.push(vec![
                    format!("{kind:?}"),
                    num(level),
                    format!("{:?}", t.test),
                    opt(t.statistic),
                    opt(t.p_value),
                    t.zone.map(|z| format!("{z:?}")).unwrap_or_default(),
                    t.pass.to_string(),
                    t.vacuous.to_string(),
                ]);
            }
            reports.push(json!({ "model": format!("{kind:?}"), "report": rep, "passed": rep.tests.iter().filter(|t| t.pass).count() }));
        }
    }
    out.write_csv("var.csv", &["day", "return", "model", "level", "var", "exception"], &var_rows)?;
    out.write_csv(
        "backtests.csv",
        &["model", "level", "test", "statistic", "p_value", "zone", "pass", "vacuous"],
        &test_rows,
    )?;
    out.write_json("backtests.json", &reports)?;
    Ok(0)
}

fn oracle_cmd(a: &OracleArgs, out: &mut Outputs) -> Result<u8> {
    let (closed, brute) = match AnyModel::load(&a.model)? {
        AnyModel::Multivariate(m) => (m.multipliers.log_partition()?, oracle::brute_force_log_partition(&m.multipliers, a.resolution)?),
        AnyModel::Univariate(m) => (m.log_partition(), oracle::brute_force_univariate(&m.spec, &m.params, a.resolution)?),
    };
    let abs_err = (closed - brute).abs();
    out.write_json(
        "oracle.json",
        &json!({
            "closed_form": closed,
            "brute_force": brute,
            "abs_err": abs_err,
            "rel_err": abs_err / closed.abs().max(1e-300),
            "resolution": a.resolution,
        }),
    )?;
    Ok(0)
}

fn generate(a: &GenerateArgs, eff: &Effective, out: &mut Outputs) -> Result<u8> {
    use maxent_ts::synthetic::*;
    let mut m = match a.kind {
        GenerateKind::GaussianPanel => gaussian_panel(a.rows, a.cols, a.sigma, eff.seed)?,
        GenerateKind::FactorMarket => one_factor_market(a.rows, a.cols, 1.0, a.sigma, a.nu, eff.seed)?,
        GenerateKind::GaussianStream => DataMatrix::from_rows(vec![gaussian_stream(a.cols, a.sigma, eff.seed)?])?,
    };
    if a.outliers > 0.0 {
        m = inject_outliers(&m, a.outliers, 10.0, eff.seed);
    }
    out.write("data.csv", m.to_csv_string("").as_bytes())?;
    Ok(0)
}
