//! Subcommand implementations.

use std::fs;
use std::path::Path;

use sketchreg_core::design::{self, load_csv, write_csv};
use sketchreg_core::estimators::{
    aclse_fit, clse_fit, clse_fit_penalized, ols_fit, ridge_fit, row_compressed_ols, select_dim_cv,
    FitResult, RankPolicy,
};
use sketchreg_core::montecarlo::{
    derive_seed, estimate_eta, estimate_tau, reproduce_figure, simulate, FigureSettings, FigureTag,
    McConfig, McMethod, Panel,
};
use sketchreg_core::projections::{apply_rows, sample_projection};
use sketchreg_core::provenance::Sidecar;
use sketchreg_core::theory::{
    exact_mse_from_eta, matched_ridge_lambda, ridge_mse, theorem1_bound, theorem2_bound,
    theorem4_bound,
};
use sketchreg_core::{DesignMatrix, Family, NoiseModel, ProjectionSpec, ResponseVector, Spectrum};

use crate::args::{
    BoundsArgs, Cli, Command, CovarianceArg, FamilyArg, FigureArg, FitArgs, MethodArg, ProjectArgs,
    ProjectionArgs, ReproduceArgs, RoleArg, SimulateArgs,
};
use crate::output::{ensure_dir, sidecar_path, write_atomic};
use crate::CliError;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Bounds(a) => bounds(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Project(a) => project(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Print the effective configuration to standard error.
fn echo(command: &str, config: &Sidecar) {
    eprintln!(
        "sketchreg {command}: seed={}",
        config.get("seed").unwrap_or("none")
    );
    for (k, v) in config.entries() {
        eprintln!("  {k}={v}");
    }
}

fn family(args: &ProjectionArgs) -> Result<Family, CliError> {
    Ok(match args.family {
        FamilyArg::Gaussian => Family::Gaussian,
        FamilyArg::Sign => Family::Sign,
        FamilyArg::Srht => Family::Srht,
        FamilyArg::Sparse => {
            if !(args.density > 0.0 && args.density <= 1.0) {
                return Err(usage(format!(
                    "--density must lie in (0, 1], got {}",
                    args.density
                )));
            }
            Family::Sparse {
                density: args.density,
            }
        }
    })
}

fn projection_echo(config: &mut Sidecar, args: &ProjectionArgs) {
    config.set("family", format!("{:?}", args.family).to_lowercase());
    if args.family == FamilyArg::Sparse {
        config.set("density", args.density);
    }
}

fn write_sidecar(output: &Path, sidecar: &Sidecar) -> Result<(), CliError> {
    write_atomic(&sidecar_path(output), sidecar.to_string().as_bytes())
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let fam = family(&a.projection)?;
    let mut config = Sidecar::new();
    config
        .set("command", "fit")
        .set("input", a.input.display())
        .set("output", a.output.display())
        .set("has_header", a.has_header)
        .set("center", !a.no_center)
        .set("method", format!("{:?}", a.method).to_lowercase())
        .set("seed", a.seed);
    match a.method {
        MethodArg::Clse | MethodArg::Aclse => {
            if a.d.is_none() && (a.cv_grid.is_none() || a.method == MethodArg::Aclse) {
                return Err(usage(format!(
                    "--method {} needs --d{}",
                    config.get("method").unwrap_or_default(),
                    if a.method == MethodArg::Clse {
                        " or --cv-grid"
                    } else {
                        ""
                    }
                )));
            }
            if a.d.is_some() && a.cv_grid.is_some() {
                return Err(usage("give either --d or --cv-grid, not both"));
            }
            if a.k == 0 {
                return Err(usage("--k must be at least 1"));
            }
            projection_echo(&mut config, &a.projection);
            if let Some(d) = a.d {
                config.set("d", d);
            }
            if let Some(g) = &a.cv_grid {
                config
                    .set("cv_grid", g)
                    .set("folds", a.folds)
                    .set("one_se", a.one_se);
            }
            if a.method == MethodArg::Aclse {
                config.set("k", a.k);
            }
            if let Some(g) = a.gamma_penalty {
                if a.method == MethodArg::Aclse {
                    return Err(usage("--gamma-penalty applies to clse only"));
                }
                config.set("gamma_penalty", g);
            }
        }
        MethodArg::Ridge => {
            let lambda = a
                .lambda
                .ok_or_else(|| usage("--method ridge needs --lambda"))?;
            config.set("lambda", lambda);
        }
        MethodArg::Row => {
            let m = a.m.ok_or_else(|| usage("--method row needs --m"))?;
            config.set("m", m);
            projection_echo(&mut config, &a.projection);
        }
        MethodArg::Ols => {}
    }
    let policy = if a.min_norm {
        RankPolicy::MinNorm
    } else {
        RankPolicy::Reject
    };
    config.set("min_norm", a.min_norm);
    echo("fit", &config);

    let (x, y) = load_csv(&a.input, a.has_header)?;
    let (x, y, y_mean) = if a.no_center {
        (x, y, 0.0)
    } else {
        let (yc, mean) = y.centered();
        (x.centered(), yc, mean)
    };

    let mut cv_sidecar = Sidecar::new();
    let fit: FitResult = match a.method {
        MethodArg::Ols => ols_fit(&x, &y, policy)?,
        MethodArg::Ridge => ridge_fit(&x, &y, a.lambda.expect("validated"))?,
        MethodArg::Row => {
            let spec = ProjectionSpec::new(fam, x.n(), a.m.expect("validated"), a.seed)?;
            row_compressed_ols(&x, &y, &spec, policy)?
        }
        MethodArg::Clse => {
            let d = match (&a.d, &a.cv_grid) {
                (Some(d), _) => *d,
                (None, Some(grid)) => {
                    let first = *grid
                        .values()
                        .first()
                        .ok_or_else(|| usage("--cv-grid is empty"))?;
                    let template = ProjectionSpec::new(
                        fam,
                        x.p(),
                        first.min(x.p()).max(1),
                        derive_seed(a.seed, 1),
                    )?;
                    let report = select_dim_cv(&x, &y, &template, grid.values(), a.folds)?;
                    let errors: Vec<String> = report
                        .mean_errors
                        .iter()
                        .map(|e| design::format_f64(*e))
                        .collect();
                    cv_sidecar
                        .set("cv_chosen_d", report.chosen_d)
                        .set("cv_one_se_d", report.one_se_d)
                        .set("cv_mean_errors", errors.join(","));
                    if a.one_se {
                        report.one_se_d
                    } else {
                        report.chosen_d
                    }
                }
                (None, None) => unreachable!("validated above"),
            };
            let spec = ProjectionSpec::new(fam, x.p(), d, a.seed)?;
            match a.gamma_penalty {
                Some(g) => clse_fit_penalized(&x, &y, &spec, g)?,
                None => clse_fit(&x, &y, &spec)?,
            }
        }
        MethodArg::Aclse => {
            let spec = ProjectionSpec::new(fam, x.p(), a.d.expect("validated"), a.seed)?;
            aclse_fit(&x, &y, &spec, a.k)?
        }
    };

    let mut csv = Vec::new();
    fit.write_csv(&mut csv)?;
    write_atomic(&a.output, &csv)?;

    let mut sidecar = config.clone();
    sidecar.extend(&fit.provenance());
    sidecar.extend(&cv_sidecar);
    if !a.no_center {
        let means: Vec<String> = x
            .column_means()
            .iter()
            .map(|m| design::format_f64(*m))
            .collect();
        sidecar
            .set("y_mean", design::format_f64(y_mean))
            .set("x_means", means.join(","));
    }
    write_sidecar(&a.output, &sidecar)
}

/// One number per non-empty line; a non-numeric first line is a header.
fn read_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(CliError::Runtime(format!(
                    "{}: line {}: not a number: {field:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::Runtime(format!("{}: no values", path.display())));
    }
    Ok(values)
}

fn builtin_spectrum(
    kind: CovarianceArg,
    p: usize,
    spike_d: usize,
    spike_eps: f64,
) -> Result<Spectrum, CliError> {
    Ok(match kind {
        CovarianceArg::Identity => Spectrum::isotropic(1.0, p)?,
        CovarianceArg::InverseIndex => Spectrum::inverse_index(p)?,
        CovarianceArg::Spiked => Spectrum::spiked(spike_d, spike_eps, p)?,
    })
}

fn covariance_name(kind: CovarianceArg) -> &'static str {
    match kind {
        CovarianceArg::Identity => "identity",
        CovarianceArg::InverseIndex => "inverse-index",
        CovarianceArg::Spiked => "spiked",
    }
}

fn load_beta(path: Option<&Path>, p: usize) -> Result<Vec<f64>, CliError> {
    match path {
        None => Ok(vec![1.0; p]),
        Some(path) => {
            let beta = read_column(path)?;
            if beta.len() != p {
                return Err(CliError::Runtime(format!(
                    "{}: expected {p} coefficients, found {}",
                    path.display(),
                    beta.len()
                )));
            }
            Ok(beta)
        }
    }
}

fn bounds(a: BoundsArgs) -> Result<(), CliError> {
    let mut config = Sidecar::new();
    config.set("command", "bounds");
    match (&a.spectrum, a.covariance) {
        (Some(path), None) => config.set("spectrum", path.display()),
        (None, Some(kind)) => {
            config
                .set("covariance", covariance_name(kind))
                .set("p", a.p);
            if kind == CovarianceArg::Spiked {
                config
                    .set("spike_d", a.spike_d)
                    .set("spike_eps", a.spike_eps);
            }
            &mut config
        }
        _ => return Err(usage("give exactly one of --spectrum or --covariance")),
    };
    if let Some(b) = &a.beta {
        config.set("beta", b.display());
    }
    config
        .set("sigma2", a.sigma2)
        .set("d", &a.d)
        .set("samples", a.samples)
        .set("output", a.output.display())
        .set("seed", a.seed);
    if a.samples < 100 {
        return Err(usage("--samples must be at least 100"));
    }
    echo("bounds", &config);

    let spectrum = match (&a.spectrum, a.covariance) {
        (Some(path), _) => Spectrum::new(read_column(path)?)?,
        (None, Some(kind)) => builtin_spectrum(kind, a.p, a.spike_d, a.spike_eps)?,
        (None, None) => unreachable!("validated above"),
    };
    let beta = load_beta(a.beta.as_deref(), spectrum.p())?;
    let noise = NoiseModel::new(a.sigma2)?;

    let mut panel = Panel::new(
        "bounds",
        &[
            "d",
            "thm1",
            "thm2",
            "thm4",
            "ridge_at_matched_lambda",
            "matched_lambda",
            "exact_thm3",
            "exact_thm3_se",
            "tau",
            "tau_se",
        ],
    );
    let mut grid = a.d.values().to_vec();
    grid.sort_unstable();
    grid.dedup();
    for d in grid {
        let eta = estimate_eta(&spectrum, d, a.samples, derive_seed(a.seed, d as u64))?;
        let tau = estimate_tau(&eta);
        let lambda = matched_ridge_lambda(&spectrum, d)?;
        let exact = exact_mse_from_eta(&spectrum, &beta, noise, &eta)?;
        panel.rows.push(vec![
            d as f64,
            theorem1_bound(&spectrum, &beta, noise, d)?.total,
            theorem2_bound(&spectrum, &beta, noise, d)?.total,
            theorem4_bound(&spectrum, &beta, noise, d, &tau)?.total,
            ridge_mse(&spectrum, &beta, noise, lambda)?.total,
            lambda,
            exact.total,
            exact.total_stderr.unwrap_or(0.0),
            tau.tau,
            tau.stderr,
        ]);
    }
    write_atomic(&a.output, panel.to_csv().as_bytes())?;
    write_sidecar(&a.output, &config)
}

fn run_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let fam = family(&a.projection)?;
    let mut config = Sidecar::new();
    config
        .set("command", "simulate")
        .set("covariance", covariance_name(a.covariance))
        .set("p", a.p)
        .set("n", a.n);
    if a.covariance == CovarianceArg::Spiked {
        config
            .set("spike_d", a.spike_d)
            .set("spike_eps", a.spike_eps);
    }
    if let Some(b) = &a.beta {
        config.set("beta", b.display());
    }
    config
        .set("sigma2", a.sigma2)
        .set("method", format!("{:?}", a.method).to_lowercase());
    let template = match a.method {
        MethodArg::Ols => McMethod::Ols,
        MethodArg::Ridge => {
            config.set("lambda", a.lambda);
            McMethod::Ridge { lambda: a.lambda }
        }
        MethodArg::Row => {
            projection_echo(&mut config, &a.projection);
            config.set("m", &a.d);
            McMethod::RowCompressed {
                family: fam,
                m: a.p,
            }
        }
        MethodArg::Clse => {
            projection_echo(&mut config, &a.projection);
            config.set("d", &a.d);
            McMethod::Clse { family: fam, d: 1 }
        }
        MethodArg::Aclse => {
            projection_echo(&mut config, &a.projection);
            config.set("d", &a.d).set("k", &a.k);
            McMethod::Aclse {
                family: fam,
                d: 1,
                k: 1,
            }
        }
    };
    config
        .set("samples", a.samples)
        .set("reps", a.reps)
        .set("output", a.output.display())
        .set("seed", a.seed);
    if a.n < a.p {
        return Err(usage(format!(
            "--n ({}) must be at least --p ({})",
            a.n, a.p
        )));
    }
    let mc = McConfig {
        num_projection_samples: a.samples,
        num_noise_reps: a.reps,
        base_seed: a.seed,
        d_grid: a.d.values().to_vec(),
        k_grid: a.k.values().to_vec(),
    };
    echo("simulate", &config);

    let spectrum = builtin_spectrum(a.covariance, a.p, a.spike_d, a.spike_eps)?;
    let x = design::design_from_spectrum(&spectrum, a.n)?;
    let beta = load_beta(a.beta.as_deref(), a.p)?;
    let noise = NoiseModel::new(a.sigma2)?;
    let result = simulate(&x, &spectrum, &beta, noise, template, &mc).map_err(|e| match e {
        sketchreg_core::Error::InvalidParameter(m) => usage(m),
        other => other.into(),
    })?;
    let panel = &result.panels[0];
    write_atomic(&a.output, panel.to_csv().as_bytes())?;
    let mut sidecar = config.clone();
    sidecar.extend(&result.sidecar);
    write_sidecar(&a.output, &sidecar)
}

fn reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    let tag = match a.figure {
        FigureArg::Fig1 => FigureTag::Fig1,
        FigureArg::Fig2 => FigureTag::Fig2,
        FigureArg::Fig3 => FigureTag::Fig3,
    };
    let mut config = Sidecar::new();
    config
        .set("command", "reproduce")
        .set("figure", tag)
        .set("output_dir", a.output_dir.display())
        .set("seed", a.seed);
    if a.n < a.p {
        return Err(usage(format!(
            "--n ({}) must be at least --p ({})",
            a.n, a.p
        )));
    }
    let mc = McConfig {
        num_projection_samples: a.samples,
        num_noise_reps: a.reps,
        base_seed: a.seed,
        d_grid: a.d.values().to_vec(),
        k_grid: a.k.values().to_vec(),
    };
    let settings = FigureSettings {
        p: a.p,
        n: a.n,
        spike_eps: a.spike_eps,
        spike_d: a.spike_d,
        ..FigureSettings::default()
    };
    config
        .extend(&mc.to_sidecar())
        .extend(&settings.to_sidecar());
    echo("reproduce", &config);

    let result = reproduce_figure(tag, &mc, &settings).map_err(|e| match e {
        sketchreg_core::Error::InvalidParameter(m) => usage(m),
        other => other.into(),
    })?;
    ensure_dir(&a.output_dir)?;
    for panel in &result.panels {
        let path = a
            .output_dir
            .join(format!("{}.csv", result.file_stem(panel)));
        write_atomic(&path, panel.to_csv().as_bytes())?;
    }
    let mut sidecar = config.clone();
    sidecar.extend(&result.sidecar);
    write_atomic(
        &a.output_dir.join(format!("{tag}.meta")),
        sidecar.to_string().as_bytes(),
    )
}

fn project(a: ProjectArgs) -> Result<(), CliError> {
    let fam = family(&a.projection)?;
    let mut config = Sidecar::new();
    config
        .set("command", "project")
        .set("input", a.input.display())
        .set("output", a.output.display())
        .set("has_header", a.has_header)
        .set("role", format!("{:?}", a.role).to_lowercase())
        .set("d", a.d);
    projection_echo(&mut config, &a.projection);
    config.set("seed", a.seed);
    echo("project", &config);

    let (x, y) = load_csv(&a.input, a.has_header)?;
    let input_dim = match a.role {
        RoleArg::Columns => x.p(),
        RoleArg::Rows => x.n(),
    };
    let spec =
        ProjectionSpec::new(fam, input_dim, a.d, a.seed).map_err(|e| usage(e.to_string()))?;
    let op = sample_projection(&spec)?;
    let (px, py): (DesignMatrix, ResponseVector) = match a.role {
        RoleArg::Columns => (DesignMatrix::new(op.project_columns(x.values())?)?, y),
        RoleArg::Rows => apply_rows(&op, &x, &y)?,
    };
    let header: Option<Vec<String>> = a.has_header.then(|| {
        let prefix = match a.role {
            RoleArg::Columns => "z",
            RoleArg::Rows => "x",
        };
        (1..=px.p())
            .map(|j| format!("{prefix}{j}"))
            .chain(["y".to_string()])
            .collect()
    });
    let mut csv = Vec::new();
    write_csv(&mut csv, &px, &py, header.as_deref())?;
    write_atomic(&a.output, &csv)?;

    let mut sidecar = config.clone();
    sidecar.extend(&spec.to_sidecar());
    write_sidecar(&a.output, &sidecar)
}
