use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use fieldinfer::bandwidth::{cv_select_k, select_variance_bandwidth, CvConfig, CvOutcome, VbConfig, VbOutcome};
use fieldinfer::bootstrap::{mu0_at, run_lwmb, test_mean, BootstrapConfig, BootstrapMode, BootstrapResult};
use fieldinfer::grid::{grid_to_csv, load_grid_csv, make_position_grid, Field};
use fieldinfer::hac::HacConfig;
use fieldinfer::kernels::{SmoothingKernel, VarianceKernel};
use fieldinfer::simulate::{
    coverage_study, simulate_dataset_scaled, size_power_study, MeanFieldKind, NoiseKind, StudyConfig,
};
use fieldinfer::smoother::{nw_surface, SmootherConfig};
use fieldinfer::toeplitz::SqrtChoice;
use fieldinfer::Error;

use crate::manifest::{digest, manifest_path, write_json, Execution, RunManifest};
use crate::{
    BootArgs, CiArgs, EstimateArgs, Failure, SelectArgs, SimulateArgs, SmoothArgs, StudyArgs, StudyKind, TestArgs,
    VbArgs,
};

type Outcome = Result<(), Failure>;

const DEFAULT_K_MAX: usize = 20;

struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    warnings: Vec<String>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self { command, started: Instant::now(), inputs: Vec::new(), warnings: Vec::new() }
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn finish(self, output: &Path, mut config: Value, seeds: Value) -> Outcome {
        if !self.warnings.is_empty() {
            config["warnings"] = json!(self.warnings);
        }
        let inputs = self.inputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>, _>>()?;
        let manifest = RunManifest {
            schema: "fieldinfer-manifest/1",
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds,
            inputs,
            outputs: vec![output.display().to_string()],
            execution: Execution {
                threads: rayon::current_num_threads(),
                wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            },
        };
        write_json(&manifest_path(output), &manifest)?;
        Ok(())
    }
}

fn parsed<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    Ok(s.parse()?)
}

fn check_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Outcome {
    match values.into_iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Failure::Numeric(format!("{what} entry {i} is not finite"))),
        None => Ok(()),
    }
}

fn check_alpha(alpha: f64) -> Outcome {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha out of range (0, 1): {alpha}")).into())
    }
}

fn vb_config(args: &VbArgs, seed: u64, sqrt: SqrtChoice) -> VbConfig {
    VbConfig {
        q: args.q,
        gamma: args.gamma.0.clone(),
        iterations: args.iterations,
        pilot: args.pilot,
        reps: args.selection_reps,
        seed,
        sqrt,
    }
}

/// An explicit `--k-max` is used as given; the default is reduced to what
/// the field admits (`n ≥ 4·k_max + 2`).
fn k_max(field: &Field, args: &SmoothArgs) -> usize {
    args.k_max
        .unwrap_or_else(|| DEFAULT_K_MAX.min((field.n().min(field.m()).saturating_sub(2) / 4).max(1)))
}

fn choose_k(field: &Field, args: &SmoothArgs, g: &SmoothingKernel) -> Result<(usize, Option<CvOutcome>), Failure> {
    match args.k {
        Some(k) => Ok((k, None)),
        None => {
            let cv = cv_select_k(field, &CvConfig { k_max: k_max(field, args), kernel: g.clone() })?;
            check_finite("cross-validation score", cv.scores.iter().map(|(_, s)| s))?;
            Ok((cv.k_best, Some(cv)))
        }
    }
}

fn choose_b(
    field: &Field,
    sm: &SmootherConfig,
    kernel: &VarianceKernel,
    b: Option<f64>,
    vb: &VbConfig,
) -> Result<(f64, Option<VbOutcome>), Failure> {
    match b {
        Some(b) => Ok((b, None)),
        None => {
            let out = select_variance_bandwidth(field, sm, kernel, vb)?;
            check_finite("variance-bandwidth loss", out.losses.iter().map(|(_, l)| l))?;
            Ok((out.b_best, Some(out)))
        }
    }
}

fn vb_json(vb: &VbConfig) -> Value {
    json!({
        "q": vb.q,
        "gamma": vb.gamma,
        "iterations": vb.iterations,
        "pilot": vb.pilot,
        "reps": vb.reps,
    })
}

pub fn estimate(args: EstimateArgs) -> Outcome {
    let mut run = Run::new("estimate");
    let g: SmoothingKernel = parsed(&args.smooth.kernel_g)?;
    let field = load_grid_csv(&args.input)?;
    run.input(&args.input);
    let (k, cv) = choose_k(&field, &args.smooth, &g)?;
    let surface = nw_surface(&field, &SmootherConfig::new(k, g.clone())?)?;
    check_finite("mean surface", surface.values().iter())?;
    fs::write(&args.output, grid_to_csv(surface.values()))?;
    let config = json!({
        "n": field.n(),
        "m": field.m(),
        "k": k,
        "k_selected": cv.is_some(),
        "k_max": k_max(&field, &args.smooth),
        "kernel_g": g.name(),
        "cv_scores": cv.map(|c| c.scores),
    });
    run.finish(&args.output, config, json!({}))
}

/// Loads the data, resolves both bandwidths and runs the bootstrap.
fn bootstrap(
    run: &mut Run,
    input: &Path,
    smooth: &SmoothArgs,
    boot: &BootArgs,
) -> Result<(Field, BootstrapResult, Value), Failure> {
    check_alpha(boot.alpha)?;
    let g: SmoothingKernel = parsed(&smooth.kernel_g)?;
    let kk: VarianceKernel = parsed(&boot.kernel_k)?;
    let mode: BootstrapMode = parsed(&boot.mode)?;
    let sqrt: SqrtChoice = parsed(&boot.sqrt)?;
    let vb = vb_config(&boot.selection, boot.seed, sqrt);
    if boot.b.is_none() {
        vb.validate()?;
    }
    let field = load_grid_csv(input)?;
    run.input(input);

    let (k, cv) = choose_k(&field, smooth, &g)?;
    let smoother = SmootherConfig::new(k, g.clone())?;
    let (b, vbo) = choose_b(&field, &smoother, &kk, boot.b, &vb)?;
    let cfg = BootstrapConfig {
        reps: boot.reps,
        alpha: boot.alpha,
        mode,
        seed: boot.seed,
        hac: HacConfig::new(b, kk.clone())?,
        smoother,
        sqrt,
    };
    cfg.validate()?;
    for w in cfg.warnings() {
        run.warn(w);
    }
    let grid = make_position_grid(field.n(), field.m(), k, boot.grid_divisions)?;
    let result = run_lwmb(&field, &grid, &cfg)?;
    check_finite("estimate", &result.estimates.estimates)?;
    check_finite("half-width", &result.half_widths)?;
    check_finite("bootstrap quantile", [&result.c_quantile])?;

    let config = json!({
        "n": field.n(),
        "m": field.m(),
        "k": k,
        "b": b,
        "k_selected": cv.is_some(),
        "b_selected": vbo.is_some(),
        "k_max": k_max(&field, smooth),
        "kernel_g": g.name(),
        "kernel_k": kk.name(),
        "alpha": boot.alpha,
        "mode": mode,
        "reps": boot.reps,
        "sqrt": sqrt,
        "sqrt_mode": result.sqrt_mode,
        "grid_divisions": boot.grid_divisions,
        "selection": vb_json(&vb),
        "cv_scores": cv.map(|c| c.scores),
        "vb_losses": vbo.map(|v| v.losses),
    });
    Ok((field, result, config))
}

pub fn ci(args: CiArgs) -> Outcome {
    let mut run = Run::new("ci");
    let (_, result, config) = bootstrap(&mut run, &args.input, &args.smooth, &args.boot)?;
    write_json(&args.output, &result.record())?;
    run.finish(&args.output, config, json!({ "bootstrap": args.boot.seed, "selection": args.boot.seed }))
}

pub fn test(args: TestArgs) -> Outcome {
    let mut run = Run::new("test");
    let null = match args.null.as_str() {
        "zero" => None,
        path => Some(PathBuf::from(path)),
    };
    let null_field = null.as_deref().map(load_grid_csv).transpose()?;
    let (field, mut result, mut config) = bootstrap(&mut run, &args.input, &args.smooth, &args.boot)?;
    let mu0 = match &null_field {
        None => mu0_at(&result.estimates.positions, |_, _| 0.0),
        Some(f) => {
            if (f.n(), f.m()) != (field.n(), field.m()) {
                return Err(Error::Shape {
                    expected: format!("{}x{} null lattice", field.n(), field.m()),
                    found: format!("{}x{}", f.n(), f.m()),
                }
                .into());
            }
            result.estimates.positions.iter().map(|p| f.get(p.p, p.q)).collect()
        }
    };
    if let Some(path) = &null {
        run.input(path);
    }
    let verdict = test_mean(&result, &mu0)?;
    check_finite("test statistic", [&verdict.statistic])?;
    result.verdict = Some(verdict);
    write_json(&args.output, &result.record())?;
    config["null"] = json!(args.null);
    run.finish(&args.output, config, json!({ "bootstrap": args.boot.seed, "selection": args.boot.seed }))
}

pub fn select(args: SelectArgs) -> Outcome {
    let mut run = Run::new("select-bandwidth");
    let g: SmoothingKernel = parsed(&args.smooth.kernel_g)?;
    let kk: VarianceKernel = parsed(&args.kernel_k)?;
    let sqrt: SqrtChoice = parsed(&args.sqrt)?;
    let vb = vb_config(&args.selection, args.seed, sqrt);
    vb.validate()?;
    let field = load_grid_csv(&args.input)?;
    run.input(&args.input);
    let (k, cv) = choose_k(&field, &args.smooth, &g)?;
    let smoother = SmootherConfig::new(k, g.clone())?;
    let (b, vbo) = choose_b(&field, &smoother, &kk, None, &vb)?;
    let vbo = vbo.expect("variance bandwidth was selected");
    let out = json!({
        "k_best": k,
        "b_best": b,
        "cv_scores": cv.map(|c| c.scores),
        "vb_losses": vbo.losses,
        "pilot_variance": vbo.pilot_variance,
        "blocks": vbo.blocks,
    });
    write_json(&args.output, &out)?;
    let config = json!({
        "n": field.n(),
        "m": field.m(),
        "k_max": k_max(&field, &args.smooth),
        "k_fixed": args.smooth.k,
        "kernel_g": g.name(),
        "kernel_k": kk.name(),
        "sqrt": sqrt,
        "selection": vb_json(&vb),
    });
    run.finish(&args.output, config, json!({ "selection": args.seed }))
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let run = Run::new("simulate");
    let mean: MeanFieldKind = parsed(&args.mean)?;
    let noise: NoiseKind = parsed(&args.noise)?;
    if !(args.noise_scale >= 0.0 && args.noise_scale.is_finite()) {
        return Err(Error::Config(format!("noise scale must be non-negative, got {}", args.noise_scale)).into());
    }
    let field = simulate_dataset_scaled(&mean, noise, args.n, args.m, args.seed, args.noise_scale)?;
    check_finite("simulated value", field.values().iter())?;
    fs::write(&args.output, grid_to_csv(field.values()))?;
    let config = json!({
        "n": args.n,
        "m": args.m,
        "mean": mean,
        "noise": noise.to_string(),
        "noise_scale": args.noise_scale,
    });
    run.finish(&args.output, config, json!({ "noise": args.seed }))
}

fn mode_name(mode: BootstrapMode) -> &'static str {
    match mode {
        BootstrapMode::Homogeneous => "homogeneous",
        BootstrapMode::Heterogeneous => "heterogeneous",
    }
}

fn fixed_or_auto<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

pub fn study(args: StudyArgs) -> Outcome {
    let mut run = Run::new(match args.kind {
        StudyKind::Coverage => "study coverage",
        StudyKind::Sizepower => "study sizepower",
    });
    let text = fs::read_to_string(&args.config).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(args.config.clone()),
        _ => Error::Io(e),
    })?;
    let cfg: StudyConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("study config: {e}")))?;
    cfg.validate()?;
    run.input(&args.config);

    let mut csv = String::new();
    let sims = match args.kind {
        StudyKind::Coverage => {
            let report = coverage_study(&cfg)?;
            csv.push_str("mean,error,K,B,grid,mode,coverage,average_width\n");
            for row in &report.rows {
                check_finite("average width", [&row.average_width])?;
                writeln!(
                    csv,
                    "{},{},{},{},{}x{},{},{},{}",
                    cfg.mean,
                    cfg.noise,
                    fixed_or_auto(cfg.k),
                    fixed_or_auto(cfg.b),
                    cfg.grid_divisions,
                    cfg.grid_divisions,
                    mode_name(row.mode),
                    row.coverage,
                    row.average_width
                )
                .expect("writing to a String");
            }
            serde_json::to_value(&report.sims)
        }
        StudyKind::Sizepower => {
            let report = size_power_study(&cfg)?;
            csv.push_str("noise,mode,size,power\n");
            for row in &report.rows {
                writeln!(csv, "{},{},{},{}", cfg.noise, mode_name(row.mode), row.size, row.power)
                    .expect("writing to a String");
            }
            serde_json::to_value(&report.sims)
        }
    }
    .map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&args.output, csv)?;
    let config = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let seeds = json!({ "study": cfg.seed, "sims": sims });
    run.finish(&args.output, config, seeds)
}
