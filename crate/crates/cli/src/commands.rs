use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use priormatch_core::analytic::{cpmf_forward_moments, cpmf_solve, pmf_forward_moments, pmf_solve, EdFamily, InverseSolution, MomentSet};
use priormatch_core::matcher::{
    gradient_check, match_prior, surface, AdamConfig, Feasibility, LayeredModel, MatchProblem, OutputMode, Regularizer, SampleBudget,
    Weights,
};
use priormatch_core::model::{CpmfHyper, HyperFile, Hyperparameters, ModelKind, Parameterization};
use priormatch_core::moments::{estimate_moments, DEFAULT_MAX_PAIRS};
use priormatch_core::sampler::{format_value, simulate_cpmf, simulate_hpf, simulate_pmf, DataMatrix};
use priormatch_core::{Error, RngHandle};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Outcome of a subcommand that ran to completion.
pub enum Status {
    Ok,
    Infeasible,
}

pub struct Run {
    pub config: Value,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    fn parse<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone()).context("invalid config")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Attach the resolved config and seed to a JSON result.
    fn stamp(&self, mut v: Value) -> Value {
        if let Value::Object(obj) = &mut v {
            obj.insert("config".into(), self.config.clone());
            obj.insert("seed".into(), json!(self.seed));
        }
        v
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn emit(v: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn relative_to(config_dir: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match config_dir {
        Some(d) if p.is_relative() && !p.exists() => d.join(p),
        _ => p,
    }
}

#[derive(Deserialize)]
struct SimulateConfig {
    #[serde(flatten)]
    hyper: HyperFile,
    rows: usize,
    cols: usize,
    #[serde(default)]
    #[allow(dead_code)]
    seed: Option<u64>,
}

pub fn simulate(run: &Run) -> Result<Status> {
    let c: SimulateConfig = run.parse()?;
    let rng = RngHandle::new(run.seed);
    let m = match c.hyper.to_hyper()? {
        Hyperparameters::Pmf(h) => simulate_pmf(&rng, &h, c.rows, c.cols)?,
        Hyperparameters::Cpmf(h) => simulate_cpmf(&rng, &h, c.rows, c.cols)?,
        Hyperparameters::Hpf(h) => simulate_hpf(&rng, &h, c.rows, c.cols)?,
    };
    let path = run.path("matrix.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    m.write_csv(&mut w)?;
    w.flush()?;
    run.write_json("matrix.json", &run.stamp(json!({ "hyperparameters": c.hyper, "rows": c.rows, "cols": c.cols })))?;
    eprintln!("wrote {}", path.display());
    Ok(Status::Ok)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsConfig {
    input: String,
    #[serde(default = "default_pairs")]
    max_pairs: usize,
    #[serde(default)]
    #[allow(dead_code)]
    seed: Option<u64>,
}

fn default_pairs() -> usize {
    DEFAULT_MAX_PAIRS
}

pub fn moments(run: &Run, config_dir: Option<&Path>) -> Result<Status> {
    let c: MomentsConfig = run.parse()?;
    let input = relative_to(config_dir, &c.input);
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let m = DataMatrix::read_csv(BufReader::new(file))?;
    let est = estimate_moments(&m, c.max_pairs, &RngHandle::new(run.seed))?;
    if est.clipped {
        eprintln!("warning: a correlation estimate was clipped to [0, 1]");
    }
    let v = run.stamp(serde_json::to_value(&est)?);
    run.write_json("moments.json", &v)?;
    emit(&v)?;
    Ok(Status::Ok)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    #[serde(default = "default_model")]
    model: ModelKind,
    /// Targets given inline.
    #[serde(default)]
    targets: Option<MomentSet>,
    /// Or read from a moments.json file.
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    ed: Option<EdFamily>,
    #[serde(default)]
    parameterization: Parameterization,
    #[serde(default)]
    #[allow(dead_code)]
    seed: Option<u64>,
}

fn default_model() -> ModelKind {
    ModelKind::Pmf
}

#[derive(Serialize)]
struct SolveOutput {
    feasible: bool,
    #[serde(flatten)]
    solution: InverseSolution,
    a: f64,
    c: f64,
    /// Gamma-prior hyperparameters at b = d = √r.
    hyperparameters: HyperFile,
    forward_moments: MomentSet,
}

pub fn solve(run: &Run, config_dir: Option<&Path>) -> Result<Status> {
    let c: SolveConfig = run.parse()?;
    let targets = match (c.targets, &c.input) {
        (Some(t), None) => t,
        (None, Some(p)) => {
            let path = relative_to(config_dir, p);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing targets from {}", path.display()))?
        }
        _ => bail!("give exactly one of `targets` or `input`"),
    };
    let solved = match c.model {
        ModelKind::Pmf => pmf_solve(&targets),
        ModelKind::Cpmf => {
            let ed = c.ed.as_ref().context("cpmf needs an `ed` block")?;
            cpmf_solve(&targets, ed)
        }
        ModelKind::Hpf => bail!("hpf has no closed-form solver; use `match`"),
    };
    let sol = match solved {
        Ok(s) => s,
        Err(Error::Infeasible(inf)) => {
            let v = run.stamp(json!({ "feasible": false, "violations": inf.violations }));
            run.write_json("solution.json", &v)?;
            for viol in &inf.violations {
                eprintln!("infeasible: {viol}");
            }
            return Ok(Status::Infeasible);
        }
        Err(e) => return Err(e.into()),
    };
    let base = sol.pmf_symmetric()?;
    let (hyper, forward) = match c.model {
        ModelKind::Cpmf => {
            let h = CpmfHyper { base, ed: c.ed.clone().expect("checked above") };
            let f = cpmf_forward_moments(&h);
            (Hyperparameters::Cpmf(h), f)
        }
        _ => (Hyperparameters::Pmf(base), pmf_forward_moments(&base)),
    };
    let (a, cs) = sol.gamma_shapes.expect("solver sets shapes");
    let out = SolveOutput {
        feasible: true,
        solution: sol,
        a,
        c: cs,
        hyperparameters: HyperFile::from_hyper(&hyper, c.parameterization)?,
        forward_moments: forward,
    };
    let v = run.stamp(serde_json::to_value(&out)?);
    run.write_json("solution.json", &v)?;
    emit(&v)?;
    Ok(Status::Ok)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BudgetConfig {
    #[serde(default)]
    latent: Option<Vec<usize>>,
    #[serde(default)]
    s_z: Option<usize>,
    #[serde(default)]
    s_y: Option<usize>,
    #[serde(default)]
    output: Option<usize>,
    #[serde(default)]
    discrete: Option<usize>,
}

impl BudgetConfig {
    fn resolve(&self, model: &LayeredModel) -> SampleBudget {
        let s_y = self.s_y.unwrap_or(10);
        let mut b = SampleBudget::split(model, self.s_z.unwrap_or(1000), s_y);
        if let Some(l) = &self.latent {
            b.latent = l.clone();
        }
        if let Some(o) = self.output {
            b.output = o;
        }
        if let Some(d) = self.discrete {
            b.discrete = d;
        }
        b
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitConfig {
    k: u32,
    params: BTreeMap<String, f64>,
    #[serde(default)]
    parameterization: Parameterization,
    #[serde(default)]
    ed: Option<EdFamily>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemConfig {
    model: ModelKind,
    init: InitConfig,
    #[serde(default)]
    targets: MomentSet,
    #[serde(default)]
    weights: Weights,
    #[serde(default)]
    budget: BudgetConfig,
    #[serde(default)]
    optimizer: AdamConfig,
    #[serde(default)]
    regularizer: Option<Regularizer>,
    #[serde(default)]
    output_mode: OutputMode,
    #[serde(default)]
    #[allow(dead_code)]
    seed: Option<u64>,
    /// Surface axes; ignored by `match`.
    #[serde(default)]
    axes: Vec<AxisConfig>,
    /// Finite-difference step; gradcheck only.
    #[serde(default = "default_h")]
    h: f64,
}

fn default_h() -> f64 {
    1e-4
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisConfig {
    name: String,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    from: Option<f64>,
    #[serde(default)]
    to: Option<f64>,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    log: bool,
}

impl AxisConfig {
    fn values(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.values {
            return Ok(v.clone());
        }
        let (Some(from), Some(to), Some(steps)) = (self.from, self.to, self.steps) else {
            bail!("axis {} needs `values` or `from`, `to`, `steps`", self.name);
        };
        if steps < 2 {
            return Ok(vec![from]);
        }
        let (a, b) = if self.log { (from.ln(), to.ln()) } else { (from, to) };
        Ok((0..steps)
            .map(|i| {
                let x = a + (b - a) * i as f64 / (steps - 1) as f64;
                if self.log { x.exp() } else { x }
            })
            .collect())
    }
}

fn build_problem(run: &Run) -> Result<(MatchProblem, ProblemConfig)> {
    let c: ProblemConfig = run.parse()?;
    let file = HyperFile {
        model: c.model,
        k: c.init.k,
        params: c.init.params.clone(),
        parameterization: c.init.parameterization,
        ed: c.init.ed.clone(),
    };
    let init = file.to_hyper()?;
    let parameterization = c.init.parameterization;
    let model = LayeredModel::for_hyper(&init, parameterization)?.with_output_mode(c.output_mode);
    let budget = c.budget.resolve(&model);
    let mut optimizer = c.optimizer;
    optimizer.seed = run.seed;
    let problem = MatchProblem {
        model,
        init,
        parameterization,
        targets: c.targets,
        weights: c.weights,
        budget,
        optimizer,
        regularizer: c.regularizer,
    };
    Ok((problem, c))
}

pub fn run_match(run: &Run) -> Result<Status> {
    let (problem, _) = build_problem(run)?;
    let result = match match_prior(&problem) {
        Ok(r) => r,
        Err(Error::Diverged { iteration, trace }) => {
            write_trace(&run.path("trace.csv"), &trace)?;
            bail!("optimization diverged at iteration {iteration}; trace written up to the last finite step");
        }
        Err(e) => return Err(e.into()),
    };
    write_trace(&run.path("trace.csv"), &result.trace)?;
    let fitted = HyperFile::from_hyper(&result.fitted, problem.parameterization)?;
    let mut columns = vec!["iter".to_string(), "discrepancy".into(), "E_hat".into(), "Var_hat".into()];
    columns.extend(result.names.iter().cloned());
    let v = run.stamp(json!({
        "fitted": fitted,
        "discrepancy": result.discrepancy,
        "iterations": result.iterations,
        "feasibility": result.feasibility,
        "trace_columns": columns,
    }));
    run.write_json("result.json", &v)?;
    emit(&v)?;
    if result.feasibility == Feasibility::BoundarySuspected {
        eprintln!("targets appear unreachable: the fit stalled on the boundary of the feasible region");
        return Ok(Status::Infeasible);
    }
    Ok(Status::Ok)
}

fn write_trace(path: &Path, trace: &[priormatch_core::matcher::TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in trace {
        let mut fields = vec![r.iteration.to_string(), format_value(r.discrepancy), format_value(r.e_hat), format_value(r.var_hat)];
        fields.extend(r.hyper.iter().map(|x| format_value(*x)));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn gradcheck(run: &Run) -> Result<Status> {
    let (problem, c) = build_problem(run)?;
    let lambda = priormatch_core::pack(&problem.init, problem.parameterization)?;
    let report = gradient_check(&problem.model, &lambda, &problem.budget, c.h, &RngHandle::new(run.seed))?;
    let v = run.stamp(serde_json::to_value(&report)?);
    emit(&v)?;
    Ok(Status::Ok)
}

pub fn surface_grid(run: &Run) -> Result<Status> {
    let (problem, c) = build_problem(run)?;
    if c.axes.is_empty() {
        bail!("surface needs one or two `axes`");
    }
    let axes: Vec<(String, Vec<f64>)> = c.axes.iter().map(|a| Ok((a.name.clone(), a.values()?))).collect::<Result<_>>()?;
    let points = surface(&problem, &axes)?;
    let path = run.path("surface.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for p in &points {
        let mut fields: Vec<String> = p.coords.iter().map(|x| format_value(*x)).collect();
        fields.extend([format_value(p.discrepancy), format_value(p.e_hat), format_value(p.var_hat)]);
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    let mut columns: Vec<String> = axes.iter().map(|(n, _)| n.clone()).collect();
    columns.extend(["discrepancy".into(), "E_hat".into(), "Var_hat".into()]);
    run.write_json("surface.json", &run.stamp(json!({ "columns": columns, "points": points.len() })))?;
    eprintln!("wrote {}", path.display());
    Ok(Status::Ok)
}
