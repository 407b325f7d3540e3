//! Experiment orchestration: training sweeps, saddle-line perturbation
//! scans, channel following with jumps, the analytic toy study, and
//! eigenvalue tracking. Every run is reproducible from its record: the
//! master seed and per-run indices derive all RNG streams.
//!
//! Output layout per experiment: `runs.jsonl` (one line per run),
//! `summary.csv`, `config.json`, plus experiment-specific CSV tables.

use crate::activation::ActivationKind;
use crate::channels::{
    detect_channels, group_directions, jump_procedure, parallel_update_fraction, slope_law_fit,
    ChannelReport, JumpRecord,
};
use crate::data::{build_dataset, derive_seed, glorot_normal_init, SeedStream, TargetSpec};
use crate::error::{Error, Result};
use crate::flow::{
    integrate_with_retry, FlowConfig, FlowResult, MseSystem, SolverKind, StopReason,
};
use crate::landscape::{
    canonicalize, has_duplicate_neurons, track_eigen_curves, uniform_grid, SaddleLine,
    SAME_SOLUTION_TOL,
};
use crate::net::{ArchDescriptor, Dataset, NetworkParams};
use crate::pop::{
    default_quadrature, limit_loss_and_h, optimal_readouts, sweep_critical_points, w_sweep,
    write_w_sweep_csv, ErfTeacher, PopLossSpec, PopSystem, StudentShape,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Relative tolerance on input-weight equality declaring a duplicate pair.
pub const DUPLICATE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TrainSweep,
    SaddlePerturb,
    ChannelFollow,
    ToyAnalytic,
    EigenTrack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub has_bias: bool,
}

impl ArchSpec {
    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor::new(self.widths.clone(), self.activation, self.has_bias)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub target: TargetSpec,
    pub architectures: Vec<ArchSpec>,
    pub n_seeds: usize,
    pub master_seed: u64,
    pub flow: FlowConfig,
    pub norm_threshold: f64,
    pub cos_threshold: f64,
    /// Line-coordinate grid (lo, hi, points) for perturbation scans and
    /// eigen tracking.
    pub gamma_grid: (f64, f64, usize),
    /// Perturbation magnitude along the smallest-eigenvalue direction.
    pub alpha: f64,
    /// Line coordinate at which channel-follow perturbs.
    pub gamma_follow: f64,
    pub jump_halvings: usize,
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, target: TargetSpec) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            target,
            architectures: vec![ArchSpec {
                widths: vec![2, 4, 1],
                activation: ActivationKind::Softplus,
                has_bias: true,
            }],
            n_seeds: 50,
            master_seed: 0,
            flow: FlowConfig {
                solver: SolverKind::Rosenbrock23Adaptive,
                grad_tol: 1e-10,
                max_steps: 30_000,
                patience: 3_000,
                record_every: 10,
                ..FlowConfig::default()
            },
            norm_threshold: 1e3,
            cos_threshold: 0.01,
            gamma_grid: (-1.0, 2.0, 101),
            alpha: 1e-5,
            gamma_follow: 1.5,
            jump_halvings: 10,
            out_dir: None,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::InvalidArgument("no architectures configured".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidArgument("seed list is empty".into()));
        }
        self.flow.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        Ok(serde_json::from_str(text)?)
    }

    fn init_seed(&self, arch_index: usize, seed_index: usize) -> u64 {
        derive_seed(
            self.master_seed,
            SeedStream::Init,
            (arch_index as u64) << 32 | seed_index as u64,
        )
    }

    fn dataset_for(&self, arch_index: usize) -> Result<Dataset> {
        // one dataset per architecture, shared across its seeds
        let mut spec = self.target.clone();
        spec.seed = derive_seed(self.master_seed, SeedStream::Dataset, arch_index as u64)
            ^ self.target.seed;
        build_dataset(&spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunClass {
    FiniteMinimum,
    Channel,
    InfiniteNorm,
    Other,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch_index: usize,
    pub seed_index: usize,
    pub init_seed: u64,
    pub stop_reason: Option<StopReason>,
    pub class: RunClass,
    pub final_loss: f64,
    pub grad_linf: f64,
    pub param_norm: f64,
    pub min_cosdist: f64,
    pub sum_abs_out_closest: f64,
    pub duplicate_neurons: bool,
    pub accepted_steps: usize,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSummary {
    pub arch_index: usize,
    pub widths: Vec<usize>,
    pub runs: usize,
    pub finite_minima: usize,
    pub channels: usize,
    pub infinite_norm: usize,
    pub other: usize,
    pub failed: usize,
    pub channel_frequency: f64,
    /// Fraction of converged finite-norm solutions with a duplicated neuron.
    pub duplicate_frequency: f64,
    pub unique_solutions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<ArchSummary>,
}

fn classify(
    res: &FlowResult,
    net: &NetworkParams,
    cfg: &ExperimentConfig,
) -> (RunClass, ChannelReport, bool) {
    let report = detect_channels(net, cfg.norm_threshold, cfg.cos_threshold);
    let dupes = has_duplicate_neurons(net, DUPLICATE_TOL);
    let class = match res.stop_reason {
        StopReason::GradConverged if res.final_param_norm() < cfg.flow.maxnorm => {
            RunClass::FiniteMinimum
        }
        StopReason::MaxnormExceeded if report.is_channel => RunClass::Channel,
        StopReason::MaxnormExceeded => RunClass::InfiniteNorm,
        _ => RunClass::Other,
    };
    (class, report, dupes)
}

fn run_single(cfg: &ExperimentConfig, data: &Dataset, ai: usize, si: usize) -> RunRecord {
    let arch = cfg.architectures[ai].descriptor();
    let init_seed = cfg.init_seed(ai, si);
    let net = glorot_normal_init(&arch, init_seed);
    let mut sys = MseSystem::new(&arch, data);
    match integrate_with_retry(&mut sys, &net.flatten(), &cfg.flow) {
        Ok(res) => {
            let fin = NetworkParams::from_flat(&arch, &res.final_theta)
                .expect("theta shape matches arch");
            let (class, report, dupes) = classify(&res, &fin, cfg);
            let (min_cos, sum_abs) = match report.closest_pair {
                Some((layer, i, j)) => (
                    report.min_cosdist,
                    fin.outgoing_weights(layer, i).norm() + fin.outgoing_weights(layer, j).norm(),
                ),
                None => (f64::INFINITY, 0.0),
            };
            RunRecord {
                arch_index: ai,
                seed_index: si,
                init_seed,
                stop_reason: Some(res.stop_reason),
                class,
                final_loss: res.final_loss(),
                grad_linf: res.final_grad_linf(),
                param_norm: res.final_param_norm(),
                min_cosdist: min_cos,
                sum_abs_out_closest: sum_abs,
                duplicate_neurons: dupes,
                accepted_steps: res.accepted_steps,
                error: None,
                final_theta: Some(res.final_theta.iter().copied().collect()),
            }
        }
        Err(e) => RunRecord {
            arch_index: ai,
            seed_index: si,
            init_seed,
            stop_reason: None,
            class: RunClass::Failed,
            final_loss: f64::NAN,
            grad_linf: f64::NAN,
            param_norm: f64::NAN,
            min_cosdist: f64::INFINITY,
            sum_abs_out_closest: 0.0,
            duplicate_neurons: false,
            accepted_steps: 0,
            error: Some(e.to_string()),
            final_theta: None,
        },
    }
}

/// Full-batch gradient-flow sweep over (architecture, seed) with
/// classification, canonical dedup of finite minima, and aggregates.
pub fn run_train_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.architectures.len() * cfg.n_seeds);
    let mut summaries = Vec::new();

    for ai in 0..cfg.architectures.len() {
        let data = cfg.dataset_for(ai)?;
        let arch_records: Vec<RunRecord> = run_pool(cfg.jobs, cfg.n_seeds, |si| {
            run_single(cfg, &data, ai, si)
        });

        let arch = cfg.architectures[ai].descriptor();
        let mut finite = 0;
        let mut channels = 0;
        let mut infinite = 0;
        let mut other = 0;
        let mut failed = 0;
        let mut dupes = 0;
        let mut canonical: Vec<DVector<f64>> = Vec::new();
        for rec in &arch_records {
            match rec.class {
                RunClass::FiniteMinimum => {
                    finite += 1;
                    if rec.duplicate_neurons {
                        dupes += 1;
                    }
                    if arch.widths.len() == 3 {
                        if let Some(theta) = &rec.final_theta {
                            let net = NetworkParams::from_flat(
                                &arch,
                                &DVector::from_vec(theta.clone()),
                            )?;
                            let canon = canonicalize(&net)?.flatten();
                            if !canonical
                                .iter()
                                .any(|c| (c - &canon).amax() < SAME_SOLUTION_TOL)
                            {
                                canonical.push(canon);
                            }
                        }
                    }
                }
                RunClass::Channel => channels += 1,
                RunClass::InfiniteNorm => infinite += 1,
                RunClass::Other => other += 1,
                RunClass::Failed => failed += 1,
            }
        }
        summaries.push(ArchSummary {
            arch_index: ai,
            widths: arch.widths.clone(),
            runs: arch_records.len(),
            finite_minima: finite,
            channels,
            infinite_norm: infinite,
            other,
            failed,
            channel_frequency: channels as f64 / arch_records.len().max(1) as f64,
            duplicate_frequency: dupes as f64 / finite.max(1) as f64,
            unique_solutions: canonical.len(),
        });
        records.extend(arch_records);
    }

    let outcome = SweepOutcome { records, summaries };
    if let Some(dir) = &cfg.out_dir {
        write_sweep_outputs(cfg, &outcome, dir)?;
    }
    Ok(outcome)
}

/// Bounded worker pool over seed indices with a deterministic merge.
fn run_pool<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<T>>> =
        out.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                **slots[i].lock().expect("slot") = Some(value);
            });
        }
    });
    out.into_iter().map(|v| v.expect("all slots filled")).collect()
}

fn write_sweep_outputs(cfg: &ExperimentConfig, outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;

    let mut jsonl = fs::File::create(dir.join("runs.jsonl"))?;
    for rec in &outcome.records {
        writeln!(jsonl, "{}", serde_json::to_string(rec)?)?;
    }

    let mut summary = fs::File::create(dir.join("summary.csv"))?;
    writeln!(
        summary,
        "arch_index,widths,runs,finite_minima,channels,infinite_norm,other,failed,channel_frequency,duplicate_frequency,unique_solutions"
    )?;
    for s in &outcome.summaries {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.arch_index,
            s.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x"),
            s.runs,
            s.finite_minima,
            s.channels,
            s.infinite_norm,
            s.other,
            s.failed,
            s.channel_frequency,
            s.duplicate_frequency,
            s.unique_solutions
        )?;
    }

    // Fig-5a-style scatter: min cosine distance vs summed output weights
    let mut scatter = fs::File::create(dir.join("scatter.csv"))?;
    writeln!(scatter, "arch_index,seed_index,min_cosdist,sum_abs_out,class")?;
    for rec in &outcome.records {
        writeln!(
            scatter,
            "{},{},{},{},{:?}",
            rec.arch_index, rec.seed_index, rec.min_cosdist, rec.sum_abs_out_closest, rec.class
        )?;
    }
    Ok(())
}

/// Trains architecture 0 with successive seeds until a run converges to a
/// finite-norm minimum at the requested gradient tolerance.
pub fn train_base_net(cfg: &ExperimentConfig, grad_tol: f64) -> Result<(NetworkParams, Dataset)> {
    let data = cfg.dataset_for(0)?;
    let arch = cfg.architectures[0].descriptor();
    let mut flow = cfg.flow.clone();
    flow.grad_tol = grad_tol;
    for si in 0..cfg.n_seeds.max(64) {
        let net = glorot_normal_init(&arch, cfg.init_seed(0, si));
        let mut sys = MseSystem::new(&arch, &data);
        if let Ok(res) = integrate_with_retry(&mut sys, &net.flatten(), &flow) {
            if res.stop_reason == StopReason::GradConverged
                && res.final_param_norm() < flow.maxnorm
            {
                let fin = NetworkParams::from_flat(&arch, &res.final_theta)?;
                return Ok((fin, data));
            }
        }
    }
    Err(Error::InvalidArgument(
        "no seed converged to a finite-norm minimum".into(),
    ))
}

/// Picks the neuron whose output weight is most negative (the perturbation
/// protocol's default choice), falling back to neuron 0.
pub fn default_duplication_neuron(net: &NetworkParams) -> usize {
    let out = &net.layers[net.layers.len() - 1].weights;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for j in 0..out.ncols() {
        if out[(0, j)] < best_val {
            best_val = out[(0, j)];
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbRow {
    pub gamma: f64,
    pub eig_min: f64,
    pub degenerate: bool,
    /// Outcomes for the +alpha and -alpha perturbations.
    pub escaped_plus: bool,
    pub final_loss_plus: f64,
    pub dist_to_line_plus: f64,
    pub escaped_minus: bool,
    pub final_loss_minus: f64,
    pub dist_to_line_minus: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbOutcome {
    pub line_loss: f64,
    pub rows: Vec<PerturbRow>,
}

/// Duplicates a converged base network, perturbs along the minimal-eigenvalue
/// direction at every gamma on the grid, and integrates each perturbation.
pub fn run_saddle_perturb(cfg: &ExperimentConfig) -> Result<PerturbOutcome> {
    cfg.validate()?;
    let (base, data) = train_base_net(cfg, 1e-9)?;
    let neuron = default_duplication_neuron(&base);
    let line = SaddleLine::new(base, 0, neuron)?;
    let line_loss = line.base.mse_loss(&data)?;
    let (lo, hi, n) = cfg.gamma_grid;
    let gammas = uniform_grid(lo, hi, n);

    let arch = line.duplicated_arch();
    let rows: Vec<PerturbRow> = run_pool(cfg.jobs, gammas.len(), |gi| {
        let gamma = gammas[gi];
        perturb_at_gamma(cfg, &line, &arch, &data, gamma, line_loss)
    });

    let outcome = PerturbOutcome { line_loss, rows };
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        let mut csv = fs::File::create(dir.join("perturb.csv"))?;
        writeln!(
            csv,
            "gamma,eig_min,degenerate,escaped_plus,final_loss_plus,dist_plus,escaped_minus,final_loss_minus,dist_minus"
        )?;
        for r in &outcome.rows {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                r.gamma,
                r.eig_min,
                r.degenerate,
                r.escaped_plus,
                r.final_loss_plus,
                r.dist_to_line_plus,
                r.escaped_minus,
                r.final_loss_minus,
                r.dist_to_line_minus
            )?;
        }
        let track = track_eigen_curves(&line, &data, &gammas)?;
        let file = fs::File::create(dir.join("eigentrack.csv"))?;
        track.write_csv(file)?;
    }
    Ok(outcome)
}

fn perturb_at_gamma(
    cfg: &ExperimentConfig,
    line: &SaddleLine,
    arch: &ArchDescriptor,
    data: &Dataset,
    gamma: f64,
    line_loss: f64,
) -> PerturbRow {
    let net = line.at(gamma);
    let theta0 = net.flatten();
    let (eig_min, e_min, degenerate) = match net.loss_hessian(data) {
        Ok(h) => match crate::eigen::symmetric_eigen(&h) {
            Ok(eig) => {
                let gap = if eig.values.len() > 1 {
                    eig.values[1] - eig.values[0]
                } else {
                    f64::INFINITY
                };
                (eig.values[0], eig.vectors.column(0).into_owned(), gap < 1e-12)
            }
            Err(_) => (f64::NAN, DVector::zeros(theta0.len()), true),
        },
        Err(_) => (f64::NAN, DVector::zeros(theta0.len()), true),
    };

    let mut run_side = |sign: f64| -> (bool, f64, f64) {
        let start = &theta0 + (sign * cfg.alpha) * &e_min;
        let mut sys = MseSystem::new(arch, data);
        match integrate_with_retry(&mut sys, &start, &cfg.flow) {
            Ok(res) => {
                let escaped = res.final_loss() < line_loss - 1e-6;
                let dist = line.distance_to_line(&res.final_theta);
                (escaped, res.final_loss(), dist)
            }
            Err(_) => (true, f64::NAN, f64::NAN),
        }
    };
    let (escaped_plus, final_loss_plus, dist_plus) = run_side(1.0);
    let (escaped_minus, final_loss_minus, dist_minus) = run_side(-1.0);
    PerturbRow {
        gamma,
        eig_min,
        degenerate,
        escaped_plus,
        final_loss_plus,
        dist_to_line_plus: dist_plus,
        escaped_minus,
        final_loss_minus,
        dist_to_line_minus: dist_minus,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFollowOutcome {
    pub entered_channel: bool,
    pub report: ChannelReport,
    pub jump_records: Vec<JumpRecord>,
    pub slope_exponent: Option<f64>,
    /// Projected line coordinate along the recorded trajectory.
    pub projected_gamma_series: Vec<f64>,
    pub parallel_fraction: Vec<f64>,
}

/// Perturbs off a saddle line toward a channel, follows the flow to the norm
/// threshold, then advances with the jump procedure.
pub fn run_channel_follow(cfg: &ExperimentConfig) -> Result<ChannelFollowOutcome> {
    cfg.validate()?;
    let (base, data) = train_base_net(cfg, 1e-9)?;
    let neuron = default_duplication_neuron(&base);
    let a_star = base.layers[base.layers.len() - 1].weights[(0, neuron)];
    let line = SaddleLine::new(base, 0, neuron)?;
    let arch = line.duplicated_arch();
    let new_idx = line.new_neuron_index();

    let net = line.at(cfg.gamma_follow);
    let h = net.loss_hessian(&data)?;
    let eig = crate::eigen::symmetric_eigen(&h)?;
    let e_min = eig.vectors.column(0).into_owned();
    let theta0 = net.flatten();

    // try both perturbation signs; keep the first that reaches the norm stop
    let mut followed: Option<FlowResult> = None;
    for sign in [-1.0, 1.0] {
        let start = &theta0 + (sign * cfg.alpha) * &e_min;
        let mut sys = MseSystem::new(&arch, &data);
        if let Ok(res) = integrate_with_retry(&mut sys, &start, &cfg.flow) {
            if res.stop_reason == StopReason::MaxnormExceeded {
                followed = Some(res);
                break;
            }
            if followed.is_none() {
                followed = Some(res);
            }
        }
    }
    let followed = followed.ok_or(Error::Diverged)?;
    let fin = NetworkParams::from_flat(&arch, &followed.final_theta)?;
    let report = detect_channels(&fin, cfg.norm_threshold, cfg.cos_threshold);

    let mut outcome = ChannelFollowOutcome {
        entered_channel: report.is_channel,
        report: report.clone(),
        jump_records: Vec::new(),
        slope_exponent: None,
        projected_gamma_series: Vec::new(),
        parallel_fraction: Vec::new(),
    };

    // projected gamma along the trajectory (snapshots)
    if a_star != 0.0 {
        let mut scratch = arch.zeros();
        for (_, theta) in &followed.snapshots {
            scratch.set_from_flat(theta)?;
            let a_r = scratch.layers[scratch.layers.len() - 1].weights[(0, neuron)];
            let a_r1 = scratch.layers[scratch.layers.len() - 1].weights[(0, new_idx)];
            outcome
                .projected_gamma_series
                .push(crate::landscape::projected_gamma(a_r, a_r1, a_star)?);
        }
    }

    if report.is_channel {
        let dirs: Vec<DVector<f64>> = report
            .groups
            .iter()
            .flat_map(|g| group_directions(&fin, g))
            .collect();
        outcome.parallel_fraction = parallel_update_fraction(&followed.updates, &dirs);

        let (layer, i, j) = report.closest_pair.expect("channel has a closest pair");
        let jump = jump_procedure(&fin, &data, layer, (i, j), cfg.jump_halvings, &cfg.flow)?;
        let series: Vec<(f64, f64, f64)> = jump
            .records
            .iter()
            .filter(|r| r.eps > 0.0)
            .map(|r| (r.eps, r.loss, r.a / r.eps))
            .collect();
        outcome.slope_exponent = slope_law_fit(&series).ok();
        outcome.jump_records = jump.records;
    }

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        fs::write(
            dir.join("channel_report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        let mut jump_csv = fs::File::create(dir.join("jump.csv"))?;
        writeln!(jump_csv, "iteration,eps,loss,c,a,cos_delta_w,glu_error,param_norm")?;
        for r in &outcome.jump_records {
            writeln!(
                jump_csv,
                "{},{},{},{},{},{},{},{}",
                r.iteration, r.eps, r.loss, r.c, r.a, r.cos_delta_w, r.glu_error, r.param_norm
            )?;
        }
        let mut frac = fs::File::create(dir.join("parallel_fraction.csv"))?;
        writeln!(frac, "index,fraction")?;
        for (i, f) in outcome.parallel_fraction.iter().enumerate() {
            writeln!(frac, "{i},{f}")?;
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub critical_points: Vec<f64>,
    /// (w*, l(w*,0), h(w*)) at the two outer minima of the limit loss.
    pub minima: Vec<(f64, f64, f64)>,
    /// Lowest finite-norm stable loss found by the multistart.
    pub best_finite_loss: f64,
    pub channel_limit_loss: f64,
    /// eps series of the population flow started past the channel entrance.
    pub eps_series: Vec<f64>,
}

/// The analytic two-neuron toy study: w sweep, critical points, stability,
/// multistart finite-norm losses, and a population flow into the channel.
pub fn run_toy_analytic(cfg: &ExperimentConfig) -> Result<ToyOutcome> {
    let teacher = ErfTeacher::symmetric_pair_toy();
    let quad = default_quadrature();
    let grid: Vec<f64> = (1..=240).map(|i| 0.05 * i as f64).collect();
    let rows = w_sweep(&teacher, &grid, quad);
    let critical_points = sweep_critical_points(&teacher, &grid, quad)?;

    // classify sweep critical points: outer two are minima of l(w, 0)
    let mut minima = Vec::new();
    for (k, &w) in critical_points.iter().enumerate() {
        if k == 1 && critical_points.len() == 3 {
            continue; // middle critical point: the saddle
        }
        let (l0, h) = limit_loss_and_h(w, &teacher, quad)?;
        minima.push((w, l0, h));
    }

    // multistart population flow: finite-norm stable losses
    let spec = PopLossSpec::new(teacher.clone(), StudentShape { d: 1, r: 2, has_bias: false })?;
    let mut best_finite = f64::INFINITY;
    let mut flow_cfg = cfg.flow.clone();
    flow_cfg.grad_tol = 1e-10;
    flow_cfg.maxnorm = 1e3;
    for k in 0..64u64 {
        let seed = derive_seed(cfg.master_seed, SeedStream::Init, 1_000_000 + k);
        let arch = ArchDescriptor::new(vec![1, 2, 1], ActivationKind::ErfScaled, false);
        let theta0 = glorot_normal_init(&arch, seed).flatten();
        let mut sys = PopSystem { spec: spec.clone() };
        if let Ok(res) = integrate_with_retry(&mut sys, &theta0, &flow_cfg) {
            if res.stop_reason == StopReason::GradConverged
                && res.final_param_norm() < flow_cfg.maxnorm
            {
                best_finite = best_finite.min(res.final_loss());
            }
        }
    }

    // channel-2 endpoint: the deeper minimum of l(w, 0)
    let channel_limit_loss = minima
        .iter()
        .map(|&(_, l0, _)| l0)
        .fold(f64::INFINITY, f64::min);

    // population flow started past the channel entrance: eps must shrink
    let w_star = minima
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|&(w, _, _)| w)
        .unwrap_or(3.0);
    let (a0, c0) = optimal_readouts(w_star, &teacher, quad)?;
    let eps0 = 0.1;
    let a_diff = a0 / eps0;
    let theta0 = DVector::from_vec(vec![
        w_star + eps0,
        w_star - eps0,
        0.5 * (c0 + a_diff),
        0.5 * (c0 - a_diff),
    ]);
    let mut fl = flow_cfg.clone();
    fl.maxnorm = 1e6;
    fl.max_steps = 4000;
    fl.record_every = 20;
    let mut sys = PopSystem { spec: spec.clone() };
    let res = integrate_with_retry(&mut sys, &theta0, &fl)?;
    let mut eps_series = Vec::new();
    for (_, theta) in &res.snapshots {
        eps_series.push(0.5 * (theta[0] - theta[1]).abs());
    }

    let outcome = ToyOutcome {
        critical_points,
        minima,
        best_finite_loss: best_finite,
        channel_limit_loss,
        eps_series,
    };

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        let file = fs::File::create(dir.join("w_sweep.csv"))?;
        write_w_sweep_csv(&rows, file)?;
        fs::write(
            dir.join("toy_summary.json"),
            serde_json::to_string_pretty(&outcome)?,
        )?;
    }
    Ok(outcome)
}

/// Eigen tracking along the saddle line of a freshly trained base network.
pub fn run_eigen_track(cfg: &ExperimentConfig) -> Result<crate::landscape::EigenTrack> {
    cfg.validate()?;
    let (base, data) = train_base_net(cfg, 1e-9)?;
    let neuron = default_duplication_neuron(&base);
    let line = SaddleLine::new(base, 0, neuron)?;
    let (lo, hi, n) = cfg.gamma_grid;
    let gammas = uniform_grid(lo, hi, n);
    let track = track_eigen_curves(&line, &data, &gammas)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        let file = fs::File::create(dir.join("eigentrack.csv"))?;
        track.write_csv(file)?;
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            ExperimentKind::TrainSweep,
            TargetSpec::rosenbrock_2d_grid(8, 99),
        );
        cfg.architectures = vec![ArchSpec {
            widths: vec![2, 2, 1],
            activation: ActivationKind::Sigmoid4PlusSoftplus,
            has_bias: false,
        }];
        cfg.n_seeds = 4;
        cfg.flow.max_steps = 4000;
        cfg.flow.patience = 800;
        cfg.flow.grad_tol = 1e-9;
        cfg
    }

    #[test]
    fn sweep_runs_and_aggregates() {
        let cfg = tiny_cfg();
        let out = run_train_sweep(&cfg).unwrap();
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.summaries.len(), 1);
        let s = &out.summaries[0];
        assert_eq!(
            s.finite_minima + s.channels + s.infinite_norm + s.other + s.failed,
            4
        );
        // aggregates recomputable from records
        let finite = out
            .records
            .iter()
            .filter(|r| r.class == RunClass::FiniteMinimum)
            .count();
        assert_eq!(finite, s.finite_minima);
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = tiny_cfg();
        let a = run_train_sweep(&cfg).unwrap();
        let b = run_train_sweep(&cfg).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.final_loss.to_bits(), rb.final_loss.to_bits());
            assert_eq!(ra.param_norm.to_bits(), rb.param_norm.to_bits());
            assert_eq!(ra.final_theta, rb.final_theta);
        }
    }

    #[test]
    fn sweep_outputs_written() {
        let dir = std::env::temp_dir().join(format!("lossland-test-{}", std::process::id()));
        let mut cfg = tiny_cfg();
        cfg.out_dir = Some(dir.clone());
        run_train_sweep(&cfg).unwrap();
        assert!(dir.join("runs.jsonl").exists());
        assert!(dir.join("summary.csv").exists());
        assert!(dir.join("config.json").exists());
        assert!(dir.join("scatter.csv").exists());
        // config roundtrip
        let text = fs::read_to_string(dir.join("config.json")).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.n_seeds, cfg.n_seeds);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pool_matches_serial() {
        let serial = run_pool(1, 7, |i| i * i);
        let parallel = run_pool(3, 7, |i| i * i);
        assert_eq!(serial, parallel);
    }
}
