//! Finite-difference smoothness of training functions, and the three-run
//! sign-agreement score over parameter deltas.

use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::autodiff::Precision;
use crate::data::rng::indexed_stream;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{
    accuracy, model::flatten, train, Activation, LossKind, MetaSlot, MlpSpec, ModelSpec, NormPlacement, Optimizer,
    PlanConfig, Pooling, TrainPlan, UpdateRule,
};

/// Base point, unit direction and step of a finite-difference probe.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProbe {
    pub z0: Tensor,
    pub v: Tensor,
    pub h: f64,
}

impl SmoothnessProbe {
    /// Normalizes `v`; `h` defaults to `1e-3 (|z0|_inf + 1)`.
    pub fn new(z0: Tensor, v: Tensor, h: Option<f64>) -> Result<Self> {
        if z0.shape() != v.shape() {
            return Err(Error::shape("probe", format!("{:?} vs {:?}", z0.shape(), v.shape())));
        }
        let norm = v.norm_l2();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::config("probe direction must be non-zero"));
        }
        let h = h.unwrap_or(1e-3 * (z0.max_abs() + 1.0));
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config(format!("probe step must be > 0, got {h}")));
        }
        Ok(SmoothnessProbe { v: v.map(|x| x / norm), z0, h })
    }

    /// `z0 + i h v`.
    pub fn point(&self, i: u32) -> Tensor {
        self.z0.axpy(i as f64 * self.h, &self.v).expect("shapes checked")
    }
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteObjective)
    }
}

/// `(f(z + h v) - f(z)) / h`.
pub fn directional_delta<F>(f: F, z: &Tensor, v: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let f0 = finite(f(z)?)?;
    let f1 = finite(f(&z.axpy(h, v)?)?)?;
    Ok((f1 - f0) / h)
}

fn s_from_values(f0: f64, f1: f64, f2: f64, h: f64) -> f64 {
    let d0 = (f1 - f0) / h;
    let d1 = (f2 - f1) / h;
    (d1 - d0).abs() / h
}

/// `|D(z + h v) - D(z)| / h` from exactly three evaluations of `f`.
pub fn metasmoothness_s<F>(f: F, probe: &SmoothnessProbe) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let f0 = finite(f(&probe.point(0))?)?;
    let f1 = finite(f(&probe.point(1))?)?;
    let f2 = finite(f(&probe.point(2))?)?;
    Ok(s_from_values(f0, f1, f2, probe.h))
}

/// Result of one training run in a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    /// All trained parameters, flattened in a fixed order.
    pub theta: Vec<f64>,
    /// Output function of the trained model, when available.
    pub output: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    /// Curvature estimate from the three outputs, when the runs report one.
    pub s: Option<f64>,
    /// Sign agreement in `[-1, 1]`; `None` when degenerate.
    pub s_hat: Option<f64>,
    pub d_l1: f64,
    /// The parameters did not move along the probe direction.
    pub degenerate: bool,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combines three runs at `z0`, `z0 + h v` and `z0 + 2 h v`.
pub fn smoothness_from_runs(r0: &ProbeRun, r1: &ProbeRun, r2: &ProbeRun, h: f64) -> Result<SmoothnessReport> {
    let n = r0.theta.len();
    if r1.theta.len() != n || r2.theta.len() != n {
        return Err(Error::shape("metasmoothness", "runs produced different parameter counts"));
    }
    if r0.theta.iter().chain(&r1.theta).chain(&r2.theta).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let d: Vec<f64> = r2.theta.iter().zip(&r0.theta).map(|(a, b)| (a - b).abs()).collect();
    let d_l1: f64 = d.iter().sum();
    let s = match (r0.output, r1.output, r2.output) {
        (Some(f0), Some(f1), Some(f2)) => Some(finite(s_from_values(f0, f1, f2, h))?),
        _ => None,
    };
    if d_l1 == 0.0 {
        return Ok(SmoothnessReport { s, s_hat: None, d_l1, degenerate: true });
    }
    let mut acc = 0.0;
    for (i, di) in d.iter().enumerate() {
        let first = sign(r1.theta[i] - r0.theta[i]);
        let second = sign(r2.theta[i] - r1.theta[i]);
        acc += first * second * di;
    }
    // One division keeps an all-agreeing probe at exactly 1.
    Ok(SmoothnessReport { s, s_hat: Some((acc / d_l1).clamp(-1.0, 1.0)), d_l1, degenerate: false })
}

/// Runs `algo` exactly three times along the probe and scores the result.
pub fn empirical_metasmoothness<A>(algo: A, probe: &SmoothnessProbe) -> Result<SmoothnessReport>
where
    A: Fn(&Tensor) -> Result<ProbeRun>,
{
    let r0 = algo(&probe.point(0))?;
    let r1 = algo(&probe.point(1))?;
    let r2 = algo(&probe.point(2))?;
    smoothness_from_runs(&r0, &r1, &r2, probe.h)
}

/// One model configuration of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub id: String,
    pub width: usize,
    pub batch_size: usize,
    pub norm: NormPlacement,
    pub final_scale: f64,
    pub pooling: Pooling,
    pub activation: Activation,
}

impl ScanConfig {
    /// Norm before a GELU, average pooling, output scale 0.125.
    pub fn smooth(id: impl Into<String>, width: usize, batch_size: usize) -> Self {
        ScanConfig {
            id: id.into(),
            width,
            batch_size,
            norm: NormPlacement::BeforeActivation,
            final_scale: 0.125,
            pooling: Pooling::Average,
            activation: Activation::Gelu,
        }
    }

    /// Norm after a ReLU, max pooling, unit output scale.
    pub fn standard(id: impl Into<String>, width: usize, batch_size: usize) -> Self {
        ScanConfig {
            id: id.into(),
            width,
            batch_size,
            norm: NormPlacement::AfterActivation,
            final_scale: 1.0,
            pooling: Pooling::Max,
            activation: Activation::Relu,
        }
    }

    pub fn is_smooth_group(&self) -> bool {
        self.norm == NormPlacement::BeforeActivation && self.final_scale < 1.0
    }

    pub fn model(&self, input_dim: usize, depth: usize, output_dim: usize) -> ModelSpec {
        ModelSpec::Mlp(MlpSpec {
            input_dim,
            hidden: vec![self.width; depth],
            output_dim,
            activation: self.activation,
            norm: self.norm,
            pooling: self.pooling,
            final_scale: self.final_scale,
            loss: LossKind::CrossEntropy,
        })
    }
}

/// Everything but the model knobs.
#[derive(Debug, Clone)]
pub struct ScanSetup {
    pub train: Arc<Dataset>,
    pub eval: Arc<Dataset>,
    pub depth: usize,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    /// Training samples whose features the probe perturbs.
    pub n_perturbed: usize,
    pub probes: usize,
    pub h: Option<f64>,
    pub seeds: Vec<u64>,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub config: ScanConfig,
    pub seed: u64,
    pub h: f64,
    /// Mean over probes, `None` if every probe was degenerate or failed.
    pub s_hat: Option<f64>,
    /// Population standard deviation over non-degenerate probes.
    pub s_hat_spread: Option<f64>,
    pub eval_metric: Option<f64>,
    pub degenerate: bool,
    pub probes: usize,
    pub error: Option<String>,
}

/// The plan a scan trains for one configuration and seed; its
/// metaparameter is the first `n_perturbed` training rows.
pub fn scan_plan(cfg: &ScanConfig, setup: &ScanSetup, seed: u64) -> Result<TrainPlan> {
    let model = cfg.model(setup.train.feature_dim(), setup.depth, setup.train.label_dim());
    let rule = UpdateRule::new(setup.optimizer, setup.lr);
    let plan_cfg = PlanConfig::new(cfg.batch_size, setup.steps, seed)
        .slot(MetaSlot::SamplePerturbation { n_p: setup.n_perturbed })
        .precision(setup.precision);
    TrainPlan::new(model, rule, setup.train.clone(), plan_cfg)
}

/// Random unit direction over the feature columns of the perturbed rows.
pub fn feature_direction(plan: &TrainPlan, seed: u64, probe: u64) -> Tensor {
    let shape = plan.z_shape();
    let d = plan.data.feature_dim();
    let mut rng = indexed_stream(seed, "probe-direction", probe);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = Tensor::zeros(&shape);
    let width = shape[1];
    for (i, x) in v.data_mut().iter_mut().enumerate() {
        if i % width < d {
            *x = normal.sample(&mut rng);
        }
    }
    v
}

fn scan_one(cfg: &ScanConfig, setup: &ScanSetup, seed: u64) -> Result<ScanRow> {
    let plan = scan_plan(cfg, setup, seed)?;
    let z0 = plan.default_z();
    let run = |z: &Tensor| -> Result<ProbeRun> {
        let s = train(&plan, z)?;
        Ok(ProbeRun { theta: flatten(&s.params), output: None })
    };
    let base = train(&plan, &z0)?;
    let eval_metric = accuracy(&plan.model, &base.params, &setup.eval)?;
    let mut values = Vec::new();
    let mut h_used = 0.0;
    for p in 0..setup.probes {
        let probe = SmoothnessProbe::new(z0.clone(), feature_direction(&plan, seed, p as u64), setup.h)?;
        h_used = probe.h;
        let r = empirical_metasmoothness(run, &probe)?;
        if let Some(s) = r.s_hat {
            values.push(s);
        }
    }
    let (s_hat, spread) = if values.is_empty() {
        (None, None)
    } else {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / values.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };
    Ok(ScanRow {
        config: cfg.clone(),
        seed,
        h: h_used,
        degenerate: s_hat.is_none(),
        s_hat,
        s_hat_spread: spread,
        eval_metric: Some(eval_metric),
        probes: setup.probes,
        error: None,
    })
}

/// One row per (configuration, seed). Failing configurations produce a row
/// carrying the error and the scan moves on.
pub fn smoothness_scan(grid: &[ScanConfig], setup: &ScanSetup) -> Vec<ScanRow> {
    let mut rows = Vec::with_capacity(grid.len() * setup.seeds.len());
    for cfg in grid {
        for &seed in &setup.seeds {
            rows.push(scan_one(cfg, setup, seed).unwrap_or_else(|e| ScanRow {
                config: cfg.clone(),
                seed,
                h: setup.h.unwrap_or(f64::NAN),
                s_hat: None,
                s_hat_spread: None,
                eval_metric: None,
                degenerate: false,
                probes: setup.probes,
                error: Some(e.to_string()),
            }));
        }
    }
    rows
}

pub const SCAN_COLUMNS: &str =
    "config_id,width,batch_size,norm_placement,final_scale,pooling,seed,h,S_hat,eval_metric,degenerate,S_hat_spread,probes,error";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut w: W) -> Result<()> {
    writeln!(w, "{SCAN_COLUMNS}")?;
    for r in rows {
        let norm = match r.config.norm {
            NormPlacement::None => "none",
            NormPlacement::BeforeActivation => "before",
            NormPlacement::AfterActivation => "after",
        };
        let pooling = match r.config.pooling {
            Pooling::None => "none",
            Pooling::Average => "avg",
            Pooling::Max => "max",
        };
        writeln!(
            w,
            "{},{},{},{},{:?},{},{},{:?},{},{},{},{},{},{}",
            r.config.id,
            r.config.width,
            r.config.batch_size,
            norm,
            r.config.final_scale,
            pooling,
            r.seed,
            r.h,
            opt(r.s_hat),
            opt(r.eval_metric),
            r.degenerate,
            opt(r.s_hat_spread),
            r.probes,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )?;
    }
    Ok(())
}
