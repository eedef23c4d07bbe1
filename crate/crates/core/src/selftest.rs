//! Built-in verification suites behind `geoformer selftest`.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{linear_attention, normalize_rows, AttentionInputs, VariantTag};
use crate::error::{GeoError, Result};
use crate::graphdata::{generate_synthetic, SyntheticSpec};
use crate::manifolds::{
    dist, exp0, grassmann_project, log0, mobius_add, orth_residual, project_to_domain,
    stiefel_project, Curvature, DOMAIN_MARGIN,
};
use crate::model::{composite_loss_var, forward_var, TrainConfig, Trainer};
use crate::moe::sample_link_pairs;
use crate::numerics::{grad_check, Matrix, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    Attention,
    Gradcheck,
}

impl FromStr for Suite {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "attention" => Ok(Suite::Attention),
            "gradcheck" => Ok(Suite::Gradcheck),
            other => Err(GeoError::Config(format!(
                "unknown suite {other:?} (expected geometry, attention or gradcheck)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
        }
    }

    /// NaN errors fail.
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect()
    }

    /// One row per check: status, name, max error, tolerance.
    pub fn render(&self) -> String {
        let width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<width$} {:>12} {:>10}",
            "status", "check", "max_err", "tol"
        );
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<6} {:<width$} {:>12.3e} {:>10.0e}",
                status, c.name, c.max_error, c.tolerance
            );
        }
        let _ = writeln!(s, "{} checks in {:.2}s", self.checks.len(), self.seconds);
        s
    }
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    match suite {
        Suite::Geometry => geometry_suite(),
        Suite::Attention => attention_suite(),
        Suite::Gradcheck => gradcheck_suite(),
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Largest tangent norm sampled for the round trip: the ball radius for
/// κ<0, the antipodal tangent radius `π/(2√κ)` for κ>0.
fn tangent_limit(kappa: Curvature) -> f64 {
    kappa
        .ball_radius()
        .or(kappa.spherical_tangent_limit())
        .unwrap_or(1.0)
}

pub fn geometry_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checks = Vec::new();

    for kv in [-3.0, -1.0, 1.0, 3.0] {
        let kappa = Curvature::new(kv)?;
        let limit = 0.9 * tangent_limit(kappa);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let dim = rng.gen_range(1..=8);
            let r = rng.gen_range(0.0..=limit);
            let v: Vec<f64> = unit_direction(&mut rng, dim)
                .iter()
                .map(|x| x * r)
                .collect();
            let back = log0(kappa, exp0(kappa, &v)?.coords())?;
            for (a, b) in v.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
        }
        checks.push(CheckResult::new(
            format!("exp0/log0 round trip κ={kv}"),
            worst,
            1e-9,
        ));
    }

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = unit_direction(&mut rng, 3)
            .iter()
            .map(|v| v * rng.gen_range(0.0..0.5))
            .collect();
        let y: Vec<f64> = unit_direction(&mut rng, 3)
            .iter()
            .map(|v| v * rng.gen_range(0.0..0.5))
            .collect();
        let d0 = dist(Curvature::FLAT, &x, &y)?;
        for kv in [-1e-8, 1e-8] {
            worst = worst.max((dist(Curvature::new(kv)?, &x, &y)? - d0).abs());
        }
    }
    checks.push(CheckResult::new(
        "flat limit |d_κ−d_0| at |κ|=1e-8",
        worst,
        1e-5,
    ));

    let p = mobius_add(Curvature::new(-1.0)?, &[0.5, 0.0], &[0.5, 0.0])?;
    let err = (p.coords()[0] - 0.8).abs().max(p.coords()[1].abs());
    checks.push(CheckResult::new(
        "mobius (0.5,0)⊕(0.5,0)=(0.8,0)",
        err,
        1e-12,
    ));

    let mut escaped: f64 = 0.0;
    for kv in [-3.0, -1.0] {
        let kappa = Curvature::new(kv)?;
        for _ in 0..200 {
            let x: Vec<f64> = unit_direction(&mut rng, 4)
                .iter()
                .map(|v| v * rng.gen_range(0.0..10.0))
                .collect();
            let p = project_to_domain(kappa, &x, DOMAIN_MARGIN);
            if !kappa.contains(p.coords()) {
                escaped = 1.0;
            }
        }
    }
    checks.push(CheckResult::new(
        "project_to_domain stays inside",
        escaped,
        0.5,
    ));

    let (mut st, mut gr, mut inv) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(4..=24);
        let k = rng.gen_range(1..=n.min(8));
        let m = Matrix::random_uniform(n, k, 1.0, &mut rng);
        st = st.max(orth_residual(stiefel_project(&m)?.matrix()));
        let g = grassmann_project(&m)?;
        gr = gr.max(orth_residual(g.basis.matrix()));
        let q = stiefel_project(&Matrix::random_uniform(k, k, 1.0, &mut rng))?;
        let moved = grassmann_project(&m.matmul(q.matrix())?)?;
        inv = inv.max(g.projector().max_abs_diff(&moved.projector())?);
    }
    checks.push(CheckResult::new("stiefel_project ‖QᵀQ−I‖_F", st, 1e-10));
    checks.push(CheckResult::new("grassmann_project ‖UᵀU−I‖_F", gr, 1e-10));
    checks.push(CheckResult::new(
        "grassmann projector invariance",
        inv,
        1e-9,
    ));

    Ok(SuiteReport {
        suite: Suite::Geometry,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Direct `Σⱼ(1+q̂ᵢ·k̂ⱼ)vⱼ / Σⱼ(1+q̂ᵢ·k̂ⱼ)` with the residual mix.
pub fn quadratic_attention(inp: &AttentionInputs) -> Matrix {
    let qh = normalize_rows(&inp.q);
    let kh = normalize_rows(&inp.k);
    let n = inp.q.rows();
    let mut out = Matrix::zeros(n, inp.v.cols());
    for i in 0..n {
        let w: Vec<f64> = (0..n)
            .map(|j| {
                1.0 + qh
                    .row(i)
                    .iter()
                    .zip(kh.row(j))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        let total: f64 = w.iter().sum();
        for c in 0..inp.v.cols() {
            let attn = (0..n).map(|j| w[j] * inp.v.get(j, c)).sum::<f64>() / total;
            out.set(i, c, inp.beta * inp.v.get(i, c) + (1.0 - inp.beta) * attn);
        }
    }
    out
}

pub fn attention_suite() -> Result<SuiteReport> {
    attention_suite_with(linear_attention)
}

/// Runs the attention checks against an arbitrary kernel, so a broken
/// implementation can be fed in.
pub fn attention_suite_with(
    kernel: impl Fn(&AttentionInputs) -> Result<Matrix>,
) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=64);
        let d = rng.gen_range(1..=16);
        let beta = rng.gen_range(0.0..=1.0);
        let mut m = || Matrix::random_uniform(n, d, 1.0, &mut rng);
        let inp = AttentionInputs::new(m(), m(), m(), beta)?;
        let diff = kernel(&inp)?.max_abs_diff(&quadratic_attention(&inp))?;
        worst = worst.max(if diff.is_nan() { f64::INFINITY } else { diff });
    }
    let v = Matrix::random_uniform(1, 3, 1.0, &mut rng);
    let inp = AttentionInputs::new(
        Matrix::random_uniform(1, 3, 1.0, &mut rng),
        Matrix::random_uniform(1, 3, 1.0, &mut rng),
        v.clone(),
        0.3,
    )?;
    let single = kernel(&inp)?.max_abs_diff(&v)?;
    Ok(SuiteReport {
        suite: Suite::Attention,
        checks: vec![
            CheckResult::new("linear≡quadratic", worst, 1e-10),
            CheckResult::new("single token returns v", single, 1e-12),
        ],
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Configuration of the full-model gradient check: rmoe with three experts
/// κ ∈ {−1, 0, 1} on a 30-node two-block graph, every loss term enabled.
pub fn gradcheck_config() -> TrainConfig {
    TrainConfig {
        variant: VariantTag::Rmoe,
        hidden_dim: 8,
        expert_dim: Some(4),
        num_experts: 3,
        curvatures: vec![-1.0, 0.0, 1.0],
        gamma_ent: 0.01,
        gamma_reg: 1e-3,
        gamma_link: 0.5,
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Central differences with step `1e-5` on every registered parameter,
/// evaluated after a few warm-up epochs so biases and gating leave their
/// symmetric starting values.
pub fn gradcheck_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let cfg = gradcheck_config();
    let (g, masks) = generate_synthetic(
        &SyntheticSpec::Sbm {
            block_sizes: vec![15, 15],
            p_in: 0.5,
            p_out: 0.05,
            feature_dim: 10,
        },
        cfg.seed,
    )?;
    let mut trainer = Trainer::new(&cfg, &g, &masks)?;
    for _ in 0..cfg.epochs {
        trainer.epoch()?;
    }
    let params = trainer.params().clone();
    let inputs = trainer.inputs().clone();
    let pairs = sample_link_pairs(&g, cfg.link_neg_ratio, cfg.seed)?;
    let loss = |p: &crate::model::ModelParams| -> Result<(Tape, crate::numerics::Var)> {
        let mut tape = Tape::new();
        let fv = forward_var(&mut tape, p, &inputs, &cfg)?;
        let (l, _) =
            composite_loss_var(&mut tape, &fv, g.labels(), &masks.train, Some(&pairs), &cfg)?;
        Ok((tape, l))
    };
    let (tape, l) = loss(&params)?;
    let grads = tape.backward(l)?;
    let mut checks = Vec::new();
    for name in params.names() {
        if !grads.reached(name) {
            checks.push(CheckResult::new(
                format!("{name} (no gradient)"),
                f64::INFINITY,
                1e-4,
            ));
        }
    }
    let records = grad_check(
        &params.values(),
        &grads.into_map(),
        |values| {
            let (t, l) = loss(&params.with_values(values)?)?;
            Ok(t.scalar(l))
        },
        1e-5,
    )?;
    for r in records {
        let (rows, cols) = r.analytic.shape();
        checks.push(CheckResult::new(
            format!("{} [{rows}x{cols}]", r.param_name),
            r.max_rel_err,
            1e-4,
        ));
    }
    Ok(SuiteReport {
        suite: Suite::Gradcheck,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}
