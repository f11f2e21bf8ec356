//! Randomized property suite over the affinity, scan and detector algebra.
//!
//! Every family draws fresh instances from its own RNG stream and records the
//! worst `measured - allowed` gap over all checks. A family passes when that
//! gap never exceeds zero.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tamperscope_tensor::nn::MultiHeadAttention;
use tamperscope_tensor::Tensor;

use crate::affinity::{
    affinity_matrix, bidirectional_softmax, build_affinity, softmax_factors, transform_features, AffinityBlock,
    AffinityConfig, SuppressionKernel,
};
use crate::detector::{cross_attention, harness_self_update, harness_update, margin_diagnostic, CrossBranch, Detector, DetectorConfig};
use crate::error::{CoreError, Result};
use crate::ssm::{scan_final_state, SSMParams, ScanInputs};

/// Fault injected into the code under test to check that the suite notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sabotage {
    /// Skip the unit-row normalization after the rotary embedding.
    RopeNorm,
}

impl std::str::FromStr for Sabotage {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope-norm" => Ok(Sabotage::RopeNorm),
            other => Err(CoreError::Config(format!("unknown sabotage mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random instances per family.
    pub seeds: usize,
    pub seed: u64,
    pub sabotage: Option<Sabotage>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seeds: 50,
            seed: 0,
            sabotage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub cases: usize,
    /// Worst `measured - allowed` over all checks; positive means violated.
    pub max_violation: f64,
    /// Number of checks with a positive gap.
    pub violations: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seeds: usize,
    pub seed: u64,
    pub sabotage: Option<Sabotage>,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    worst: f64,
    violations: usize,
    diagnostics: BTreeMap<&'static str, f64>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            cases: 0,
            worst: f64::NEG_INFINITY,
            violations: 0,
            diagnostics: BTreeMap::new(),
        }
    }

    /// Record `measured <= allowed`. NaN counts as a violation.
    fn check(&mut self, measured: f64, allowed: f64) {
        let gap = measured - allowed;
        let gap = if gap.is_nan() { f64::INFINITY } else { gap };
        if gap > 0.0 {
            self.violations += 1;
        }
        self.worst = self.worst.max(gap);
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            cases: self.cases,
            max_violation: self.worst,
            violations: self.violations,
            passed: self.violations == 0 && self.cases > 0,
            diagnostics: self.diagnostics,
        }
    }
}

pub const FAMILIES: [&str; 12] = [
    "affinity-positivity",
    "row-softmax-stochastic",
    "suppression-kernel-bounds",
    "bidirectional-symmetry",
    "cross-attention-consistency",
    "dimension-preservation",
    "linear-span",
    "localized-amplification",
    "attention-margin-bound",
    "softmax-margin-ratio",
    "scan-stability",
    "normalized-affinity",
];

pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.seeds == 0 {
        return Err(CoreError::Config("verify needs at least one seed".into()));
    }
    let mut acfg = AffinityConfig::default();
    if cfg.sabotage == Some(Sabotage::RopeNorm) {
        acfg.l2_normalize = false;
    }
    let mut properties = Vec::with_capacity(FAMILIES.len());
    for (family, name) in FAMILIES.iter().enumerate() {
        let mut tally = Tally::new(name);
        for case in 0..cfg.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((family as u64) << 32) | case as u64);
            tally.cases += 1;
            match family {
                0 => positivity(&mut tally, &acfg, &mut rng)?,
                1 => row_stochastic(&mut tally, &mut rng)?,
                2 => kernel_bounds(&mut tally, &mut rng)?,
                3 => symmetry(&mut tally, &mut rng)?,
                4 => cross_consistency(&mut tally, &mut rng)?,
                5 => dimensions(&mut tally, &acfg, &mut rng)?,
                6 => linear_span(&mut tally, &mut rng)?,
                7 => amplification(&mut tally, &mut rng)?,
                8 => margin_bound(&mut tally, &acfg, &mut rng)?,
                9 => margin_ratio(&mut tally, &mut rng)?,
                10 => scan_stability(&mut tally, &mut rng)?,
                _ => normalized_affinity(&mut tally, &acfg, &mut rng)?,
            }
        }
        properties.push(tally.finish());
    }
    Ok(VerifyReport {
        seeds: cfg.seeds,
        seed: cfg.seed,
        sabotage: cfg.sabotage,
        passed: properties.iter().all(|p| p.passed),
        properties,
    })
}

fn random_features(rng: &mut ChaCha8Rng, batch: usize, n: usize, c: usize) -> Tensor<f64> {
    let scale = rng.random_range(0.1..4.0);
    Tensor::randn(&[batch, n, c], rng).scale(scale).expect("scale of finite tensor")
}

fn even_channels(rng: &mut ChaCha8Rng) -> usize {
    2 * rng.random_range(1..=4)
}

/// Raw affinity with RoPE off is non-negative. The RoPE-on negative fraction
/// is kept as a diagnostic since rotation leaves the positive orthant.
fn positivity(t: &mut Tally, acfg: &AffinityConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let grid = rng.random_range(2..=4);
    let c = even_channels(rng);
    let mut off = acfg.clone();
    off.rope = false;
    off.topk = off.topk.min(grid * grid - 1);
    let block = AffinityBlock::<f64>::new(c, 4, &off, rng);
    let kernel = SuppressionKernel::new(grid, grid, off.sigma)?;
    let v = random_features(rng, 2, grid * grid, c);
    let bundle = build_affinity(&v, &block, &kernel, &off)?;
    let min = bundle.raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
    t.check(-min, 0.0);

    let (cr, br) = transform_features(&v, true, acfg.l2_normalize)?;
    let rotated = affinity_matrix(&cr, &br)?;
    let neg = rotated.data().iter().filter(|&&x| x < 0.0).count() as f64 / rotated.numel() as f64;
    let entry = t.diagnostics.entry("rope_on_negative_fraction_max").or_insert(0.0);
    *entry = entry.max(neg);
    Ok(())
}

fn row_stochastic(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = rng.random_range(2..=16);
    let alpha = rng.random_range(0.1..20.0);
    let a = Tensor::<f64>::uniform(&[2, n, n], -1.0, 1.0, rng);
    let (row, col) = softmax_factors(&a, alpha)?;
    for s in row.sum_axis(-1)?.data() {
        t.check((s - 1.0).abs(), 1e-6);
    }
    for s in col.sum_axis(-2)?.data() {
        t.check((s - 1.0).abs(), 1e-6);
    }
    Ok(())
}

fn kernel_bounds(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let (gh, gw) = (rng.random_range(1..=6), rng.random_range(2..=6));
    let sigma = rng.random_range(0.2..6.0);
    let kernel = SuppressionKernel::<f64>::new(gh, gw, sigma)?;
    let upper = kernel.upper_bound();
    t.check(upper, 1.0 - f64::EPSILON);
    let n = gh * gw;
    for p in 0..n {
        for q in 0..n {
            let k = kernel.k.at(&[p, q]);
            if p == q {
                t.check(k.abs(), 0.0);
            } else {
                t.check(k, upper);
                t.check(-k, -f64::MIN_POSITIVE);
            }
        }
    }
    Ok(())
}

/// Symmetric input stays symmetric; one perturbed pair breaks it.
fn symmetry(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = rng.random_range(3..=12);
    let alpha = rng.random_range(1.0..10.0);
    let half = Tensor::<f64>::uniform(&[1, n, n], -1.0, 1.0, rng);
    let sym = half.add(&half.transpose_last()?)?.scale(0.5)?;
    let f = bidirectional_softmax(&sym, alpha)?;
    t.check(f.max_abs_diff(&f.transpose_last()?), 1e-6);

    let (i, j) = (rng.random_range(0..n), rng.random_range(0..n - 1));
    let j = if j >= i { j + 1 } else { j };
    let bump = rng.random_range(0.5..1.0);
    let asym = Tensor::from_fn(&[1, n, n], |x| sym.data()[x] + if x == i * n + j { bump } else { 0.0 });
    let g = bidirectional_softmax(&asym, alpha)?;
    let gap = g.max_abs_diff(&g.transpose_last()?);
    t.check(1e-6 - gap, 0.0);
    Ok(())
}

fn cross_consistency(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let c = even_channels(rng);
    let heads = if rng.random_bool(0.5) { 2 } else { 1 };
    let n = rng.random_range(1..=3usize).pow(2);
    let branch = CrossBranch::<f64>::new(c, heads, rng)?;
    let s = random_features(rng, 2, n, c);
    let lambda = Tensor::uniform(&[2, n, n], 0.0, 1.0, rng);
    let guided = rng.random_bool(0.5);
    let out = cross_attention(&s, &s.clone(), (&branch, &branch), guided.then_some((&lambda, &lambda)))?;
    t.check(out.v1p.max_abs_diff(&out.v2p), 1e-6);
    Ok(())
}

fn dimensions(t: &mut Tally, acfg: &AffinityConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let grid = rng.random_range(3..=4);
    let mut dcfg = DetectorConfig::new(even_channels(rng), grid);
    dcfg.heads = if dcfg.channels.is_multiple_of(4) { 2 } else { 1 };
    dcfg.state_dim = 4;
    dcfg.affinity = acfg.clone();
    dcfg.affinity.topk = rng.random_range(1..grid * grid);
    dcfg.shared_cross = rng.random_bool(0.5);
    let det = Detector::<f64>::new(&dcfg, rng)?;
    let batch = rng.random_range(1..=2);
    let v1 = random_features(rng, batch, grid * grid, dcfg.channels);
    let v2 = random_features(rng, batch, grid * grid, dcfg.channels);
    let out = det.detect(&v1, &v2, None)?;
    let shapes = [&out.v1p, &out.v2p, &out.self1, &out.self2, &out.cross1, &out.cross2];
    let bad = shapes.iter().filter(|x| x.shape() != v1.shape()).count();
    t.check(bad as f64, 0.0);
    Ok(())
}

/// Residual of projecting `x` onto the span of `basis` (rows of length `c`),
/// by two passes of modified Gram–Schmidt.
fn span_residual(basis: &[Vec<f64>], x: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for _ in 0..2 {
            for q in &ortho {
                let r = dot(&u, q);
                u.iter_mut().zip(q).for_each(|(a, b)| *a -= r * b);
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-10 * dot(b, b).sqrt().max(1.0) {
            ortho.push(u.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut r = x.to_vec();
    for _ in 0..2 {
        for q in &ortho {
            let p = dot(&r, q);
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
    }
    dot(&r, &r).sqrt()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let c = t.dim(t.rank() - 1);
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

/// Harness update rows lie in the span of the input rows. The second instance
/// has more channels than input rows so the span is a proper subspace.
fn linear_span(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    for (n, c) in [(4, 3), (4, 12)] {
        let v1 = Tensor::<f64>::randn(&[1, n, c], rng);
        let v2 = Tensor::<f64>::randn(&[1, n, c], rng);
        let aff = Tensor::uniform(&[1, n, n], 0.0, 1.0, rng);
        let out = harness_update(&v1, &v2, &aff)?;
        let mut basis = rows(&v1);
        basis.extend(rows(&v2));
        for row in rows(&out) {
            t.check(span_residual(&basis, &row), 1e-8);
        }
    }
    Ok(())
}

/// One dominant affinity `Aff[i,j] = 0.9`, the rest at most 0.01:
/// `‖f'_i − f_i − γ f_j‖ ≤ Σ_{k≠j} Aff[i,k] ‖f_k‖` with `γ = Aff[i,j]`.
fn amplification(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = rng.random_range(3..=16);
    let c = rng.random_range(2..=8);
    let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
    let gamma = 0.9;
    let aff = Tensor::<f64>::from_fn(&[1, n, n], |x| if x == i * n + j { gamma } else { rng.random_range(0.0..=0.01) });
    let f = random_features(rng, 1, n, c);
    let out = harness_self_update(&f, &aff)?;
    let fr = rows(&f);
    let or = rows(&out);
    let lhs = (0..c).map(|d| (or[i][d] - fr[i][d] - gamma * fr[j][d]).powi(2)).sum::<f64>().sqrt();
    let eps: f64 = (0..n)
        .filter(|&k| k != j)
        .map(|k| aff.at(&[0, i, k]) * fr[k].iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum();
    t.check(lhs, eps * (1.0 + 1e-12) + 1e-12);
    Ok(())
}

/// Every forward pass satisfies `lhs ≤ ε + 1e-6`; a saturated score row
/// (margin 50) leaves a deviation below 1e-9.
fn margin_bound(t: &mut Tally, acfg: &AffinityConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let grid = rng.random_range(2..=4);
    let mut dcfg = DetectorConfig::new(even_channels(rng), grid);
    dcfg.heads = 1;
    dcfg.state_dim = 4;
    dcfg.affinity = acfg.clone();
    dcfg.affinity.topk = rng.random_range(1..grid * grid);
    dcfg.margin_diagnostic = true;
    let det = Detector::<f64>::new(&dcfg, rng)?;
    let v1 = random_features(rng, 2, grid * grid, dcfg.channels);
    let v2 = random_features(rng, 2, grid * grid, dcfg.channels);
    let report = det.detect(&v1, &v2, None)?.margin_report.expect("diagnostic enabled");
    for row in &report.rows {
        t.check(row.lhs, row.epsilon + 1e-6);
    }

    let c = dcfg.channels;
    let (n, m) = (rng.random_range(1..=6), rng.random_range(2..=6));
    let mut mha = MultiHeadAttention::<f64>::new(c, 1, rng)?;
    mha.wq = Tensor::zeros(&[c, c]);
    let star = rng.random_range(0..m);
    let lambda = Tensor::from_fn(&[1, n, m], |x| if x % m == star { 50.0 } else { 0.0 });
    let a = Tensor::randn(&[1, n, c], rng);
    let b = Tensor::randn(&[1, m, c], rng);
    for row in margin_diagnostic(&a, &b, &mha, &lambda)?.rows {
        t.check(row.lhs, 1e-9);
        t.check((row.j_star != star) as u8 as f64, 0.0);
    }
    Ok(())
}

/// `Aff'[i,j] ≥ Aff'[i,k] + δ` implies a row-factor ratio of at least `e^{αδ}`.
fn margin_ratio(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let alpha = 5.0;
    let n = rng.random_range(3..=12);
    for delta in [0.1, 0.5, 1.0] {
        let (j, k) = (rng.random_range(0..n), rng.random_range(0..n - 1));
        let k = if k >= j { k + 1 } else { k };
        let mut row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        row[j] = row[k] + delta;
        let a = Tensor::new(row, &[1, 1, n])?;
        let (factor, _) = softmax_factors(&a, alpha)?;
        let ratio = factor.at(&[0, 0, j]) / factor.at(&[0, 0, k]);
        let bound = (alpha * delta).exp();
        t.check(bound * (1.0 - 1e-9) - ratio, 0.0);
    }
    Ok(())
}

/// Constant input keeps `|h| ≤ |B̄|·|v| / (1 − Ā)` per channel and state.
fn scan_stability(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let c = rng.random_range(1..=4);
    let s = rng.random_range(1..=6);
    let mut p = SSMParams::<f64>::new(c, s, rng);
    p.a_log = Tensor::uniform(&[c, s], -2.0, 1.5, rng);
    let n = rng.random_range(20..=200);
    let level = rng.random_range(-2.0..2.0);
    let v = Tensor::full(&[1, n, c], level);
    let (delta, b, cc) = p.project(&v, false)?;
    let a = p.a()?;
    let inputs = ScanInputs {
        v: &v,
        delta: &delta,
        a: &a,
        b: &b,
        c: &cc,
        d: &p.d,
    };
    let state = scan_final_state(&inputs)?;
    for ch in 0..c {
        for st in 0..s {
            let dt = delta.at(&[0, 0, ch]);
            let abar = (dt * a.at(&[ch, st])).exp();
            let bbar = (dt * b.at(&[0, 0, st])).abs();
            let bound = bbar * level.abs() / (1.0 - abar);
            t.check(state.h.at(&[0, ch, st]).abs(), bound * (1.0 + 1e-9));
        }
    }
    Ok(())
}

/// With identical branches and unit rows, the raw affinity has a unit
/// diagonal and entries in `[-1, 1]`, with RoPE on or off.
fn normalized_affinity(t: &mut Tally, acfg: &AffinityConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let grid = rng.random_range(2..=4);
    let c = even_channels(rng);
    let block = AffinityBlock::<f64>::new(c, 4, acfg, rng);
    let kernel = SuppressionKernel::new(grid, grid, acfg.sigma)?;
    let v = random_features(rng, 2, grid * grid, c);
    for rope in [true, false] {
        let cfg = AffinityConfig {
            rope,
            topk: acfg.topk.min(grid * grid - 1),
            ..acfg.clone()
        };
        let raw = build_affinity(&v, &block, &kernel, &cfg)?.raw;
        let n = grid * grid;
        for bi in 0..2 {
            for p in 0..n {
                t.check((raw.at(&[bi, p, p]) - 1.0).abs(), 1e-9);
            }
        }
        for x in raw.data() {
            t.check(x.abs(), 1.0 + 1e-9);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_residual_of_member_and_orthogonal() {
        let basis = vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        assert!(span_residual(&basis, &[3.0, -2.0, 0.0]) < 1e-15);
        assert!((span_residual(&basis, &[0.0, 0.0, 2.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tally_treats_nan_as_violation() {
        let mut t = Tally::new("x");
        t.cases = 1;
        t.check(0.5, 1.0);
        assert!(t.worst == -0.5 && t.violations == 0);
        t.check(f64::NAN, 1.0);
        assert!(!t.finish().passed);
    }

    #[test]
    fn small_suite_passes_and_sabotage_is_caught() {
        let cfg = VerifyConfig { seeds: 3, ..Default::default() };
        let report = run(&cfg).unwrap();
        assert_eq!(report.properties.len(), 12);
        for p in &report.properties {
            assert!(p.passed, "{} {}", p.name, p.max_violation);
        }
        let bad = run(&VerifyConfig { sabotage: Some(Sabotage::RopeNorm), ..cfg }).unwrap();
        assert!(!bad.passed);
        assert!(bad.failed().any(|p| p.name == "normalized-affinity"));
    }
}
