//! Cross-entropy, β-cross-entropy and the hybrid CE/BCE loss.
//!
//! Every loss takes `[N, K, H, W]` logits plus one [`LabelMap`] per sample,
//! reduces by the mean over all `N·H·W` pixels, and returns the analytic
//! gradient with respect to the logits (softmax included).
//!
//! The β-cross-entropy of one pixel with true class `y` is
//!
//! ```text
//! ((β + 1) / β) · (1 − q_y^β) + Σ_k q_k^(β+1),      q = clamp(softmax(z), eps, 1)
//! ```
//!
//! which tends to `−ln q_y + 1` as β → 0. Its gradient is the cross-entropy
//! gradient scaled by `(β + 1)·q_y^β`, so pixels whose label the model finds
//! implausible contribute less.

use crate::error::{config_err, Result};
use crate::label::{check_batch, LabelMap};
use crate::tensor::Tensor;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;
pub const DEFAULT_BETA: f64 = 1e-4;
pub const DEFAULT_RARE_CLASS_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    Bce,
    Hybrid,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Bce => "bce",
            LossKind::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "bce" => Ok(LossKind::Bce),
            "hybrid" => Ok(LossKind::Hybrid),
            other => config_err(format!("unknown loss kind `{other}`")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub beta: f64,
    pub clamp_eps: f64,
    /// Classes whose training-pixel frequency is below this use the CE term (hybrid only).
    pub rare_class_threshold: f64,
    /// Explicit rare classes; overrides the threshold when set.
    pub rare_class_set: Option<Vec<usize>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Ce,
            beta: DEFAULT_BETA,
            clamp_eps: DEFAULT_CLAMP_EPS,
            rare_class_threshold: DEFAULT_RARE_CLASS_THRESHOLD,
            rare_class_set: None,
        }
    }
}

impl LossConfig {
    pub fn with_kind(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != LossKind::Ce && !(self.beta > 0.0 && self.beta.is_finite()) {
            return config_err(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return config_err(format!("clamp_eps must lie in (0, 1e-3], got {}", self.clamp_eps));
        }
        if !(0.0..=1.0).contains(&self.rare_class_threshold) {
            return config_err(format!(
                "rare_class_threshold must lie in [0, 1], got {}",
                self.rare_class_threshold
            ));
        }
        Ok(())
    }

    /// Resolves which classes count as rare for the hybrid loss.
    pub fn rare_classes(&self, class_frequencies: &[f64]) -> Result<Vec<bool>> {
        let k = class_frequencies.len();
        let total: f64 = class_frequencies.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return config_err(format!("class frequencies sum to {total}, expected 1"));
        }
        match &self.rare_class_set {
            Some(set) => {
                let mut rare = vec![false; k];
                for &c in set {
                    if c >= k {
                        return config_err(format!("rare class {c} out of range for {k} classes"));
                    }
                    rare[c] = true;
                }
                Ok(rare)
            }
            None => Ok(class_frequencies
                .iter()
                .map(|&f| f < self.rare_class_threshold)
                .collect()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossResult {
    /// Mean per-pixel loss over the batch.
    pub value: f64,
    pub grad_logits: Tensor,
    /// Per-pixel losses in `[N, H, W]` order.
    pub per_pixel: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Term {
    Ce,
    Bce(f64),
}

/// Evaluates one pixel. `p` holds the softmax probabilities and `grad` receives
/// the (unnormalised) gradient wrt the pixel's logits.
fn pixel_term(term: Term, p: &[f64], y: usize, eps: f64, grad: &mut [f64]) -> f64 {
    match term {
        Term::Ce => {
            grad.copy_from_slice(p);
            grad[y] -= 1.0;
            -p[y].max(eps).ln()
        }
        Term::Bce(beta) => {
            let scale = beta + 1.0;
            let ln_qy = p[y].max(eps).ln();
            // 1 − q^β evaluated as −expm1(β ln q) to survive tiny β.
            let fit = -(beta * ln_qy).exp_m1() * scale / beta;

            let mut power_sum = 0.0;
            let mut active_sum = 0.0;
            for &pk in p {
                let qk_pow = ((beta + 1.0) * pk.max(eps).ln()).exp();
                power_sum += qk_pow;
                if pk >= eps {
                    active_sum += qk_pow;
                }
            }

            let fit_weight = if p[y] >= eps {
                scale * (beta * ln_qy).exp()
            } else {
                0.0
            };
            for (j, g) in grad.iter_mut().enumerate() {
                let pj = p[j];
                let onehot = if j == y { 1.0 } else { 0.0 };
                let own = if pj >= eps {
                    ((beta + 1.0) * pj.ln()).exp()
                } else {
                    0.0
                };
                *g = fit_weight * (pj - onehot) + scale * (own - pj * active_sum);
            }
            fit + power_sum
        }
    }
}

fn evaluate(
    logits: &Tensor,
    labels: &[LabelMap],
    eps: f64,
    choose: impl Fn(usize) -> Term,
) -> Result<LossResult> {
    let (n, k, h, w) = logits.dims4()?;
    check_batch(labels, n, h, w, k)?;
    let plane = h * w;
    let pixels = n * plane;
    let norm = 1.0 / pixels as f64;
    let z = logits.data();

    let mut grad = vec![0.0f32; logits.len()];
    let mut per_pixel = Vec::with_capacity(pixels);
    let mut p = vec![0.0f64; k];
    let mut g = vec![0.0f64; k];
    let mut total = 0.0f64;

    for (s, label) in labels.iter().enumerate() {
        let base = s * k * plane;
        for px in 0..plane {
            let max = (0..k)
                .map(|c| z[base + c * plane + px])
                .fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0;
            for (c, pc) in p.iter_mut().enumerate() {
                *pc = (z[base + c * plane + px] as f64 - max).exp();
                sum += *pc;
            }
            p.iter_mut().for_each(|pc| *pc /= sum);

            let y = label.data()[px] as usize;
            let value = pixel_term(choose(y), &p, y, eps, &mut g);
            total += value;
            per_pixel.push(value);
            for (c, gc) in g.iter().enumerate() {
                grad[base + c * plane + px] = (gc * norm) as f32;
            }
        }
    }

    Ok(LossResult {
        value: total * norm,
        grad_logits: Tensor::new(logits.shape().to_vec(), grad)?,
        per_pixel,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return config_err(format!("clamp_eps must lie in (0, 1e-3], got {eps}"));
    }
    Ok(())
}

/// Mean cross-entropy `−ln p(y|x)` with the standard `p − onehot(y)` gradient.
pub fn ce_loss(logits: &Tensor, labels: &[LabelMap], clamp_eps: f64) -> Result<LossResult> {
    check_eps(clamp_eps)?;
    evaluate(logits, labels, clamp_eps, |_| Term::Ce)
}

/// Mean β-cross-entropy. Use [`ce_loss`] for the β → 0 limit.
pub fn bce_loss(logits: &Tensor, labels: &[LabelMap], beta: f64, clamp_eps: f64) -> Result<LossResult> {
    if !(beta > 0.0 && beta.is_finite()) {
        return config_err(format!("beta must be positive, got {beta}"));
    }
    check_eps(clamp_eps)?;
    evaluate(logits, labels, clamp_eps, |_| Term::Bce(beta))
}

/// CE on pixels whose true class is rare, BCE everywhere else.
pub fn hybrid_loss(
    logits: &Tensor,
    labels: &[LabelMap],
    config: &LossConfig,
    class_frequencies: &[f64],
) -> Result<LossResult> {
    config.validate()?;
    if !(config.beta > 0.0) {
        return config_err("hybrid loss needs beta > 0");
    }
    let (_, k, _, _) = logits.dims4()?;
    if class_frequencies.len() != k {
        return config_err(format!(
            "{} class frequencies for {k} classes",
            class_frequencies.len()
        ));
    }
    let rare = config.rare_classes(class_frequencies)?;
    let beta = config.beta;
    evaluate(logits, labels, config.clamp_eps, |y| {
        if rare[y] {
            Term::Ce
        } else {
            Term::Bce(beta)
        }
    })
}

/// Dispatches on `config.kind`. `class_frequencies` is only read by the hybrid loss.
pub fn compute_loss(
    logits: &Tensor,
    labels: &[LabelMap],
    config: &LossConfig,
    class_frequencies: &[f64],
) -> Result<LossResult> {
    config.validate()?;
    match config.kind {
        LossKind::Ce => ce_loss(logits, labels, config.clamp_eps),
        LossKind::Bce => bce_loss(logits, labels, config.beta, config.clamp_eps),
        LossKind::Hybrid => hybrid_loss(logits, labels, config, class_frequencies),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap()
    }

    fn random_labels(n: usize, h: usize, w: usize, k: usize, seed: u64) -> Vec<LabelMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..k as u8)).collect()).unwrap())
            .collect()
    }

    /// Straight transcription of the per-pixel formulas in f64, summed over pixels
    /// and divided by the pixel count.
    fn reference(logits: &[f64], shape: [usize; 4], labels: &[LabelMap], beta: Option<f64>, rare: &[bool]) -> f64 {
        let [n, k, h, w] = shape;
        let plane = h * w;
        let eps = DEFAULT_CLAMP_EPS;
        let mut total = 0.0;
        for s in 0..n {
            for px in 0..plane {
                let z: Vec<f64> = (0..k).map(|c| logits[(s * k + c) * plane + px]).collect();
                let denom: f64 = z.iter().map(|v| v.exp()).sum();
                let q: Vec<f64> = z.iter().map(|v| (v.exp() / denom).max(eps)).collect();
                let y = labels[s].data()[px] as usize;
                total += match beta {
                    Some(b) if !rare[y] => {
                        (b + 1.0) / b * (1.0 - q[y].powf(b)) + q.iter().map(|v| v.powf(b + 1.0)).sum::<f64>()
                    }
                    _ => -q[y].ln(),
                };
            }
        }
        total / (n * plane) as f64
    }

    fn check_gradient(analytic: &Tensor, logits: &Tensor, f: impl Fn(&[f64]) -> f64) {
        let h = 1e-3;
        let base: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let max_grad = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = analytic.data()[i] as f64;
            let rel = (a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3 * max_grad);
            assert!(rel < 1e-4, "logit {i}: analytic {a} numeric {numeric} rel {rel}");
        }
    }

    #[test]
    fn perfect_prediction_has_zero_ce() {
        let labels = vec![LabelMap::new(1, 2, vec![0, 1]).unwrap()];
        let logits = Tensor::new(vec![1, 2, 1, 2], vec![200.0, -200.0, -200.0, 200.0]).unwrap();
        let r = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn uniform_ce_is_ln_k() {
        let labels = random_labels(2, 3, 3, 4, 1);
        let logits = Tensor::zeros(&[2, 4, 3, 3]);
        let r = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        assert!((r.value - 4f64.ln()).abs() < 1e-12);
        assert!((r.value - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let labels = vec![LabelMap::new(1, 1, vec![3]).unwrap()];
        let logits = Tensor::zeros(&[1, 3, 1, 1]);
        assert!(matches!(
            ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS),
            Err(crate::Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn non_positive_beta_rejected() {
        let labels = random_labels(1, 2, 2, 2, 2);
        let logits = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(bce_loss(&logits, &labels, 0.0, DEFAULT_CLAMP_EPS).is_err());
        assert!(bce_loss(&logits, &labels, -0.1, DEFAULT_CLAMP_EPS).is_err());
    }

    #[test]
    fn bce_one_hot_correct_is_one() {
        let labels = vec![LabelMap::new(1, 1, vec![2]).unwrap()];
        let logits = Tensor::new(vec![1, 4, 1, 1], vec![-50.0, -50.0, 50.0, -50.0]).unwrap();
        for beta in [1e-4, 0.1, 0.5, 1.0] {
            let r = bce_loss(&logits, &labels, beta, DEFAULT_CLAMP_EPS).unwrap();
            // Three clamped off-classes contribute eps^(β+1) each.
            let floor = 3.0 * DEFAULT_CLAMP_EPS.powf(beta + 1.0);
            assert!((r.value - 1.0 - floor).abs() < 1e-12, "beta {beta}: {}", r.value);
        }
    }

    #[test]
    fn bce_two_class_uniform_beta_one() {
        for y in 0..2u8 {
            let labels = vec![LabelMap::new(1, 1, vec![y]).unwrap()];
            let r = bce_loss(&Tensor::zeros(&[1, 2, 1, 1]), &labels, 1.0, DEFAULT_CLAMP_EPS).unwrap();
            assert!((r.value - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_approaches_ce_plus_one() {
        for seed in 0..20 {
            let logits = random_logits([2, 3, 4, 4], seed);
            let labels = random_labels(2, 4, 4, 3, seed + 100);
            let ce = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap().value;
            let bce = bce_loss(&logits, &labels, 1e-6, DEFAULT_CLAMP_EPS).unwrap().value;
            assert!((bce - (ce + 1.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn values_match_reference_formulas() {
        let logits = random_logits([2, 3, 4, 4], 5);
        let labels = random_labels(2, 4, 4, 3, 6);
        let z: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let none = [false; 3];
        let ce = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap().value;
        assert!((ce - reference(&z, [2, 3, 4, 4], &labels, None, &none)).abs() < 1e-12);
        for beta in [1e-4, 0.1, 0.5] {
            let v = bce_loss(&logits, &labels, beta, DEFAULT_CLAMP_EPS).unwrap().value;
            // powf-based reference loses digits to cancellation at small β.
            assert!((v - reference(&z, [2, 3, 4, 4], &labels, Some(beta), &none)).abs() < 1e-9);
        }
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let shape = [2, 3, 4, 4];
        let logits = random_logits(shape, 7);
        let labels = random_labels(2, 4, 4, 3, 8);
        let r = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        check_gradient(&r.grad_logits, &logits, |z| reference(z, shape, &labels, None, &[false; 3]));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let shape = [2, 3, 4, 4];
        for (i, beta) in [1e-4, 0.1, 0.5].into_iter().enumerate() {
            let logits = random_logits(shape, 9 + i as u64);
            let labels = random_labels(2, 4, 4, 3, 19 + i as u64);
            let r = bce_loss(&logits, &labels, beta, DEFAULT_CLAMP_EPS).unwrap();
            // At β = 1e-4 the direct powf formula cancels badly; use its exact
            // algebraic rewrite via expm1 in the oracle instead.
            check_gradient(&r.grad_logits, &logits, |z| {
                let [n, k, h, w] = shape;
                let plane = h * w;
                let mut total = 0.0;
                for s in 0..n {
                    for px in 0..plane {
                        let zz: Vec<f64> = (0..k).map(|c| z[(s * k + c) * plane + px]).collect();
                        let d: f64 = zz.iter().map(|v| v.exp()).sum();
                        let q: Vec<f64> = zz.iter().map(|v| (v.exp() / d).max(DEFAULT_CLAMP_EPS)).collect();
                        let y = labels[s].data()[px] as usize;
                        total += -(beta * q[y].ln()).exp_m1() * (beta + 1.0) / beta
                            + q.iter().map(|v| v.powf(beta + 1.0)).sum::<f64>();
                    }
                }
                total / (n * plane) as f64
            });
        }
    }

    #[test]
    fn hybrid_gradient_matches_finite_differences() {
        let shape = [2, 3, 4, 4];
        let logits = random_logits(shape, 30);
        let labels = random_labels(2, 4, 4, 3, 31);
        let config = LossConfig {
            kind: LossKind::Hybrid,
            beta: 0.5,
            rare_class_set: Some(vec![1]),
            ..LossConfig::default()
        };
        let freqs = [0.4, 0.2, 0.4];
        let r = hybrid_loss(&logits, &labels, &config, &freqs).unwrap();
        let rare = [false, true, false];
        check_gradient(&r.grad_logits, &logits, |z| reference(z, shape, &labels, Some(0.5), &rare));
    }

    #[test]
    fn hybrid_degenerate_configs() {
        let logits = random_logits([1, 3, 4, 4], 40);
        let labels = random_labels(1, 4, 4, 3, 41);
        let freqs = [0.5, 0.25, 0.25];
        let mut config = LossConfig {
            kind: LossKind::Hybrid,
            beta: 0.1,
            rare_class_set: Some(vec![0, 1, 2]),
            ..LossConfig::default()
        };
        let all_rare = hybrid_loss(&logits, &labels, &config, &freqs).unwrap();
        let ce = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        assert_eq!(all_rare.value, ce.value);
        assert_eq!(all_rare.grad_logits, ce.grad_logits);

        config.rare_class_set = Some(vec![]);
        let none_rare = hybrid_loss(&logits, &labels, &config, &freqs).unwrap();
        let bce = bce_loss(&logits, &labels, 0.1, DEFAULT_CLAMP_EPS).unwrap();
        assert_eq!(none_rare.value, bce.value);
        assert_eq!(none_rare.grad_logits, bce.grad_logits);
    }

    #[test]
    fn hybrid_composes_pixelwise() {
        let logits = random_logits([1, 2, 4, 4], 50);
        let labels = random_labels(1, 4, 4, 2, 51);
        let config = LossConfig {
            kind: LossKind::Hybrid,
            beta: 0.3,
            rare_class_threshold: 0.2,
            ..LossConfig::default()
        };
        // Class 1 is rare by frequency.
        let freqs = [0.9, 0.1];
        let hybrid = hybrid_loss(&logits, &labels, &config, &freqs).unwrap();
        let ce = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        let bce = bce_loss(&logits, &labels, 0.3, DEFAULT_CLAMP_EPS).unwrap();
        for (px, &y) in labels[0].data().iter().enumerate() {
            let expected = if y == 1 { ce.per_pixel[px] } else { bce.per_pixel[px] };
            assert_eq!(hybrid.per_pixel[px], expected);
            for c in 0..2 {
                let i = c * 16 + px;
                let g = if y == 1 { ce.grad_logits.data()[i] } else { bce.grad_logits.data()[i] };
                assert_eq!(hybrid.grad_logits.data()[i], g);
            }
        }
    }

    #[test]
    fn hybrid_rejects_bad_frequencies() {
        let logits = random_logits([1, 2, 2, 2], 60);
        let labels = random_labels(1, 2, 2, 2, 61);
        let config = LossConfig::with_kind(LossKind::Hybrid);
        assert!(hybrid_loss(&logits, &labels, &config, &[0.5, 0.4]).is_err());
        assert!(hybrid_loss(&logits, &labels, &config, &[1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = LossConfig::with_kind(LossKind::Bce);
        assert!(c.validate().is_ok());
        c.beta = 0.0;
        assert!(c.validate().is_err());
        c.beta = 0.1;
        c.clamp_eps = 0.01;
        assert!(c.validate().is_err());
        c.clamp_eps = 1e-7;
        c.rare_class_threshold = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn confidently_wrong_pixel_is_down_weighted() {
        // p(y) ≈ 1.4e-7, just above the clamp floor.
        let logits = Tensor::new(vec![1, 3, 1, 1], vec![0.0, 15.1, 15.1]).unwrap();
        let labels = vec![LabelMap::new(1, 1, vec![0]).unwrap()];
        let ce = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap();
        let bce = bce_loss(&logits, &labels, 0.5, DEFAULT_CLAMP_EPS).unwrap();
        let (g_ce, g_bce) = (ce.grad_logits.data()[0].abs(), bce.grad_logits.data()[0].abs());
        assert!(g_bce < g_ce, "bce {g_bce} vs ce {g_ce}");
        assert!(g_bce < 1e-3);
    }

    #[test]
    fn losses_finite_for_extreme_logits() {
        let logits = Tensor::new(vec![1, 3, 1, 2], vec![1e4, -1e4, -1e4, 1e4, 0.0, 0.0]).unwrap();
        let labels = vec![LabelMap::new(1, 2, vec![1, 2]).unwrap()];
        for r in [
            ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap(),
            bce_loss(&logits, &labels, 1e-4, DEFAULT_CLAMP_EPS).unwrap(),
            bce_loss(&logits, &labels, 0.5, DEFAULT_CLAMP_EPS).unwrap(),
        ] {
            assert!(r.value.is_finite() && r.value >= 0.0);
            assert!(r.grad_logits.is_finite());
        }
    }

    proptest! {
        #[test]
        fn bce_bounded_below_by_one_hot_minimum(
            logits in prop::collection::vec(-8.0f32..8.0, 4),
            y in 0u8..4,
            beta in 1e-4f64..1.0,
        ) {
            let t = Tensor::new(vec![1, 4, 1, 1], logits).unwrap();
            let labels = vec![LabelMap::new(1, 1, vec![y]).unwrap()];
            let v = bce_loss(&t, &labels, beta, DEFAULT_CLAMP_EPS).unwrap().value;
            prop_assert!(v.is_finite());
            // One-hot minimum is 1 + (K-1)·eps^(β+1).
            prop_assert!(v >= 1.0 - 1e-12);
        }

        #[test]
        fn class_permutation_leaves_loss_unchanged(seed in 0u64..1000, beta in 1e-3f64..0.9) {
            let logits = random_logits([1, 3, 2, 2], seed);
            let labels = random_labels(1, 2, 2, 3, seed + 1);
            let perm = [2usize, 0, 1];
            let mut permuted = vec![0.0f32; logits.len()];
            for c in 0..3 {
                for px in 0..4 {
                    permuted[perm[c] * 4 + px] = logits.data()[c * 4 + px];
                }
            }
            let permuted = Tensor::new(vec![1, 3, 2, 2], permuted).unwrap();
            let plabels = vec![LabelMap::new(2, 2, labels[0].data().iter().map(|&y| perm[y as usize] as u8).collect()).unwrap()];
            let a = bce_loss(&logits, &labels, beta, DEFAULT_CLAMP_EPS).unwrap().value;
            let b = bce_loss(&permuted, &plabels, beta, DEFAULT_CLAMP_EPS).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            let a = ce_loss(&logits, &labels, DEFAULT_CLAMP_EPS).unwrap().value;
            let b = ce_loss(&permuted, &plabels, DEFAULT_CLAMP_EPS).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
