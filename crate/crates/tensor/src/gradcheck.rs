//! Central finite-difference checks of analytic gradients (f64 only).

use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; `floor` keeps near-zero gradient pairs from
/// dividing by (almost) nothing.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Options for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub samples_per_input: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-6, samples_per_input: 32, floor: 1e-7, seed: 0x5eed }
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Compares `d f / d inputs` from the graph against central differences at sampled
/// coordinates of every input. `f` must build a scalar from the given variables.
pub fn check_gradients(
    f: impl Fn(&[Var<f64>]) -> Var<f64>,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> GradCheckReport {
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| Var::leaf(t.clone())).collect();
    let loss = f(&leaves);
    let grads = loss.backward();
    let mut report = GradCheckReport::default();
    let mut state = opts.seed;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.tensor(&leaves[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let n = input.numel();
        let count = opts.samples_per_input.min(n);
        let mut picks: Vec<usize> = if count == n {
            (0..n).collect()
        } else {
            (0..count).map(|_| (splitmix(&mut state) % n as u64) as usize).collect()
        };
        picks.sort_unstable();
        picks.dedup();
        for idx in picks {
            let eval = |delta: f64| {
                let mut t = input.clone();
                t.data_mut()[idx] += delta;
                let vars: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| Var::constant(if j == i { t.clone() } else { x.clone() }))
                    .collect();
                // Not under no_grad: `f` may itself differentiate (gradient penalties).
                f(&vars).item()
            };
            let numeric = (eval(opts.eps) - eval(-opts.eps)) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let rel = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some(Mismatch { input: i, index: idx, analytic: a, numeric, rel_err: rel });
            }
        }
    }
    report
}
