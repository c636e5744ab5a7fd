//! Top-K softmax router over the temporal experts and its auxiliary
//! load-balancing loss.

use rand::Rng;

use crate::error::{MoteError, Result};
use crate::numerics::{softmax, softmax_backward, Matrix, Parameter};

/// How kept gate weights are turned into mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatingMode {
    /// Kept softmax entries are rescaled to sum to one.
    #[default]
    Renormalized,
    /// Kept softmax entries are used as-is; the mixture applies a `1/K`
    /// prefactor.
    RawSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    /// `W_g`, shape `d × T`.
    pub gate: Parameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingVector {
    /// Length-T; zero outside `selected`.
    pub weights: Vec<f64>,
    /// Chosen experts in descending weight order.
    pub selected: Vec<usize>,
    /// Full softmax over all experts.
    pub probs: Vec<f64>,
    pub mode: GatingMode,
}

impl GatingVector {
    /// A hard dispatch to one expert.
    pub fn one_hot(experts: usize, expert: usize) -> Self {
        let mut weights = vec![0.0; experts];
        weights[expert] = 1.0;
        GatingVector {
            probs: weights.clone(),
            weights,
            selected: vec![expert],
            mode: GatingMode::Renormalized,
        }
    }

    pub fn experts(&self) -> usize {
        self.weights.len()
    }

    /// The highest-weight selected expert.
    pub fn primary(&self) -> usize {
        self.selected[0]
    }
}

/// Indices of the `k` largest values, descending; ties to the lowest index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

impl RouterParams {
    pub fn new<R: Rng + ?Sized>(dim: usize, experts: usize, rng: &mut R) -> Self {
        RouterParams {
            gate: Parameter::new(Matrix::xavier(dim, experts, rng)),
        }
    }

    pub fn from_matrix(gate: Matrix) -> Self {
        RouterParams {
            gate: Parameter::new(gate),
        }
    }

    pub fn dim(&self) -> usize {
        self.gate.value.rows()
    }

    pub fn experts(&self) -> usize {
        self.gate.value.cols()
    }

    /// `W_gᵀ z`, one logit per expert.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(MoteError::InvalidArgument(format!(
                "router expects width {}, got {}",
                self.dim(),
                z.len()
            )));
        }
        let mut out = vec![0.0; self.experts()];
        for (k, &zk) in z.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.gate.value.row(k)) {
                *o += zk * w;
            }
        }
        Ok(out)
    }

    /// Backpropagates `∂L/∂logits` into `W_g` and returns `∂L/∂z`.
    pub fn backward_logits(&mut self, z: &[f64], d_logits: &[f64]) -> Vec<f64> {
        let mut dz = vec![0.0; z.len()];
        for (k, &zk) in z.iter().enumerate() {
            let w_row = self.gate.value.row(k);
            dz[k] = w_row.iter().zip(d_logits).map(|(w, d)| w * d).sum();
            for (g, d) in self.gate.grad.row_mut(k).iter_mut().zip(d_logits) {
                *g += zk * d;
            }
        }
        dz
    }

    /// Backpropagates `∂L/∂weights` of a gating vector produced by [`gate`].
    pub fn backward(&mut self, z: &[f64], gating: &GatingVector, d_weights: &[f64]) -> Vec<f64> {
        let mut d_probs = vec![0.0; gating.experts()];
        match gating.mode {
            GatingMode::Renormalized => {
                let kept: f64 = gating.selected.iter().map(|&j| gating.probs[j]).sum();
                let inner: f64 = gating
                    .selected
                    .iter()
                    .map(|&j| d_weights[j] * gating.weights[j])
                    .sum();
                for &j in &gating.selected {
                    d_probs[j] = (d_weights[j] - inner) / kept;
                }
            }
            GatingMode::RawSoftmax => {
                for &j in &gating.selected {
                    d_probs[j] = d_weights[j];
                }
            }
        }
        let d_logits = softmax_backward(&gating.probs, &d_probs);
        self.backward_logits(z, &d_logits)
    }
}

/// `TopK(softmax(W_g · z), K)` with non-selected entries set to zero.
pub fn gate(z: &[f64], router: &RouterParams, k: usize, mode: GatingMode) -> Result<GatingVector> {
    let experts = router.experts();
    if k == 0 || k > experts {
        return Err(MoteError::InvalidArgument(format!(
            "top-k of {k} is outside 1..={experts}"
        )));
    }
    Ok(gate_from_logits(&router.logits(z)?, k, mode))
}

/// Selects on the logits themselves, so softmax underflow cannot create
/// ties that change the chosen set.
pub fn gate_from_logits(logits: &[f64], k: usize, mode: GatingMode) -> GatingVector {
    let selected = top_k_indices(logits, k);
    weights_for(softmax(logits), selected, mode)
}

pub fn gate_from_probs(probs: Vec<f64>, k: usize, mode: GatingMode) -> GatingVector {
    let selected = top_k_indices(&probs, k);
    weights_for(probs, selected, mode)
}

fn weights_for(probs: Vec<f64>, selected: Vec<usize>, mode: GatingMode) -> GatingVector {
    let mut weights = vec![0.0; probs.len()];
    let kept: f64 = selected.iter().map(|&j| probs[j]).sum();
    for &j in &selected {
        weights[j] = match mode {
            GatingMode::Renormalized => probs[j] / kept,
            GatingMode::RawSoftmax => probs[j],
        };
    }
    GatingVector {
        weights,
        selected,
        probs,
        mode,
    }
}

/// Per-expert importance: total gate weight across the batch.
pub fn importance(gates: &[GatingVector]) -> Vec<f64> {
    let experts = gates.first().map_or(0, GatingVector::experts);
    let mut imp = vec![0.0; experts];
    for g in gates {
        for (i, w) in imp.iter_mut().zip(&g.weights) {
            *i += w;
        }
    }
    imp
}

/// Squared coefficient of variation of a non-negative vector, with its
/// gradient.
pub fn cv_squared_with_grad(values: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.is_empty() || mean <= 0.0 {
        return Err(MoteError::InvalidArgument(
            "importance is identically zero".into(),
        ));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let loss = var / (mean * mean);
    // d var/d v_i = 2 (v_i - mean) / n ; d mean/d v_i = 1/n
    let grad = values
        .iter()
        .map(|v| 2.0 * (v - mean) / n / (mean * mean) - 2.0 * var / (mean.powi(3) * n))
        .collect();
    Ok((loss, grad))
}

/// `(stddev(importance) / mean(importance))²`.
pub fn load_balance_loss(gates: &[GatingVector]) -> Result<f64> {
    if gates.is_empty() {
        return Err(MoteError::Empty("load-balance batch".into()));
    }
    Ok(cv_squared_with_grad(&importance(gates))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use crate::rng::stream_rng;

    fn router_with_logits_basis(logits: &[f64]) -> (Vec<f64>, RouterParams) {
        // z = e_0 picks the first row of W_g as the logits.
        let t = logits.len();
        let mut w = Matrix::zeros(2, t);
        w.row_mut(0).copy_from_slice(logits);
        (vec![1.0, 0.0], RouterParams::from_matrix(w))
    }

    #[test]
    fn top2_of_three() {
        let (z, r) = router_with_logits_basis(&[2.0, 1.0, 0.0]);
        let g = gate(&z, &r, 2, GatingMode::Renormalized).unwrap();
        assert_eq!(g.selected, vec![0, 1]);
        assert!((g.weights[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((g.weights[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(g.weights[2], 0.0);
    }

    #[test]
    fn full_support_equals_softmax() {
        let (z, r) = router_with_logits_basis(&[0.3, -1.0, 2.0, 0.5]);
        let g = gate(&z, &r, 4, GatingMode::Renormalized).unwrap();
        for (a, b) in g.weights.iter().zip(&g.probs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_logits_tie_to_lowest_index() {
        let (z, r) = router_with_logits_basis(&[1.0, 1.0, 1.0, 1.0]);
        let g = gate(&z, &r, 2, GatingMode::Renormalized).unwrap();
        assert_eq!(g.selected, vec![0, 1]);
        assert_eq!(g.weights, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn k_out_of_range() {
        let (z, r) = router_with_logits_basis(&[1.0, 2.0]);
        assert!(gate(&z, &r, 0, GatingMode::Renormalized).is_err());
        assert!(gate(&z, &r, 3, GatingMode::Renormalized).is_err());
    }

    #[test]
    fn load_balance_examples() {
        let uniform: Vec<GatingVector> = (0..3)
            .map(|_| gate_from_probs(vec![0.25; 4], 4, GatingMode::Renormalized))
            .collect();
        assert!(load_balance_loss(&uniform).unwrap().abs() < 1e-15);

        let skewed = vec![GatingVector::one_hot(2, 0), GatingVector::one_hot(2, 0)];
        assert_eq!(importance(&skewed), vec![2.0, 0.0]);
        assert!((load_balance_loss(&skewed).unwrap() - 1.0).abs() < 1e-15);
        assert!(load_balance_loss(&[]).is_err());
    }

    #[test]
    fn load_balance_matches_two_pass_oracle() {
        let mut rng = stream_rng(21, 0);
        for _ in 0..50 {
            let gates: Vec<GatingVector> = (0..16)
                .map(|_| {
                    let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    gate_from_probs(softmax(&logits), 2, GatingMode::Renormalized)
                })
                .collect();
            let mut imp = [0.0; 5];
            for g in &gates {
                for e in 0..5 {
                    imp[e] += g.weights[e];
                }
            }
            let mean = imp.iter().sum::<f64>() / 5.0;
            let var = imp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
            let oracle = var.sqrt().powi(2) / (mean * mean);
            assert!((load_balance_loss(&gates).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn cv_gradient_matches_finite_differences() {
        let mut p = Parameter::new(Matrix::row_vector(&[3.0, 1.0, 0.5, 2.5]));
        let (_, g) = cv_squared_with_grad(p.value.data()).unwrap();
        p.grad = Matrix::row_vector(&g);
        let err = finite_diff_check(&mut p, 1e-6, |p| {
            cv_squared_with_grad(p.value.data()).unwrap().0
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn router_gradient_matches_finite_differences() {
        let mut rng = stream_rng(22, 0);
        for mode in [GatingMode::Renormalized, GatingMode::RawSoftmax] {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut router = RouterParams::new(4, 3, &mut rng);
            let coeff = [0.4, -1.1, 0.9];
            let objective = |r: &RouterParams| -> f64 {
                let g = gate(&z, r, 2, mode).unwrap();
                g.weights.iter().zip(&coeff).map(|(a, b)| a * b).sum()
            };
            let g = gate(&z, &router, 2, mode).unwrap();
            router.backward(&z, &g, &coeff);
            let snapshot = router.clone();
            let mut param = router.gate.clone();
            let err = finite_diff_check(&mut param, 1e-6, |p| {
                let mut r = snapshot.clone();
                r.gate = p.clone();
                objective(&r)
            });
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gate_invariants(
                logits in prop::collection::vec(-8.0f64..8.0, 2..7),
                shift in -50.0f64..50.0,
                k_seed in 0usize..100,
            ) {
                let t = logits.len();
                let k = 1 + k_seed % t;
                let base = gate_from_probs(softmax(&logits), k, GatingMode::Renormalized);
                prop_assert_eq!(base.weights.iter().filter(|&&w| w > 0.0).count(), k);
                prop_assert!((base.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);

                let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                let s = gate_from_probs(softmax(&shifted), k, GatingMode::Renormalized);
                prop_assert_eq!(&s.selected, &base.selected);

                let cubed: Vec<f64> = logits.iter().map(|l| l.powi(3) + 2.0 * l).collect();
                prop_assert_eq!(top_k_indices(&cubed, k), base.selected.clone());
            }

            #[test]
            fn load_balance_scale_invariant(v in prop::collection::vec(0.01f64..10.0, 2..6), c in 0.1f64..100.0) {
                let a = cv_squared_with_grad(&v).unwrap().0;
                let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                let b = cv_squared_with_grad(&scaled).unwrap().0;
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }
    }
}
