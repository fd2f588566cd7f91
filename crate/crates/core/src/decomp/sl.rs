use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{
    attention_bias, check_trace, route_through_heads, verify_matrix, Term, TermSource, Tolerance,
    VerificationReport,
};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model, SublayerKind};
use crate::scalar::Scalar;

/// The cumulative effect of layer norms λ..Λ on a vector injected before
/// norm λ at one position: `x ↦ gain ⊙ x · scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeLnMap<T> {
    pub start: usize,
    pub position: usize,
    /// 1 / ∏ s_{λ',t} over λ' = λ..Λ.
    pub scale: T,
    /// ⊙ g_{λ'} over λ' = λ..Λ.
    pub gain: Array1<T>,
}

impl<T: Scalar> CumulativeLnMap<T> {
    pub fn apply(&self, x: ArrayView1<'_, T>) -> Array1<T> {
        let scale = self.scale;
        let mut out = &self.gain * &x;
        out.mapv_inplace(|v| v * scale);
        out
    }
}

pub fn cumulative_ln_map<T: Scalar>(
    model: &Model<T>,
    trace: &ForwardTrace<T>,
    sublayer: usize,
    position: usize,
) -> Result<CumulativeLnMap<T>> {
    let total = trace.sublayers.len();
    if sublayer == 0 || sublayer > total {
        return Err(Error::IndexOutOfRange {
            index: sublayer,
            max: total,
        });
    }
    if position >= trace.len() {
        return Err(Error::IndexOutOfRange {
            index: position,
            max: trace.len().saturating_sub(1),
        });
    }
    let mut gain = Array1::ones(model.config.model_dim);
    let mut product = T::one();
    for lambda in (sublayer..=total).rev() {
        let s = trace.sublayers[lambda - 1].std[position];
        if !(s > T::zero()) {
            return Err(Error::DegenerateStd {
                sublayer: lambda,
                position,
            });
        }
        gain = &model.decoder_sublayer(lambda)?.norm.gain * &gain;
        product *= s;
    }
    Ok(CumulativeLnMap {
        start: sublayer,
        position,
        scale: T::one() / product,
        gain,
    })
}

/// Sub-layer-wise decomposition of the final decoder embeddings of one
/// sentence: `e = i + s + t + f + c` at every position.
#[derive(Debug, Clone, PartialEq)]
pub struct SlDecomposition<T> {
    pub input: Array2<T>,
    pub source: Array2<T>,
    pub target: Array2<T>,
    pub feed_forward: Array2<T>,
    pub constant: Array2<T>,
    /// Traced e_Λ.
    pub reference: Array2<T>,
}

impl<T: Scalar> SlDecomposition<T> {
    pub fn term_matrix(&self, term: Term) -> &Array2<T> {
        match term {
            Term::Input => &self.input,
            Term::Source => &self.source,
            Term::Target => &self.target,
            Term::FeedForward => &self.feed_forward,
            Term::Constant => &self.constant,
        }
    }

    pub fn reconstructed(&self) -> Array2<T> {
        &self.input + &self.source + &self.target + &self.feed_forward + &self.constant
    }

    pub fn verify(&self, tolerance: Tolerance) -> VerificationReport {
        verify_matrix(self.reconstructed().view(), self.reference.view(), tolerance)
    }
}

impl<T: Scalar> TermSource<T> for SlDecomposition<T> {
    fn num_positions(&self) -> usize {
        self.reference.nrows()
    }

    fn term_names(&self) -> &'static [Term] {
        super::DecompositionKind::Sl.terms()
    }

    fn term(&self, term: Term, position: usize) -> Option<ArrayView1<'_, T>> {
        (position < self.num_positions()).then(|| self.term_matrix(term).row(position))
    }

    fn embedding(&self, position: usize) -> ArrayView1<'_, T> {
        self.reference.row(position)
    }
}

/// Suffix products for every sub-layer: gains[λ-1] = ⊙ g over λ..Λ and
/// scales[[λ-1, t]] = 1 / ∏ s_{·,t} over λ..Λ.
fn suffix_maps<T: Scalar>(model: &Model<T>, trace: &ForwardTrace<T>) -> (Vec<Array1<T>>, Array2<T>) {
    let total = trace.sublayers.len();
    let positions = trace.len();
    let mut gains = vec![Array1::ones(model.config.model_dim); total];
    let mut products = Array2::ones((total, positions));
    for lambda in (1..=total).rev() {
        let g = &model.weights.decoder[lambda - 1].norm.gain;
        let s = &trace.sublayers[lambda - 1].std;
        if lambda == total {
            gains[lambda - 1] = g.clone();
            products.row_mut(lambda - 1).assign(s);
        } else {
            gains[lambda - 1] = g * &gains[lambda];
            let next = products.row(lambda).to_owned();
            products.row_mut(lambda - 1).assign(&(&next * s));
        }
    }
    (gains, products.mapv(|p| T::one() / p))
}

/// Row-wise f^(ln)_λ: row t of `x` scaled by scales[t], times the gain product.
fn apply_rows<T: Scalar>(x: ArrayView2<'_, T>, gain: &Array1<T>, scales: ArrayView1<'_, T>) -> Array2<T> {
    let mut out = &x * &gain.view().insert_axis(Axis(0));
    for (mut row, &k) in out.rows_mut().into_iter().zip(scales) {
        row.mapv_inplace(|v| v * k);
    }
    out
}

/// Computes the five-term decomposition from a complete decoder trace.
///
/// Only the traced layer-norm statistics, attention weights, and
/// feed-forward pre-activations are read from the trace; layer-norm biases
/// come from the model and only ever enter the constant term.
pub fn decompose_sl<T: Scalar>(model: &Model<T>, trace: &ForwardTrace<T>) -> Result<SlDecomposition<T>> {
    check_trace(model, trace)?;
    let positions = trace.len();
    let d = model.config.model_dim;
    let (gains, scales) = suffix_maps(model, trace);

    let input = apply_rows(trace.target_input.view(), &gains[0], scales.row(0));
    let mut source = Array2::zeros((positions, d));
    let mut target = Array2::zeros((positions, d));
    let mut feed_forward = Array2::zeros((positions, d));
    let mut constant = Array2::zeros((positions, d));

    let last_bias = &model.weights.decoder.last().expect("non-empty decoder").norm.bias;
    constant += &last_bias.view().insert_axis(Axis(0));

    for (i, (sl, weights)) in trace.sublayers.iter().zip(&model.weights.decoder).enumerate() {
        let (unbiased, module_bias) = match sl.kind {
            SublayerKind::SelfAttention => {
                let att = weights.attention().expect("attention weights");
                (
                    route_through_heads(att, &sl.attention, sl.input.view()),
                    attention_bias(att),
                )
            }
            SublayerKind::CrossAttention => {
                let att = weights.attention().expect("attention weights");
                (
                    route_through_heads(att, &sl.attention, trace.memory.view()),
                    attention_bias(att),
                )
            }
            SublayerKind::FeedForward => {
                let ff = weights.feed_forward().expect("feed-forward weights");
                let pre = sl.ff_pre_activation.as_ref().expect("checked by check_trace");
                let act = model.config.activation;
                let hidden = pre.mapv(|v| act.apply(v));
                (hidden.dot(&ff.w_out.t()), ff.b_out.clone())
            }
        };
        let contribution = apply_rows(unbiased.view(), &gains[i], scales.row(i));
        match sl.kind {
            SublayerKind::SelfAttention => target += &contribution,
            SublayerKind::CrossAttention => source += &contribution,
            SublayerKind::FeedForward => feed_forward += &contribution,
        }

        // Offsets entering before norm λ: module bias, the previous norm's
        // bias carried by the residual, and the subtracted mean.
        let mut offsets = Array2::from_shape_fn((positions, d), |(_, j)| module_bias[j]);
        if i > 0 {
            offsets += &model.weights.decoder[i - 1].norm.bias.view().insert_axis(Axis(0));
        }
        for (mut row, &m) in offsets.rows_mut().into_iter().zip(&sl.mean) {
            row.mapv_inplace(|v| v - m);
        }
        constant += &apply_rows(offsets.view(), &gains[i], scales.row(i));
    }

    Ok(SlDecomposition {
        input,
        source,
        target,
        feed_forward,
        constant,
        reference: trace.final_output().to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_forced, encode, Activation, ModelConfig, Module};
    use approx::assert_abs_diff_eq;

    fn setup(layers: usize, act: Activation, seed: u64) -> (Model<f64>, ForwardTrace<f64>) {
        let mut m = Model::<f64>::init_random(ModelConfig::toy(layers, 16, 4, act), seed).unwrap();
        m.randomize_affine(seed + 100, 0.3);
        let mem = encode(&m, &[3, 7, 2, 9]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[4, 5, 11, 6]).unwrap();
        (m, trace)
    }

    #[test]
    fn reconstructs_final_embeddings() {
        for act in [Activation::Relu, Activation::Gelu, Activation::Swish] {
            let (m, trace) = setup(2, act, 1);
            let d = decompose_sl(&m, &trace).unwrap();
            let r = d.verify(Tolerance::default());
            assert!(r.passed, "{act:?}: {r:?}");
            assert_eq!(r.vectors_checked, trace.len());
        }
    }

    #[test]
    fn identity_map_with_unit_gains_and_stds() {
        let (m, mut trace) = setup(1, Activation::Relu, 2);
        let mut m = m;
        for sl in &mut m.weights.decoder {
            sl.norm.gain.fill(1.0);
        }
        for sl in &mut trace.sublayers {
            sl.std.fill(1.0);
        }
        let map = cumulative_ln_map(&m, &trace, 1, 0).unwrap();
        let x = Array1::from_shape_fn(16, |i| i as f64 - 3.5);
        assert_eq!(map.apply(x.view()), x);
    }

    #[test]
    fn last_map_is_single_factor() {
        let (m, trace) = setup(2, Activation::Gelu, 3);
        let map = cumulative_ln_map(&m, &trace, 6, 2).unwrap();
        let s = trace.sublayers[5].std[2];
        assert_eq!(map.scale, 1.0 / s);
        assert_eq!(map.gain, m.weights.decoder[5].norm.gain);
    }

    #[test]
    fn map_is_linear() {
        let (m, trace) = setup(2, Activation::Gelu, 4);
        let map = cumulative_ln_map(&m, &trace, 2, 1).unwrap();
        let x = Array1::from_shape_fn(16, |i| (i as f64 * 0.37).sin());
        let y = Array1::from_shape_fn(16, |i| (i as f64 * 0.11).cos());
        let lhs = map.apply((&x * 2.0 - &y * 0.5).view());
        let rhs = map.apply(x.view()) * 2.0 - map.apply(y.view()) * 0.5;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn map_errors() {
        let (m, mut trace) = setup(1, Activation::Relu, 5);
        assert!(matches!(
            cumulative_ln_map(&m, &trace, 0, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            cumulative_ln_map(&m, &trace, 4, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
        trace.sublayers[2].std[1] = 0.0;
        assert!(matches!(
            cumulative_ln_map(&m, &trace, 1, 1),
            Err(Error::DegenerateStd { sublayer: 3, position: 1 })
        ));
        assert!(matches!(
            decompose_sl(&m, &trace),
            Err(Error::DegenerateStd { sublayer: 3, position: 1 })
        ));
    }

    #[test]
    fn suffix_products_match_direct_maps() {
        let (m, trace) = setup(2, Activation::Swish, 6);
        let (gains, scales) = suffix_maps(&m, &trace);
        for lambda in 1..=6 {
            for t in 0..trace.len() {
                let map = cumulative_ln_map(&m, &trace, lambda, t).unwrap();
                assert_eq!(map.gain, gains[lambda - 1]);
                assert_eq!(map.scale, scales[[lambda - 1, t]]);
            }
        }
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let (m, mut trace) = setup(2, Activation::Relu, 7);
        trace.sublayers.pop();
        assert!(matches!(decompose_sl(&m, &trace), Err(Error::IncompleteTrace(_))));
    }

    #[test]
    fn zeroed_modules_give_zero_terms() {
        let mut m = Model::<f64>::init_random(ModelConfig::toy(2, 16, 4, Activation::Gelu), 8).unwrap();
        for sl in &mut m.weights.decoder {
            sl.norm.gain.fill(1.0);
            sl.norm.bias.fill(0.0);
            match &mut sl.module {
                Module::Attention(a) => {
                    a.w_o.fill(0.0);
                    a.b_o.fill(0.0);
                    for h in &mut a.heads {
                        h.b_q.fill(0.0);
                        h.b_k.fill(0.0);
                        h.b_v.fill(0.0);
                    }
                }
                Module::FeedForward(f) => {
                    f.w_out.fill(0.0);
                    f.b_in.fill(0.0);
                    f.b_out.fill(0.0);
                }
            }
        }
        let mem = encode(&m, &[2, 3]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[5, 6]).unwrap();
        let d = decompose_sl(&m, &trace).unwrap();
        for term in [&d.source, &d.target, &d.feed_forward] {
            assert!(term.iter().all(|&v| v == 0.0));
        }
        assert!(d.verify(Tolerance::default()).passed);
    }

    #[test]
    fn importances_sum_to_one() {
        let (m, trace) = setup(2, Activation::Gelu, 9);
        let d = decompose_sl(&m, &trace).unwrap();
        for t in 0..d.num_positions() {
            let e = d.embedding(t);
            let norm2 = e.dot(&e);
            let total: f64 = d
                .term_names()
                .iter()
                .map(|&z| d.term(z, t).unwrap().dot(&e) / norm2)
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn layer_norm_bias_only_moves_constant() {
        let (m, trace) = setup(2, Activation::Relu, 10);
        let base = decompose_sl(&m, &trace).unwrap();
        let mut shifted = m.clone();
        for sl in &mut shifted.weights.decoder {
            sl.norm.bias.mapv_inplace(|b| b + 0.75);
        }
        let moved = decompose_sl(&shifted, &trace).unwrap();
        assert_eq!(base.input, moved.input);
        assert_eq!(base.source, moved.source);
        assert_eq!(base.target, moved.target);
        assert_eq!(base.feed_forward, moved.feed_forward);
        assert_ne!(base.constant, moved.constant);
    }
}
