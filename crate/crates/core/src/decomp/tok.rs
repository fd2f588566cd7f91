use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use super::{
    attention_bias, check_trace, route_through_heads, verify_matrix, DecompositionKind, Term,
    TermSource, Tolerance, VerificationReport,
};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model, SublayerKind};
use crate::scalar::Scalar;

/// First-order expansion of the activation around a pre-activation point:
/// φ(ê) = slope ⊙ ê + intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearization<T> {
    pub slope: Array1<T>,
    pub intercept: Array1<T>,
    pub point: Array1<T>,
}

fn linearize_at<T: Scalar>(
    model: &Model<T>,
    sublayer: usize,
    point: Array1<T>,
    strict: bool,
    position: usize,
) -> Result<LocalLinearization<T>> {
    let act = model.config.activation;
    if strict {
        if let Some(unit) = point.iter().position(|&v| act.is_kink(v)) {
            return Err(Error::UndefinedDerivative {
                sublayer,
                position,
                unit,
            });
        }
    }
    let slope = point.mapv(|v| act.derivative(v));
    let intercept = Zip::from(&point)
        .and(&slope)
        .map_collect(|&v, &k| act.apply(v) - k * v);
    Ok(LocalLinearization {
        slope,
        intercept,
        point,
    })
}

/// Linearizes the feed-forward module of sub-layer λ at the pre-activation
/// produced by `input`.
pub fn ffn_local_linearization<T: Scalar>(
    model: &Model<T>,
    sublayer: usize,
    input: ArrayView1<'_, T>,
) -> Result<LocalLinearization<T>> {
    let sl = model.decoder_sublayer(sublayer)?;
    let ff = sl.feed_forward().ok_or(Error::WrongSublayerKind(sublayer))?;
    if input.len() != ff.w_in.ncols() {
        return Err(Error::WidthMismatch(input.len(), ff.w_in.ncols()));
    }
    let point = ff.w_in.dot(&input) + &ff.b_in;
    linearize_at(model, sublayer, point, false, 0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokOptions {
    /// Fail on activation kinks (relu at exactly zero) instead of using slope 0.
    pub strict: bool,
}

/// Source, target, and constant parts of a matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TermTriple<T> {
    pub source: Array2<T>,
    pub target: Array2<T>,
    pub constant: Array2<T>,
}

impl<T: Scalar> TermTriple<T> {
    fn zeros(positions: usize, d: usize) -> Self {
        Self {
            source: Array2::zeros((positions, d)),
            target: Array2::zeros((positions, d)),
            constant: Array2::zeros((positions, d)),
        }
    }

    pub fn get(&self, term: Term) -> Option<&Array2<T>> {
        match term {
            Term::Source => Some(&self.source),
            Term::Target => Some(&self.target),
            Term::Constant => Some(&self.constant),
            _ => None,
        }
    }

    pub fn sum(&self) -> Array2<T> {
        &self.source + &self.target + &self.constant
    }
}

/// Decomposition of one sub-layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct TokLayer<T> {
    pub sublayer: usize,
    pub terms: TermTriple<T>,
    /// Split of the module output ė before the residual; absent at λ = 0.
    pub pre_residual: Option<TermTriple<T>>,
    /// Traced e_λ (x_0 at λ = 0).
    pub reference: Array2<T>,
}

impl<T: Scalar> TokLayer<T> {
    pub fn verify(&self, tolerance: Tolerance) -> VerificationReport {
        verify_matrix(self.terms.sum().view(), self.reference.view(), tolerance)
    }
}

impl<T: Scalar> TermSource<T> for TokLayer<T> {
    fn num_positions(&self) -> usize {
        self.reference.nrows()
    }

    fn term_names(&self) -> &'static [Term] {
        DecompositionKind::Tok.terms()
    }

    fn term(&self, term: Term, position: usize) -> Option<ArrayView1<'_, T>> {
        if position >= self.num_positions() {
            return None;
        }
        self.terms.get(term).map(|m| m.row(position))
    }

    fn embedding(&self, position: usize) -> ArrayView1<'_, T> {
        self.reference.row(position)
    }
}

/// Token-wise decomposition at every sub-layer λ = 0..Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct TokDecomposition<T> {
    pub layers: Vec<TokLayer<T>>,
}

impl<T: Scalar> TokDecomposition<T> {
    pub fn layer(&self, sublayer: usize) -> Result<&TokLayer<T>> {
        self.layers.get(sublayer).ok_or(Error::IndexOutOfRange {
            index: sublayer,
            max: self.layers.len() - 1,
        })
    }

    pub fn final_layer(&self) -> &TokLayer<T> {
        self.layers.last().expect("layer 0 is always present")
    }

    /// Checks reconstruction at every sub-layer λ ≥ 1.
    pub fn verify(&self, tolerance: Tolerance) -> VerificationReport {
        let mut report = VerificationReport::default();
        for layer in &self.layers[1..] {
            report.merge(&layer.verify(tolerance));
        }
        report
    }
}

impl<T: Scalar> TermSource<T> for TokDecomposition<T> {
    fn num_positions(&self) -> usize {
        self.final_layer().num_positions()
    }

    fn term_names(&self) -> &'static [Term] {
        DecompositionKind::Tok.terms()
    }

    fn term(&self, term: Term, position: usize) -> Option<ArrayView1<'_, T>> {
        self.final_layer().term(term, position)
    }

    fn embedding(&self, position: usize) -> ArrayView1<'_, T> {
        self.final_layer().embedding(position)
    }
}

pub fn decompose_tok<T: Scalar>(model: &Model<T>, trace: &ForwardTrace<T>) -> Result<TokDecomposition<T>> {
    decompose_tok_with(model, trace, TokOptions::default())
}

/// Computes the token-wise decomposition by recurrence over sub-layers.
///
/// Self-attention routes every prior term through the traced attention
/// weights; cross-attention output goes entirely to the source term; the
/// feed-forward module is linearized at the traced pre-activation, so the
/// split is exact at that point. Each layer norm then divides every term by
/// the traced standard deviation, with the mean offset and bias folded into
/// the constant term.
pub fn decompose_tok_with<T: Scalar>(
    model: &Model<T>,
    trace: &ForwardTrace<T>,
    options: TokOptions,
) -> Result<TokDecomposition<T>> {
    check_trace(model, trace)?;
    let positions = trace.len();
    let d = model.config.model_dim;

    let mut prev = TermTriple::zeros(positions, d);
    prev.target.assign(&trace.target_input);
    let mut layers = Vec::with_capacity(trace.sublayers.len() + 1);
    layers.push(TokLayer {
        sublayer: 0,
        terms: prev.clone(),
        pre_residual: None,
        reference: trace.target_input.clone(),
    });

    for (i, (sl, weights)) in trace.sublayers.iter().zip(&model.weights.decoder).enumerate() {
        let lambda = i + 1;
        let dots = match sl.kind {
            SublayerKind::SelfAttention => {
                let att = weights.attention().expect("attention weights");
                let mut constant = route_through_heads(att, &sl.attention, prev.constant.view());
                constant += &attention_bias(att).view().insert_axis(Axis(0));
                TermTriple {
                    source: route_through_heads(att, &sl.attention, prev.source.view()),
                    target: route_through_heads(att, &sl.attention, prev.target.view()),
                    constant,
                }
            }
            SublayerKind::CrossAttention => {
                let att = weights.attention().expect("attention weights");
                let bias = attention_bias(att);
                TermTriple {
                    source: route_through_heads(att, &sl.attention, trace.memory.view()),
                    target: Array2::zeros((positions, d)),
                    constant: Array2::from_shape_fn((positions, d), |(_, j)| bias[j]),
                }
            }
            SublayerKind::FeedForward => {
                let ff = weights.feed_forward().expect("feed-forward weights");
                let pre = sl.ff_pre_activation.as_ref().expect("checked by check_trace");
                let mut slopes = Array2::zeros(pre.raw_dim());
                let mut offsets = Array2::zeros(pre.raw_dim());
                for (t, point) in pre.rows().into_iter().enumerate() {
                    let lin = linearize_at(model, lambda, point.to_owned(), options.strict, t)?;
                    offsets.row_mut(t).assign(&(&lin.intercept + &(&lin.slope * &ff.b_in)));
                    slopes.row_mut(t).assign(&lin.slope);
                }
                let through = |z: &Array2<T>| (z.dot(&ff.w_in.t()) * &slopes).dot(&ff.w_out.t());
                let mut constant = through(&prev.constant);
                constant += &offsets.dot(&ff.w_out.t());
                constant += &ff.b_out.view().insert_axis(Axis(0));
                TermTriple {
                    source: through(&prev.source),
                    target: through(&prev.target),
                    constant,
                }
            }
        };

        let gain = &weights.norm.gain;
        let bias = &weights.norm.bias;
        let mut next = TermTriple {
            source: &dots.source + &prev.source,
            target: &dots.target + &prev.target,
            constant: &dots.constant + &prev.constant,
        };
        for t in 0..positions {
            let s = sl.std[t];
            let m = sl.mean[t];
            for z in [&mut next.source, &mut next.target] {
                Zip::from(z.row_mut(t)).and(gain).for_each(|v, &g| *v = g * (*v / s));
            }
            Zip::from(next.constant.row_mut(t))
                .and(gain)
                .and(bias)
                .for_each(|v, &g, &b| *v = g * ((*v - m) / s) + b);
        }
        layers.push(TokLayer {
            sublayer: lambda,
            terms: next.clone(),
            pre_residual: Some(dots),
            reference: sl.output.clone(),
        });
        prev = next;
    }
    Ok(TokDecomposition { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_forced, encode, sublayer_feed_forward, Activation, ModelConfig, Module};
    use approx::assert_abs_diff_eq;

    fn setup(layers: usize, act: Activation, seed: u64) -> (Model<f64>, ForwardTrace<f64>) {
        let mut m = Model::<f64>::init_random(ModelConfig::toy(layers, 16, 4, act), seed).unwrap();
        m.randomize_affine(seed + 50, 0.3);
        let mem = encode(&m, &[3, 7, 2, 9, 4]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[4, 5, 11]).unwrap();
        (m, trace)
    }

    #[test]
    fn base_case_is_target_input() {
        let (m, trace) = setup(2, Activation::Gelu, 1);
        let d = decompose_tok(&m, &trace).unwrap();
        let l0 = d.layer(0).unwrap();
        assert!(l0.terms.source.iter().all(|&v| v == 0.0));
        assert!(l0.terms.constant.iter().all(|&v| v == 0.0));
        assert_eq!(l0.terms.target, trace.target_input);
    }

    #[test]
    fn reconstructs_every_sublayer() {
        for act in [Activation::Relu, Activation::Gelu, Activation::Swish] {
            let (m, trace) = setup(2, act, 2);
            let d = decompose_tok(&m, &trace).unwrap();
            assert_eq!(d.layers.len(), 7);
            for layer in &d.layers[1..] {
                let r = layer.verify(Tolerance::default());
                assert!(r.passed, "{act:?} sub-layer {}: {r:?}", layer.sublayer);
            }
        }
    }

    #[test]
    fn pre_residual_split_matches_module_output() {
        let (m, trace) = setup(2, Activation::Swish, 3);
        let d = decompose_tok(&m, &trace).unwrap();
        for (layer, sl) in d.layers[1..].iter().zip(&trace.sublayers) {
            let dots = layer.pre_residual.as_ref().unwrap();
            assert_abs_diff_eq!(dots.sum(), sl.pre_residual, epsilon = 1e-10);
            if sl.kind == SublayerKind::CrossAttention {
                assert!(dots.target.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn relu_regions() {
        let mut m = Model::<f64>::init_random(ModelConfig::toy(1, 8, 2, Activation::Relu), 4).unwrap();
        let x = Array1::from_shape_fn(8, |i| 0.1 * i as f64 - 0.3);
        if let Module::FeedForward(ff) = &mut m.weights.decoder[2].module {
            ff.b_in.fill(100.0);
        }
        let lin = ffn_local_linearization(&m, 3, x.view()).unwrap();
        assert!(lin.slope.iter().all(|&k| k == 1.0));
        assert!(lin.intercept.iter().all(|&l| l == 0.0));
        if let Module::FeedForward(ff) = &mut m.weights.decoder[2].module {
            ff.b_in.fill(-100.0);
        }
        let lin = ffn_local_linearization(&m, 3, x.view()).unwrap();
        assert!(lin.slope.iter().all(|&k| k == 0.0));
        assert!(lin.intercept.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn swish_slope_matches_finite_differences() {
        let m = Model::<f64>::init_random(ModelConfig::toy(1, 8, 2, Activation::Swish), 5).unwrap();
        let x = Array1::from_shape_fn(8, |i| (i as f64 * 0.7).sin());
        let lin = ffn_local_linearization(&m, 3, x.view()).unwrap();
        let h = 1e-6;
        for (&p, &k) in lin.point.iter().zip(&lin.slope) {
            let fd = (Activation::Swish.apply(p + h) - Activation::Swish.apply(p - h)) / (2.0 * h);
            assert_abs_diff_eq!(k, fd, epsilon = 1e-6);
        }
        let rebuilt = &lin.slope * &lin.point + &lin.intercept;
        assert_abs_diff_eq!(rebuilt, lin.point.mapv(|v| Activation::Swish.apply(v)), epsilon = 1e-12);
    }

    #[test]
    fn linearization_requires_feed_forward() {
        let m = Model::<f64>::init_random(ModelConfig::toy(1, 8, 2, Activation::Relu), 6).unwrap();
        let x = Array1::zeros(8);
        assert!(matches!(
            ffn_local_linearization(&m, 1, x.view()),
            Err(Error::WrongSublayerKind(1))
        ));
    }

    #[test]
    fn strict_mode_rejects_kinks() {
        let (mut m, _) = setup(1, Activation::Relu, 7);
        if let Module::FeedForward(ff) = &mut m.weights.decoder[2].module {
            ff.w_in.row_mut(0).fill(0.0);
            ff.b_in[0] = 0.0;
        }
        let mem = encode(&m, &[3, 4]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[5]).unwrap();
        assert!(decompose_tok(&m, &trace).is_ok());
        assert!(matches!(
            decompose_tok_with(&m, &trace, TokOptions { strict: true }),
            Err(Error::UndefinedDerivative { sublayer: 3, unit: 0, .. })
        ));
    }

    #[test]
    fn active_relu_terms_follow_the_unbiased_module() {
        let (mut m, _) = setup(1, Activation::Relu, 8);
        if let Module::FeedForward(ff) = &mut m.weights.decoder[2].module {
            ff.b_in.fill(50.0);
        }
        let mem = encode(&m, &[3, 4, 8]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[5, 6]).unwrap();
        assert!(trace.sublayers[2].ff_pre_activation.as_ref().unwrap().iter().all(|&v| v > 0.0));
        let d = decompose_tok(&m, &trace).unwrap();
        let prev = &d.layers[2].terms;
        let dots = d.layers[3].pre_residual.as_ref().unwrap();
        // With every unit active, relu(W_in z + b_in) - relu(b_in) = W_in z.
        let mut module = m.weights.decoder[2].feed_forward().unwrap().clone();
        module.b_out.fill(0.0);
        let zero = Array1::zeros(16);
        let (at_zero, _) = sublayer_feed_forward(&module, Activation::Relu, zero.view()).unwrap();
        for t in 0..trace.len() {
            for (z, dz) in [(&prev.source, &dots.source), (&prev.target, &dots.target)] {
                let (out, pre) = sublayer_feed_forward(&module, Activation::Relu, z.row(t)).unwrap();
                assert!(pre.iter().all(|&v| v > 0.0));
                assert_abs_diff_eq!(dz.row(t), (out - &at_zero).view(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn self_attention_routing_is_linear() {
        let (m, trace) = setup(1, Activation::Gelu, 9);
        let att = m.weights.decoder[0].attention().unwrap();
        let a = &trace.sublayers[0].attention;
        let z = &trace.target_input;
        let base = route_through_heads(att, a, z.view());
        let scaled = route_through_heads(att, a, (z * 2.5).view());
        assert_abs_diff_eq!(scaled, base * 2.5, epsilon = 1e-12);
    }

    #[test]
    fn importances_sum_to_one_at_final_layer() {
        let (m, trace) = setup(2, Activation::Relu, 10);
        let d = decompose_tok(&m, &trace).unwrap();
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
    fn silent_cross_attention_leaves_no_source_term() {
        let mut m = Model::<f64>::init_random(ModelConfig::toy(1, 16, 4, Activation::Gelu), 11).unwrap();
        for sl in &mut m.weights.decoder {
            sl.norm.bias.fill(0.0);
            match &mut sl.module {
                Module::Attention(a) => {
                    a.b_o.fill(0.0);
                    for h in &mut a.heads {
                        h.b_q.fill(0.0);
                        h.b_k.fill(0.0);
                        h.b_v.fill(0.0);
                    }
                }
                Module::FeedForward(f) => {
                    f.b_in.fill(0.0);
                    f.b_out.fill(0.0);
                }
            }
        }
        m.weights.decoder[1].attention_mut().unwrap().w_o.fill(0.0);
        let mem = encode(&m, &[2, 3, 4]).unwrap();
        let trace = decode_forced(&m, mem.view(), &[5, 6]).unwrap();
        let d = decompose_tok(&m, &trace).unwrap();
        assert!(d.final_layer().terms.source.iter().all(|&v| v == 0.0));
        assert!(d.verify(Tolerance::default()).passed);
    }
}
