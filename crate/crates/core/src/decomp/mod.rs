//! Exact additive decompositions of decoder embeddings.
//!
//! Two decompositions are provided. [`decompose_sl`] splits the final
//! embedding by the sub-layer family each contribution passed through last
//! (input, cross-attention, self-attention, feed-forward, constants).
//! [`decompose_tok`] follows source-side, target-side, and constant
//! contributions through every sub-layer, linearizing the feed-forward
//! activation at the traced pre-activation.

mod sl;
mod tok;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionWeights, ForwardTrace, Model, SublayerKind};
use crate::scalar::Scalar;

pub use sl::{cumulative_ln_map, decompose_sl, CumulativeLnMap, SlDecomposition};
pub use tok::{
    decompose_tok, decompose_tok_with, ffn_local_linearization, LocalLinearization,
    TokDecomposition, TokLayer, TokOptions, TermTriple,
};

/// Name of a decomposition term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    /// Target-side input.
    #[serde(rename = "i")]
    Input,
    /// Source side: cross-attention outputs, or anything originating in the encoder.
    #[serde(rename = "s")]
    Source,
    /// Target side: self-attention outputs, or anything originating in the target input.
    #[serde(rename = "t")]
    Target,
    /// Feed-forward outputs.
    #[serde(rename = "f")]
    FeedForward,
    /// Biases and layer-norm offsets.
    #[serde(rename = "c")]
    Constant,
}

impl Term {
    pub fn symbol(self) -> &'static str {
        match self {
            Term::Input => "i",
            Term::Source => "s",
            Term::Target => "t",
            Term::FeedForward => "f",
            Term::Constant => "c",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(Term::Input),
            "s" => Ok(Term::Source),
            "t" => Ok(Term::Target),
            "f" => Ok(Term::FeedForward),
            "c" => Ok(Term::Constant),
            other => Err(Error::InvalidConfig(format!("unknown term `{other}`"))),
        }
    }
}

/// Which decomposition to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionKind {
    Sl,
    Tok,
}

impl DecompositionKind {
    pub fn terms(self) -> &'static [Term] {
        match self {
            DecompositionKind::Sl => &[
                Term::Input,
                Term::Source,
                Term::Target,
                Term::FeedForward,
                Term::Constant,
            ],
            DecompositionKind::Tok => &[Term::Source, Term::Target, Term::Constant],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecompositionKind::Sl => "sl",
            DecompositionKind::Tok => "tok",
        }
    }
}

impl fmt::Display for DecompositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecompositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sl" => Ok(DecompositionKind::Sl),
            "tok" => Ok(DecompositionKind::Tok),
            other => Err(Error::InvalidConfig(format!("unknown decomposition `{other}`"))),
        }
    }
}

/// Per-position term vectors together with the embedding they decompose.
pub trait TermSource<T> {
    fn num_positions(&self) -> usize;
    fn term_names(&self) -> &'static [Term];
    fn term(&self, term: Term, position: usize) -> Option<ArrayView1<'_, T>>;
    fn embedding(&self, position: usize) -> ArrayView1<'_, T>;
}

/// Either decomposition of one sentence, viewed at the final sub-layer.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Decomposition<T> {
    Sl(SlDecomposition<T>),
    Tok(TokDecomposition<T>),
}

impl<T: Scalar> Decomposition<T> {
    pub fn compute(kind: DecompositionKind, model: &Model<T>, trace: &ForwardTrace<T>) -> Result<Self> {
        Ok(match kind {
            DecompositionKind::Sl => Decomposition::Sl(decompose_sl(model, trace)?),
            DecompositionKind::Tok => Decomposition::Tok(decompose_tok(model, trace)?),
        })
    }

    pub fn kind(&self) -> DecompositionKind {
        match self {
            Decomposition::Sl(_) => DecompositionKind::Sl,
            Decomposition::Tok(_) => DecompositionKind::Tok,
        }
    }

    /// Reconstruction check; for the token-wise decomposition every sub-layer is checked.
    pub fn verify(&self, tolerance: Tolerance) -> VerificationReport {
        match self {
            Decomposition::Sl(d) => d.verify(tolerance),
            Decomposition::Tok(d) => d.verify(tolerance),
        }
    }
}

impl<T: Scalar> TermSource<T> for Decomposition<T> {
    fn num_positions(&self) -> usize {
        match self {
            Decomposition::Sl(d) => d.num_positions(),
            Decomposition::Tok(d) => d.num_positions(),
        }
    }

    fn term_names(&self) -> &'static [Term] {
        self.kind().terms()
    }

    fn term(&self, term: Term, position: usize) -> Option<ArrayView1<'_, T>> {
        match self {
            Decomposition::Sl(d) => d.term(term, position),
            Decomposition::Tok(d) => d.term(term, position),
        }
    }

    fn embedding(&self, position: usize) -> ArrayView1<'_, T> {
        match self {
            Decomposition::Sl(d) => d.embedding(position),
            Decomposition::Tok(d) => d.embedding(position),
        }
    }
}

/// Absolute and relative reconstruction tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-8,
            rel: 1e-5,
        }
    }
}

/// Outcome of checking `|e - Σz| ≤ abs + rel·|Σz|` component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub vectors_checked: usize,
    pub max_abs_residual: f64,
    pub max_rel_residual: f64,
    pub failures: usize,
    pub passed: bool,
}

impl Default for VerificationReport {
    fn default() -> Self {
        Self {
            vectors_checked: 0,
            max_abs_residual: 0.0,
            max_rel_residual: 0.0,
            failures: 0,
            passed: true,
        }
    }
}

impl VerificationReport {
    pub fn merge(&mut self, other: &VerificationReport) {
        self.vectors_checked += other.vectors_checked;
        self.max_abs_residual = self.max_abs_residual.max(other.max_abs_residual);
        self.max_rel_residual = self.max_rel_residual.max(other.max_rel_residual);
        self.failures += other.failures;
        self.passed &= other.passed;
    }
}

fn check_component(reference: f64, reconstructed: f64, tol: Tolerance, report: &mut VerificationReport) -> bool {
    let residual = (reference - reconstructed).abs();
    let rel = if residual == 0.0 {
        0.0
    } else {
        residual / reconstructed.abs()
    };
    report.max_abs_residual = report.max_abs_residual.max(residual);
    report.max_rel_residual = report.max_rel_residual.max(rel);
    residual <= tol.abs + tol.rel * reconstructed.abs()
}

/// Checks one reference vector against the sum of its terms.
pub fn verify_reconstruction<T: Scalar>(
    terms: &[ArrayView1<'_, T>],
    reference: ArrayView1<'_, T>,
    tolerance: Tolerance,
) -> Result<VerificationReport> {
    let width = reference.len();
    if let Some(bad) = terms.iter().find(|z| z.len() != width) {
        return Err(Error::WidthMismatch(bad.len(), width));
    }
    let mut sum = Array1::<T>::zeros(width);
    for z in terms {
        sum += z;
    }
    Ok(check_rows(sum.view(), reference, tolerance))
}

fn check_rows<T: Scalar>(
    reconstructed: ArrayView1<'_, T>,
    reference: ArrayView1<'_, T>,
    tolerance: Tolerance,
) -> VerificationReport {
    let mut report = VerificationReport {
        vectors_checked: 1,
        ..Default::default()
    };
    let mut ok = true;
    for (&r, &z) in reference.iter().zip(reconstructed.iter()) {
        ok &= check_component(r.to_f64_lossless(), z.to_f64_lossless(), tolerance, &mut report);
    }
    if !ok {
        report.failures = 1;
        report.passed = false;
    }
    report
}

/// Row-wise check of matrices of reconstructions against references.
pub(crate) fn verify_matrix<T: Scalar>(
    reconstructed: ArrayView2<'_, T>,
    reference: ArrayView2<'_, T>,
    tolerance: Tolerance,
) -> VerificationReport {
    let mut report = VerificationReport::default();
    for (z, r) in reconstructed.rows().into_iter().zip(reference.rows()) {
        report.merge(&check_rows(z, r, tolerance));
    }
    report
}

/// H_{λ,h} = W_O S_h: the columns of the output projection that read head h.
pub fn head_map<T: Scalar>(attention: &AttentionWeights<T>, head: usize) -> ArrayView2<'_, T> {
    let dh = attention.heads[head].w_v.nrows();
    attention.w_o.slice(s![.., head * dh..(head + 1) * dh])
}

/// Routes the rows of `z` through traced attention weights, value
/// projections, and head maps, without any bias:
/// row t of the result is Σ_h Σ_t' a_{h,t,t'} H_h W_V,h z_t'.
pub fn route_through_heads<T: Scalar>(
    attention: &AttentionWeights<T>,
    weights: &[Array2<T>],
    z: ArrayView2<'_, T>,
) -> Array2<T> {
    let rows = weights.first().map(|a| a.nrows()).unwrap_or(0);
    let mut out = Array2::zeros((rows, attention.w_o.nrows()));
    for (h, (head, a)) in attention.heads.iter().zip(weights).enumerate() {
        let values = z.dot(&head.w_v.t());
        let mixed = a.dot(&values);
        out += &mixed.dot(&head_map(attention, h).t());
    }
    out
}

/// b_O + Σ_h H_h b_V,h: the bias an attention module adds to every row,
/// given that attention weights sum to one.
pub fn attention_bias<T: Scalar>(attention: &AttentionWeights<T>) -> Array1<T> {
    let mut out = attention.b_o.clone();
    for (h, head) in attention.heads.iter().enumerate() {
        out += &head_map(attention, h).dot(&head.b_v);
    }
    out
}

/// Checks that a trace matches a model's decoder layout.
pub(crate) fn check_trace<T: Scalar>(model: &Model<T>, trace: &ForwardTrace<T>) -> Result<()> {
    let expected = model.config.num_sublayers();
    if trace.sublayers.len() != expected {
        return Err(Error::IncompleteTrace(format!(
            "{} of {expected} sub-layers recorded",
            trace.sublayers.len()
        )));
    }
    let positions = trace.len();
    for (i, sl) in trace.sublayers.iter().enumerate() {
        let lambda = i + 1;
        if sl.kind != SublayerKind::of_decoder(lambda) {
            return Err(Error::IncompleteTrace(format!("sub-layer {lambda} has kind {:?}", sl.kind)));
        }
        if sl.output.nrows() != positions || sl.std.len() != positions || sl.mean.len() != positions {
            return Err(Error::IncompleteTrace(format!("sub-layer {lambda} covers the wrong number of positions")));
        }
        if sl.kind.is_attention() && sl.attention.len() != model.config.num_heads {
            return Err(Error::IncompleteTrace(format!("sub-layer {lambda} lacks attention weights")));
        }
        if sl.kind == SublayerKind::FeedForward && sl.ff_pre_activation.is_none() {
            return Err(Error::IncompleteTrace(format!("sub-layer {lambda} lacks pre-activations")));
        }
        if let Some(position) = sl.std.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::DegenerateStd {
                sublayer: lambda,
                position,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{concatenate, Axis};

    #[test]
    fn exact_terms_pass_with_zero_residual() {
        let e = Array1::from(vec![0.5_f64, -1.25, 3.0]);
        let r = verify_reconstruction(&[e.view()], e.view(), Tolerance::default()).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_abs_residual, 0.0);
    }

    #[test]
    fn offset_terms_fail() {
        let e = Array1::from(vec![0.5_f64, -1.25, 3.0]);
        let shifted = &e + 1e-3;
        let r = verify_reconstruction(&[shifted.view()], e.view(), Tolerance::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures, 1);
    }

    #[test]
    fn default_tolerances() {
        let t = Tolerance::default();
        assert_eq!((t.abs, t.rel), (1e-8, 1e-5));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let e = Array1::from(vec![0.5_f64, -1.25, 3.0]);
        let z = Array1::from(vec![0.5_f64]);
        assert!(matches!(
            verify_reconstruction(&[z.view()], e.view(), Tolerance::default()),
            Err(Error::WidthMismatch(1, 3))
        ));
    }

    #[test]
    fn nan_reconstruction_fails() {
        let e = Array1::from(vec![0.5_f64]);
        let z = Array1::from(vec![f64::NAN]);
        let r = verify_reconstruction(&[z.view()], e.view(), Tolerance::default()).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn head_maps_sum_to_output_projection() {
        use crate::model::{Activation, Model, ModelConfig};
        let model = Model::<f64>::init_random(ModelConfig::toy(1, 16, 4, Activation::Relu), 11).unwrap();
        let att = model.weights.decoder[0].attention().unwrap();
        let slices: Vec<Array1<f64>> = (0..4)
            .map(|h| Array1::from_shape_fn(4, |i| (h * 4 + i) as f64 * 0.1 - 0.7))
            .collect();
        let mut via_heads = Array1::zeros(16);
        for (h, v) in slices.iter().enumerate() {
            via_heads += &head_map(att, h).dot(v);
        }
        let views: Vec<_> = slices.iter().map(|v| v.view()).collect();
        let concat = concatenate(Axis(0), &views).unwrap();
        let direct = att.w_o.dot(&concat);
        assert_abs_diff_eq!(via_heads, direct, epsilon = 1e-12);
    }

    #[test]
    fn term_names_round_trip() {
        for t in DecompositionKind::Sl.terms() {
            assert_eq!(t.symbol().parse::<Term>().unwrap(), *t);
        }
        assert!("x".parse::<Term>().is_err());
    }
}
