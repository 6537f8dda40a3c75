//! Training objectives over network outputs, and the trainable loss head
//! that owns any class weights or centers.

mod angular;
mod metric;
mod softmax;

pub use angular::{arcface, msoftmax, osl, OslMask};
pub use metric::{distance, ntxent, triplet, Distance};
pub use softmax::{cross_entropy, focal, joint_center, log_softmax, update_centers};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::net::Params;

/// Loss value with gradients for the network output and any head tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub d_input: DMatrix<f64>,
    pub d_weights: Option<DMatrix<f64>>,
    pub d_bias: Option<DVector<f64>>,
    pub d_centers: Option<DMatrix<f64>>,
    /// Samples that contributed nothing (no positive or negative partner).
    pub skipped: usize,
}

impl LossOutput {
    pub fn plain(value: f64, d_input: DMatrix<f64>) -> Self {
        LossOutput {
            value,
            d_input,
            d_weights: None,
            d_bias: None,
            d_centers: None,
            skipped: 0,
        }
    }

    pub fn with_skipped(mut self, skipped: usize) -> Self {
        self.skipped = skipped;
        self
    }
}

/// Summed absolute error `Σ |t - o|` with the sign subgradient (0 at ties).
pub fn l1_apc(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let diff = pred - target;
    let value = diff.iter().map(|d| d.abs()).sum();
    let grad = diff.map(|d| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
    JointCenter,
    Msoftmax,
    Arcface,
    Orthogonal,
    TripletCosine,
    TripletEuclidean,
    Ntxent,
    L1,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::CrossEntropy,
        LossKind::Focal,
        LossKind::JointCenter,
        LossKind::Msoftmax,
        LossKind::Arcface,
        LossKind::Orthogonal,
        LossKind::TripletCosine,
        LossKind::TripletEuclidean,
        LossKind::Ntxent,
        LossKind::L1,
    ];

    pub fn tag(self) -> u8 {
        LossKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        LossKind::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Focal => "focal",
            LossKind::JointCenter => "joint-center",
            LossKind::Msoftmax => "msoftmax",
            LossKind::Arcface => "arcface",
            LossKind::Orthogonal => "osl",
            LossKind::TripletCosine => "triplet-cos",
            LossKind::TripletEuclidean => "triplet-euc",
            LossKind::Ntxent => "ntxent",
            LossKind::L1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        LossKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    pub fn is_regression(self) -> bool {
        self == LossKind::L1
    }

    /// Whether the network output is the logit vector rather than an embedding.
    pub fn takes_logits(self) -> bool {
        matches!(self, LossKind::CrossEntropy | LossKind::Focal)
    }

    fn has_class_weights(self) -> bool {
        matches!(
            self,
            LossKind::JointCenter | LossKind::Msoftmax | LossKind::Arcface | LossKind::Orthogonal
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossHyper {
    pub focal_gamma: f64,
    pub center_lambda: f64,
    pub center_alpha: f64,
    pub arc_scale: f64,
    pub arc_margin: f64,
    pub triplet_margin: f64,
    pub temperature: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            focal_gamma: 2.0,
            center_lambda: 0.003,
            center_alpha: 0.5,
            arc_scale: 64.0,
            arc_margin: 0.5,
            triplet_margin: 0.2,
            temperature: 0.1,
        }
    }
}

impl LossHyper {
    fn to_vec(self) -> [f64; 7] {
        [
            self.focal_gamma,
            self.center_lambda,
            self.center_alpha,
            self.arc_scale,
            self.arc_margin,
            self.triplet_margin,
            self.temperature,
        ]
    }

    fn from_slice(v: &[f64]) -> Self {
        LossHyper {
            focal_gamma: v[0],
            center_lambda: v[1],
            center_alpha: v[2],
            arc_scale: v[3],
            arc_margin: v[4],
            triplet_margin: v[5],
            temperature: v[6],
        }
    }
}

/// What a batch is supervised with.
#[derive(Debug, Clone, Copy)]
pub enum Supervision<'a> {
    Labels(&'a [usize]),
    Regression(&'a DMatrix<f64>),
}

/// A loss together with its trainable tensors.
///
/// `weights` is `d × n` (one column per class) and `centers` is `n × d`; both
/// are empty for losses that have none.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHead {
    pub kind: LossKind,
    pub hyper: LossHyper,
    pub input_dim: usize,
    pub n_classes: usize,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub centers: DMatrix<f64>,
    mask: Option<OslMask>,
}

impl LossHead {
    /// `input_dim` is the width of the network output the head consumes; for
    /// logit losses it must equal `n_classes`.
    pub fn new(
        kind: LossKind,
        hyper: LossHyper,
        input_dim: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config(
                "loss input dimension must be positive".into(),
            ));
        }
        if kind.takes_logits() && input_dim != n_classes {
            return Err(Error::Config(format!(
                "{} expects {n_classes} logits, got {input_dim}",
                kind.name()
            )));
        }
        let mut head = LossHead {
            kind,
            hyper,
            input_dim,
            n_classes,
            weights: DMatrix::zeros(0, 0),
            bias: DVector::zeros(0),
            centers: DMatrix::zeros(0, 0),
            mask: None,
        };
        if kind.has_class_weights() {
            if n_classes < 2 {
                return Err(Error::Config(
                    "class-weight losses need at least 2 classes".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limit = (6.0 / (input_dim + n_classes) as f64).sqrt();
            head.weights =
                DMatrix::from_fn(input_dim, n_classes, |_, _| rng.random_range(-limit..limit));
            if kind == LossKind::Orthogonal {
                let mask = OslMask::new(input_dim, n_classes)?;
                head.weights = mask.apply(&head.weights);
                head.mask = Some(mask);
            }
            if kind == LossKind::JointCenter {
                head.bias = DVector::zeros(n_classes);
                head.centers = DMatrix::zeros(n_classes, input_dim);
            }
        }
        Ok(head)
    }

    pub fn evaluate(&self, input: &DMatrix<f64>, sup: Supervision<'_>) -> Result<LossOutput> {
        if input.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "loss head expects width {}, got {}",
                self.input_dim,
                input.ncols()
            )));
        }
        let h = &self.hyper;
        match (self.kind, sup) {
            (LossKind::L1, Supervision::Regression(t)) => {
                let (v, g) = l1_apc(input, t)?;
                Ok(LossOutput::plain(v, g))
            }
            (LossKind::L1, Supervision::Labels(_)) => {
                Err(Error::Config("l1 loss needs regression targets".into()))
            }
            (_, Supervision::Regression(_)) => Err(Error::Config(format!(
                "{} loss needs class labels",
                self.kind.name()
            ))),
            (kind, Supervision::Labels(labels)) => match kind {
                LossKind::CrossEntropy => {
                    cross_entropy(input, labels).map(|(v, g)| LossOutput::plain(v, g))
                }
                LossKind::Focal => {
                    focal(input, labels, h.focal_gamma).map(|(v, g)| LossOutput::plain(v, g))
                }
                LossKind::JointCenter => joint_center(
                    input,
                    labels,
                    &self.weights,
                    &self.bias,
                    &self.centers,
                    h.center_lambda,
                ),
                LossKind::Msoftmax => msoftmax(input, labels, &self.weights),
                LossKind::Arcface => {
                    arcface(input, labels, &self.weights, h.arc_scale, h.arc_margin)
                }
                LossKind::Orthogonal => osl(
                    input,
                    labels,
                    &self.weights,
                    self.mask.as_ref().expect("mask"),
                ),
                LossKind::TripletCosine => {
                    triplet(input, labels, Distance::Cosine, h.triplet_margin)
                }
                LossKind::TripletEuclidean => {
                    triplet(input, labels, Distance::Euclidean, h.triplet_margin)
                }
                LossKind::Ntxent => ntxent(input, labels, h.temperature),
                LossKind::L1 => unreachable!(),
            },
        }
    }

    /// Gradient container with the head's parameter layout.
    pub fn gradients(&self, out: &LossOutput) -> LossHead {
        let mut g = self.clone();
        g.weights = out
            .d_weights
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(self.weights.nrows(), self.weights.ncols()));
        g.bias = out
            .d_bias
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.bias.len()));
        g
    }

    /// Non-gradient updates after an optimizer step (center tracking).
    pub fn after_step(&mut self, input: &DMatrix<f64>, sup: Supervision<'_>) {
        if let (LossKind::JointCenter, Supervision::Labels(labels)) = (self.kind, sup) {
            update_centers(&mut self.centers, input, labels, self.hyper.center_alpha);
        }
    }

    pub fn write_to(&self, w: &mut ByteWriter) {
        w.u8(self.kind.tag());
        w.f64s(&self.hyper.to_vec());
        w.usize(self.input_dim);
        w.usize(self.n_classes);
        w.u8(u8::from(self.weights.len() > 0));
        if self.weights.len() > 0 {
            w.matrix(&self.weights);
        }
        w.u8(u8::from(self.bias.len() > 0));
        if self.bias.len() > 0 {
            w.f64s(self.bias.as_slice());
            w.matrix(&self.centers);
        }
    }

    pub fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let tag = r.u8()?;
        let kind = match LossKind::from_tag(tag) {
            Some(k) => k,
            None => return r.fail(format!("unknown loss kind {tag}")),
        };
        let hyper = LossHyper::from_slice(&r.f64s(7)?);
        let input_dim = r.usize()?;
        let n_classes = r.usize()?;
        let mut head = LossHead::new(kind, hyper, input_dim, n_classes, 0)?;
        if r.u8()? == 1 {
            head.weights = r.matrix(input_dim, n_classes)?;
        }
        if r.u8()? == 1 {
            head.bias = DVector::from_vec(r.f64s(n_classes)?);
            head.centers = r.matrix(n_classes, input_dim)?;
        }
        Ok(head)
    }
}

impl Params for LossHead {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.weights.len() > 0 {
            names.push("head.weight".to_string());
        }
        if self.bias.len() > 0 {
            names.push("head.bias".to_string());
        }
        names
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if self.weights.len() > 0 {
            out.push(self.weights.as_slice());
        }
        if self.bias.len() > 0 {
            out.push(self.bias.as_slice());
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if self.weights.len() > 0 {
            out.push(self.weights.as_mut_slice());
        }
        if self.bias.len() > 0 {
            out.push(self.bias.as_mut_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::grad_check;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Wraps a batch so the input gradient can go through `grad_check`.
    #[derive(Clone)]
    struct Batch(DMatrix<f64>);

    impl Params for Batch {
        fn param_names(&self) -> Vec<String> {
            vec!["input".into()]
        }
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![self.0.as_slice()]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![self.0.as_mut_slice()]
        }
    }

    fn test_hyper() -> LossHyper {
        LossHyper {
            arc_scale: 8.0,
            arc_margin: 0.3,
            temperature: 0.5,
            center_lambda: 0.5,
            ..LossHyper::default()
        }
    }

    #[test]
    fn every_head_passes_finite_differences() {
        let labels = [0, 1, 2, 0, 1, 2, 0, 3];
        for kind in LossKind::ALL {
            let n = 4;
            let dim = if kind.takes_logits() { n } else { 6 };
            let mut head = LossHead::new(kind, test_hyper(), dim, n, 3).unwrap();
            if kind == LossKind::JointCenter {
                head.centers = random(n, dim, 8);
                head.bias = DVector::from_vec(vec![0.1, -0.1, 0.2, 0.0]);
            }
            let x = random(labels.len(), dim, 5 + kind.tag() as u64);
            let target = random(labels.len(), dim, 99);
            let sup = if kind.is_regression() {
                Supervision::Regression(&target)
            } else {
                Supervision::Labels(&labels)
            };
            let out = head.evaluate(&x, sup).unwrap();

            let report = grad_check(
                &Batch(x.clone()),
                &Batch(out.d_input.clone()),
                |b| head.evaluate(&b.0, sup).unwrap().value,
                1e-6,
                1e-5,
            );
            assert!(report.passed, "{kind:?} input: {report:?}");

            if head.n_params() > 0 {
                let grads = head.gradients(&out);
                let report = grad_check(
                    &head,
                    &grads,
                    |h| h.evaluate(&x, sup).unwrap().value,
                    1e-6,
                    1e-5,
                );
                assert!(report.passed, "{kind:?} head: {report:?}");
            }
        }
    }

    #[test]
    fn center_gradient_matches_finite_differences() {
        let (n, d) = (3, 4);
        let labels = [0, 1, 2, 1];
        let x = random(4, d, 1);
        let w = random(d, n, 2);
        let b = DVector::zeros(n);
        let c = random(n, d, 3);
        let out = joint_center(&x, &labels, &w, &b, &c, 0.7).unwrap();
        let report = grad_check(
            &Batch(c.clone()),
            &Batch(out.d_centers.unwrap()),
            |cc| joint_center(&x, &labels, &w, &b, &cc.0, 0.7).unwrap().value,
            1e-6,
            1e-6,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn l1_examples() {
        let t = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let (v, g) = l1_apc(&t, &t).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let o = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let (v, g) = l1_apc(&o, &t).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn head_round_trips_through_bytes() {
        for kind in LossKind::ALL {
            let dim = if kind.takes_logits() { 5 } else { 10 };
            let mut head = LossHead::new(kind, LossHyper::default(), dim, 5, 7).unwrap();
            if kind == LossKind::JointCenter {
                head.centers = random(5, dim, 1);
            }
            let mut w = ByteWriter::new(b"TEST");
            head.write_to(&mut w);
            let bytes = w.into_bytes();
            let mut r = ByteReader::new(&bytes, b"TEST").unwrap();
            let back = LossHead::read_from(&mut r).unwrap();
            r.finish().unwrap();
            assert_eq!(back, head, "{kind:?}");
        }
    }

    #[test]
    fn names_and_tags_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(LossKind::parse(kind.name()), Some(kind));
            assert_eq!(LossKind::from_tag(kind.tag()), Some(kind));
        }
        assert_eq!(LossKind::from_tag(10), None);
    }

    #[test]
    fn mismatched_supervision_is_a_config_error() {
        let head = LossHead::new(LossKind::L1, LossHyper::default(), 3, 0, 0).unwrap();
        assert!(matches!(
            head.evaluate(&DMatrix::zeros(1, 3), Supervision::Labels(&[0])),
            Err(Error::Config(_))
        ));
    }
}
