//! The asymmetric three-branch network: a shared extractor `F` feeding two
//! labeling branches (`F1`, `F2`) tied by a weight-divergence penalty, and a
//! target-specific branch `Ft` trained only on pseudo-labels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnlib::layers::{DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use crate::nnlib::{argmax_rows, softmax, softmax_cross_entropy, Activation, LayerSpec, Matrix, Mode, Stack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    F1,
    F2,
    Ft,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::F1, Branch::F2, Branch::Ft];
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::F1 => "f1",
            Branch::F2 => "f2",
            Branch::Ft => "ft",
        })
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Branch::F1),
            "f2" => Ok(Branch::F2),
            "ft" => Ok(Branch::Ft),
            other => Err(Error::Input(format!("unknown branch '{other}' (expected f1, f2 or ft)"))),
        }
    }
}

/// Which branches may send gradients back into `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientGates {
    pub from_f1_f2: bool,
    pub from_ft: bool,
}

impl Default for GradientGates {
    fn default() -> Self {
        Self {
            from_f1_f2: true,
            from_ft: true,
        }
    }
}

impl GradientGates {
    pub fn validate(&self) -> Result<()> {
        if !self.from_f1_f2 && !self.from_ft {
            return Err(Error::Config(
                "gradient gates: at least one of from_f1_f2 / from_ft must be open".into(),
            ));
        }
        Ok(())
    }
}

/// Architecture of a [`TriNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    /// Hidden widths of `F`; the last one is the shared feature width.
    pub f_hidden: Vec<usize>,
    /// Hidden widths inside each branch before the class logits.
    pub branch_hidden: Vec<usize>,
    pub activation: Activation,
    /// Append batch norm as the last layer of `F`.
    pub use_bn: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Dropout applied at the input of `F1` and `F2`.
    pub dropout_labeling: f64,
    /// Dropout applied at the input of `Ft`.
    pub dropout_target: f64,
    pub num_classes: usize,
    pub lambda: f64,
    pub gates: GradientGates,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            f_hidden: vec![16],
            branch_hidden: Vec::new(),
            activation: Activation::Relu,
            use_bn: true,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            dropout_labeling: 0.0,
            dropout_target: 0.0,
            num_classes: 2,
            lambda: 0.01,
            gates: GradientGates::default(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model.input_dim must be positive".into()));
        }
        if self.f_hidden.is_empty() || self.f_hidden.contains(&0) {
            return Err(Error::Config(
                "model.f_hidden needs at least one positive width".into(),
            ));
        }
        if self.branch_hidden.contains(&0) {
            return Err(Error::Config("model.branch_hidden widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("model.num_classes must be at least 2".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("model.lambda must be >= 0, got {}", self.lambda)));
        }
        self.gates.validate()
    }

    pub fn feature_dim(&self) -> usize {
        *self.f_hidden.last().expect("validated")
    }

    fn extractor_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.f_hidden {
            specs.push(LayerSpec::affine(width, h));
            specs.push(self.activation.layer(h));
            width = h;
        }
        if self.use_bn {
            specs.push(LayerSpec {
                bn_eps: self.bn_eps,
                bn_momentum: self.bn_momentum,
                ..LayerSpec::batch_norm(width)
            });
        }
        specs
    }

    fn branch_specs(&self, dropout: f64) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = self.feature_dim();
        if dropout > 0.0 {
            specs.push(LayerSpec::dropout(width, dropout));
        }
        for &h in &self.branch_hidden {
            specs.push(LayerSpec::affine(width, h));
            specs.push(self.activation.layer(h));
            width = h;
        }
        specs.push(LayerSpec::affine(width, self.num_classes));
        specs
    }
}

/// Softmax output of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub probs: Matrix,
    pub predicted_class: Vec<usize>,
    pub max_prob: Vec<f64>,
}

impl BranchOutput {
    pub fn from_logits(logits: &Matrix) -> Self {
        let probs = softmax(logits);
        let predicted_class = argmax_rows(&probs);
        let max_prob = predicted_class
            .iter()
            .enumerate()
            .map(|(i, &c)| probs[[i, c]])
            .collect();
        Self {
            probs,
            predicted_class,
            max_prob,
        }
    }

    pub fn len(&self) -> usize {
        self.predicted_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted_class.is_empty()
    }
}

/// Per-stack parameter gradients. `None` means the stack must not be updated.
#[derive(Debug, Clone, Default)]
pub struct TriGrads {
    pub f: Option<Vec<Matrix>>,
    pub f1: Option<Vec<Matrix>>,
    pub f2: Option<Vec<Matrix>>,
    pub ft: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    /// The full objective: `ce_f1 + ce_f2 + lambda * penalty`.
    pub e: f64,
    pub ce_f1: f64,
    pub ce_f2: f64,
    pub penalty: f64,
}

/// Entrywise absolute sum of `W1^T W2` and its subgradients (`sign(0) = 0`).
///
/// Returns `(value, d/dW1, d/dW2)`.
pub fn weight_divergence(w1: &Matrix, w2: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    if w1.dim() != w2.dim() {
        return Err(Error::dim(
            "weight_divergence",
            format!("{}x{}", w1.nrows(), w1.ncols()),
            format!("{}x{}", w2.nrows(), w2.ncols()),
        ));
    }
    let gram = w1.t().dot(w2);
    let value = gram.iter().map(|v| v.abs()).sum();
    let sign = gram.mapv(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    Ok((value, w2.dot(&sign.t()), w1.dot(&sign)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriNet {
    pub f: Stack,
    pub f1: Stack,
    pub f2: Stack,
    pub ft: Stack,
    pub num_classes: usize,
    pub lambda: f64,
    pub gates: GradientGates,
}

impl TriNet {
    /// Builds the network with an independent sub-seed per stack so that the
    /// three branches start from different weights.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut sub = || ChaCha8Rng::seed_from_u64(master.next_u64());
        let f = Stack::new(&cfg.extractor_specs(), &mut sub())?;
        let labeling = cfg.branch_specs(cfg.dropout_labeling);
        let f1 = Stack::new(&labeling, &mut sub())?;
        let f2 = Stack::new(&labeling, &mut sub())?;
        let ft = Stack::new(&cfg.branch_specs(cfg.dropout_target), &mut sub())?;
        let net = Self {
            f,
            f1,
            f2,
            ft,
            num_classes: cfg.num_classes,
            lambda: cfg.lambda,
            gates: cfg.gates,
        };
        net.validate()?;
        Ok(net)
    }

    /// Structural invariants; also run after loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        self.gates.validate()?;
        let feat = self.f.out_dim();
        for (name, s) in [("f1", &self.f1), ("f2", &self.f2), ("ft", &self.ft)] {
            if s.in_dim() != feat {
                return Err(Error::Config(format!(
                    "branch {name} expects {} inputs but F emits {feat}",
                    s.in_dim()
                )));
            }
            if s.out_dim() != self.num_classes {
                return Err(Error::Config(format!(
                    "branch {name} emits {} logits, expected {}",
                    s.out_dim(),
                    self.num_classes
                )));
            }
        }
        let shapes = |s: &Stack| s.params().iter().map(|p| p.dim()).collect::<Vec<_>>();
        if shapes(&self.f1) != shapes(&self.f2) {
            return Err(Error::Config("F1 and F2 must have identical layer shapes".into()));
        }
        if self.f1.first_affine_weight().is_none() {
            return Err(Error::Config("labeling branches need an affine layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.f.in_dim()
    }

    pub fn branch(&self, b: Branch) -> &Stack {
        match b {
            Branch::F1 => &self.f1,
            Branch::F2 => &self.f2,
            Branch::Ft => &self.ft,
        }
    }

    fn branch_mut(&mut self, b: Branch) -> &mut Stack {
        match b {
            Branch::F1 => &mut self.f1,
            Branch::F2 => &mut self.f2,
            Branch::Ft => &mut self.ft,
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Input(format!(
                "expected {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        branch: Branch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<BranchOutput> {
        self.check_input(x)?;
        let feats = self.f.forward(x, mode, rng)?;
        let logits = self.branch_mut(branch).forward(&feats, mode, rng)?;
        Ok(BranchOutput::from_logits(&logits))
    }

    /// Eval-mode forward that leaves the network untouched.
    pub fn predict(&self, x: &Matrix, branch: Branch) -> Result<BranchOutput> {
        let feats = self.features(x)?;
        let logits = self.branch(branch).forward_eval(&feats)?;
        Ok(BranchOutput::from_logits(&logits))
    }

    /// Eval-mode output of the shared extractor `F`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.f.forward_eval(x)
    }

    /// Current value of the `F1`/`F2` weight-divergence penalty.
    pub fn penalty(&self) -> f64 {
        let w1 = self.f1.first_affine_weight().expect("validated");
        let w2 = self.f2.first_affine_weight().expect("validated");
        weight_divergence(w1, w2).map(|r| r.0).unwrap_or(f64::NAN)
    }

    /// Multiview objective for the labeling branches plus all its gradients.
    /// `F` receives gradients only when `gates.from_f1_f2` is open.
    pub fn joint_labeling_loss<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        y: &[usize],
        rng: &mut R,
    ) -> Result<(JointLoss, TriGrads)> {
        if x.nrows() == 0 {
            return Err(Error::Input("joint labeling loss on an empty batch".into()));
        }
        self.check_input(x)?;
        let (feats, f_cache) = self.f.forward_train(x, rng)?;
        let (logits1, c1) = self.f1.forward_train(&feats, rng)?;
        let (logits2, c2) = self.f2.forward_train(&feats, rng)?;
        let (ce_f1, d1) = softmax_cross_entropy(&logits1, y)?;
        let (ce_f2, d2) = softmax_cross_entropy(&logits2, y)?;
        let (dfeat1, mut g1) = self.f1.backward(&c1, &d1)?;
        let (dfeat2, mut g2) = self.f2.backward(&c2, &d2)?;

        let idx1 = self.f1.first_affine_param_index().expect("validated");
        let idx2 = self.f2.first_affine_param_index().expect("validated");
        let (penalty, dw1, dw2) = weight_divergence(self.f1.params()[idx1], self.f2.params()[idx2])?;
        if self.lambda != 0.0 {
            g1[idx1].scaled_add(self.lambda, &dw1);
            g2[idx2].scaled_add(self.lambda, &dw2);
        }

        let f_grads = if self.gates.from_f1_f2 {
            Some(self.f.backward(&f_cache, &(dfeat1 + dfeat2))?.1)
        } else {
            None
        };
        let loss = JointLoss {
            e: ce_f1 + ce_f2 + self.lambda * penalty,
            ce_f1,
            ce_f2,
            penalty,
        };
        Ok((
            loss,
            TriGrads {
                f: f_grads,
                f1: Some(g1),
                f2: Some(g2),
                ft: None,
            },
        ))
    }

    /// Mean cross-entropy of `Ft . F`; `F` receives gradients only when
    /// `gates.from_ft` is open.
    pub fn target_loss<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        y: &[usize],
        rng: &mut R,
    ) -> Result<(f64, TriGrads)> {
        if x.nrows() == 0 {
            return Err(Error::Input("target loss on an empty batch".into()));
        }
        self.check_input(x)?;
        let (feats, f_cache) = self.f.forward_train(x, rng)?;
        let (logits, ct) = self.ft.forward_train(&feats, rng)?;
        let (loss, dl) = softmax_cross_entropy(&logits, y)?;
        let (dfeat, gt) = self.ft.backward(&ct, &dl)?;
        let f_grads = if self.gates.from_ft {
            Some(self.f.backward(&f_cache, &dfeat)?.1)
        } else {
            None
        };
        Ok((
            loss,
            TriGrads {
                f: f_grads,
                f1: None,
                f2: None,
                ft: Some(gt),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnlib::LayerParams;
    use ndarray::array;

    #[test]
    fn divergence_hand_cases() {
        let w1 = array![[1.0, 0.0], [0.0, 1.0]];
        let w2 = array![[0.0, 1.0], [-1.0, 0.0]];
        assert_eq!(weight_divergence(&w1, &w2).unwrap().0, 2.0);
        assert_eq!(weight_divergence(&w1, &Matrix::zeros((2, 2))).unwrap().0, 0.0);
        let eye = Matrix::eye(4);
        assert_eq!(weight_divergence(&eye, &eye).unwrap().0, 4.0);
    }

    #[test]
    fn divergence_shape_mismatch() {
        assert!(matches!(
            weight_divergence(&Matrix::zeros((3, 2)), &Matrix::zeros((2, 3))),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gates_need_one_open() {
        let g = GradientGates {
            from_f1_f2: false,
            from_ft: false,
        };
        assert!(g.validate().is_err());
        let cfg = NetConfig {
            gates: g,
            ..NetConfig::default()
        };
        assert!(TriNet::new(&cfg, 0).is_err());
    }

    #[test]
    fn branches_start_different() {
        let net = TriNet::new(&NetConfig::default(), 3).unwrap();
        assert_ne!(net.f1.first_affine_weight(), net.f2.first_affine_weight());
        assert_ne!(net.f1.first_affine_weight(), net.ft.first_affine_weight());
    }

    #[test]
    fn bn_is_last_layer_of_f() {
        let net = TriNet::new(&NetConfig::default(), 0).unwrap();
        let last = net.f.layers().last().unwrap();
        assert_eq!(last.spec.kind, crate::nnlib::LayerKind::BatchNorm);
        let no_bn = TriNet::new(
            &NetConfig {
                use_bn: false,
                ..NetConfig::default()
            },
            0,
        )
        .unwrap();
        assert!(no_bn
            .f
            .layers()
            .iter()
            .all(|l| l.spec.kind != crate::nnlib::LayerKind::BatchNorm));
    }

    #[test]
    fn branch_parse() {
        assert_eq!("ft".parse::<Branch>().unwrap(), Branch::Ft);
        assert!("f3".parse::<Branch>().is_err());
    }

    #[test]
    fn wrong_input_width() {
        let net = TriNet::new(&NetConfig::default(), 0).unwrap();
        assert!(matches!(net.features(&Matrix::zeros((2, 3))), Err(Error::Input(_))));
    }

    #[test]
    fn reduces_to_logistic_regression() {
        // F = relu(I x) on positive inputs is the identity; a 2-logit affine
        // head then gives p(class 1) = sigmoid((w1 - w0) . x + b1 - b0).
        let cfg = NetConfig {
            input_dim: 2,
            f_hidden: vec![2],
            use_bn: false,
            ..NetConfig::default()
        };
        let mut net = TriNet::new(&cfg, 0).unwrap();
        if let LayerParams::Affine { w, b } = &mut net.f.layers_mut()[0].params {
            *w = Matrix::eye(2);
            b.fill(0.0);
        }
        let head_w = array![[0.5, -1.0], [2.0, 0.25]];
        let head_b = array![[0.1, -0.3]];
        if let LayerParams::Affine { w, b } = &mut net.ft.layers_mut()[0].params {
            *w = head_w.clone();
            *b = head_b.clone();
        }
        let x = array![[0.2, 1.5], [3.0, 0.1], [0.0, 0.0]];
        let out = net.predict(&x, Branch::Ft).unwrap();
        for i in 0..3 {
            let z = (head_w[[0, 1]] - head_w[[0, 0]]) * x[[i, 0]]
                + (head_w[[1, 1]] - head_w[[1, 0]]) * x[[i, 1]]
                + head_b[[0, 1]]
                - head_b[[0, 0]];
            let p1 = 1.0 / (1.0 + (-z).exp());
            assert!((out.probs[[i, 1]] - p1).abs() < 1e-12);
            assert!((out.probs.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }
}
