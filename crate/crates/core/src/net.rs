//! Fully connected network representation, loss and exact derivatives.
//!
//! Parameters flatten to a vector theta with a fixed ordering: layer-major,
//! within a layer the weight matrix row-major, then the bias vector (when
//! present). For a single hidden layer without biases this is exactly
//! `(w_1, ..., w_r, a_1, ..., a_r)`.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Central-difference step used for the deep-network Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-5;
/// Default cap on the parameter count for Hessian assembly.
pub const HESSIAN_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Shape `(r_l, r_{l-1})`; row i holds the input weights of neuron i.
    pub weights: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
}

/// Architecture descriptor used in serialized documents and run records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Layer widths from input to output, e.g. `[2, 5, 1]`.
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub has_bias: bool,
}

impl ArchDescriptor {
    pub fn new(widths: Vec<usize>, activation: ActivationKind, has_bias: bool) -> Self {
        ArchDescriptor { widths, activation, has_bias }
    }

    pub fn param_count(&self) -> usize {
        let mut p = 0;
        for l in 1..self.widths.len() {
            p += self.widths[l] * self.widths[l - 1];
            if self.has_bias {
                p += self.widths[l];
            }
        }
        p
    }

    pub fn zeros(&self) -> NetworkParams {
        let mut layers = Vec::with_capacity(self.widths.len() - 1);
        for l in 1..self.widths.len() {
            layers.push(LayerParams {
                weights: DMatrix::zeros(self.widths[l], self.widths[l - 1]),
                bias: if self.has_bias {
                    Some(DVector::zeros(self.widths[l]))
                } else {
                    None
                },
            });
        }
        NetworkParams {
            layers,
            activation: self.activation,
            has_bias: self.has_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// All affine layers, last one linear (no activation on the output).
    pub layers: Vec<LayerParams>,
    pub activation: ActivationKind,
    pub has_bias: bool,
}

#[derive(Serialize, Deserialize)]
struct NetworkDocument {
    format_version: u32,
    arch: ArchDescriptor,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn arch(&self) -> ArchDescriptor {
        let mut widths = Vec::with_capacity(self.layers.len() + 1);
        widths.push(self.layers[0].weights.ncols());
        for l in &self.layers {
            widths.push(l.weights.nrows());
        }
        ArchDescriptor::new(widths, self.activation, self.has_bias)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Number of hidden layers (all layers except the linear output layer).
    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_width(&self, hidden_layer: usize) -> usize {
        self.layers[hidden_layer].weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    /// Start offset of each layer's block in the flat vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offs.push(acc);
            acc += l.weights.len() + l.bias.as_ref().map_or(0, |b| b.len());
        }
        offs
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for i in 0..l.weights.nrows() {
                for j in 0..l.weights.ncols() {
                    theta.push(l.weights[(i, j)]);
                }
            }
            if let Some(b) = &l.bias {
                theta.extend(b.iter());
            }
        }
        DVector::from_vec(theta)
    }

    pub fn set_from_flat(&mut self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, network has {} parameters",
                theta.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for i in 0..l.weights.nrows() {
                for j in 0..l.weights.ncols() {
                    l.weights[(i, j)] = theta[k];
                    k += 1;
                }
            }
            if let Some(b) = &mut l.bias {
                for i in 0..b.len() {
                    b[i] = theta[k];
                    k += 1;
                }
            }
        }
        Ok(())
    }

    pub fn from_flat(arch: &ArchDescriptor, theta: &DVector<f64>) -> Result<NetworkParams> {
        let mut net = arch.zeros();
        net.set_from_flat(theta)?;
        Ok(net)
    }

    /// Input weight row of a hidden neuron, with the bias appended as the
    /// last coordinate when biases are present.
    pub fn input_weights_with_bias(&self, layer: usize, neuron: usize) -> DVector<f64> {
        let l = &self.layers[layer];
        let row = l.weights.row(neuron);
        match &l.bias {
            Some(b) => {
                let mut v = DVector::zeros(row.len() + 1);
                for j in 0..row.len() {
                    v[j] = row[j];
                }
                v[row.len()] = b[neuron];
                v
            }
            None => row.transpose(),
        }
    }

    /// Outgoing weights of a hidden neuron: column `neuron` of the next layer.
    pub fn outgoing_weights(&self, layer: usize, neuron: usize) -> DVector<f64> {
        self.layers[layer + 1].weights.column(neuron).into_owned()
    }

    /// Scalar network output for a single input sample.
    pub fn forward(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has dim {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &a;
            if let Some(b) = &layer.bias {
                z += b;
            }
            if l < last {
                a = z.map(|v| self.activation.value(v));
            } else {
                a = z;
            }
        }
        Ok(a[0])
    }

    /// Network outputs over all samples of a dataset, sample-major.
    pub fn forward_batch(&self, data: &Dataset) -> Result<DVector<f64>> {
        let n = data.len();
        let mut out = DVector::zeros(n);
        let mut x = DVector::zeros(data.dim());
        for i in 0..n {
            data.copy_input_into(i, &mut x);
            out[i] = self.forward(&x)?;
        }
        Ok(out)
    }

    /// Mean squared error `(1/N) sum_i (y_i - f(x_i))^2`, sample-major sum.
    pub fn mse_loss(&self, data: &Dataset) -> Result<f64> {
        let preds = self.forward_batch(data)?;
        let n = data.len() as f64;
        let mut acc = 0.0;
        for i in 0..data.len() {
            let e = data.targets[i] - preds[i];
            acc += e * e;
        }
        Ok(acc / n)
    }

    /// Exact analytic gradient of the mse loss with respect to theta,
    /// computed by reverse accumulation through the layers.
    pub fn loss_gradient(&self, data: &Dataset) -> Result<DVector<f64>> {
        let p = self.param_count();
        let mut grad: DVector<f64> = DVector::zeros(p);
        let offsets = self.layer_offsets();
        let n = data.len();
        let scale = 2.0 / n as f64;
        let last = self.layers.len() - 1;

        // per-sample activations and preactivations, reused across samples
        let mut x = DVector::zeros(data.dim());
        for s in 0..n {
            data.copy_input_into(s, &mut x);
            // forward pass, keeping activations per layer
            let mut acts: Vec<DVector<f64>> = Vec::with_capacity(self.layers.len() + 1);
            let mut pre: Vec<DVector<f64>> = Vec::with_capacity(self.layers.len());
            acts.push(x.clone());
            for (l, layer) in self.layers.iter().enumerate() {
                let mut z = &layer.weights * acts.last().unwrap();
                if let Some(b) = &layer.bias {
                    z += b;
                }
                let a = if l < last {
                    z.map(|v| self.activation.value(v))
                } else {
                    z.clone()
                };
                pre.push(z);
                acts.push(a);
            }
            let f = acts.last().unwrap()[0];
            let e = f - data.targets[s];

            // backward pass
            let mut delta = DVector::from_element(1, scale * e);
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let a_prev = &acts[l];
                let off = offsets[l];
                let cols = layer.weights.ncols();
                for i in 0..layer.weights.nrows() {
                    let di = delta[i];
                    let base = off + i * cols;
                    for j in 0..cols {
                        grad[base + j] += di * a_prev[j];
                    }
                }
                if layer.bias.is_some() {
                    let bbase = off + layer.weights.len();
                    for i in 0..delta.len() {
                        grad[bbase + i] += delta[i];
                    }
                }
                if l > 0 {
                    let mut back = layer.weights.transpose() * &delta;
                    let z_prev = &pre[l - 1];
                    for i in 0..back.len() {
                        back[i] *= self.activation.d1(z_prev[i]);
                    }
                    delta = back;
                }
            }
        }

        for (k, g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite { index: k });
            }
        }
        Ok(grad)
    }

    /// Loss Hessian: exact analytic for a single hidden layer, central finite
    /// differences of the analytic gradient (symmetrized) for deeper networks.
    pub fn loss_hessian(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.loss_hessian_capped(data, HESSIAN_CAP)
    }

    pub fn loss_hessian_capped(&self, data: &Dataset, cap: usize) -> Result<DMatrix<f64>> {
        let p = self.param_count();
        if p > cap {
            return Err(Error::HessianCapExceeded { p, cap });
        }
        if self.hidden_layer_count() == 1 && self.output_dim() == 1 {
            self.hessian_single_hidden(data)
        } else {
            self.hessian_fd_of_gradient(data)
        }
    }

    fn hessian_single_hidden(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let r = self.hidden_width(0);
        let d = self.input_dim();
        let p = self.param_count();
        let n = data.len();
        let scale = 2.0 / n as f64;
        let hb = self.has_bias;

        // flat layout: W0 rows (r*d), b0 (r, optional), a (r), c (optional)
        let w_off = 0;
        let b_off = r * d;
        let a_off = b_off + if hb { r } else { 0 };

        let w0 = &self.layers[0].weights;
        let b0 = self.layers[0].bias.as_ref();
        let a1 = &self.layers[1].weights;
        let c1 = self.layers[1].bias.as_ref();

        let mut h = DMatrix::zeros(p, p);
        let mut g = vec![0.0; p];
        let mut x = DVector::zeros(d);
        let mut z = vec![0.0; r];
        let mut s = vec![0.0; r];
        let mut s1 = vec![0.0; r];
        let mut s2 = vec![0.0; r];

        for smp in 0..n {
            data.copy_input_into(smp, &mut x);
            let mut f = c1.map_or(0.0, |c| c[0]);
            for j in 0..r {
                let mut zj = b0.map_or(0.0, |b| b[j]);
                for k in 0..d {
                    zj += w0[(j, k)] * x[k];
                }
                z[j] = zj;
                s[j] = self.activation.value(zj);
                s1[j] = self.activation.d1(zj);
                s2[j] = self.activation.d2(zj);
                f += a1[(0, j)] * s[j];
            }
            let e = f - data.targets[smp];

            // df/dtheta
            for j in 0..r {
                let aj_s1 = a1[(0, j)] * s1[j];
                for k in 0..d {
                    g[w_off + j * d + k] = aj_s1 * x[k];
                }
                if hb {
                    g[b_off + j] = aj_s1;
                }
                g[a_off + j] = s[j];
            }
            if hb {
                g[a_off + r] = 1.0;
            }

            // rank-one term: scale * g g^T (upper triangle)
            for i in 0..p {
                let gi = scale * g[i];
                if gi == 0.0 {
                    continue;
                }
                let row = h.row_mut(i);
                let mut row = row;
                for j in i..p {
                    row[j] += gi * g[j];
                }
            }

            // residual * second-derivative-of-f term (block sparse)
            let es = scale * e;
            for j in 0..r {
                let ajs2 = a1[(0, j)] * s2[j] * es;
                let s1e = s1[j] * es;
                let wj = w_off + j * d;
                // (w_j, w_j) block
                for k in 0..d {
                    for l in k..d {
                        h[(wj + k, wj + l)] += ajs2 * x[k] * x[l];
                    }
                }
                // (w_j, a_j)
                for k in 0..d {
                    h[(wj + k, a_off + j)] += s1e * x[k];
                }
                if hb {
                    // (w_j, b_j), (b_j, b_j), (b_j, a_j)
                    for k in 0..d {
                        h[(wj + k, b_off + j)] += ajs2 * x[k];
                    }
                    h[(b_off + j, b_off + j)] += ajs2;
                    h[(b_off + j, a_off + j)] += s1e;
                }
            }
        }

        // mirror the upper triangle
        for i in 0..p {
            for j in (i + 1)..p {
                h[(j, i)] = h[(i, j)];
            }
        }
        Ok(h)
    }

    fn hessian_fd_of_gradient(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let p = self.param_count();
        let theta = self.flatten();
        let mut h = DMatrix::zeros(p, p);
        let mut probe = self.clone();
        let step = HESSIAN_FD_STEP;
        for k in 0..p {
            let mut tp = theta.clone();
            tp[k] += step;
            probe.set_from_flat(&tp)?;
            let gp = probe.loss_gradient(data)?;
            tp[k] = theta[k] - step;
            probe.set_from_flat(&tp)?;
            let gm = probe.loss_gradient(data)?;
            for i in 0..p {
                h[(i, k)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        // symmetrize (H + H^T)/2
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDocument {
            format_version: 1,
            arch: self.arch(),
            theta: self.flatten().iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<NetworkParams> {
        let doc: NetworkDocument = serde_json::from_str(text)?;
        if doc.format_version != 1 {
            return Err(Error::Serialization(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let theta = DVector::from_vec(doc.theta);
        NetworkParams::from_flat(&doc.arch, &theta)
    }
}

/// Fixed regression dataset with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d` inputs, one sample per row.
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// Whether a constant-one coordinate was appended to every input.
    pub augmented: bool,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Dataset> {
        if inputs.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows vs {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Dataset { inputs, targets, augmented: false })
    }

    /// Appends the constant coordinate `x_{d+1} = 1` to every input row.
    pub fn augmented(mut self) -> Dataset {
        let n = self.inputs.nrows();
        let d = self.inputs.ncols();
        let mut aug = DMatrix::zeros(n, d + 1);
        aug.view_mut((0, 0), (n, d)).copy_from(&self.inputs);
        for i in 0..n {
            aug[(i, d)] = 1.0;
        }
        self.inputs = aug;
        self.augmented = true;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input_row(&self, i: usize) -> DVector<f64> {
        self.inputs.row(i).transpose()
    }

    pub fn copy_input_into(&self, i: usize, out: &mut DVector<f64>) {
        for j in 0..self.inputs.ncols() {
            out[j] = self.inputs[(i, j)];
        }
    }

    /// Subset by sample indices (used by minibatch optimizers).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let mut inputs = DMatrix::zeros(idx.len(), d);
        let mut targets = DVector::zeros(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..d {
                inputs[(row, j)] = self.inputs[(i, j)];
            }
            targets[row] = self.targets[i];
        }
        Dataset { inputs, targets, augmented: self.augmented }
    }
}
