//! Neuron duplication, saddle lines, Hessian eigen-curve tracking, and the
//! plateau-saddle stability test.
//!
//! Duplicating hidden neuron j of a critical point produces a line of
//! critical points: both copies share the input weights while the outgoing
//! weights split into `gamma * a` (original slot) and `(1 - gamma) * a`
//! (appended slot). The network function is preserved exactly for every
//! gamma.

use crate::eigen::{symmetric_eigen, EigenDecomposition};
use crate::error::{Error, Result};
use crate::net::{ArchDescriptor, Dataset, NetworkParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Tolerance declaring two canonical parameter vectors the same solution.
pub const SAME_SOLUTION_TOL: f64 = 1e-4;

/// Returns the `(r+1)`-neuron network with hidden neuron `neuron` of hidden
/// layer `layer` duplicated at line coordinate `gamma`. The copy is appended
/// as the last neuron of the layer.
pub fn duplicate_neuron(
    net: &NetworkParams,
    layer: usize,
    neuron: usize,
    gamma: f64,
) -> Result<NetworkParams> {
    if layer >= net.hidden_layer_count() {
        return Err(Error::OutputLayerNeuron);
    }
    let r = net.hidden_width(layer);
    if neuron >= r {
        return Err(Error::InvalidArgument(format!(
            "neuron {neuron} out of range for width {r}"
        )));
    }
    let mut out = net.clone();

    // append a copy of the neuron's input row (and bias)
    let lw = &net.layers[layer].weights;
    let mut grown = DMatrix::zeros(r + 1, lw.ncols());
    grown.view_mut((0, 0), (r, lw.ncols())).copy_from(lw);
    for c in 0..lw.ncols() {
        grown[(r, c)] = lw[(neuron, c)];
    }
    out.layers[layer].weights = grown;
    if let Some(b) = &net.layers[layer].bias {
        let mut nb = DVector::zeros(r + 1);
        nb.rows_mut(0, r).copy_from(b);
        nb[r] = b[neuron];
        out.layers[layer].bias = Some(nb);
    }

    // split the outgoing column: original slot gamma * a, new slot (1-gamma) * a
    let nw = &net.layers[layer + 1].weights;
    let mut next = DMatrix::zeros(nw.nrows(), r + 1);
    next.view_mut((0, 0), (nw.nrows(), r)).copy_from(nw);
    for row in 0..nw.nrows() {
        let a = nw[(row, neuron)];
        next[(row, neuron)] = gamma * a;
        next[(row, r)] = (1.0 - gamma) * a;
    }
    out.layers[layer + 1].weights = next;
    Ok(out)
}

/// Line coordinate estimated from the two output weights of a split pair:
/// `(a_r - a_r1 + a_star) / (2 a_star)`.
pub fn projected_gamma(a_r: f64, a_r1: f64, a_star: f64) -> Result<f64> {
    if a_star == 0.0 {
        return Err(Error::ZeroBaseOutputWeight);
    }
    Ok((a_r - a_r1 + a_star) / (2.0 * a_star))
}

/// The one-parameter family of critical points created by duplication.
#[derive(Debug, Clone)]
pub struct SaddleLine {
    pub base: NetworkParams,
    pub layer: usize,
    pub neuron: usize,
    /// Outgoing weights of the duplicated neuron in the base network.
    pub a_star: DVector<f64>,
}

impl SaddleLine {
    pub fn new(base: NetworkParams, layer: usize, neuron: usize) -> Result<SaddleLine> {
        if layer >= base.hidden_layer_count() {
            return Err(Error::OutputLayerNeuron);
        }
        if neuron >= base.hidden_width(layer) {
            return Err(Error::InvalidArgument(format!(
                "neuron {neuron} out of range for width {}",
                base.hidden_width(layer)
            )));
        }
        let a_star = base.outgoing_weights(layer, neuron);
        Ok(SaddleLine { base, layer, neuron, a_star })
    }

    /// The duplicated network at line coordinate `gamma`.
    pub fn at(&self, gamma: f64) -> NetworkParams {
        duplicate_neuron(&self.base, self.layer, self.neuron, gamma)
            .expect("indices validated at construction")
    }

    pub fn duplicated_arch(&self) -> ArchDescriptor {
        self.at(0.0).arch()
    }

    /// Index of the appended copy within its layer.
    pub fn new_neuron_index(&self) -> usize {
        self.base.hidden_width(self.layer)
    }

    /// Unit flat-coordinate direction of the line,
    /// `d theta^gamma / d gamma` normalized.
    pub fn direction(&self) -> DVector<f64> {
        let g0 = self.at(0.0).flatten();
        let g1 = self.at(1.0).flatten();
        let mut v = g1 - g0;
        let n = v.norm();
        v /= n;
        v
    }

    /// Euclidean distance from a flat parameter vector to the line.
    pub fn distance_to_line(&self, theta: &DVector<f64>) -> f64 {
        let origin = self.at(0.0).flatten();
        let dir = self.direction();
        let rel = theta - &origin;
        let along = rel.dot(&dir);
        (rel - along * dir).norm()
    }
}

/// `theta^gamma +/- alpha e_min`, with `e_min` the unit eigenvector of the
/// most negative Hessian eigenvalue at `theta^gamma`.
pub fn perturb_along_eigvec(
    line: &SaddleLine,
    data: &Dataset,
    gamma: f64,
    alpha: f64,
    positive: bool,
) -> Result<NetworkParams> {
    let net = line.at(gamma);
    let h = net.loss_hessian(data)?;
    let eig = symmetric_eigen(&h)?;
    if eig.values.len() > 1 {
        let gap = eig.values[1] - eig.values[0];
        if gap < 1e-12 {
            return Err(Error::DegenerateEigenpair { gap });
        }
    }
    let e_min = eig.vectors.column(0).into_owned();
    let sign = if positive { 1.0 } else { -1.0 };
    let theta = net.flatten() + (sign * alpha) * e_min;
    NetworkParams::from_flat(&net.arch(), &theta)
}

/// Eigenvalue curves over a gamma grid with eigenvector-continuity matching.
#[derive(Debug, Clone)]
pub struct EigenTrack {
    pub gammas: Vec<f64>,
    /// Ascending spectrum at each grid point.
    pub sorted: Vec<DVector<f64>>,
    /// `curves[k][i]`: eigenvalue of matched curve k at grid point i.
    pub curves: Vec<Vec<f64>>,
    /// `rotation[k][i]`: angle (radians) between curve k's eigenvector at
    /// grid point i and at the reference grid point.
    pub rotation: Vec<Vec<f64>>,
    pub reference_index: usize,
    /// `(grid index, curve id)` pairs where the greedy match was ambiguous
    /// (two overlaps within 1e-6).
    pub ambiguous: Vec<(usize, usize)>,
}

impl EigenTrack {
    /// CSV export with columns `gamma,curve_id,eigenvalue,rotation_angle`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "gamma,curve_id,eigenvalue,rotation_angle")?;
        for (i, g) in self.gammas.iter().enumerate() {
            for k in 0..self.curves.len() {
                writeln!(w, "{},{},{},{}", g, k, self.curves[k][i], self.rotation[k][i])?;
            }
        }
        Ok(())
    }
}

/// Greedy eigenvector-overlap matching across a family of symmetric
/// matrices. Curve identity is carried by maximizing `|<v_prev, v_cur>|`;
/// signs are fixed so consecutive overlaps are positive.
pub fn track_matched_curves(
    hessians: &[DMatrix<f64>],
    gammas: &[f64],
    reference_index: usize,
) -> Result<EigenTrack> {
    if hessians.len() != gammas.len() || hessians.is_empty() {
        return Err(Error::InvalidArgument("grid and matrices must align".into()));
    }
    if gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("gamma grid must be sorted".into()));
    }
    if reference_index >= gammas.len() {
        return Err(Error::InvalidArgument("reference index out of range".into()));
    }
    let n = hessians[0].nrows();
    let m = gammas.len();

    let mut sorted = Vec::with_capacity(m);
    let mut bases: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut curves = vec![vec![0.0; m]; n];
    let mut ambiguous = Vec::new();

    let first: EigenDecomposition = symmetric_eigen(&hessians[0])?;
    for k in 0..n {
        curves[k][0] = first.values[k];
    }
    sorted.push(first.values.clone());
    bases.push(first.vectors.clone());

    for i in 1..m {
        let eig = symmetric_eigen(&hessians[i])?;
        sorted.push(eig.values.clone());
        let prev = &bases[i - 1];
        // overlap[p][c] = <curve-p vector at i-1, column c at i>
        let overlap = prev.transpose() * &eig.vectors;

        let mut used_col = vec![false; n];
        let mut assigned = vec![usize::MAX; n];
        // greedy over curves in order of their best available overlap
        for _ in 0..n {
            let mut best = (usize::MAX, usize::MAX, -1.0);
            for p in 0..n {
                if assigned[p] != usize::MAX {
                    continue;
                }
                for c in 0..n {
                    if used_col[c] {
                        continue;
                    }
                    let o = overlap[(p, c)].abs();
                    if o > best.2 {
                        best = (p, c, o);
                    }
                }
            }
            let (p, c, o) = best;
            // flag near-ties against the runner-up for this curve
            let mut second = -1.0f64;
            for c2 in 0..n {
                if c2 != c && !used_col[c2] {
                    second = second.max(overlap[(p, c2)].abs());
                }
            }
            if (o - second).abs() < 1e-6 {
                ambiguous.push((i, p));
            }
            assigned[p] = c;
            used_col[c] = true;
        }

        let mut basis = DMatrix::zeros(n, n);
        for p in 0..n {
            let c = assigned[p];
            let mut col = eig.vectors.column(c).into_owned();
            if overlap[(p, c)] < 0.0 {
                col = -col;
            }
            basis.set_column(p, &col);
            curves[p][i] = eig.values[c];
        }
        bases.push(basis);
    }

    let mut rotation = vec![vec![0.0; m]; n];
    let refb = bases[reference_index].clone();
    for (i, b) in bases.iter().enumerate() {
        for k in 0..n {
            let dot = b.column(k).dot(&refb.column(k)).abs().clamp(0.0, 1.0);
            rotation[k][i] = dot.acos();
        }
    }

    Ok(EigenTrack {
        gammas: gammas.to_vec(),
        sorted,
        curves,
        rotation,
        reference_index,
        ambiguous,
    })
}

/// Eigenvalue tracking of the duplicated-network Hessian along the line.
///
/// The reference for rotation angles is the grid point closest to 1/2.
pub fn track_eigen_curves(
    line: &SaddleLine,
    data: &Dataset,
    gammas: &[f64],
) -> Result<EigenTrack> {
    let mut hessians = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let net = line.at(g);
        hessians.push(net.loss_hessian(data)?);
    }
    let reference = gammas
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a - 0.5).abs().partial_cmp(&(*b - 0.5).abs()).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    track_matched_curves(&hessians, gammas, reference)
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    PosDef,
    NegDef,
    Indefinite,
}

/// The plateau-saddle stability matrix
/// `B = < a_j sigma''(<w_j, x>) x x^T dL/df >_D` of the neuron to duplicate,
/// with its definiteness verdict. Bias coordinates are folded into `x` as a
/// trailing constant when the network has biases.
pub fn fa_stability_matrix(
    net: &NetworkParams,
    data: &Dataset,
    neuron: usize,
) -> Result<(DMatrix<f64>, Definiteness)> {
    if net.hidden_layer_count() != 1 {
        return Err(Error::InvalidArgument(
            "stability matrix is defined for single-hidden-layer networks".into(),
        ));
    }
    let grad = net.loss_gradient(data)?;
    let glinf = grad.amax();
    if glinf >= 1e-7 {
        return Err(Error::NotCritical { grad_linf: glinf });
    }
    let d = net.input_dim();
    let dim = d + usize::from(net.has_bias);
    let n = data.len();
    let a_j = net.layers[1].weights[(0, neuron)];
    let mut b = DMatrix::zeros(dim, dim);
    let mut x = DVector::zeros(d);
    let mut xt = DVector::zeros(dim);
    for i in 0..n {
        data.copy_input_into(i, &mut x);
        let f = net.forward(&x)?;
        let dldf = 2.0 * (f - data.targets[i]);
        let mut z = net.layers[0].weights.row(neuron).transpose().dot(&x);
        if let Some(bias) = &net.layers[0].bias {
            z += bias[neuron];
        }
        let s2 = net.activation.d2(z);
        for k in 0..d {
            xt[k] = x[k];
        }
        if net.has_bias {
            xt[d] = 1.0;
        }
        let w = a_j * s2 * dldf / n as f64;
        for p in 0..dim {
            for q in p..dim {
                b[(p, q)] += w * xt[p] * xt[q];
            }
        }
    }
    for p in 0..dim {
        for q in (p + 1)..dim {
            b[(q, p)] = b[(p, q)];
        }
    }

    let eig = symmetric_eigen(&b)?;
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let verdict = if scale > 0.0 && eig.values.iter().all(|&v| v > tol) {
        Definiteness::PosDef
    } else if scale > 0.0 && eig.values.iter().all(|&v| v < -tol) {
        Definiteness::NegDef
    } else {
        Definiteness::Indefinite
    };
    Ok((b, verdict))
}

/// Canonical form of a single-hidden-layer network: odd activations get each
/// neuron sign-normalized (first nonzero input weight positive), then
/// neurons are sorted lexicographically by (input weights, bias, output
/// weight). Two networks are the same solution when canonical parameter
/// vectors differ by less than `SAME_SOLUTION_TOL` in L-infinity.
pub fn canonicalize(net: &NetworkParams) -> Result<NetworkParams> {
    if net.hidden_layer_count() != 1 {
        return Err(Error::InvalidArgument(
            "canonicalization is defined for single-hidden-layer networks".into(),
        ));
    }
    let r = net.hidden_width(0);
    let d = net.input_dim();
    let mut out = net.clone();

    if net.activation.is_odd() {
        for j in 0..r {
            let mut sign = 0.0;
            for k in 0..d {
                let v = out.layers[0].weights[(j, k)];
                if v != 0.0 {
                    sign = v.signum();
                    break;
                }
            }
            if sign == 0.0 {
                if let Some(b) = &out.layers[0].bias {
                    if b[j] != 0.0 {
                        sign = b[j].signum();
                    }
                }
            }
            if sign < 0.0 {
                for k in 0..d {
                    out.layers[0].weights[(j, k)] = -out.layers[0].weights[(j, k)];
                }
                if let Some(b) = &mut out.layers[0].bias {
                    b[j] = -b[j];
                }
                for row in 0..out.layers[1].weights.nrows() {
                    out.layers[1].weights[(row, j)] = -out.layers[1].weights[(row, j)];
                }
            }
        }
    }

    let mut keys: Vec<(usize, Vec<f64>)> = (0..r)
        .map(|j| {
            let mut key: Vec<f64> = (0..d).map(|k| out.layers[0].weights[(j, k)]).collect();
            if let Some(b) = &out.layers[0].bias {
                key.push(b[j]);
            }
            key.push(out.layers[1].weights[(0, j)]);
            (j, key)
        })
        .collect();
    keys.sort_by(|a, b| {
        a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)
    });

    let perm: Vec<usize> = keys.into_iter().map(|(j, _)| j).collect();
    Ok(apply_hidden_permutation(&out, 0, &perm))
}

/// Reorders the hidden neurons of a layer: row `k` of the result is row
/// `perm[k]` of the input (with matching bias entries and outgoing columns).
pub fn apply_hidden_permutation(
    net: &NetworkParams,
    layer: usize,
    perm: &[usize],
) -> NetworkParams {
    let mut out = net.clone();
    let w = &net.layers[layer].weights;
    for (new_i, &old_i) in perm.iter().enumerate() {
        for c in 0..w.ncols() {
            out.layers[layer].weights[(new_i, c)] = w[(old_i, c)];
        }
        if let (Some(nb), Some(ob)) = (&mut out.layers[layer].bias, &net.layers[layer].bias) {
            nb[new_i] = ob[old_i];
        }
        let nw = &net.layers[layer + 1].weights;
        for row in 0..nw.nrows() {
            out.layers[layer + 1].weights[(row, new_i)] = nw[(row, old_i)];
        }
    }
    out
}

/// True when the canonical parameter vectors coincide within
/// [`SAME_SOLUTION_TOL`].
pub fn same_solution(a: &NetworkParams, b: &NetworkParams) -> Result<bool> {
    if a.arch() != b.arch() {
        return Ok(false);
    }
    let ca = canonicalize(a)?.flatten();
    let cb = canonicalize(b)?.flatten();
    Ok((ca - cb).amax() < SAME_SOLUTION_TOL)
}

/// Plateau-saddle signature: some pair of same-layer hidden neurons has
/// (near-)equal input weight vectors, bias included.
pub fn has_duplicate_neurons(net: &NetworkParams, rel_tol: f64) -> bool {
    for layer in 0..net.hidden_layer_count() {
        let r = net.hidden_width(layer);
        for i in 0..r {
            let wi = net.input_weights_with_bias(layer, i);
            for j in (i + 1)..r {
                let wj = net.input_weights_with_bias(layer, j);
                let scale = wi.norm().max(wj.norm()).max(1.0);
                if (&wi - &wj).norm() <= rel_tol * scale {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use rand::{Rng, SeedableRng};

    fn small_net(seed: u64, act: ActivationKind, has_bias: bool) -> NetworkParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchDescriptor::new(vec![2, 3, 1], act, has_bias);
        let mut net = arch.zeros();
        let theta = DVector::from_fn(net.param_count(), |_, _| rng.gen_range(-1.0..1.0));
        net.set_from_flat(&theta).unwrap();
        net
    }

    fn small_data(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inputs = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5));
        let targets = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        Dataset::new(inputs, targets).unwrap()
    }

    #[test]
    fn duplication_splits_output_weights() {
        let mut net = ArchDescriptor::new(vec![2, 1, 1], ActivationKind::Softplus, false).zeros();
        net.layers[0].weights[(0, 0)] = 1.0;
        net.layers[0].weights[(0, 1)] = 2.0;
        net.layers[1].weights[(0, 0)] = 3.0;

        let half = duplicate_neuron(&net, 0, 0, 0.5).unwrap();
        assert_eq!(half.layers[0].weights.row(0), half.layers[0].weights.row(1));
        assert_eq!(half.layers[1].weights[(0, 0)], 1.5);
        assert_eq!(half.layers[1].weights[(0, 1)], 1.5);

        let silent = duplicate_neuron(&net, 0, 0, 0.0).unwrap();
        assert_eq!(silent.layers[1].weights[(0, 0)], 0.0);
        assert_eq!(silent.layers[1].weights[(0, 1)], 3.0);
    }

    #[test]
    fn duplication_preserves_function_and_loss() {
        let net = small_net(3, ActivationKind::Sigmoid4PlusSoftplus, true);
        let data = small_data(4, 12, 2);
        let base_loss = net.mse_loss(&data).unwrap();
        for &gamma in &[-1.0, 0.3, 2.0] {
            let dup = duplicate_neuron(&net, 0, 1, gamma).unwrap();
            for i in 0..data.len() {
                let x = data.input_row(i);
                let a = net.forward(&x).unwrap();
                let b = dup.forward(&x).unwrap();
                assert!((a - b).abs() < 1e-12, "gamma {gamma}: {a} vs {b}");
            }
            let dup_loss = dup.mse_loss(&data).unwrap();
            assert!((base_loss - dup_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn duplication_rejects_output_layer() {
        let net = small_net(1, ActivationKind::Softplus, false);
        assert!(matches!(
            duplicate_neuron(&net, 1, 0, 0.5),
            Err(Error::OutputLayerNeuron)
        ));
    }

    #[test]
    fn projected_gamma_inverts_the_line() {
        let gamma = 0.7;
        let a_star = 2.0;
        let got = projected_gamma(gamma * a_star, (1.0 - gamma) * a_star, a_star).unwrap();
        assert!((got - 0.7).abs() < 1e-15);
        let got = projected_gamma(5.0, -2.0, 3.0).unwrap();
        assert!((got - 10.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            projected_gamma(1.0, 2.0, 0.0),
            Err(Error::ZeroBaseOutputWeight)
        ));
    }

    #[test]
    fn line_direction_is_unit_and_in_output_slots() {
        let net = small_net(5, ActivationKind::Softplus, false);
        let line = SaddleLine::new(net, 0, 2).unwrap();
        let dir = line.direction();
        assert!((dir.norm() - 1.0).abs() < 1e-12);
        // only the two outgoing-weight slots move along the line
        let nonzero: Vec<usize> = (0..dir.len()).filter(|&i| dir[i].abs() > 1e-12).collect();
        assert_eq!(nonzero.len(), 2);
        assert!((dir[nonzero[0]] + dir[nonzero[1]]).abs() < 1e-12);
    }

    #[test]
    fn perturbation_moves_by_alpha() {
        let net = small_net(6, ActivationKind::Softplus, false);
        let data = small_data(7, 10, 2);
        let line = SaddleLine::new(net, 0, 0).unwrap();
        let alpha = 1e-3;
        let perturbed = perturb_along_eigvec(&line, &data, 0.4, alpha, true).unwrap();
        let dist = (perturbed.flatten() - line.at(0.4).flatten()).norm();
        assert!((dist - alpha).abs() < 1e-12);
        let zero = perturb_along_eigvec(&line, &data, 0.4, 0.0, true).unwrap();
        assert_eq!(zero.flatten(), line.at(0.4).flatten());
    }

    #[test]
    fn matched_curves_distinguish_crossing_from_avoided() {
        // analytic family H(g) = [[g, delta], [delta, -g]]
        let gammas = uniform_grid(-1.0, 1.0, 41);
        let family = |delta: f64| -> Vec<DMatrix<f64>> {
            gammas
                .iter()
                .map(|&g| DMatrix::from_row_slice(2, 2, &[g, delta, delta, -g]))
                .collect()
        };

        // true crossing: matched curves pass through zero linearly
        let track = track_matched_curves(&family(0.0), &gammas, 0).unwrap();
        let c0 = &track.curves[0];
        assert!(c0[0] * c0[c0.len() - 1] < 0.0, "curve crosses zero");
        // sorted spectrum kinks instead: min eigenvalue stays <= 0
        for (i, s) in track.sorted.iter().enumerate() {
            assert!(s[0] <= 1e-12, "sorted min at {i}");
        }

        // avoided crossing: matched curves keep their order, gap >= 2 delta
        let track = track_matched_curves(&family(0.05), &gammas, 0).unwrap();
        for i in 0..gammas.len() {
            let gap = track.curves[1][i] - track.curves[0][i];
            assert!(gap >= 2.0 * 0.05 - 1e-12, "gap {gap} at {i}");
        }
        // eigenvectors rotate by ~pi/2 across the avoided crossing
        let k = track.rotation[0].len() - 1;
        assert!(track.rotation[0][k] > 1.2, "rotation {}", track.rotation[0][k]);
    }

    #[test]
    fn matched_curves_are_permutation_of_sorted() {
        let net = small_net(8, ActivationKind::Softplus, false);
        let data = small_data(9, 14, 2);
        let line = SaddleLine::new(net, 0, 1).unwrap();
        let gammas = uniform_grid(-0.5, 1.5, 9);
        let track = track_eigen_curves(&line, &data, &gammas).unwrap();
        for i in 0..gammas.len() {
            let mut at_i: Vec<f64> = track.curves.iter().map(|c| c[i]).collect();
            at_i.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, v) in at_i.iter().enumerate() {
                assert!((v - track.sorted[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_family_has_flat_curves_and_zero_rotation() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5]);
        let gammas = uniform_grid(0.0, 1.0, 5);
        let hs: Vec<DMatrix<f64>> = (0..5).map(|_| h.clone()).collect();
        let track = track_matched_curves(&hs, &gammas, 2).unwrap();
        for k in 0..3 {
            for i in 0..5 {
                assert!((track.curves[k][i] - track.curves[k][0]).abs() < 1e-12);
                assert!(track.rotation[k][i] < 1e-7);
            }
        }
    }

    #[test]
    fn stability_matrix_zero_residual_is_indefinite() {
        // targets produced by the network itself: dL/df = 0 at every sample
        let net = small_net(11, ActivationKind::Softplus, false);
        let inputs = DMatrix::from_fn(9, 2, |i, j| 0.25 * (i as f64) - 0.4 * (j as f64));
        let targets = net
            .forward_batch(&Dataset::new(inputs.clone(), DVector::zeros(9)).unwrap())
            .unwrap();
        let data = Dataset::new(inputs, targets).unwrap();
        let (b, verdict) = fa_stability_matrix(&net, &data, 0).unwrap();
        assert!(b.amax() < 1e-12);
        assert_eq!(verdict, Definiteness::Indefinite);
        // symmetric by construction
        assert!((b.clone() - b.transpose()).amax() == 0.0);
    }

    #[test]
    fn stability_matrix_requires_critical_point() {
        let net = small_net(12, ActivationKind::Softplus, false);
        let data = small_data(13, 8, 2);
        assert!(matches!(
            fa_stability_matrix(&net, &data, 0),
            Err(Error::NotCritical { .. })
        ));
    }

    #[test]
    fn canonicalize_sorts_and_dedups_permutations() {
        let net = small_net(21, ActivationKind::Softplus, true);
        let canon = canonicalize(&net).unwrap();
        let twice = canonicalize(&canon).unwrap();
        assert_eq!(canon, twice);

        let swapped = apply_hidden_permutation(&net, 0, &[2, 0, 1]);
        assert!(same_solution(&net, &swapped).unwrap());
        assert_eq!(canonicalize(&swapped).unwrap(), canon);
    }

    #[test]
    fn canonicalize_erf_sign_flip_same_solution_same_function() {
        let net = small_net(22, ActivationKind::ErfScaled, false);
        let mut flipped = net.clone();
        for c in 0..2 {
            flipped.layers[0].weights[(1, c)] = -flipped.layers[0].weights[(1, c)];
        }
        flipped.layers[1].weights[(0, 1)] = -flipped.layers[1].weights[(0, 1)];
        assert!(same_solution(&net, &flipped).unwrap());
        // function equality oracle on random inputs
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let a = net.forward(&x).unwrap();
            let b = flipped.forward(&x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_detection_flags_equal_rows() {
        let mut net = small_net(23, ActivationKind::Softplus, false);
        assert!(!has_duplicate_neurons(&net, 1e-4));
        for c in 0..2 {
            let v = net.layers[0].weights[(0, c)];
            net.layers[0].weights[(1, c)] = v;
        }
        assert!(has_duplicate_neurons(&net, 1e-4));
    }
}
