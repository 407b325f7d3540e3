//! Channels to infinity: pair reparameterization, the gated-linear-unit
//! limit, channel detection and grouping, parallel-update diagnostics, the
//! jump procedure, and slope-law fits.
//!
//! A neuron pair `(a_i, w_i), (a_j, w_j)` is rewritten in the coordinates
//! `w = (w_i + w_j)/2`, `eps = ||w_i - w_j||/2`, `Delta = (w_i - w_j)/||.||`,
//! `a = eps (a_i - a_j)`, `c = a_i + a_j`. The pair output is then a central
//! finite difference that converges to
//! `c sigma(<w,x>) + a <Delta,x> sigma'(<w,x>)` as eps -> 0.
//!
//! When the network has biases, the bias acts as one more input-weight
//! coordinate against a constant input of 1; all pair coordinates here
//! include it.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::flow::{integrate_gradient_flow, FlowConfig, FlowResult, MseSystem};
use crate::net::{Dataset, NetworkParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default channel-detection thresholds.
pub const NORM_THRESHOLD: f64 = 1e3;
pub const COS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PairReparam {
    /// Mean input vector (bias coordinate included when present).
    pub w: DVector<f64>,
    /// Half distance between the input vectors; zero marks an exact duplicate.
    pub eps: f64,
    /// Unit difference direction; zeros when `eps == 0`.
    pub delta: DVector<f64>,
    /// `eps * (a_i - a_j)`.
    pub a: f64,
    /// `a_i + a_j`.
    pub c: f64,
    /// Source neuron indices.
    pub source: (usize, usize),
}

pub fn reparam_pair(
    a_i: f64,
    a_j: f64,
    w_i: &DVector<f64>,
    w_j: &DVector<f64>,
    source: (usize, usize),
) -> PairReparam {
    let w = 0.5 * (w_i + w_j);
    let diff = w_i - w_j;
    let norm = diff.norm();
    let eps = 0.5 * norm;
    let delta = if norm > 0.0 { diff / norm } else { DVector::zeros(w_i.len()) };
    PairReparam { w, eps, delta, a: eps * (a_i - a_j), c: a_i + a_j, source }
}

/// Exact inverse of [`reparam_pair`]; requires `eps > 0`.
pub fn inverse_reparam(rp: &PairReparam) -> Result<(f64, f64, DVector<f64>, DVector<f64>)> {
    if rp.eps <= 0.0 {
        return Err(Error::InverseAtZeroEps);
    }
    let w_i = &rp.w + rp.eps * &rp.delta;
    let w_j = &rp.w - rp.eps * &rp.delta;
    let half_diff = rp.a / rp.eps;
    let a_i = 0.5 * (rp.c + half_diff);
    let a_j = 0.5 * (rp.c - half_diff);
    Ok((a_i, a_j, w_i, w_j))
}

/// Output of the pair in its reparameterized (finite-eps) form.
pub fn pair_output(rp: &PairReparam, x: &DVector<f64>, act: ActivationKind) -> f64 {
    let zp = (&rp.w + rp.eps * &rp.delta).dot(x);
    let zm = (&rp.w - rp.eps * &rp.delta).dot(x);
    0.5 * rp.c * (act.value(zp) + act.value(zm))
        + 0.5 * rp.a / rp.eps * (act.value(zp) - act.value(zm))
}

/// The gated-linear-unit limit `c sigma(<w,x>) + a <Delta,x> sigma'(<w,x>)`.
pub fn glu_limit_output(
    c: f64,
    a: f64,
    w: &DVector<f64>,
    delta: &DVector<f64>,
    x: &DVector<f64>,
    act: ActivationKind,
) -> f64 {
    let z = w.dot(x);
    c * act.value(z) + a * delta.dot(x) * act.d1(z)
}

/// Leading output correction
/// `f2 = (c/2)<Delta,x>^2 sigma''(<w,x>) + (a/6)<Delta,x>^3 sigma'''(<w,x>)`.
pub fn glu_second_order_output(
    c: f64,
    a: f64,
    w: &DVector<f64>,
    delta: &DVector<f64>,
    x: &DVector<f64>,
    act: ActivationKind,
) -> f64 {
    let z = w.dot(x);
    let dx = delta.dot(x);
    0.5 * c * dx * dx * act.d2(z) + a / 6.0 * dx * dx * dx * act.d3(z)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsExpansion {
    /// Fitted exponent of `log |L(eps) - L(0)|` vs `log eps`.
    pub exponent: Option<f64>,
    /// Direct evaluation of the quadratic coefficient `h(theta_0; D)`.
    pub h_direct: f64,
    /// `[L(eps) - L(0)] / eps^2` at the smallest eps in the list.
    pub quad_coeff_at_smallest: f64,
    /// Set when `L(eps) < L(0)` for every eps (the h < 0 case).
    pub all_negative: bool,
}

/// Compares the loss of a two-neuron pair at finite eps against its eps -> 0
/// limit, holding `(c, a, w, Delta)` fixed.
pub fn eps_expansion_check(
    c: f64,
    a: f64,
    w: &DVector<f64>,
    delta: &DVector<f64>,
    data: &Dataset,
    act: ActivationKind,
    eps_list: &[f64],
) -> Result<EpsExpansion> {
    if eps_list.is_empty() || eps_list.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidArgument("eps list must be positive".into()));
    }
    if eps_list.windows(2).any(|p| p[0] <= p[1]) {
        return Err(Error::InvalidArgument("eps list must be decreasing".into()));
    }
    let n = data.len();
    let mut x = DVector::zeros(data.dim());

    // limit loss and h(theta_0; D) in one sweep
    let mut loss0 = 0.0;
    let mut h_direct = 0.0;
    for i in 0..n {
        data.copy_input_into(i, &mut x);
        let f0 = glu_limit_output(c, a, w, delta, &x, act);
        let f2 = glu_second_order_output(c, a, w, delta, &x, act);
        let res = f0 - data.targets[i];
        loss0 += res * res;
        h_direct += 2.0 * f2 * res;
    }
    loss0 /= n as f64;
    h_direct /= n as f64;

    let mut diffs = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let rp = PairReparam {
            w: w.clone(),
            eps,
            delta: delta.clone(),
            a,
            c,
            source: (0, 1),
        };
        let mut loss = 0.0;
        for i in 0..n {
            data.copy_input_into(i, &mut x);
            let res = pair_output(&rp, &x, act) - data.targets[i];
            loss += res * res;
        }
        loss /= n as f64;
        diffs.push(loss - loss0);
    }

    let all_negative = diffs.iter().all(|&d| d < 0.0);
    let pts: Vec<(f64, f64)> = eps_list
        .iter()
        .zip(&diffs)
        .filter(|(_, &d)| d != 0.0)
        .map(|(&e, &d)| (e.ln(), d.abs().ln()))
        .collect();
    let exponent = if pts.len() >= 2 { Some(linear_fit_slope(&pts)) } else { None };
    let smallest = *eps_list.last().unwrap();
    Ok(EpsExpansion {
        exponent,
        h_direct,
        quad_coeff_at_smallest: diffs.last().unwrap() / (smallest * smallest),
        all_negative,
    })
}

fn linear_fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Cosine distance between two input-weight vectors.
pub fn cosine_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 2.0;
    }
    1.0 - a.dot(b) / (na * nb)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuronGroup {
    pub layer: usize,
    pub indices: Vec<usize>,
    pub min_cosdist: f64,
    /// Sum of absolute outgoing weights over the group (L2 norm of the
    /// outgoing column per neuron).
    pub sum_abs_out: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelReport {
    pub is_channel: bool,
    pub final_param_norm: f64,
    pub min_cosdist: f64,
    /// `(layer, i, j)` of the closest pair, lexicographically-smallest on ties.
    pub closest_pair: Option<(usize, usize, usize)>,
    /// Single-linkage groups at the cosine threshold, size >= 2.
    pub groups: Vec<NeuronGroup>,
    /// Fraction of each recorded update parallel to the saddle-line
    /// subspace; filled by [`parallel_update_fraction`].
    pub parallel_fraction: Vec<f64>,
    /// Slope-law exponent fit, when a channel was followed.
    pub slope_exponent: Option<f64>,
    pub norm_threshold: f64,
    pub cos_threshold: f64,
}

/// Channel verdict for a converged parameter vector: a run is a channel when
/// the parameter norm exceeds `norm_threshold` and some same-layer pair of
/// input-weight vectors has cosine distance below `cos_threshold`.
pub fn detect_channels(
    net: &NetworkParams,
    norm_threshold: f64,
    cos_threshold: f64,
) -> ChannelReport {
    let pnorm = net.flatten().norm();
    let mut min_cosdist = f64::INFINITY;
    let mut closest = None;
    let mut groups = Vec::new();

    for layer in 0..net.hidden_layer_count() {
        let r = net.hidden_width(layer);
        let ws: Vec<DVector<f64>> = (0..r)
            .map(|j| net.input_weights_with_bias(layer, j))
            .collect();
        let mut dist = DMatrix::from_element(r, r, f64::INFINITY);
        for i in 0..r {
            for j in (i + 1)..r {
                let cd = cosine_distance(&ws[i], &ws[j]);
                dist[(i, j)] = cd;
                dist[(j, i)] = cd;
                if cd < min_cosdist {
                    min_cosdist = cd;
                    closest = Some((layer, i, j));
                }
            }
        }
        // single-linkage components of the graph {cosdist < threshold}
        let mut comp: Vec<usize> = (0..r).collect();
        fn find(comp: &mut Vec<usize>, i: usize) -> usize {
            let mut root = i;
            while comp[root] != root {
                root = comp[root];
            }
            let mut cur = i;
            while comp[cur] != root {
                let next = comp[cur];
                comp[cur] = root;
                cur = next;
            }
            root
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if dist[(i, j)] < cos_threshold {
                    let (ri, rj) = (find(&mut comp, i), find(&mut comp, j));
                    if ri != rj {
                        comp[rj] = ri;
                    }
                }
            }
        }
        let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..r {
            members.entry(find(&mut comp, i)).or_default().push(i);
        }
        for (_, indices) in members {
            if indices.len() < 2 {
                continue;
            }
            let mut gmin = f64::INFINITY;
            for (k, &i) in indices.iter().enumerate() {
                for &j in &indices[k + 1..] {
                    gmin = gmin.min(dist[(i, j)]);
                }
            }
            let sum_abs_out = indices
                .iter()
                .map(|&j| net.outgoing_weights(layer, j).norm())
                .sum();
            groups.push(NeuronGroup { layer, indices, min_cosdist: gmin, sum_abs_out });
        }
    }

    ChannelReport {
        is_channel: pnorm > norm_threshold && min_cosdist < cos_threshold,
        final_param_norm: pnorm,
        min_cosdist,
        closest_pair: closest,
        groups,
        parallel_fraction: Vec::new(),
        slope_exponent: None,
        norm_threshold,
        cos_threshold,
    }
}

/// Scatter statistics for a converged run: minimum cosine distance between
/// input weights and the summed absolute output weights of that pair.
pub fn channel_scatter_stats(net: &NetworkParams) -> (f64, f64) {
    let report = detect_channels(net, NORM_THRESHOLD, COS_THRESHOLD);
    match report.closest_pair {
        Some((layer, i, j)) => {
            let s = net.outgoing_weights(layer, i).norm() + net.outgoing_weights(layer, j).norm();
            (report.min_cosdist, s)
        }
        None => (f64::INFINITY, 0.0),
    }
}

/// Saddle-line subspace directions of a detected group: for `k` grouped
/// neurons, the `k-1` antisymmetric output-weight directions spanned by
/// consecutive pairs, weighted by the recovered base output weight.
pub fn group_directions(net: &NetworkParams, group: &NeuronGroup) -> Vec<DVector<f64>> {
    let p = net.param_count();
    let offsets = net.layer_offsets();
    let next = group.layer + 1;
    let ncols = net.layers[next].weights.ncols();
    let mut dirs = Vec::new();
    for pair in group.indices.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        let mut v: DVector<f64> = DVector::zeros(p);
        for row in 0..net.layers[next].weights.nrows() {
            let a_star = net.layers[next].weights[(row, i)] + net.layers[next].weights[(row, j)];
            v[offsets[next] + row * ncols + i] += a_star;
            v[offsets[next] + row * ncols + j] -= a_star;
        }
        let n = v.norm();
        if n > 0.0 {
            dirs.push(v / n);
        }
    }
    dirs
}

/// Per-recorded-step fraction of the parameter update lying in the span of
/// `directions`. Zero-norm updates are skipped.
pub fn parallel_update_fraction(
    updates: &[DVector<f64>],
    directions: &[DVector<f64>],
) -> Vec<f64> {
    // orthonormalize the direction set
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for d in directions {
        let mut v = d.clone();
        for b in &basis {
            let proj = v.dot(b);
            v.axpy(-proj, b, 1.0);
        }
        let n = v.norm();
        if n > 1e-12 {
            basis.push(v / n);
        }
    }
    let mut out = Vec::new();
    for u in updates {
        let norm = u.norm();
        if norm == 0.0 {
            continue;
        }
        let mut proj_sq = 0.0;
        for b in &basis {
            let p = u.dot(b);
            proj_sq += p * p;
        }
        out.push((proj_sq.sqrt() / norm).min(1.0));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpRecord {
    pub iteration: usize,
    pub eps: f64,
    pub loss: f64,
    pub c: f64,
    pub a: f64,
    pub cos_delta_w: f64,
    /// RMS over the training inputs of |pair output - GLU limit output|.
    pub glu_error: f64,
    pub param_norm: f64,
}

#[derive(Debug, Clone)]
pub struct JumpOutcome {
    pub records: Vec<JumpRecord>,
    pub final_net: NetworkParams,
    /// Set when relaxation failed and a partial sequence was returned.
    pub diverged: bool,
}

fn pair_coords(net: &NetworkParams, layer: usize, i: usize, j: usize) -> PairReparam {
    let a_i = net.layers[layer + 1].weights[(0, i)];
    let a_j = net.layers[layer + 1].weights[(0, j)];
    let w_i = net.input_weights_with_bias(layer, i);
    let w_j = net.input_weights_with_bias(layer, j);
    reparam_pair(a_i, a_j, &w_i, &w_j, (i, j))
}

fn write_pair_coords(
    net: &mut NetworkParams,
    layer: usize,
    rp: &PairReparam,
) -> Result<()> {
    let (a_i, a_j, w_i, w_j) = inverse_reparam(rp)?;
    let (i, j) = rp.source;
    let d = net.layers[layer].weights.ncols();
    for k in 0..d {
        net.layers[layer].weights[(i, k)] = w_i[k];
        net.layers[layer].weights[(j, k)] = w_j[k];
    }
    if let Some(b) = &mut net.layers[layer].bias {
        b[i] = w_i[d];
        b[j] = w_j[d];
    }
    net.layers[layer + 1].weights[(0, i)] = a_i;
    net.layers[layer + 1].weights[(0, j)] = a_j;
    Ok(())
}

fn jump_diagnostics(
    net: &NetworkParams,
    data: &Dataset,
    layer: usize,
    i: usize,
    j: usize,
    iteration: usize,
) -> Result<JumpRecord> {
    let rp = pair_coords(net, layer, i, j);
    let act = net.activation;
    let n = data.len();
    let mut err_sq = 0.0;
    let d_raw = data.dim();
    let include_bias = net.has_bias;
    let mut xt = DVector::zeros(d_raw + usize::from(include_bias));
    let mut x = DVector::zeros(d_raw);
    for s in 0..n {
        data.copy_input_into(s, &mut x);
        for k in 0..d_raw {
            xt[k] = x[k];
        }
        if include_bias {
            xt[d_raw] = 1.0;
        }
        let pair = pair_output(&rp, &xt, act);
        let limit = glu_limit_output(rp.c, rp.a, &rp.w, &rp.delta, &xt, act);
        err_sq += (pair - limit) * (pair - limit);
    }
    let glu_error = (err_sq / n as f64).sqrt();
    Ok(JumpRecord {
        iteration,
        eps: rp.eps,
        loss: net.mse_loss(data)?,
        c: rp.c,
        a: rp.a,
        cos_delta_w: 1.0 - cosine_distance(&rp.delta, &rp.w),
        glu_error,
        param_norm: net.flatten().norm(),
    })
}

/// Advances along a channel by alternating eps halving with a fixed budget
/// of relaxation flow (200 accepted steps per halving). The max-norm stop is
/// disabled during relaxation since output weights legitimately diverge.
pub fn jump_procedure(
    net: &NetworkParams,
    data: &Dataset,
    layer: usize,
    pair: (usize, usize),
    halvings: usize,
    flow_cfg: &FlowConfig,
) -> Result<JumpOutcome> {
    jump_procedure_with_budget(net, data, layer, pair, halvings, flow_cfg, 200)
}

/// [`jump_procedure`] with an explicit relaxation budget in accepted steps.
#[allow(clippy::too_many_arguments)]
pub fn jump_procedure_with_budget(
    net: &NetworkParams,
    data: &Dataset,
    layer: usize,
    pair: (usize, usize),
    halvings: usize,
    flow_cfg: &FlowConfig,
    relax_steps: usize,
) -> Result<JumpOutcome> {
    if net.layers[layer + 1].weights.nrows() != 1 {
        return Err(Error::InvalidArgument(
            "jump procedure requires a scalar next layer".into(),
        ));
    }
    let (i, j) = pair;
    let mut relax = flow_cfg.clone();
    relax.max_steps = relax_steps;
    relax.maxnorm = f64::INFINITY;
    relax.patience = usize::MAX;

    let mut current = net.clone();
    let mut records = vec![jump_diagnostics(&current, data, layer, i, j, 0)?];
    let mut diverged = false;

    for it in 1..=halvings {
        let mut rp = pair_coords(&current, layer, i, j);
        if rp.eps <= 0.0 {
            break;
        }
        rp.eps *= 0.5;
        write_pair_coords(&mut current, layer, &rp)?;

        let mut system = MseSystem::new(&current.arch(), data);
        match integrate_gradient_flow(&mut system, &current.flatten(), &relax) {
            Ok(res) => {
                current.set_from_flat(&res.final_theta)?;
                records.push(jump_diagnostics(&current, data, layer, i, j, it)?);
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    Ok(JumpOutcome { records, final_net: current, diverged })
}

/// Fits `log |dL/d(a_i - a_j)|` against `log eps` along a recorded series;
/// the channel theory predicts slope 3.
pub fn slope_law_fit(points: &[(f64, f64, f64)]) -> Result<f64> {
    // points: (eps, loss, a_i - a_j)
    let mut eps_sorted: Vec<f64> = points.iter().map(|p| p.0).collect();
    eps_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_sorted.dedup_by(|a, b| a == b);
    if eps_sorted.len() < 4 {
        return Err(Error::DegenerateFit("need at least 4 distinct eps values".into()));
    }
    let span = eps_sorted.last().unwrap() / eps_sorted.first().unwrap();
    if span < 10.0 {
        return Err(Error::DegenerateFit(format!(
            "insufficient decade coverage (span {span:.2})"
        )));
    }
    let mut pts = Vec::new();
    for w in points.windows(2) {
        let (e0, l0, d0) = w[0];
        let (e1, l1, d1) = w[1];
        let dl = l1 - l0;
        let dd = d1 - d0;
        if dl == 0.0 || dd == 0.0 {
            continue;
        }
        let slope = dl / dd;
        let eps_mid = (e0 * e1).sqrt();
        pts.push((eps_mid.ln(), slope.abs().ln()));
    }
    if pts.len() < 2 {
        return Err(Error::DegenerateFit("loss series is constant".into()));
    }
    Ok(linear_fit_slope(&pts))
}

/// Replaces the pair by a single neuron with the averaged input weights and
/// summed output weight (the parent-line merge heuristic).
pub fn merge_channel_pair(
    net: &NetworkParams,
    layer: usize,
    pair: (usize, usize),
) -> Result<NetworkParams> {
    let (i, j) = pair;
    let r = net.hidden_width(layer);
    if i >= r || j >= r || i == j {
        return Err(Error::InvalidArgument(format!("invalid pair ({i}, {j})")));
    }
    let (keep, drop) = (i.min(j), i.max(j));
    let mut out = net.clone();

    let w = &net.layers[layer].weights;
    let mut merged = DMatrix::zeros(r - 1, w.ncols());
    let mut row_out = 0;
    for row in 0..r {
        if row == drop {
            continue;
        }
        for cidx in 0..w.ncols() {
            merged[(row_out, cidx)] = if row == keep {
                0.5 * (w[(keep, cidx)] + w[(drop, cidx)])
            } else {
                w[(row, cidx)]
            };
        }
        row_out += 1;
    }
    out.layers[layer].weights = merged;
    if let Some(b) = &net.layers[layer].bias {
        let mut nb = DVector::zeros(r - 1);
        let mut row_out = 0;
        for row in 0..r {
            if row == drop {
                continue;
            }
            nb[row_out] = if row == keep { 0.5 * (b[keep] + b[drop]) } else { b[row] };
            row_out += 1;
        }
        out.layers[layer].bias = Some(nb);
    }

    let nw = &net.layers[layer + 1].weights;
    let mut next = DMatrix::zeros(nw.nrows(), r - 1);
    for row in 0..nw.nrows() {
        let mut col_out = 0;
        for col in 0..r {
            if col == drop {
                continue;
            }
            next[(row, col_out)] = if col == keep {
                nw[(row, keep)] + nw[(row, drop)]
            } else {
                nw[(row, col)]
            };
            col_out += 1;
        }
    }
    out.layers[layer + 1].weights = next;
    Ok(out)
}

/// Searches for parent saddle-line candidates: merge the pair, retrain
/// briefly, and verify that re-duplication reproduces a critical line.
pub fn merge_retrain_candidates(
    net: &NetworkParams,
    data: &Dataset,
    report: &ChannelReport,
    flow_cfg: &FlowConfig,
) -> Vec<NetworkParams> {
    let mut out = Vec::new();
    for group in &report.groups {
        for pair in group.indices.windows(2) {
            let Ok(merged) = merge_channel_pair(net, group.layer, (pair[0], pair[1])) else {
                continue;
            };
            let mut cfg = flow_cfg.clone();
            cfg.max_steps = 500;
            let mut sys = MseSystem::new(&merged.arch(), data);
            if let Ok(res) = integrate_gradient_flow(&mut sys, &merged.flatten(), &cfg) {
                if let Ok(trained) = NetworkParams::from_flat(&merged.arch(), &res.final_theta) {
                    out.push(trained);
                }
            }
        }
    }
    out
}

/// Orthonormal axes of the three-neuron hierarchy.
pub fn three_neuron_basis() -> [DVector<f64>; 3] {
    let s3 = 3.0f64.sqrt();
    let s2 = std::f64::consts::SQRT_2;
    let s6 = 6.0f64.sqrt();
    [
        DVector::from_vec(vec![1.0 / s3, 1.0 / s3, 1.0 / s3]),
        DVector::from_vec(vec![1.0 / s2, 0.0, -1.0 / s2]),
        DVector::from_vec(vec![1.0 / s6, -2.0 / s6, 1.0 / s6]),
    ]
}

/// The eps -> 0 limit of a three-neuron group carrying a second derivative:
/// `sqrt(3) a0 sigma(<o0,x>/sqrt3) + [a1 <o1,x> + a2 <o2,x>] sigma'(<o0,x>/sqrt3)
///  + (1/(2 sqrt6)) a2 <o1,x>^2 sigma''(<o0,x>/sqrt3)`.
///
/// The sigma'' coefficient is `(1/2) <u_2, u_1 u_1>` with the orthonormal
/// basis of [`three_neuron_basis`]; elementwise, `u_1 u_1 = (1/2, 0, 1/2)`
/// and `<u_2, u_1 u_1> = 1/sqrt(6)`, fixed by the finite-eps convergence
/// check below.
pub fn multi_neuron_limit_output(
    alpha: [f64; 3],
    omega: [&DVector<f64>; 3],
    x: &DVector<f64>,
    act: ActivationKind,
) -> f64 {
    let s3 = 3.0f64.sqrt();
    let s6 = 6.0f64.sqrt();
    let z = omega[0].dot(x) / s3;
    let o1x = omega[1].dot(x);
    let o2x = omega[2].dot(x);
    s3 * alpha[0] * act.value(z)
        + (alpha[1] * o1x + alpha[2] * o2x) * act.d1(z)
        + alpha[2] / (2.0 * s6) * o1x * o1x * act.d2(z)
}

/// Companion map: the finite-eps three-neuron network realizing the
/// hierarchy `eps^rho omega_rho = <W, u_rho>`, `eps^{-rho} alpha_rho = <u_rho, a>`.
pub fn three_neuron_finite_eps(
    alpha: [f64; 3],
    omega: [&DVector<f64>; 3],
    eps: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let u = three_neuron_basis();
    let d = omega[0].len();
    let mut w = DMatrix::zeros(3, d);
    let mut a = DVector::zeros(3);
    for (rho, (om, al)) in omega.iter().zip(alpha.iter()).enumerate() {
        let scale_w = eps.powi(rho as i32);
        let scale_a = eps.powi(-(rho as i32));
        for i in 0..3 {
            for k in 0..d {
                w[(i, k)] += scale_w * u[rho][i] * om[k];
            }
            a[i] += scale_a * al * u[rho][i];
        }
    }
    (w, a)
}

/// Output of an explicit three-neuron single-hidden-layer group.
pub fn three_neuron_output(
    w: &DMatrix<f64>,
    a: &DVector<f64>,
    x: &DVector<f64>,
    act: ActivationKind,
) -> f64 {
    let mut out = 0.0;
    for i in 0..3 {
        let z = w.row(i).transpose().dot(x);
        out += a[i] * act.value(z);
    }
    out
}

/// Per-trajectory series passed to [`slope_law_fit`] from a recorded flow:
/// extracts `(eps, loss, a_i - a_j)` for a fixed pair at each snapshot.
pub fn slope_series_from_snapshots(
    arch: &crate::net::ArchDescriptor,
    result: &FlowResult,
    data: &Dataset,
    layer: usize,
    pair: (usize, usize),
) -> Result<Vec<(f64, f64, f64)>> {
    let mut series = Vec::new();
    let mut scratch = arch.zeros();
    for (_, theta) in &result.snapshots {
        scratch.set_from_flat(theta)?;
        let rp = pair_coords(&scratch, layer, pair.0, pair.1);
        let a_i = scratch.layers[layer + 1].weights[(0, pair.0)];
        let a_j = scratch.layers[layer + 1].weights[(0, pair.1)];
        series.push((rp.eps, scratch.mse_loss(data)?, a_i - a_j));
    }
    Ok(series)
}
