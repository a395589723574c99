//! Ordered image attention.
//!
//! For every sentence index `s` and image `i` a belief over the `K` regions of
//! image `i` is formed from a local factor, a self message, and messages from
//! other images. Messages from preceding and subsequent images use separate
//! projection pairs, so the beliefs depend on image order. The region
//! belonging to the image that receives the message is always projected with
//! the left matrix.
//!
//! Sentence and image indices are 0-based.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceFeatures;
use crate::error::{Error, Result};
use crate::linalg::{add_outer, add_transpose_matvec, fan_in_uniform, relu, softmax, softmax_backward, Normalized};

/// Projection matrices of the interaction factors and weights of the local factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorWeights {
    pub fwd_left: Array2<f64>,
    pub fwd_right: Array2<f64>,
    pub bwd_left: Array2<f64>,
    pub bwd_right: Array2<f64>,
    pub self_left: Array2<f64>,
    pub self_right: Array2<f64>,
    pub local_proj: Array2<f64>,
    pub local_weights: Array1<f64>,
    /// Backward messages reuse the forward projections (`no-direction` ablation).
    pub tied: bool,
}

impl FactorWeights {
    pub fn zeros(d: usize) -> Self {
        let m = || Array2::zeros((d, d));
        FactorWeights {
            fwd_left: m(),
            fwd_right: m(),
            bwd_left: m(),
            bwd_right: m(),
            self_left: m(),
            self_right: m(),
            local_proj: m(),
            local_weights: Array1::zeros(d),
            tied: false,
        }
    }

    pub fn random<R: Rng>(d: usize, tied: bool, rng: &mut R) -> Self {
        let mut w = FactorWeights {
            fwd_left: fan_in_uniform(rng, d, d),
            fwd_right: fan_in_uniform(rng, d, d),
            bwd_left: fan_in_uniform(rng, d, d),
            bwd_right: fan_in_uniform(rng, d, d),
            self_left: fan_in_uniform(rng, d, d),
            self_right: fan_in_uniform(rng, d, d),
            local_proj: fan_in_uniform(rng, d, d),
            local_weights: fan_in_uniform(rng, 1, d).row(0).to_owned(),
            tied,
        };
        if tied {
            w.tie();
        }
        w
    }

    /// Switches to tied directions; the stored backward matrices become copies
    /// of the forward ones so checkpoints show what is used.
    pub fn tie(&mut self) {
        self.tied = true;
        self.bwd_left.assign(&self.fwd_left);
        self.bwd_right.assign(&self.fwd_right);
    }

    pub fn dim(&self) -> usize {
        self.local_weights.len()
    }

    /// Left/right projections applied to messages from preceding images.
    pub fn backward_pair(&self) -> (&Array2<f64>, &Array2<f64>) {
        if self.tied {
            (&self.fwd_left, &self.fwd_right)
        } else {
            (&self.bwd_left, &self.bwd_right)
        }
    }

    fn matrix(&self, role: Role) -> &Array2<f64> {
        match role {
            Role::FwdLeft => &self.fwd_left,
            Role::FwdRight => &self.fwd_right,
            Role::BwdLeft => self.backward_pair().0,
            Role::BwdRight => self.backward_pair().1,
            Role::SelfLeft => &self.self_left,
            Role::SelfRight => &self.self_right,
        }
    }

    /// Gradient slot for `role`; tied backward roles accumulate into the forward matrices.
    fn grad_matrix_mut(&mut self, role: Role, tied: bool) -> &mut Array2<f64> {
        match role {
            Role::FwdLeft => &mut self.fwd_left,
            Role::FwdRight => &mut self.fwd_right,
            Role::BwdLeft if tied => &mut self.fwd_left,
            Role::BwdRight if tied => &mut self.fwd_right,
            Role::BwdLeft => &mut self.bwd_left,
            Role::BwdRight => &mut self.bwd_right,
            Role::SelfLeft => &mut self.self_left,
            Role::SelfRight => &mut self.self_right,
        }
    }
}

/// Per-sentence calibration scalars. Row `s` of every array belongs to
/// sentence `s`:
/// - `local[s][i]`, `self_[s][i]`: local and self-message scalars of image `i`;
/// - `current_pair[s][j]`: scalar of the message from image `j` into image `s`;
/// - `neighbor_pair[s][i]`: scalar of the message from image `s` into image `i`.
///
/// Diagonals of the two pair arrays are unused and kept at zero, leaving
/// `4N - 2` live scalars per sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCalibration {
    pub local: Array2<f64>,
    pub self_: Array2<f64>,
    pub current_pair: Array2<f64>,
    pub neighbor_pair: Array2<f64>,
}

impl AttentionCalibration {
    pub fn filled(n: usize, value: f64) -> Self {
        let off_diag = Array2::from_shape_fn((n, n), |(a, b)| if a == b { 0.0 } else { value });
        AttentionCalibration {
            local: Array2::from_elem((n, n), value),
            self_: Array2::from_elem((n, n), value),
            current_pair: off_diag.clone(),
            neighbor_pair: off_diag,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::filled(n, 0.0)
    }

    pub fn n(&self) -> usize {
        self.local.nrows()
    }

    pub fn scalars_per_sentence(&self) -> usize {
        4 * self.n() - 2
    }

    /// Zeroes the unused diagonals (gradient containers, after updates).
    pub fn clear_unused(&mut self) {
        for x in 0..self.n() {
            self.current_pair[[x, x]] = 0.0;
            self.neighbor_pair[[x, x]] = 0.0;
        }
    }
}

/// Beliefs `b[s][i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps(pub Array3<f64>);

/// Attended image vectors `a[s][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedImages(pub Array3<f64>);

impl AttentionMaps {
    pub fn sentence(&self, s: usize) -> ArrayView2<'_, f64> {
        self.0.slice(s![s, .., ..])
    }
}

impl AttendedImages {
    pub fn sentence(&self, s: usize) -> ArrayView2<'_, f64> {
        self.0.slice(s![s, .., ..])
    }
}

/// `v^T ReLU(V r)`
pub fn local_factor(region: ArrayView1<f64>, weights: &FactorWeights) -> f64 {
    weights
        .local_proj
        .dot(&region)
        .iter()
        .zip(weights.local_weights.iter())
        .map(|(&z, &w)| w * relu(z))
        .sum()
}

/// Cosine between `left · target` and `right · source`; 0 if either projection vanishes.
pub fn interaction_factor(
    target: ArrayView1<f64>,
    source: ArrayView1<f64>,
    left: ArrayView2<f64>,
    right: ArrayView2<f64>,
) -> f64 {
    let l = Normalized::new(left.dot(&target));
    let r = Normalized::new(right.dot(&source));
    l.unit.dot(&r.unit)
}

/// Entry `k`: sum over source regions of the interaction factor with target region `k`.
pub fn message(
    target_regions: ArrayView2<f64>,
    source_regions: ArrayView2<f64>,
    left: ArrayView2<f64>,
    right: ArrayView2<f64>,
) -> Array1<f64> {
    let source_sum = unit_sum(source_regions, right);
    Array1::from_iter(
        target_regions
            .rows()
            .into_iter()
            .map(|t| Normalized::new(left.dot(&t)).unit.dot(&source_sum)),
    )
}

fn unit_sum(regions: ArrayView2<f64>, proj: ArrayView2<f64>) -> Array1<f64> {
    let mut sum = Array1::zeros(proj.nrows());
    for r in regions.rows() {
        sum += &Normalized::new(proj.dot(&r)).unit;
    }
    sum
}

/// Beliefs over regions of every image for sentence `s`, shape `N × K`.
pub fn attention_beliefs(
    features: &SequenceFeatures,
    s: usize,
    weights: &FactorWeights,
    calib: &AttentionCalibration,
) -> Result<Array2<f64>> {
    let n = features.n();
    if s >= n {
        return Err(Error::SentenceIndex { index: s, n });
    }
    check_calibration(features, calib)?;
    let forward = OiaForward::project(features, weights);
    Ok(forward.beliefs_for(s, calib))
}

/// `a_i = sum_k b[i][k] r[i][k]` for every image, shape `N × d`.
pub fn attended_representations(beliefs: ArrayView2<f64>, features: &SequenceFeatures) -> Array2<f64> {
    let mut out = Array2::zeros((features.n(), features.d()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&beliefs.row(i).dot(&features.image(i)));
    }
    out
}

/// Beliefs and attended vectors for every sentence index.
pub fn all_attention_maps(
    features: &SequenceFeatures,
    weights: &FactorWeights,
    calib: &AttentionCalibration,
) -> Result<(AttentionMaps, AttendedImages)> {
    check_calibration(features, calib)?;
    let forward = OiaForward::new(features, weights, calib);
    Ok((AttentionMaps(forward.beliefs), AttendedImages(forward.attended)))
}

fn check_calibration(features: &SequenceFeatures, calib: &AttentionCalibration) -> Result<()> {
    if calib.n() != features.n() || calib.local.ncols() != features.n() {
        return Err(Error::Shape(format!(
            "calibration is for {} images, features hold {}",
            calib.n(),
            features.n()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    FwdLeft,
    FwdRight,
    BwdLeft,
    BwdRight,
    SelfLeft,
    SelfRight,
}

const ROLES: [Role; 6] = [
    Role::FwdLeft,
    Role::FwdRight,
    Role::BwdLeft,
    Role::BwdRight,
    Role::SelfLeft,
    Role::SelfRight,
];

/// Projected, normalized regions for one role, `n × k × d`.
#[derive(Debug, Clone)]
struct Projection {
    unit: Array3<f64>,
    norm: Array2<f64>,
}

impl Projection {
    fn new(features: &SequenceFeatures, m: &Array2<f64>) -> Self {
        let (n, k, _) = features.regions().dim();
        let d = m.nrows();
        let mut unit = Array3::zeros((n, k, d));
        let mut norm = Array2::zeros((n, k));
        for i in 0..n {
            for r in 0..k {
                let p = Normalized::new(m.dot(&features.region(i, r)));
                unit.slice_mut(s![i, r, ..]).assign(&p.unit);
                norm[[i, r]] = p.norm;
            }
        }
        Projection { unit, norm }
    }

    fn unit(&self, i: usize, k: usize) -> ArrayView1<'_, f64> {
        self.unit.slice(s![i, k, ..])
    }

    /// Sum over regions of each image, `n × d`.
    fn sums(&self) -> Array2<f64> {
        self.unit.sum_axis(Axis(1))
    }
}

/// Cached forward pass of the attention over one sequence, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct OiaForward {
    proj: Vec<Projection>,
    sums: Vec<Array2<f64>>,
    local_pre: Array3<f64>,
    local: Array2<f64>,
    self_msg: Array2<f64>,
    /// `N × N × K`
    pub beliefs: Array3<f64>,
    /// `N × N × d`
    pub attended: Array3<f64>,
}

impl OiaForward {
    /// Sentence-independent part: projections, local factors, self messages.
    fn project(features: &SequenceFeatures, weights: &FactorWeights) -> Self {
        let (n, k, d) = features.regions().dim();
        let proj: Vec<Projection> = ROLES
            .iter()
            .map(|&role| Projection::new(features, weights.matrix(role)))
            .collect();
        let sums: Vec<Array2<f64>> = proj.iter().map(Projection::sums).collect();
        let mut local_pre = Array3::zeros((n, k, d));
        let mut local = Array2::zeros((n, k));
        let mut self_msg = Array2::zeros((n, k));
        let self_left = &proj[Role::SelfLeft as usize];
        let self_sums = &sums[Role::SelfRight as usize];
        for i in 0..n {
            for r in 0..k {
                let pre = weights.local_proj.dot(&features.region(i, r));
                local[[i, r]] = pre
                    .iter()
                    .zip(weights.local_weights.iter())
                    .map(|(&z, &w)| w * relu(z))
                    .sum();
                local_pre.slice_mut(s![i, r, ..]).assign(&pre);
                self_msg[[i, r]] = self_left.unit(i, r).dot(&self_sums.row(i));
            }
        }
        OiaForward {
            proj,
            sums,
            local_pre,
            local,
            self_msg,
            beliefs: Array3::zeros((n, n, k)),
            attended: Array3::zeros((n, n, d)),
        }
    }

    pub fn new(features: &SequenceFeatures, weights: &FactorWeights, calib: &AttentionCalibration) -> Self {
        let mut fwd = Self::project(features, weights);
        let n = features.n();
        for s in 0..n {
            let beliefs = fwd.beliefs_for(s, calib);
            let attended = attended_representations(beliefs.view(), features);
            fwd.beliefs.slice_mut(s![s, .., ..]).assign(&beliefs);
            fwd.attended.slice_mut(s![s, .., ..]).assign(&attended);
        }
        fwd
    }

    fn p(&self, role: Role) -> &Projection {
        &self.proj[role as usize]
    }

    fn sum(&self, role: Role, image: usize) -> ArrayView1<'_, f64> {
        self.sums[role as usize].row(image)
    }

    /// Incoming pair messages for image `i` under sentence `s` as
    /// `(left role, source image, scalar)`.
    fn incoming(s: usize, i: usize, n: usize, calib: &AttentionCalibration) -> Vec<(Role, Role, usize, f64)> {
        use std::cmp::Ordering::*;
        match i.cmp(&s) {
            Equal => (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let (l, r) = if j < i {
                        (Role::BwdLeft, Role::BwdRight)
                    } else {
                        (Role::FwdLeft, Role::FwdRight)
                    };
                    (l, r, j, calib.current_pair[[s, j]])
                })
                .collect(),
            Less => vec![(Role::BwdLeft, Role::BwdRight, s, calib.neighbor_pair[[s, i]])],
            Greater => vec![(Role::FwdLeft, Role::FwdRight, s, calib.neighbor_pair[[s, i]])],
        }
    }

    fn logits(&self, s: usize, i: usize, calib: &AttentionCalibration) -> Array1<f64> {
        let n = self.local.nrows();
        let k = self.local.ncols();
        let mut logits = &self.local.row(i) * calib.local[[s, i]] + &self.self_msg.row(i) * calib.self_[[s, i]];
        for (left, right, j, alpha) in Self::incoming(s, i, n, calib) {
            let src = self.sum(right, j);
            let lp = self.p(left);
            for r in 0..k {
                logits[r] += alpha * lp.unit(i, r).dot(&src);
            }
        }
        logits
    }

    fn beliefs_for(&self, s: usize, calib: &AttentionCalibration) -> Array2<f64> {
        let n = self.local.nrows();
        let k = self.local.ncols();
        let mut out = Array2::zeros((n, k));
        for i in 0..n {
            out.row_mut(i).assign(&softmax(self.logits(s, i, calib).view()));
        }
        out
    }

    /// Accumulates parameter gradients given `d_attended` (`N × N × d`) and
    /// returns the gradient with respect to the input regions.
    pub fn backward(
        &self,
        features: &SequenceFeatures,
        weights: &FactorWeights,
        calib: &AttentionCalibration,
        d_attended: ArrayView3<f64>,
        grad_w: &mut FactorWeights,
        grad_c: &mut AttentionCalibration,
    ) -> Array3<f64> {
        let (n, k, d) = features.regions().dim();
        let mut d_regions = Array3::<f64>::zeros((n, k, d));
        let mut d_local = Array2::<f64>::zeros((n, k));
        let mut d_self = Array2::<f64>::zeros((n, k));
        let mut d_unit: Vec<Array3<f64>> = ROLES.iter().map(|_| Array3::zeros((n, k, d))).collect();
        let mut d_sum: Vec<Array2<f64>> = ROLES.iter().map(|_| Array2::zeros((n, d))).collect();

        for s in 0..n {
            for i in 0..n {
                let da = d_attended.slice(s![s, i, ..]);
                if da.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let b = self.beliefs.slice(s![s, i, ..]);
                let image = features.image(i);
                let d_b = image.dot(&da);
                for r in 0..k {
                    d_regions.slice_mut(s![i, r, ..]).scaled_add(b[r], &da);
                }
                let d_logit = softmax_backward(b, d_b.view());

                grad_c.local[[s, i]] += d_logit.dot(&self.local.row(i));
                d_local.row_mut(i).scaled_add(calib.local[[s, i]], &d_logit);
                grad_c.self_[[s, i]] += d_logit.dot(&self.self_msg.row(i));
                d_self.row_mut(i).scaled_add(calib.self_[[s, i]], &d_logit);

                for (left, right, j, alpha) in Self::incoming(s, i, n, calib) {
                    let src = self.sum(right, j);
                    let lp = self.p(left);
                    let mut d_alpha = 0.0;
                    let mut d_src = Array1::<f64>::zeros(d);
                    for r in 0..k {
                        let g = d_logit[r];
                        if g == 0.0 {
                            continue;
                        }
                        let u = lp.unit(i, r);
                        d_alpha += g * u.dot(&src);
                        d_unit[left as usize].slice_mut(s![i, r, ..]).scaled_add(g * alpha, &src);
                        d_src.scaled_add(g * alpha, &u);
                    }
                    if i == s {
                        grad_c.current_pair[[s, j]] += d_alpha;
                    } else {
                        grad_c.neighbor_pair[[s, i]] += d_alpha;
                    }
                    d_sum[right as usize].row_mut(j).scaled_add(1.0, &d_src);
                }
            }
        }

        // Self messages.
        let self_left = self.p(Role::SelfLeft);
        for i in 0..n {
            let src = self.sum(Role::SelfRight, i);
            for r in 0..k {
                let g = d_self[[i, r]];
                if g == 0.0 {
                    continue;
                }
                d_unit[Role::SelfLeft as usize].slice_mut(s![i, r, ..]).scaled_add(g, &src);
                d_sum[Role::SelfRight as usize].row_mut(i).scaled_add(g, &self_left.unit(i, r));
            }
        }

        // Region sums fan out to every region of the image.
        for (role_idx, sums) in d_sum.iter().enumerate() {
            for i in 0..n {
                for r in 0..k {
                    d_unit[role_idx].slice_mut(s![i, r, ..]).scaled_add(1.0, &sums.row(i));
                }
            }
        }

        // Through normalization and projection.
        for &role in &ROLES {
            let m = weights.matrix(role);
            let p = self.p(role);
            let du = &d_unit[role as usize];
            let grad_m = grad_w.grad_matrix_mut(role, weights.tied);
            for i in 0..n {
                for r in 0..k {
                    let norm = p.norm[[i, r]];
                    if norm == 0.0 {
                        continue;
                    }
                    let g = du.slice(s![i, r, ..]);
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let u = p.unit(i, r);
                    let d_pre = (&g - &(&u * u.dot(&g))) / norm;
                    add_outer(grad_m.view_mut(), 1.0, d_pre.view(), features.region(i, r));
                    add_transpose_matvec(d_regions.slice_mut(s![i, r, ..]), m.view(), d_pre.view());
                }
            }
        }

        // Local factor.
        for i in 0..n {
            for r in 0..k {
                let g = d_local[[i, r]];
                if g == 0.0 {
                    continue;
                }
                let pre = self.local_pre.slice(s![i, r, ..]);
                let mut d_pre = Array1::<f64>::zeros(d);
                for c in 0..d {
                    if pre[c] > 0.0 {
                        grad_w.local_weights[c] += g * pre[c];
                        d_pre[c] = g * weights.local_weights[c];
                    }
                }
                add_outer(grad_w.local_proj.view_mut(), 1.0, d_pre.view(), features.region(i, r));
                add_transpose_matvec(d_regions.slice_mut(s![i, r, ..]), weights.local_proj.view(), d_pre.view());
            }
        }
        grad_c.clear_unused();
        d_regions
    }
}
