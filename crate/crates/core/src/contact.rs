//! Contact point extraction: select tracked object points inside the
//! inter-finger region at contact, back-project them to the pre-contact
//! frame, and fit an isotropic Gaussian mixture whose mean-of-means is the
//! contact point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelPoint;

/// Variance floor, px^2. Duplicate points would otherwise drive a component
/// variance to zero and the likelihood to infinity.
pub const SIGMA_FLOOR_SQ: f64 = 0.25;

/// EM stops once the per-point log-likelihood gain drops below this.
pub const EM_TOL_PER_POINT: f64 = 1e-8;

pub const EM_MAX_ITERS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("finger region vertices are collinear")]
    DegenerateRegion,
    #[error("{n} points cannot support {k} mixture components")]
    TooFewPoints { n: usize, k: usize },
}

/// One tracked object point across the pre-contact and contact frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub id: u32,
    pub pos_pre: PixelPoint,
    pub pos_contact: PixelPoint,
    pub visible_contact: bool,
}

/// The dilated fingertip triangle (thumb, index, middle) in the contact frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerRegion {
    pub vertices: [PixelPoint; 3],
    pub dilation: f64,
}

/// Isotropic 2D mixture fitted over back-projected contact points.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub means: Vec<[f64; 2]>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.means.len()
    }
}

fn triangle_area2(v: &[PixelPoint; 3]) -> f64 {
    ((v[1].u - v[0].u) * (v[2].v - v[0].v) - (v[2].u - v[0].u) * (v[1].v - v[0].v)).abs()
}

fn point_segment_dist2d(p: &PixelPoint, a: &PixelPoint, b: &PixelPoint) -> f64 {
    let abu = b.u - a.u;
    let abv = b.v - a.v;
    let len2 = abu * abu + abv * abv;
    if len2 < 1e-18 {
        return p.dist(a);
    }
    let t = (((p.u - a.u) * abu + (p.v - a.v) * abv) / len2).clamp(0.0, 1.0);
    let proj = PixelPoint::new(a.u + t * abu, a.v + t * abv);
    p.dist(&proj)
}

/// Distance from a point to a triangle: zero inside, else the distance to the
/// nearest edge.
pub fn point_triangle_dist(p: &PixelPoint, v: &[PixelPoint; 3]) -> f64 {
    let sign = |a: &PixelPoint, b: &PixelPoint| (b.u - a.u) * (p.v - a.v) - (b.v - a.v) * (p.u - a.u);
    let d0 = sign(&v[0], &v[1]);
    let d1 = sign(&v[1], &v[2]);
    let d2 = sign(&v[2], &v[0]);
    let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
    let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
    if !(has_neg && has_pos) {
        return 0.0;
    }
    point_segment_dist2d(p, &v[0], &v[1])
        .min(point_segment_dist2d(p, &v[1], &v[2]))
        .min(point_segment_dist2d(p, &v[2], &v[0]))
}

/// Returns `pos_pre` of every visible track whose contact-frame position lies
/// within `region.dilation` px of the fingertip triangle, in input order.
pub fn points_in_finger_region(
    tracks: &[TrackedPoint],
    region: &FingerRegion,
) -> Result<Vec<PixelPoint>, ContactError> {
    if triangle_area2(&region.vertices) <= 2e-6 {
        return Err(ContactError::DegenerateRegion);
    }
    Ok(tracks
        .iter()
        .filter(|t| t.visible_contact)
        .filter(|t| point_triangle_dist(&t.pos_contact, &region.vertices) <= region.dilation)
        .map(|t| t.pos_pre)
        .collect())
}

fn lex_cmp(a: &PixelPoint, b: &PixelPoint) -> std::cmp::Ordering {
    a.u.partial_cmp(&b.u)
        .unwrap()
        .then(a.v.partial_cmp(&b.v).unwrap())
}

/// Log of the isotropic 2D normal density.
fn log_normal2(p: &PixelPoint, mean: &[f64; 2], var: f64) -> f64 {
    let du = p.u - mean[0];
    let dv = p.v - mean[1];
    -(du * du + dv * dv) / (2.0 * var) - (2.0 * std::f64::consts::PI * var).ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fits a k-component isotropic GMM with EM.
///
/// Points are canonicalized to lexicographic order first, so the fit is
/// invariant to input permutation. Initialization is farthest-point seeding:
/// the seed indexes the first center in canonical order, each further center
/// is the point farthest from those already chosen.
pub fn fit_gmm(points: &[PixelPoint], k: usize, seed: u64) -> Result<GmmParams, ContactError> {
    assert!(k >= 1, "component count must be at least 1");
    let n = points.len();
    if n < k {
        return Err(ContactError::TooFewPoints { n, k });
    }
    let mut pts = points.to_vec();
    pts.sort_by(lex_cmp);

    // Farthest-point seeding.
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(k);
    let first = &pts[(seed % n as u64) as usize];
    centers.push([first.u, first.v]);
    while centers.len() < k {
        let (mut best_i, mut best_d) = (0usize, -1.0f64);
        for (i, p) in pts.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| {
                    let du = p.u - c[0];
                    let dv = p.v - c[1];
                    du * du + dv * dv
                })
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best_i = i;
            }
        }
        centers.push([pts[best_i].u, pts[best_i].v]);
    }

    let mut means = centers;
    let mut variances = vec![1.0f64.max(SIGMA_FLOOR_SQ); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0f64; n * k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;

    for _ in 0..EM_MAX_ITERS {
        // E-step.
        ll = 0.0;
        let mut log_terms = vec![0.0f64; k];
        for (i, p) in pts.iter().enumerate() {
            for j in 0..k {
                log_terms[j] = weights[j].ln() + log_normal2(p, &means[j], variances[j]);
            }
            let denom = log_sum_exp(&log_terms);
            ll += denom;
            for j in 0..k {
                resp[i * k + j] = (log_terms[j] - denom).exp();
            }
        }
        assert!(
            ll >= prev_ll - 1e-9 * n as f64,
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        if ll - prev_ll < EM_TOL_PER_POINT * n as f64 {
            break;
        }
        prev_ll = ll;

        // M-step with isotropic variance and a floor.
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nj < 1e-12 {
                continue;
            }
            let mu_u: f64 = (0..n).map(|i| resp[i * k + j] * pts[i].u).sum::<f64>() / nj;
            let mu_v: f64 = (0..n).map(|i| resp[i * k + j] * pts[i].v).sum::<f64>() / nj;
            let ss: f64 = (0..n)
                .map(|i| {
                    let du = pts[i].u - mu_u;
                    let dv = pts[i].v - mu_v;
                    resp[i * k + j] * (du * du + dv * dv)
                })
                .sum();
            means[j] = [mu_u, mu_v];
            variances[j] = (ss / (2.0 * nj)).max(SIGMA_FLOOR_SQ);
            weights[j] = nj / n as f64;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    Ok(GmmParams { means, variances, weights, log_likelihood: ll })
}

/// The contact point: the unweighted average of the component means.
pub fn contact_point(gmm: &GmmParams) -> PixelPoint {
    let k = gmm.k() as f64;
    let (su, sv) = gmm
        .means
        .iter()
        .fold((0.0, 0.0), |(su, sv), m| (su + m[0], sv + m[1]));
    PixelPoint::new(su / k, sv / k)
}
