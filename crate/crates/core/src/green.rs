//! Green functions of the massive operator and the decay, Harnack and
//! convolution estimates built on them.

use rustdct::DctPlanner;
use serde::{Deserialize, Serialize};

use crate::corrector::green_values;
use crate::error::{Error, Result};
use crate::fit::ScalingFit;
use crate::lattice::{distances_from, gradient, EdgeField, NodeField, TorusLattice};
use crate::solver::{apply_operator, OperatorSpec, SolverOptions};

/// Torus side required per unit of `sqrt T` before wrap-around is ignored.
pub const WRAP_FACTOR: f64 = 8.0;

/// Far-field exponent `k` of the decay envelope.
pub const DEFAULT_DECAY_EXPONENT: f64 = 3.0;

/// Largest grid (in `f64` entries) the convolution evaluator will allocate.
pub const CONVOLUTION_ENTRY_LIMIT: usize = 200_000_000;

/// `G_T(., pole)`.
#[derive(Debug, Clone)]
pub struct GreenFunction {
    pub pole: usize,
    pub time: f64,
    pub values: NodeField,
}

impl GreenFunction {
    pub fn lattice(&self) -> &TorusLattice {
        self.values.lattice()
    }

    /// `|T^{-1} sum_x G_T(x, y) - 1|`
    pub fn mass_defect(&self) -> f64 {
        (self.values.sum() / self.time - 1.0).abs()
    }

    pub fn is_positive(&self) -> bool {
        self.values.values().iter().all(|v| *v > 0.0)
    }

    /// `|G_T(x, y) - G_T(y, x)|` for `self = G_T(., y)` and `other = G_T(., x)`.
    pub fn symmetry_gap(&self, other: &GreenFunction) -> f64 {
        (self.values.values()[other.pole] - other.values.values()[self.pole]).abs()
    }
}

/// Solves `(T^{-1} - div* A grad) G = delta_y`.
pub fn green_function(a: &EdgeField, time: f64, pole: usize) -> Result<GreenFunction> {
    green_function_with(a, time, pole, SolverOptions::default())
}

pub fn green_function_with(a: &EdgeField, time: f64, pole: usize, opts: SolverOptions) -> Result<GreenFunction> {
    if !(time > 0.0 && time.is_finite()) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {time}")));
    }
    if pole >= a.lattice().num_sites() {
        return Err(Error::InvalidArgument(format!("pole {pole} outside the lattice")));
    }
    Ok(GreenFunction {
        pole,
        time,
        values: green_values(a, time, pole, opts)?,
    })
}

/// `mu_d(T)`: `ln T` in two dimensions, `1` above.
pub fn log_factor(dim: usize, time: f64) -> f64 {
    if dim == 2 {
        time.ln()
    } else {
        1.0
    }
}

/// Pointwise envelope `g_T(r)` with far-field exponent `k`.
///
/// In two dimensions it is defined for `r <= sqrt(T)/2` and `r >= sqrt(T)`
/// only; `None` in the crossover band.
pub fn decay_envelope(dim: usize, time: f64, r: f64, k: f64) -> Option<f64> {
    let st = time.sqrt();
    let far = if r > st { (r / st).powf(-k) } else { 1.0 };
    if dim > 2 {
        Some((1.0 + r).powf(2.0 - dim as f64) * far)
    } else if r <= 0.5 * st {
        Some((st / (1.0 + r)).ln())
    } else if r >= st {
        Some(far)
    } else {
        None
    }
}

/// One dyadic annulus `R_lo < |x - y| <= R_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub r_lo: f64,
    pub r_hi: f64,
    pub sites: usize,
    /// Smallest distance actually present in the annulus.
    pub r_near: f64,
    pub sup_g: f64,
    /// `(R^{-d} sum G^2)^{1/2}` with `R = max(R_lo, 1)`.
    pub l2_g: f64,
    /// `(R^{-d} sum |grad G|^2)^{1/2}`.
    pub l2_grad_g: f64,
    /// `g_T(r_near)`.
    pub envelope: Option<f64>,
    /// `sup_g / envelope`.
    pub ratio: Option<f64>,
    /// `l2_g / envelope`.
    pub l2_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub dim: usize,
    pub time: f64,
    pub exponent: f64,
    pub rows: Vec<DecayRow>,
}

impl DecayProfile {
    /// `R_lo, R_hi, sup_G, l2_G, l2_gradG, envelope, ratio`; empty cells for
    /// the excluded band.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("R_lo,R_hi,sup_G,l2_G,l2_gradG,envelope,ratio\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{},{}\n",
                r.r_lo,
                r.r_hi,
                r.sup_g,
                r.l2_g,
                r.l2_grad_g,
                opt(r.envelope),
                opt(r.ratio)
            ));
        }
        out
    }

    /// Rows with an envelope whose annulus starts at or beyond `r_min` and
    /// ends at or below `r_max`.
    pub fn rows_within(&self, r_min: f64, r_max: f64) -> impl Iterator<Item = &DecayRow> {
        self.rows
            .iter()
            .filter(move |r| r.envelope.is_some() && r.r_lo >= r_min && r.r_hi <= r_max)
    }
}

fn check_wrap(lat: &TorusLattice, time: f64) -> Result<()> {
    let need = WRAP_FACTOR * time.sqrt();
    if (lat.side() as f64) < need {
        return Err(Error::Sizing(format!(
            "torus side {} below {WRAP_FACTOR} sqrt(T) = {need:.1}",
            lat.side()
        )));
    }
    Ok(())
}

/// Dyadic radii `0, 1, 2, 4, ...` up to half the torus side.
fn dyadic_edges(side: usize) -> Vec<f64> {
    let mut edges = vec![0.0, 1.0];
    let half = side as f64 / 2.0;
    while 2.0 * edges[edges.len() - 1] <= half {
        let next = 2.0 * edges[edges.len() - 1];
        edges.push(next);
    }
    edges
}

struct AnnulusStats {
    sites: usize,
    r_near: f64,
    sup: f64,
    sum_sq: f64,
    grad_sq: f64,
}

fn annulus_stats(g: &GreenFunction) -> Vec<(f64, f64, AnnulusStats)> {
    let lat = *g.lattice();
    let dist = distances_from(&lat, g.pole);
    let grad = gradient(&g.values);
    let edges = dyadic_edges(lat.side());
    let mut rows: Vec<(f64, f64, AnnulusStats)> = edges
        .windows(2)
        .map(|w| {
            (
                w[0],
                w[1],
                AnnulusStats {
                    sites: 0,
                    r_near: f64::INFINITY,
                    sup: 0.0,
                    sum_sq: 0.0,
                    grad_sq: 0.0,
                },
            )
        })
        .collect();
    let vals = g.values.values();
    for (x, &r) in dist.iter().enumerate() {
        // first row is the closed ball of radius 1
        let slot = if r <= 1.0 {
            0
        } else {
            match rows.iter().position(|(lo, hi, _)| r > *lo && r <= *hi) {
                Some(k) => k,
                None => continue,
            }
        };
        let s = &mut rows[slot].2;
        s.sites += 1;
        s.r_near = s.r_near.min(r);
        s.sup = s.sup.max(vals[x]);
        s.sum_sq += vals[x] * vals[x];
        s.grad_sq += grad.at(x).iter().map(|v| v * v).sum::<f64>();
    }
    rows.retain(|(_, _, s)| s.sites > 0);
    rows
}

/// Per-annulus statistics of `G_T` against `g_T` with exponent `k`.
pub fn decay_profile(g: &GreenFunction, k: f64) -> Result<DecayProfile> {
    let lat = *g.lattice();
    check_wrap(&lat, g.time)?;
    let d = lat.dim();
    let rows = annulus_stats(g)
        .into_iter()
        .map(|(lo, hi, s)| {
            let norm = lo.max(1.0).powi(d as i32);
            let l2_g = (s.sum_sq / norm).sqrt();
            let envelope = decay_envelope(d, g.time, s.r_near, k).filter(|e| *e > 0.0);
            DecayRow {
                r_lo: lo,
                r_hi: hi,
                sites: s.sites,
                r_near: s.r_near,
                sup_g: s.sup,
                l2_g,
                l2_grad_g: (s.grad_sq / norm).sqrt(),
                envelope,
                ratio: envelope.map(|e| s.sup / e),
                l2_ratio: envelope.map(|e| l2_g / e),
            }
        })
        .collect();
    Ok(DecayProfile {
        dim: d,
        time: g.time,
        exponent: k,
        rows,
    })
}

/// `sum_{annulus} |grad G|^2` against the reference `R^{2-d}` (`d > 2`) or
/// `min(1, sqrt(T)/R)^2` (`d = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub r_lo: f64,
    pub r_hi: f64,
    pub energy: f64,
    pub reference: f64,
    pub ratio: f64,
}

pub fn gradient_annuli_norms(g: &GreenFunction) -> Result<Vec<GradientRow>> {
    let lat = *g.lattice();
    check_wrap(&lat, g.time)?;
    let d = lat.dim();
    Ok(annulus_stats(g)
        .into_iter()
        .map(|(lo, hi, s)| {
            let r = lo.max(1.0);
            let reference = if d > 2 {
                r.powf(2.0 - d as f64)
            } else {
                (g.time.sqrt() / r).min(1.0).powi(2)
            };
            GradientRow {
                r_lo: lo,
                r_hi: hi,
                energy: s.grad_sq,
                reference,
                ratio: s.grad_sq / reference,
            }
        })
        .collect())
}

/// `sum_{|x - y| <= R} |grad G|^2`
pub fn near_gradient_energy(g: &GreenFunction, radius: f64) -> f64 {
    let lat = *g.lattice();
    let dist = distances_from(&lat, g.pole);
    let grad = gradient(&g.values);
    dist.iter()
        .enumerate()
        .filter(|(_, r)| **r <= radius)
        .map(|(x, _)| grad.at(x).iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `sup_{R < |x| <= 2R} g / (R^{-d} sum_{R/2 < |x| <= 4R} g^2)^{1/2}` after
/// checking that `g >= 0` and `-div* A grad g <= 0` on the outer annulus.
///
/// The subsolution test allows a slack of `1e-8 max|A| max|g|` for solver
/// residuals.
pub fn harnack_ratio(a: &EdgeField, g: &NodeField, center: usize, radius: f64) -> Result<f64> {
    let lat = *a.lattice();
    lat.check_same(g.lattice());
    if !(radius > 0.0) || 4.0 * radius >= lat.side() as f64 / 2.0 {
        return Err(Error::Sizing(format!(
            "Harnack radius {radius} needs 4R < n/2 = {}",
            lat.side() as f64 / 2.0
        )));
    }
    let dist = distances_from(&lat, center);
    let lg = apply_operator(&OperatorSpec::new(a.clone(), 0.0)?, g);
    let slack = 1e-8 * a.max() * g.norm_inf();
    let mut sup: f64 = 0.0;
    let mut sum_sq = 0.0;
    for (x, &r) in dist.iter().enumerate() {
        if !(r > 0.5 * radius && r <= 4.0 * radius) {
            continue;
        }
        let v = g.values()[x];
        if v < 0.0 {
            return Err(Error::SubsolutionViolation {
                site: x,
                reason: format!("negative value {v:e}"),
            });
        }
        let l = lg.values()[x];
        if l > slack {
            return Err(Error::SubsolutionViolation {
                site: x,
                reason: format!("-div A grad g = {l:e} > 0"),
            });
        }
        sum_sq += v * v;
        if r > radius && r <= 2.0 * radius {
            sup = sup.max(v);
        }
    }
    let avg = (sum_sq / radius.powi(lat.dim() as i32)).sqrt();
    if avg == 0.0 {
        return Ok(0.0);
    }
    Ok(sup / avg)
}

/// Gradient envelope `h_T(r) = (1 + r)^{1-d} min(1, sqrt(T)/r)`.
pub fn gradient_envelope(dim: usize, time: f64, r: f64) -> f64 {
    let cut = if r > 0.0 { (time.sqrt() / r).min(1.0) } else { 1.0 };
    (1.0 + r).powf(1.0 - dim as f64) * cut
}

/// Weight used inside the convolution: the envelope of [`decay_envelope`]
/// with `k = 3`, the two-dimensional logarithm carried across the crossover
/// band and clipped at zero.
fn convolution_weight(dim: usize, time: f64, r: f64) -> f64 {
    let st = time.sqrt();
    if dim == 2 && r <= st {
        (st / (1.0 + r)).ln().max(0.0)
    } else if dim == 2 {
        (r / st).powi(-3)
    } else {
        decay_envelope(dim, time, r, 3.0).unwrap_or(0.0)
    }
}

/// `sum_z g_T(z) sum_w h_T(w) h_T(z - w)` over `|z|, |w| <= c sqrt(T)`,
/// computed exactly on the lattice with a separable DCT-I on the even octant.
pub fn convolution_sum(dim: usize, time: f64, truncation_factor: f64) -> Result<f64> {
    if truncation_factor < WRAP_FACTOR {
        return Err(Error::Sizing(format!(
            "truncation factor {truncation_factor} below {WRAP_FACTOR}"
        )));
    }
    if dim < 2 || !(time > 0.0) {
        return Err(Error::InvalidArgument("convolution needs d >= 2 and T > 0".into()));
    }
    let rt = (truncation_factor * time.sqrt()).ceil() as usize;
    // period 2N must exceed 3 R_t so that wrapped copies miss |z| <= R_t
    let n = (3 * rt) / 2 + 2;
    let len = n + 1;
    let entries = len
        .checked_pow(dim as u32)
        .filter(|e| *e <= CONVOLUTION_ENTRY_LIMIT)
        .ok_or(Error::SizeExceeded {
            sites: len.saturating_pow(dim as u32),
            limit: CONVOLUTION_ENTRY_LIMIT,
        })?;

    let radius = |idx: usize| -> f64 {
        let mut r2 = 0usize;
        let mut k = idx;
        for _ in 0..dim {
            let c = k % len;
            r2 += c * c;
            k /= len;
        }
        (r2 as f64).sqrt()
    };
    let rtf = rt as f64;
    let mut h: Vec<f64> = (0..entries)
        .map(|k| {
            let r = radius(k);
            if r <= rtf {
                gradient_envelope(dim, time, r)
            } else {
                0.0
            }
        })
        .collect();

    let mut planner = DctPlanner::new();
    let dct = planner.plan_dct1(len);
    let transform = |data: &mut Vec<f64>| {
        let mut line = vec![0.0; len];
        let mut scratch = vec![0.0; dct.get_scratch_len()];
        for axis in 0..dim {
            let stride = len.pow(axis as u32);
            let block = stride * len;
            for base in (0..entries).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[start + j * stride];
                    }
                    dct.process_dct1_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
        }
    };
    transform(&mut h);
    h.iter_mut().for_each(|v| *v *= *v);
    transform(&mut h);
    // unnormalized DCT-I: circular self-convolution = (4/N)^d DCT(DCT(h)^2)
    let norm = (4.0 / n as f64).powi(dim as i32);

    let mut total = 0.0;
    for (k, hh) in h.iter().enumerate() {
        let r = radius(k);
        if r > rtf {
            continue;
        }
        let mut mult = 1.0;
        let mut idx = k;
        for _ in 0..dim {
            if idx % len != 0 {
                mult *= 2.0;
            }
            idx /= len;
        }
        total += mult * convolution_weight(dim, time, r) * hh * norm;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionScaling {
    pub dim: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: ScalingFit,
}

/// Evaluates [`convolution_sum`] along a ladder of times, one at a time to
/// bound peak memory, and fits the log-log slope.
pub fn convolution_scaling(dim: usize, times: &[f64], truncation_factor: f64) -> Result<ConvolutionScaling> {
    let values = times
        .iter()
        .map(|&t| convolution_sum(dim, t, truncation_factor))
        .collect::<Result<Vec<_>>>()?;
    let fit = ScalingFit::power_law(times, &values)?;
    Ok(ConvolutionScaling {
        dim,
        times: times.to_vec(),
        values,
        fit,
    })
}
