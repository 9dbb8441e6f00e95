//! Periodic lattice geometry and discrete calculus.
//!
//! Sites of the torus `Z^d / nZ^d` are stored row-major with the last
//! coordinate running fastest. The canonical edge `(x, i)` is the bond
//! `[x, x + e_i]`; edge-indexed data lives at `x * d + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The periodic box `Z^d / nZ^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusLattice {
    dim: usize,
    side: usize,
}

impl TorusLattice {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Sizing("dimension must be at least 1".into()));
        }
        if side < 2 {
            return Err(Error::Sizing(format!("side length {side} is below 2")));
        }
        let sites = (side as u128).checked_pow(dim as u32);
        match sites {
            Some(s) if s.saturating_mul(dim as u128) < usize::MAX as u128 / 8 => {}
            _ => return Err(Error::Sizing(format!("{side}^{dim} sites overflow"))),
        }
        Ok(Self { dim, side })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.dim * self.num_sites()
    }

    /// Index distance between sites differing by one step in direction `i`.
    #[inline]
    pub fn stride(&self, i: usize) -> usize {
        self.side.pow((self.dim - 1 - i) as u32)
    }

    #[inline]
    pub fn coord(&self, site: usize, i: usize) -> usize {
        (site / self.stride(i)) % self.side
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        (0..self.dim).map(|i| self.coord(site, i)).collect()
    }

    /// Site index of a coordinate vector; coordinates are reduced mod `n`.
    pub fn index(&self, coords: &[usize]) -> usize {
        assert_eq!(coords.len(), self.dim, "coordinate arity");
        coords.iter().fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// Site index of a signed coordinate vector, wrapped onto the torus.
    pub fn index_signed(&self, coords: &[i64]) -> usize {
        let n = self.side as i64;
        let wrapped: Vec<usize> = coords.iter().map(|&c| c.rem_euclid(n) as usize).collect();
        self.index(&wrapped)
    }

    /// `x + e_i`
    #[inline]
    pub fn forward(&self, site: usize, i: usize) -> usize {
        let s = self.stride(i);
        if self.coord(site, i) == self.side - 1 {
            site - (self.side - 1) * s
        } else {
            site + s
        }
    }

    /// `x - e_i`
    #[inline]
    pub fn backward(&self, site: usize, i: usize) -> usize {
        let s = self.stride(i);
        if self.coord(site, i) == 0 {
            site + (self.side - 1) * s
        } else {
            site - s
        }
    }

    /// All `2d` neighbours of a site (forward then backward per direction).
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        (0..self.dim)
            .flat_map(|i| [self.forward(site, i), self.backward(site, i)])
            .collect()
    }

    /// Minimal-image displacement `x - y`, each component in `(-n/2, n/2]`.
    pub fn displacement(&self, x: usize, y: usize) -> Vec<i64> {
        let n = self.side as i64;
        (0..self.dim)
            .map(|i| {
                let k = (self.coord(x, i) as i64 - self.coord(y, i) as i64).rem_euclid(n);
                if 2 * k > n {
                    k - n
                } else {
                    k
                }
            })
            .collect()
    }

    /// Minimal-image Euclidean distance.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.displacement(x, y)
            .iter()
            .map(|&k| (k * k) as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Reflection `x -> -x mod n`.
    pub fn reflect(&self, site: usize) -> usize {
        let c: Vec<i64> = self.coords(site).iter().map(|&k| -(k as i64)).collect();
        self.index_signed(&c)
    }

    pub(crate) fn check_same(&self, other: &TorusLattice) {
        assert_eq!(self, other, "fields live on different lattices");
    }
}

/// One real per site.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    lattice: TorusLattice,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(lattice: TorusLattice) -> Self {
        Self::constant(lattice, 0.0)
    }

    pub fn constant(lattice: TorusLattice, c: f64) -> Self {
        Self {
            lattice,
            values: vec![c; lattice.num_sites()],
        }
    }

    pub fn from_values(lattice: TorusLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.num_sites() {
            return Err(Error::Sizing(format!(
                "node field needs {} values, got {}",
                lattice.num_sites(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at site {pos}")));
        }
        Ok(Self { lattice, values })
    }

    pub fn from_fn(lattice: TorusLattice, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            lattice,
            values: (0..lattice.num_sites()).map(f).collect(),
        }
    }

    /// Unit mass at `site`.
    pub fn delta(lattice: TorusLattice, site: usize) -> Self {
        let mut f = Self::zeros(lattice);
        f.values[site] = 1.0;
        f
    }

    #[inline]
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        crate::reduce::sum(&self.values)
    }

    /// Spatial average over the torus.
    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Counting inner product `sum_x u(x) v(x)`.
    pub fn dot(&self, other: &NodeField) -> f64 {
        self.lattice.check_same(&other.lattice);
        crate::reduce::dot(&self.values, &other.values)
    }

    /// Spatial-average inner product `n^{-d} sum_x u(x) v(x)`.
    pub fn avg_dot(&self, other: &NodeField) -> f64 {
        self.dot(other) / self.values.len() as f64
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &NodeField) -> NodeField {
        self.lattice.check_same(&other.lattice);
        NodeField {
            lattice: self.lattice,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> NodeField {
        NodeField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    /// Subtract the spatial mean in place.
    pub fn remove_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }
}

/// One real per canonical edge `(x, i)`, stored at `x * d + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    lattice: TorusLattice,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn constant(lattice: TorusLattice, c: f64) -> Self {
        Self {
            lattice,
            values: vec![c; lattice.num_edges()],
        }
    }

    pub fn from_values(lattice: TorusLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.num_edges() {
            return Err(Error::Sizing(format!(
                "edge field needs {} values, got {}",
                lattice.num_edges(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at edge {pos}")));
        }
        Ok(Self { lattice, values })
    }

    #[inline]
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, site: usize, dir: usize) -> f64 {
        self.values[site * self.lattice.dim + dir]
    }

    #[inline]
    pub fn set(&mut self, site: usize, dir: usize, value: f64) {
        self.values[site * self.lattice.dim + dir] = value;
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The `d` forward differences at every site, stored at `x * d + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldAtSites {
    lattice: TorusLattice,
    values: Vec<f64>,
}

impl VectorFieldAtSites {
    pub fn zeros(lattice: TorusLattice) -> Self {
        Self {
            lattice,
            values: vec![0.0; lattice.num_edges()],
        }
    }

    pub fn from_values(lattice: TorusLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.num_edges() {
            return Err(Error::Sizing(format!(
                "vector field needs {} values, got {}",
                lattice.num_edges(),
                values.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    #[inline]
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, site: usize, dir: usize) -> f64 {
        self.values[site * self.lattice.dim + dir]
    }

    /// Row `x`: `(F_1(x), ..., F_d(x))`.
    pub fn at(&self, site: usize) -> &[f64] {
        let d = self.lattice.dim;
        &self.values[site * d..(site + 1) * d]
    }

    /// `sum_x F(x) . G(x)`
    pub fn dot(&self, other: &VectorFieldAtSites) -> f64 {
        self.lattice.check_same(&other.lattice);
        crate::reduce::dot(&self.values, &other.values)
    }

    /// Componentwise product with edge weights, `A F`.
    pub fn weighted(&self, a: &EdgeField) -> VectorFieldAtSites {
        self.lattice.check_same(a.lattice());
        VectorFieldAtSites {
            lattice: self.lattice,
            values: self.values.iter().zip(a.values()).map(|(f, w)| f * w).collect(),
        }
    }
}

/// Forward differences `grad_i u(x) = u(x + e_i) - u(x)`.
pub fn gradient(u: &NodeField) -> VectorFieldAtSites {
    let lat = *u.lattice();
    let d = lat.dim();
    let mut out = vec![0.0; lat.num_edges()];
    for x in 0..lat.num_sites() {
        for i in 0..d {
            out[x * d + i] = u.values[lat.forward(x, i)] - u.values[x];
        }
    }
    VectorFieldAtSites {
        lattice: lat,
        values: out,
    }
}

/// Backward divergence `(div* F)(x) = sum_i F_i(x) - F_i(x - e_i)`.
///
/// With this sign convention `sum_x grad u . F = -sum_x u div* F`, so
/// `-div* A grad` is the nonnegative elliptic operator.
pub fn divergence(f: &VectorFieldAtSites) -> NodeField {
    let lat = *f.lattice();
    let d = lat.dim();
    let mut out = vec![0.0; lat.num_sites()];
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += f.values[x * d + i] - f.values[lat.backward(x, i) * d + i];
        }
        *o = acc;
    }
    NodeField {
        lattice: lat,
        values: out,
    }
}

/// Profile used by [`mask_eta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskProfile {
    /// `prod_i cos^2(pi x_i / 2L)` on `Q_L`.
    #[default]
    Cosine,
    /// Uniform weight on `Q_L`.
    Flat,
}

/// Averaging mask with unit mass supported in `Q_L = [-L, L)^d`, centred at
/// the origin site.
pub fn mask_eta(lattice: &TorusLattice, half_width: usize) -> Result<NodeField> {
    mask_eta_with(lattice, half_width, MaskProfile::Cosine)
}

pub fn mask_eta_with(lattice: &TorusLattice, half_width: usize, profile: MaskProfile) -> Result<NodeField> {
    let n = lattice.side();
    if half_width == 0 || 2 * half_width > n {
        return Err(Error::Sizing(format!(
            "mask half-width {half_width} does not fit a torus of side {n}"
        )));
    }
    let l = half_width as i64;
    let signed = |k: usize| -> Option<i64> {
        let k = k as i64;
        if k < l {
            Some(k)
        } else if k >= n as i64 - l {
            Some(k - n as i64)
        } else {
            None
        }
    };
    let weight_1d = |c: i64| -> f64 {
        match profile {
            MaskProfile::Cosine => {
                let t = (std::f64::consts::PI * c as f64 / (2.0 * l as f64)).cos();
                t * t
            }
            MaskProfile::Flat => 1.0,
        }
    };
    let mut eta = NodeField::from_fn(*lattice, |x| {
        let mut w = 1.0;
        for i in 0..lattice.dim() {
            match signed(lattice.coord(x, i)) {
                Some(c) => w *= weight_1d(c),
                None => return 0.0,
            }
        }
        w
    });
    let total = eta.sum();
    eta.values.iter_mut().for_each(|v| *v /= total);
    Ok(eta)
}

/// Sites with `r_lo < |x - center| <= r_hi` in the minimal-image metric.
pub fn annulus_sites(lattice: &TorusLattice, center: usize, r_lo: f64, r_hi: f64) -> Vec<usize> {
    assert!(r_lo >= 0.0 && r_lo < r_hi, "annulus radii must satisfy 0 <= lo < hi");
    (0..lattice.num_sites())
        .filter(|&x| {
            let r = lattice.distance(x, center);
            r > r_lo && r <= r_hi
        })
        .collect()
}

/// Distance of every site to `center`, indexed by site.
pub fn distances_from(lattice: &TorusLattice, center: usize) -> Vec<f64> {
    (0..lattice.num_sites()).map(|x| lattice.distance(x, center)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_node(lat: TorusLattice, rng: &mut ChaCha8Rng) -> NodeField {
        NodeField::from_fn(lat, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn index_roundtrip_and_neighbours() {
        for (d, n) in [(1, 5), (2, 4), (3, 3)] {
            let lat = TorusLattice::new(d, n).unwrap();
            for x in 0..lat.num_sites() {
                assert_eq!(lat.index(&lat.coords(x)), x);
                let nb = lat.neighbors(x);
                assert_eq!(nb.len(), 2 * d);
                for i in 0..d {
                    assert_eq!(lat.backward(lat.forward(x, i), i), x);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(TorusLattice::new(0, 4).is_err());
        assert!(TorusLattice::new(2, 1).is_err());
    }

    #[test]
    fn row_major_last_coordinate_fastest() {
        let lat = TorusLattice::new(2, 4).unwrap();
        assert_eq!(lat.index(&[0, 1]), 1);
        assert_eq!(lat.index(&[1, 0]), 4);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let lat = TorusLattice::new(3, 4).unwrap();
        let g = gradient(&NodeField::constant(lat, 2.5));
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_delta() {
        let lat = TorusLattice::new(2, 4).unwrap();
        let g = gradient(&NodeField::delta(lat, 0));
        // direction 1 is the first coordinate
        assert_eq!(g.get(0, 0), -1.0);
        assert_eq!(g.get(lat.index(&[3, 0]), 0), 1.0);
        for x in 0..lat.num_sites() {
            if x != 0 && x != lat.index(&[3, 0]) {
                assert_eq!(g.get(x, 0), 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_constant_and_zero_sum() {
        let lat = TorusLattice::new(2, 5).unwrap();
        let c = VectorFieldAtSites::from_values(lat, [1.5, -0.5].repeat(lat.num_sites())).unwrap();
        assert!(divergence(&c).values().iter().all(|v| v.abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f =
            VectorFieldAtSites::from_values(lat, (0..lat.num_edges()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        assert!(divergence(&f).sum().abs() < 1e-13);
    }

    #[test]
    fn adjointness_against_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=3 {
            let lat = TorusLattice::new(d, 3).unwrap();
            let u = random_node(lat, &mut rng);
            let f = VectorFieldAtSites::from_values(
                lat,
                (0..lat.num_edges()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            // oracle: explicit sum over ordered pairs (x, y = x + e_i)
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for x in 0..lat.num_sites() {
                let cx = lat.coords(x);
                for i in 0..d {
                    let mut cy = cx.clone();
                    cy[i] = (cy[i] + 1) % 3;
                    let y = lat.index(&cy);
                    lhs += (u.values()[y] - u.values()[x]) * f.get(x, i);
                    let mut cz = cx.clone();
                    cz[i] = (cz[i] + 2) % 3;
                    let z = lat.index(&cz);
                    rhs += u.values()[x] * (f.get(x, i) - f.get(z, i));
                }
            }
            let lhs_fast = gradient(&u).dot(&f);
            let rhs_fast = u.dot(&divergence(&f));
            assert!((lhs - lhs_fast).abs() <= 1e-12 * lhs.abs().max(1.0));
            assert!((rhs - rhs_fast).abs() <= 1e-12 * rhs.abs().max(1.0));
            assert!((lhs + rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "d={d}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn mask_properties() {
        let lat = TorusLattice::new(2, 16).unwrap();
        for l in [1, 3, 8] {
            let eta = mask_eta(&lat, l).unwrap();
            assert!((eta.sum() - 1.0).abs() < 1e-14);
            for x in 0..lat.num_sites() {
                let v = eta.values()[x];
                assert!(v >= 0.0);
                assert!((v - eta.values()[lat.reflect(x)]).abs() < 1e-16);
                let inside = lat.coords(x).iter().all(|&k| k < l || k >= 16 - l);
                if !inside {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(mask_eta(&lat, 9).is_err());
        assert!(mask_eta(&lat, 0).is_err());
    }

    #[test]
    fn annuli() {
        let lat = TorusLattice::new(2, 8).unwrap();
        let nn = annulus_sites(&lat, 0, 0.0, 1.0);
        let mut expect = lat.neighbors(0);
        expect.sort_unstable();
        assert_eq!(nn, expect);
        let all = annulus_sites(&lat, 0, 0.0, 8.0 * 2f64.sqrt() / 2.0);
        assert_eq!(all.len(), 63);
        // dyadic partition of the punctured torus
        let mut total = annulus_sites(&lat, 0, 0.0, 1.0).len();
        let mut r = 1.0;
        while r < 8.0 {
            total += annulus_sites(&lat, 0, r, 2.0 * r).len();
            r *= 2.0;
        }
        assert_eq!(total, 63);
    }
}
