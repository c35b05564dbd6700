//! Rate-independent gauge `Psi`, viscous correction `Phi = F(|.|)`, the
//! viscous family `Psi_eps(v) = Psi(v) + Phi(eps v)/eps` and its conjugate.
//!
//! The gauge is a (possibly asymmetric) weighted `L^1` norm, so the dual unit
//! ball `K*` is the box `[-w-, w+]` cell by cell and every projection is
//! closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, GridFunction};

/// Weighted `L^1` gauge `Psi(v) = h sum (w+ v_+ + w- v_-)`.
///
/// Weight vectors of length one are broadcast to every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl Default for Gauge {
    fn default() -> Self {
        Self::uniform(1.0).expect("unit weight is valid")
    }
}

impl Gauge {
    pub fn uniform(w: f64) -> Result<Self> {
        Self::asymmetric(vec![w], vec![w])
    }

    pub fn per_cell(w: Vec<f64>) -> Result<Self> {
        Self::asymmetric(w.clone(), w)
    }

    pub fn asymmetric(plus: Vec<f64>, minus: Vec<f64>) -> Result<Self> {
        if plus.is_empty() || minus.is_empty() {
            return Err(Error::InvalidParameter("gauge weights are empty".into()));
        }
        if let Some(w) = plus.iter().chain(&minus).find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "gauge weights must be positive and finite, got {w}"
            )));
        }
        Ok(Self { plus, minus })
    }

    #[inline]
    pub fn w_plus(&self, i: usize) -> f64 {
        if self.plus.len() == 1 {
            self.plus[0]
        } else {
            self.plus[i]
        }
    }

    #[inline]
    pub fn w_minus(&self, i: usize) -> f64 {
        if self.minus.len() == 1 {
            self.minus[0]
        } else {
            self.minus[i]
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.plus == self.minus
    }

    /// Checks that per-cell weight vectors match the grid of `v`.
    pub fn check_len(&self, n: usize) -> Result<()> {
        for w in [&self.plus, &self.minus] {
            if w.len() != 1 && w.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "gauge has {} weights for {} cells",
                    w.len(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// Cellwise density `w+ v_+ + w- v_-` at cell `i`.
    #[inline]
    pub fn density(&self, i: usize, v: f64) -> f64 {
        if v >= 0.0 {
            self.w_plus(i) * v
        } else {
            -self.w_minus(i) * v
        }
    }

    pub fn psi(&self, v: &GridFunction) -> f64 {
        let h = v.grid().spacing();
        h * v
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| self.density(i, x))
            .sum::<f64>()
    }

    /// `min(Psi(v), Psi(-v))`.
    pub fn psi_wedge(&self, v: &GridFunction) -> f64 {
        self.psi(v).min(self.psi(&-v))
    }

    /// Excess of `xi` over the box `K*`, i.e. `xi - P_{K*} xi`.
    pub fn excess(&self, xi: &GridFunction) -> GridFunction {
        let vals = xi
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| excess_scalar(x, self.w_plus(i), self.w_minus(i)))
            .collect();
        GridFunction::from_raw(*xi.grid(), vals)
    }

    /// Euclidean projection of `xi` onto `K*`.
    pub fn project(&self, xi: &GridFunction) -> GridFunction {
        let vals = xi
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x.clamp(-self.w_minus(i), self.w_plus(i)))
            .collect();
        GridFunction::from_raw(*xi.grid(), vals)
    }

    /// `L^2` distance from `xi` to `K*`.
    pub fn dual_dist(&self, xi: &GridFunction) -> f64 {
        l2_norm(&self.excess(xi))
    }
}

#[inline]
pub(crate) fn excess_scalar(x: f64, wp: f64, wm: f64) -> f64 {
    if x > wp {
        x - wp
    } else if x < -wm {
        x + wm
    } else {
        0.0
    }
}

/// Superlinear profile `F` of the viscous potential `Phi(v) = F(|v|)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ViscousPotential {
    /// `F(r) = r^2 / 2`.
    #[default]
    Quadratic,
    /// `F(r) = nu r^p / p` with `p > 1`.
    Power { nu: f64, p: f64 },
}

impl ViscousPotential {
    pub fn power(nu: f64, p: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) || !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "power viscosity needs nu > 0 and p > 1, got nu={nu}, p={p}"
            )));
        }
        Ok(Self::Power { nu, p })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Quadratic => Ok(()),
            Self::Power { nu, p } => Self::power(nu, p).map(|_| ()),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Self::Quadratic) || matches!(self, Self::Power { nu, p } if *nu == 1.0 && *p == 2.0)
    }

    /// Conjugate exponent `q = p / (p - 1)`.
    fn q(&self) -> f64 {
        match *self {
            Self::Quadratic => 2.0,
            Self::Power { p, .. } => p / (p - 1.0),
        }
    }

    pub fn f(&self, r: f64) -> f64 {
        let r = r.abs();
        match *self {
            Self::Quadratic => 0.5 * r * r,
            Self::Power { nu, p } => nu * r.powf(p) / p,
        }
    }

    pub fn df(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match *self {
            Self::Quadratic => r,
            Self::Power { nu, p } => nu * r.powf(p - 1.0),
        }
    }

    /// Legendre conjugate `F*(s)`, `s >= 0`.
    pub fn conj(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            Self::Quadratic => 0.5 * s * s,
            Self::Power { nu, .. } => {
                let q = self.q();
                nu.powf(1.0 - q) * s.powf(q) / q
            }
        }
    }

    /// `(F')^{-1}(s) = (F*)'(s)`.
    pub fn df_inv(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            Self::Quadratic => s,
            Self::Power { nu, p } => (s / nu).powf(1.0 / (p - 1.0)),
        }
    }

    /// `(F*)'(s) / F(r)`: the viscosity profile in the alternate normalisation.
    pub fn alt_viscosity(&self, slack: f64, r: f64) -> f64 {
        self.df_inv(slack) / self.f(r)
    }
}

/// The pair `(Psi, Phi)` generating the viscous family `Psi_eps`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DissipationPair {
    pub gauge: Gauge,
    pub viscous: ViscousPotential,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "viscosity must be positive, got {eps}"
        )))
    }
}

impl DissipationPair {
    pub fn new(gauge: Gauge, viscous: ViscousPotential) -> Result<Self> {
        viscous.validate()?;
        Ok(Self { gauge, viscous })
    }

    pub fn psi(&self, v: &GridFunction) -> f64 {
        self.gauge.psi(v)
    }

    pub fn phi(&self, v: &GridFunction) -> f64 {
        self.viscous.f(l2_norm(v))
    }

    pub fn psi_eps(&self, v: &GridFunction, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(self.psi(v) + self.viscous.f(eps * l2_norm(v)) / eps)
    }

    pub fn dual_dist_k(&self, xi: &GridFunction) -> f64 {
        self.gauge.dual_dist(xi)
    }

    pub fn psi_eps_conj(&self, xi: &GridFunction, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(self.viscous.conj(self.dual_dist_k(xi)) / eps)
    }

    /// `Psi(v) + |v| dist(xi, K*)`.
    pub fn contact_potential(&self, v: &GridFunction, xi: &GridFunction) -> f64 {
        self.psi(v) + l2_norm(v) * self.dual_dist_k(xi)
    }

    /// An element of `dPsi_eps(v)`: `w sign(v) + F'(eps|v|)/|v| v`, with the
    /// zero-velocity choice `0`.
    pub fn psi_eps_subgradient(&self, v: &GridFunction, eps: f64) -> Result<GridFunction> {
        check_eps(eps)?;
        let norm = l2_norm(v);
        let kappa = if norm > 0.0 {
            self.viscous.df(eps * norm) / norm
        } else {
            0.0
        };
        let vals = v
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let s = if x > 0.0 {
                    self.gauge.w_plus(i)
                } else if x < 0.0 {
                    -self.gauge.w_minus(i)
                } else {
                    0.0
                };
                s + kappa * x
            })
            .collect();
        Ok(GridFunction::from_raw(*v.grid(), vals))
    }

    /// `Psi_eps(v) + Psi_eps*(xi) - <xi, v>`; zero iff `xi` lies in `dPsi_eps(v)`.
    pub fn fenchel_gap(&self, v: &GridFunction, xi: &GridFunction, eps: f64) -> Result<f64> {
        Ok(self.psi_eps(v, eps)? + self.psi_eps_conj(xi, eps)? - xi.dot(v))
    }
}

/// `argmin_x a|x| + (b/2) x^2 + (x - y)^2 / 2 = sign(y) max(0, |y| - a) / (1 + b)`.
pub fn shrink_scale(y: f64, a: f64, b: f64) -> f64 {
    y.signum() * (y.abs() - a).max(0.0) / (1.0 + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{golden_section_min, Grid1D};
    use proptest::prelude::*;

    fn scalar_pair() -> DissipationPair {
        DissipationPair::default()
    }

    #[test]
    fn zero_velocity() {
        let g = Grid1D::new(1.0, 8).unwrap();
        let p = scalar_pair();
        let z = GridFunction::zeros(g);
        assert_eq!(p.psi(&z), 0.0);
        assert_eq!(p.phi(&z), 0.0);
        assert_eq!(p.psi_eps(&z, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn scalar_psi_eps_matches_sup_of_conjugate() {
        let p = scalar_pair();
        let v = GridFunction::scalar(2.0);
        let direct = p.psi_eps(&v, 0.5).unwrap();
        assert!((direct - 3.0).abs() < 1e-14);
        // biconjugate: sup_xi (2 xi - Psi_eps*(xi)) over a fine grid
        let best = (0..=200_000)
            .map(|k| -10.0 + k as f64 * 1e-4)
            .map(|x| 2.0 * x - p.psi_eps_conj(&GridFunction::scalar(x), 0.5).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - direct).abs() < 1e-6);
    }

    #[test]
    fn psi_eps_decreases_to_psi() {
        let g = Grid1D::new(2.0, 5).unwrap();
        let p = scalar_pair();
        let v = GridFunction::from_fn(g, |x| x - 1.0);
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let val = p.psi_eps(&v, 2f64.powi(-k)).unwrap();
            assert!(val <= prev && val >= p.psi(&v));
            prev = val;
        }
        assert!((prev - p.psi(&v)).abs() < 1e-8);
        assert!(p.psi_eps(&v, 0.0).is_err());
        assert!(p.psi_eps_conj(&v, -1.0).is_err());
    }

    #[test]
    fn dual_distance_cases() {
        let p = scalar_pair();
        assert_eq!(p.dual_dist_k(&GridFunction::scalar(3.0)), 2.0);
        assert_eq!(p.dual_dist_k(&GridFunction::scalar(-0.7)), 0.0);
    }

    #[test]
    fn dual_distance_matches_projected_gradient() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = Grid1D::new(1.0, 16).unwrap();
        let w: Vec<f64> = (0..16).map(|_| rng.gen_range(0.2..2.0)).collect();
        let gauge = Gauge::per_cell(w.clone()).unwrap();
        let xi = GridFunction::from_raw(g, (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect());
        // projected gradient on z -> |xi - z|^2 / 2 over the box
        let mut z = [0.0; 16];
        for _ in 0..200 {
            for i in 0..16 {
                let step = z[i] + 0.5 * (xi.values()[i] - z[i]);
                z[i] = step.clamp(-w[i], w[i]);
            }
        }
        let d = (g.spacing() * (0..16).map(|i| (xi.values()[i] - z[i]).powi(2)).sum::<f64>()).sqrt();
        assert!((gauge.dual_dist(&xi) - d).abs() < 1e-10);
    }

    #[test]
    fn conjugate_values() {
        let p = scalar_pair();
        let xi = GridFunction::scalar(2.0);
        assert!((p.psi_eps_conj(&xi, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let a = p.psi_eps_conj(&xi, 0.25).unwrap();
        let b = p.psi_eps_conj(&xi, 0.5).unwrap();
        assert!((b - 0.5 * a).abs() < 1e-15);
        assert_eq!(p.psi_eps_conj(&GridFunction::scalar(0.9), 1e-3).unwrap(), 0.0);
        let sup = (0..=2_000_000)
            .map(|k| -100.0 + k as f64 * 1e-4)
            .map(|v| 2.0 * v - p.psi_eps(&GridFunction::scalar(v), 0.5).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sup - 1.0).abs() < 1e-6);
    }

    #[test]
    fn contact_potential_scalar() {
        let p = scalar_pair();
        let v = GridFunction::scalar(2.0);
        let xi = GridFunction::scalar(3.0);
        assert_eq!(p.contact_potential(&v, &xi), 6.0);
        let f = |le: f64| {
            let e = le.exp();
            p.psi_eps(&v, e).unwrap() + p.psi_eps_conj(&xi, e).unwrap()
        };
        let (_, inf) = golden_section_min(f, (1e-6f64).ln(), (1e3f64).ln(), 1e-12);
        assert!((inf - 6.0).abs() < 1e-8);
        assert_eq!(p.contact_potential(&v, &GridFunction::scalar(0.5)), p.psi(&v));
    }

    #[test]
    fn shrink_values() {
        assert_eq!(shrink_scale(3.0, 1.0, 0.0), 2.0);
        assert_eq!(shrink_scale(3.0, 1.0, 1.0), 1.0);
        assert_eq!(shrink_scale(-0.4, 0.5, 3.0), 0.0);
        let best = (0..=2_000_000)
            .map(|k| -10.0 + k as f64 * 1e-5)
            .map(|x| (x, x.abs() + 0.5 * x * x + 0.5 * (x - 3.0).powi(2)))
            .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        assert!((best.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn power_conjugate_is_legendre_transform() {
        let f = ViscousPotential::power(1.7, 3.0).unwrap();
        for s in [0.0, 0.3, 1.0, 4.5] {
            let sup = (0..=100_000)
                .map(|k| k as f64 * 1e-4)
                .map(|r| s * r - f.f(r))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sup - f.conj(s)).abs() < 1e-6, "s={s}");
            assert!((f.df(f.df_inv(s)) - s).abs() < 1e-12);
        }
        assert!(ViscousPotential::power(1.0, 1.0).is_err());
    }

    #[test]
    fn asymmetric_box() {
        let g = Gauge::asymmetric(vec![1.0], vec![3.0]).unwrap();
        assert_eq!(g.dual_dist(&GridFunction::scalar(-4.0)), 1.0);
        assert_eq!(g.dual_dist(&GridFunction::scalar(-2.5)), 0.0);
        let v = GridFunction::scalar(2.0);
        assert_eq!(g.psi(&v), 2.0);
        assert_eq!(g.psi(&-&v), 6.0);
        assert_eq!(g.psi_wedge(&v), 2.0);
        assert!(Gauge::uniform(0.0).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #[test]
        fn psi_is_positively_homogeneous(v in vec_strategy(6), lam in 0.0f64..10.0) {
            let g = Grid1D::new(1.5, 6).unwrap();
            let p = scalar_pair();
            let v = GridFunction::new(g, v).unwrap();
            let lhs = p.psi(&v.scale(lam));
            prop_assert!((lhs - lam * p.psi(&v)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn psi_midpoint_convex(a in vec_strategy(5), b in vec_strategy(5)) {
            let g = Grid1D::new(1.0, 5).unwrap();
            let gauge = Gauge::asymmetric(vec![1.0, 2.0, 0.5, 1.0, 3.0], vec![0.3]).unwrap();
            let a = GridFunction::new(g, a).unwrap();
            let b = GridFunction::new(g, b).unwrap();
            let mid = a.lerp(&b, 0.5);
            prop_assert!(gauge.psi(&mid) <= 0.5 * (gauge.psi(&a) + gauge.psi(&b)) + 1e-12);
        }

        #[test]
        fn fenchel_young(v in vec_strategy(4), xi in vec_strategy(4), le in -4.0f64..2.0) {
            let g = Grid1D::new(2.0, 4).unwrap();
            let p = DissipationPair::new(Gauge::default(), ViscousPotential::Quadratic).unwrap();
            let v = GridFunction::new(g, v).unwrap();
            let xi = GridFunction::new(g, xi).unwrap();
            let eps = 10f64.powf(le);
            prop_assert!(p.fenchel_gap(&v, &xi, eps).unwrap() >= -1e-10);
            let sub = p.psi_eps_subgradient(&v, eps).unwrap();
            prop_assert!(p.fenchel_gap(&v, &sub, eps).unwrap().abs() <= 1e-8);
            prop_assert!(p.contact_potential(&v, &xi) >= xi.dot(&v) - 1e-12);
        }

        #[test]
        fn contact_zero_excess_iff_psi(xi in vec_strategy(3), v in vec_strategy(3)) {
            let g = Grid1D::new(1.0, 3).unwrap();
            let p = scalar_pair();
            let xi = GridFunction::new(g, xi).unwrap();
            let v = GridFunction::new(g, v).unwrap();
            if p.dual_dist_k(&xi) == 0.0 {
                prop_assert_eq!(p.contact_potential(&v, &xi), p.psi(&v));
            } else if v.max_abs() > 0.0 {
                prop_assert!(p.contact_potential(&v, &xi) > p.psi(&v));
            }
        }
    }
}
