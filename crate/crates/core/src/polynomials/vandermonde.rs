use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::log_abs_det_scaled;
use crate::polynomials::basis::{EvalBasis, MonomialBasis};
use crate::scalar::Real;
use crate::weight::Weight;

/// An ordered tuple of `N_k` points with a cached `log|VDM_k^Q|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration<T> {
    points: Vec<Point<T>>,
    k: usize,
    cache: Option<(String, T)>,
}

impl<T: Real> Configuration<T> {
    pub fn new(points: Vec<Point<T>>, k: usize) -> Result<Self> {
        let n = points.first().map(|p| p.dim()).ok_or_else(|| Error::InvalidArgument("empty configuration".into()))?;
        if let Some(bad) = points.iter().find(|p| p.dim() != n) {
            return Err(Error::Dimension { expected: n, found: bad.dim() });
        }
        let nk = MonomialBasis::new(n, k)?.size();
        if points.len() != nk {
            return Err(Error::Dimension { expected: nk, found: points.len() });
        }
        Ok(Configuration { points, k, cache: None })
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point<T>> {
        self.points
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cached `(weight hash, log|VDM^Q|)`, if computed.
    pub fn cached_log_vdm_q(&self) -> Option<(&str, T)> {
        self.cache.as_ref().map(|(h, v)| (h.as_str(), *v))
    }

    pub(crate) fn set_cache(&mut self, hash: &str, value: T) {
        self.cache = Some((hash.to_string(), value));
    }
}

/// `log|det[e_i(x_j)]|` in the monomial basis; `-inf` when numerically singular.
pub fn log_abs_vdm<T: Real>(config: &Configuration<T>) -> T {
    let basis = MonomialBasis::new(config.n(), config.k()).expect("validated at construction");
    let eval = EvalBasis::for_points(&basis, config.points());
    let m = eval.matrix(config.points());
    let ld = log_abs_det_scaled(m, T::singular_threshold());
    if ld == T::neg_infinity() {
        ld
    } else {
        ld + eval.log_det_correction()
    }
}

/// `log|VDM_k^Q| = log|VDM_k| - k sum_j Q(x_j)`, cached on the configuration.
pub fn log_abs_vdm_weighted<T: Real>(config: &mut Configuration<T>, q: &Weight) -> T {
    if let Some((h, v)) = config.cached_log_vdm_q() {
        if h == q.hash() {
            return v;
        }
    }
    let k = T::from_count(config.k());
    let mut qsum = T::zero();
    let mut annihilated = false;
    for p in config.points() {
        let v = q.eval(p);
        if !v.is_finite() {
            annihilated = true;
            break;
        }
        qsum += v;
    }
    let value = if annihilated {
        T::neg_infinity()
    } else {
        let ld = log_abs_vdm(config);
        if ld == T::neg_infinity() {
            ld
        } else {
            ld - k * qsum
        }
    };
    config.set_cache(q.hash(), value);
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Cplx;
    use crate::weight::parse_weight;

    fn real_config(xs: &[f64], k: usize) -> Configuration<f64> {
        Configuration::new(xs.iter().map(|&x| Point::real(x)).collect(), k).unwrap()
    }

    #[test]
    fn unit_determinant() {
        assert!(log_abs_vdm(&real_config(&[0.0, 1.0], 1)).abs() < 1e-15);
    }

    #[test]
    fn cube_roots_of_unity() {
        let pts = (0..3)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / 3.0;
                Point::scalar(Cplx::new(t.cos(), t.sin()))
            })
            .collect();
        let c = Configuration::new(pts, 2).unwrap();
        // |VDM| = 3^{3/2}
        assert!((log_abs_vdm(&c) - 1.5 * 3f64.ln()).abs() < 1e-12);
        assert!((log_abs_vdm(&c) - 1.647918).abs() < 1e-6);
    }

    #[test]
    fn repeated_point_is_singular() {
        assert_eq!(log_abs_vdm(&real_config(&[0.3, -0.2, 0.3], 2)), f64::NEG_INFINITY);
    }

    #[test]
    fn weighted_values() {
        let mut c = real_config(&[-1.0, 1.0], 1);
        let zero = Weight::zero();
        assert_eq!(log_abs_vdm_weighted(&mut c, &zero), log_abs_vdm(&c));
        let gue = parse_weight("x^2").unwrap();
        let v = log_abs_vdm_weighted(&mut c, &gue);
        assert!((v - (2f64.ln() - 2.0)).abs() < 1e-14);
        assert_eq!(c.cached_log_vdm_q().unwrap().0, gue.hash());
        let singular = parse_weight("1/(x+1)").unwrap();
        assert_eq!(log_abs_vdm_weighted(&mut c, &singular), f64::NEG_INFINITY);
    }

    #[test]
    fn wrong_size_rejected() {
        assert!(Configuration::new(vec![Point::real(0.0f64)], 1).is_err());
    }

    #[test]
    fn single_precision_agrees() {
        let c64 = real_config(&[-0.9, -0.2, 0.4, 0.8], 3);
        let c32 = Configuration::new(c64.points().iter().map(|p| p.cast::<f32>()).collect(), 3).unwrap();
        let (a, b) = (log_abs_vdm(&c64), log_abs_vdm(&c32) as f64);
        assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
    }
}
