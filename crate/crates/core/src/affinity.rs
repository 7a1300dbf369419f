//! Distributions of the idiosyncratic partisan shock.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AffinityDistribution {
    Logistic { location: f64, scale: f64 },
    Normal { location: f64, scale: f64 },
    /// Piecewise-linear CDF through `(point, cdf)` knots.
    Tabulated { table: Vec<(f64, f64)> },
}

impl AffinityDistribution {
    pub fn logistic(location: f64, scale: f64) -> Result<Self> {
        let d = AffinityDistribution::Logistic { location, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(location: f64, scale: f64) -> Result<Self> {
        let d = AffinityDistribution::Normal { location, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        let d = AffinityDistribution::Tabulated { table };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AffinityDistribution::Logistic { location, scale }
            | AffinityDistribution::Normal { location, scale } => {
                if !location.is_finite() {
                    return Err(Error::param("location", format!("{location} is not finite")));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::param("scale", format!("{scale} must be positive")));
                }
            }
            AffinityDistribution::Tabulated { table } => {
                if table.len() < 2 {
                    return Err(Error::param("table", "needs at least two knots"));
                }
                for w in table.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::param("table", "points must be strictly increasing"));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(Error::param("table", "cdf values must be nondecreasing"));
                    }
                }
                let first = table[0].1;
                let last = table[table.len() - 1].1;
                if first.abs() > 1e-12 || (last - 1.0).abs() > 1e-12 {
                    return Err(Error::param("table", "cdf must run from 0 to 1"));
                }
                if table.iter().any(|(x, c)| !x.is_finite() || !c.is_finite()) {
                    return Err(Error::param("table", "non-finite knot"));
                }
            }
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            AffinityDistribution::Logistic { location, scale } => {
                logistic_sigmoid((x - location) / scale)
            }
            AffinityDistribution::Normal { location, scale } => {
                std_normal().cdf((x - location) / scale)
            }
            AffinityDistribution::Tabulated { table } => {
                if x <= table[0].0 {
                    return table[0].1;
                }
                let last = table[table.len() - 1];
                if x >= last.0 {
                    return last.1;
                }
                let (lo, hi) = segment(table, x);
                lo.1 + (hi.1 - lo.1) * (x - lo.0) / (hi.0 - lo.0)
            }
        }
    }

    /// Density φ = Φ′.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            AffinityDistribution::Logistic { location, scale } => {
                let p = logistic_sigmoid((x - location) / scale);
                p * (1.0 - p) / scale
            }
            AffinityDistribution::Normal { location, scale } => {
                std_normal().pdf((x - location) / scale) / scale
            }
            AffinityDistribution::Tabulated { table } => {
                if x < table[0].0 || x > table[table.len() - 1].0 {
                    return 0.0;
                }
                let (lo, hi) = segment(table, x);
                (hi.1 - lo.1) / (hi.0 - lo.0)
            }
        }
    }

    /// φ′.
    pub fn pdf_derivative(&self, x: f64) -> f64 {
        match self {
            AffinityDistribution::Logistic { location, scale } => {
                let p = logistic_sigmoid((x - location) / scale);
                p * (1.0 - p) * (1.0 - 2.0 * p) / (scale * scale)
            }
            AffinityDistribution::Normal { location, scale } => {
                let z = (x - location) / scale;
                -z * std_normal().pdf(z) / (scale * scale)
            }
            // piecewise-constant density
            AffinityDistribution::Tabulated { .. } => 0.0,
        }
    }

    /// φ″.
    pub fn pdf_second_derivative(&self, x: f64) -> f64 {
        match self {
            AffinityDistribution::Logistic { location, scale } => {
                let p = logistic_sigmoid((x - location) / scale);
                p * (1.0 - p) * (1.0 - 6.0 * p + 6.0 * p * p) / scale.powi(3)
            }
            AffinityDistribution::Normal { location, scale } => {
                let z = (x - location) / scale;
                (z * z - 1.0) * std_normal().pdf(z) / scale.powi(3)
            }
            AffinityDistribution::Tabulated { .. } => 0.0,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

fn logistic_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// Segment [lo, hi] containing x; the right-hand segment wins at interior knots.
fn segment(table: &[(f64, f64)], x: f64) -> ((f64, f64), (f64, f64)) {
    let idx = table.partition_point(|(p, _)| *p <= x);
    let i = idx.clamp(1, table.len() - 1) - 1;
    (table[i], table[i + 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn logistic_density_chain() {
        let d = AffinityDistribution::logistic(0.3, 0.7).unwrap();
        for x in [-2.0, -0.1, 0.3, 1.4] {
            assert!((central(|y| d.cdf(y), x, 1e-5) - d.pdf(x)).abs() < 1e-8);
            assert!((central(|y| d.pdf(y), x, 1e-5) - d.pdf_derivative(x)).abs() < 1e-8);
            assert!(
                (central(|y| d.pdf_derivative(y), x, 1e-5) - d.pdf_second_derivative(x)).abs()
                    < 1e-7
            );
        }
        assert!((d.pdf(0.3) - 0.25 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn normal_density_chain() {
        let d = AffinityDistribution::normal(-0.5, 1.3).unwrap();
        for x in [-3.0, -0.5, 0.2, 2.0] {
            assert!((central(|y| d.cdf(y), x, 1e-5) - d.pdf(x)).abs() < 1e-8);
            assert!((central(|y| d.pdf(y), x, 1e-5) - d.pdf_derivative(x)).abs() < 1e-8);
            assert!(
                (central(|y| d.pdf_derivative(y), x, 1e-5) - d.pdf_second_derivative(x)).abs()
                    < 1e-7
            );
        }
    }

    #[test]
    fn tabulated_is_piecewise_linear() {
        let d = AffinityDistribution::tabulated(vec![(-1.0, 0.0), (0.0, 0.25), (2.0, 1.0)]).unwrap();
        assert_eq!(d.cdf(-5.0), 0.0);
        assert_eq!(d.cdf(5.0), 1.0);
        assert!((d.cdf(-0.5) - 0.125).abs() < 1e-15);
        assert!((d.cdf(1.0) - 0.625).abs() < 1e-15);
        assert!((d.pdf(-0.5) - 0.25).abs() < 1e-15);
        assert!((d.pdf(1.0) - 0.375).abs() < 1e-15);
        assert_eq!(d.pdf(3.0), 0.0);
        assert_eq!(d.pdf_derivative(1.0), 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(AffinityDistribution::tabulated(vec![(0.0, 0.0)]).is_err());
        assert!(AffinityDistribution::tabulated(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(AffinityDistribution::tabulated(vec![(0.0, 0.5), (1.0, 0.2)]).is_err());
        assert!(AffinityDistribution::tabulated(vec![(0.0, 0.1), (1.0, 1.0)]).is_err());
        assert!(AffinityDistribution::logistic(0.0, 0.0).is_err());
    }
}
