//! Newton equilibria, spectra and stability.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::models::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
}

/// Eigenvalues sorted by descending real part (ties: positive imaginary first).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    pub eigenvalues: Vec<Complex64>,
    pub max_real: f64,
    /// Real part of the leading complex-conjugate pair, if any.
    pub complex_pair_real: Option<f64>,
}

impl EigenSpectrum {
    pub fn from_eigenvalues(mut ev: Vec<Complex64>) -> Self {
        ev.sort_by(|a, b| {
            b.re.partial_cmp(&a.re)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
        });
        let max_real = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let complex_pair_real = ev.iter().find(|z| z.im != 0.0).map(|z| z.re);
        EigenSpectrum {
            eigenvalues: ev,
            max_real,
            complex_pair_real,
        }
    }

    pub fn of(m: &Matrix) -> Result<Self> {
        Ok(Self::from_eigenvalues(linalg::eigenvalues(m)?))
    }

    /// Leading complex eigenvalue with positive imaginary part.
    pub fn leading_pair(&self) -> Option<Complex64> {
        self.eigenvalues.iter().copied().find(|z| z.im > 0.0)
    }

    pub fn real_eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().filter(|z| z.im == 0.0).map(|z| z.re)
    }

    pub fn stability(&self) -> Stability {
        let pos = self.eigenvalues.iter().any(|z| z.re > 0.0);
        let neg = self.eigenvalues.iter().any(|z| z.re < 0.0);
        if !pos && neg && self.eigenvalues.iter().all(|z| z.re < 0.0) {
            Stability::Stable
        } else if pos && neg {
            Stability::Saddle
        } else {
            Stability::Unstable
        }
    }

    pub fn re(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.im).collect()
    }
}

struct Eig<'a>(&'a Complex64);

impl Serialize for Eig<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Eigenvalue", 2)?;
        st.serialize_field("re", &self.0.re)?;
        st.serialize_field("im", &self.0.im)?;
        st.end()
    }
}

/// Serializes a list of complex numbers as `[{re, im}, ...]`.
pub fn serialize_eigenvalues<S: Serializer>(
    ev: &[Complex64],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ev.len()))?;
    for z in ev {
        seq.serialize_element(&Eig(z))?;
    }
    seq.end()
}

impl Serialize for EigenSpectrum {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct List<'a>(&'a [Complex64]);
        impl Serialize for List<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                serialize_eigenvalues(self.0, s)
            }
        }
        let mut st = s.serialize_struct("EigenSpectrum", 3)?;
        st.serialize_field("eigenvalues", &List(&self.eigenvalues))?;
        st.serialize_field("max_real", &self.max_real)?;
        st.serialize_field("complex_pair_real", &self.complex_pair_real)?;
        st.end()
    }
}

/// Eigenvalues of a small dense matrix as a sorted spectrum.
pub fn eigenvalues(m: &Matrix) -> Result<EigenSpectrum> {
    EigenSpectrum::of(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: Vec<f64>,
    pub params: ParameterSet,
    pub residual_norm: f64,
    pub spectrum: EigenSpectrum,
    pub stability: Stability,
}

impl Serialize for Equilibrium {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct List<'a>(&'a [Complex64]);
        impl Serialize for List<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                serialize_eigenvalues(self.0, s)
            }
        }
        let mut st = s.serialize_struct("Equilibrium", 4)?;
        st.serialize_field("state", &self.state)?;
        st.serialize_field("residual_norm", &self.residual_norm)?;
        st.serialize_field("eigenvalues", &List(&self.spectrum.eigenvalues))?;
        st.serialize_field("stability", &self.stability)?;
        st.end()
    }
}

impl Equilibrium {
    /// Evaluates residual and spectrum at `state` without iterating.
    pub fn at(params: &ParameterSet, state: Vec<f64>) -> Result<Self> {
        let def = params.def();
        let mut f = vec![0.0; def.dim];
        def.eval(params.values(), &state, &mut f);
        let mut j = Matrix::zeros(def.dim);
        def.eval_jacobian(params.values(), &state, &mut j);
        let spectrum = EigenSpectrum::of(&j)?;
        let stability = spectrum.stability();
        Ok(Equilibrium {
            state,
            params: params.clone(),
            residual_norm: norm2(&f),
            spectrum,
            stability,
        })
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub const DEFAULT_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 60;

/// Damped Newton iteration from `seed` to residual norm below `tol`.
pub fn find_equilibrium(params: &ParameterSet, seed: &[f64], tol: f64) -> Result<Equilibrium> {
    let def = params.def();
    let n = def.dim;
    if seed.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: seed.len(),
        });
    }
    if seed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("seed"));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let p = params.values();
    let mut x = seed.to_vec();
    let mut f = vec![0.0; n];
    def.eval(p, &x, &mut f);
    let mut res = norm2(&f);
    let mut j = Matrix::zeros(n);
    let mut trial = vec![0.0; n];
    let mut ft = vec![0.0; n];
    for iter in 0..MAX_ITER {
        if res < tol {
            return Equilibrium::at(params, x);
        }
        if !res.is_finite() {
            return Err(Error::NonFinite("residual"));
        }
        def.eval_jacobian(p, &x, &mut j);
        let lu = j.lu();
        if lu.is_singular() {
            return Err(Error::SingularJacobian {
                pivot_ratio: lu.pivot_ratio,
            });
        }
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = lu.solve(&neg)?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..n {
                trial[i] = x[i] + lambda * dx[i];
            }
            def.eval(p, &trial, &mut ft);
            let rt = norm2(&ft);
            if rt.is_finite() && rt < res {
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: res,
            });
        }
        x.copy_from_slice(&trial);
        f.copy_from_slice(&ft);
        res = norm2(&f);
    }
    if res < tol {
        return Equilibrium::at(params, x);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        residual: res,
    })
}

/// Result of a multi-seed search.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumScan {
    pub equilibria: Vec<Equilibrium>,
    pub failed_seeds: usize,
    /// Converged but outside the model domain (beyond the 1e-6 slack).
    pub out_of_domain: usize,
}

pub const DEDUP_RADIUS: f64 = 1e-6;

/// Newton from every seed, keeping unique in-domain equilibria.
pub fn find_equilibria_scan(params: &ParameterSet, seeds: &[Vec<f64>]) -> Result<EquilibriumScan> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("seed grid is empty".into()));
    }
    let def = params.def();
    let results: Vec<Option<Equilibrium>> = seeds
        .par_iter()
        .map(|s| find_equilibrium(params, s, DEFAULT_TOL).ok())
        .collect();
    let failed_seeds = results.iter().filter(|r| r.is_none()).count();
    let (mut found, outside): (Vec<Equilibrium>, Vec<Equilibrium>) = results
        .into_iter()
        .flatten()
        .partition(|e| def.domain_violation(&e.state) <= crate::integrate::DOMAIN_SLACK);
    found.sort_by(|a, b| lex_cmp(&a.state, &b.state));
    let mut unique: Vec<Equilibrium> = Vec::new();
    for e in found {
        if !unique.iter().any(|u| max_dist(&u.state, &e.state) <= DEDUP_RADIUS) {
            unique.push(e);
        }
    }
    Ok(EquilibriumScan {
        equilibria: unique,
        failed_seeds,
        out_of_domain: outside.len(),
    })
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

pub(crate) fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Regular grid of seeds: `counts[i]` points spanning `[lo_i, hi_i]`.
pub fn seed_grid(bounds: &[(f64, f64)], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (&(lo, hi), &c) in bounds.iter().zip(counts) {
        let vals: Vec<f64> = if c <= 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..c)
                .map(|k| lo + (hi - lo) * k as f64 / (c - 1) as f64)
                .collect()
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelId;

    #[test]
    fn gause_interior_equilibrium() {
        let ps = ParameterSet::defaults(ModelId::Gause).with("eps", 0.2).unwrap();
        let e = find_equilibrium(&ps, &[2.0, 9.0], DEFAULT_TOL).unwrap();
        let xe = 0.2 * 10.0 / (1.0 - 0.2);
        let ye = (1.0 - xe / 15.0) * (xe + 10.0);
        assert!((e.state[0] - xe).abs() < 1e-9 && (e.state[1] - ye).abs() < 1e-9);
        assert!(e.residual_norm < DEFAULT_TOL);
        assert_eq!(e.spectrum.eigenvalues.len(), 2);
    }

    #[test]
    fn stability_classes() {
        let s = |v: Vec<(f64, f64)>| {
            EigenSpectrum::from_eigenvalues(v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
                .stability()
        };
        assert_eq!(s(vec![(-1.0, 0.0), (-2.0, 0.0)]), Stability::Stable);
        assert_eq!(s(vec![(1.0, 0.0), (-2.0, 0.0)]), Stability::Saddle);
        assert_eq!(s(vec![(0.1, 1.0), (0.1, -1.0)]), Stability::Unstable);
    }

    #[test]
    fn spectrum_sorted_and_pair_found() {
        let sp = EigenSpectrum::from_eigenvalues(vec![
            Complex64::new(-3.0, 0.0),
            Complex64::new(0.5, -2.0),
            Complex64::new(0.5, 2.0),
        ]);
        assert_eq!(sp.max_real, 0.5);
        assert_eq!(sp.complex_pair_real, Some(0.5));
        assert_eq!(sp.eigenvalues[0].im, 2.0);
        assert_eq!(sp.leading_pair(), Some(Complex64::new(0.5, 2.0)));
    }

    #[test]
    fn far_seed_converges_and_nan_rejected() {
        // the origin is the only equilibrium
        let ps = ParameterSet::defaults(ModelId::UShape);
        let e = find_equilibrium(&ps, &[3.0, -2.0], DEFAULT_TOL).unwrap();
        assert!(e.state.iter().all(|v| v.abs() < 1e-6));
        assert!(find_equilibrium(&ps, &[f64::NAN, 0.0], DEFAULT_TOL).is_err());
    }

    #[test]
    fn grid_enumerates_product() {
        let g = seed_grid(&[(0.0, 1.0), (10.0, 20.0)], &[3, 2]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.0, 10.0]);
        assert_eq!(g[5], vec![1.0, 20.0]);
    }
}
