//! Registry of the ODE models and their parameter sets.

mod systems;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use systems::*;

/// Identifier of a registered model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelId {
    UShape,
    VanDerPol,
    Hiv,
    Gause,
    SirEpidemic,
    Fear,
    FoodWeb,
    Enso,
    Goodwin,
    SirSecondary,
}

impl ModelId {
    pub const ALL: [ModelId; 10] = [
        ModelId::UShape,
        ModelId::VanDerPol,
        ModelId::Hiv,
        ModelId::Gause,
        ModelId::SirEpidemic,
        ModelId::Fear,
        ModelId::FoodWeb,
        ModelId::Enso,
        ModelId::Goodwin,
        ModelId::SirSecondary,
    ];

    pub fn as_str(self) -> &'static str {
        self.def().id_str
    }

    pub fn def(self) -> &'static ModelDef {
        &REGISTRY[self as usize]
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.as_str().to_string()
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Sign constraint on a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    Positive,
    NonNegative,
}

impl Constraint {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Constraint::Positive => v > 0.0,
            Constraint::NonNegative => v >= 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Constraint::Positive => "> 0",
            Constraint::NonNegative => ">= 0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub constraint: Constraint,
}

/// Admissible sign region of one state coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignRegion {
    Free,
    NonNegative,
    NonPositive,
}

impl SignRegion {
    /// Distance by which `v` lies outside the region.
    pub fn violation(self, v: f64) -> f64 {
        match self {
            SignRegion::Free => 0.0,
            SignRegion::NonNegative => (-v).max(0.0),
            SignRegion::NonPositive => v.max(0.0),
        }
    }

    /// Sign of the region's interior, if it has one.
    pub fn sign(self) -> Option<f64> {
        match self {
            SignRegion::Free => None,
            SignRegion::NonNegative => Some(1.0),
            SignRegion::NonPositive => Some(-1.0),
        }
    }
}

type RhsFn = fn(&[f64], &[f64], &mut [f64]);
type JacFn = fn(&[f64], &[f64], &mut Matrix);
type GrowthFn = fn(&[f64], &[f64], usize) -> f64;

/// A registered ODE system.
pub struct ModelDef {
    pub id: ModelId,
    id_str: &'static str,
    pub dim: usize,
    pub params: &'static [ParamSpec],
    pub state_labels: &'static [&'static str],
    pub domain: &'static [SignRegion],
    pub citation: &'static str,
    /// Coordinates whose equation factors as `x_i' = x_i g_i(x)`.
    pub factored: &'static [usize],
    rhs: RhsFn,
    jac: Option<JacFn>,
    growth: Option<GrowthFn>,
}

impl fmt::Debug for ModelDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelDef")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ModelDef {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn has_exact_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Unchecked evaluation; `p` in schema order, lengths assumed valid.
    #[inline]
    pub fn eval(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        (self.rhs)(p, x, out)
    }

    /// Unchecked Jacobian: exact override when present, else central differences.
    pub fn eval_jacobian(&self, p: &[f64], x: &[f64], j: &mut Matrix) {
        match self.jac {
            Some(f) => f(p, x, j),
            None => *j = self.fd_jacobian(p, x),
        }
    }

    /// Per-capita rate `f_i / x_i` for a factored coordinate.
    pub fn eval_growth(&self, p: &[f64], x: &[f64], i: usize) -> f64 {
        match self.growth {
            Some(g) => g(p, x, i),
            None => {
                let mut out = vec![0.0; self.dim];
                self.eval(p, x, &mut out);
                out[i] / x[i]
            }
        }
    }

    /// Central finite-difference Jacobian with step `max(1e-7, 1e-7 |x_i|)`.
    pub fn fd_jacobian(&self, p: &[f64], x: &[f64]) -> Matrix {
        fd_jacobian_with(self.dim, x, 1e-7, |s, out| self.eval(p, s, out))
    }

    pub fn domain_violation(&self, x: &[f64]) -> f64 {
        self.domain
            .iter()
            .zip(x)
            .map(|(r, &v)| r.violation(v))
            .fold(0.0, f64::max)
    }
}

/// Central differences of `f` around `x` with relative step `rel` (floored at `rel`).
pub fn fd_jacobian_with<F>(n: usize, x: &[f64], rel: f64, f: F) -> Matrix
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut j = Matrix::zeros(n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for c in 0..n {
        let h = rel.max(rel * x[c].abs());
        xp[c] = x[c] + h;
        f(&xp, &mut fp);
        xp[c] = x[c] - h;
        f(&xp, &mut fm);
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

const fn pos(name: &'static str, default: f64) -> ParamSpec {
    ParamSpec {
        name,
        default,
        constraint: Constraint::Positive,
    }
}

use SignRegion::{Free, NonNegative as Nn, NonPositive as Np};

static REGISTRY: [ModelDef; 10] = [
    ModelDef {
        id: ModelId::UShape,
        id_str: "ushape",
        dim: 2,
        params: &[pos("eps", 0.005)],
        state_labels: &["x", "y"],
        domain: &[Free, Free],
        citation: "planar slow-fast system with a U-shaped critical manifold y = x^2/2",
        factored: &[],
        rhs: ushape_rhs,
        jac: Some(ushape_jac),
        growth: None,
    },
    ModelDef {
        id: ModelId::VanDerPol,
        id_str: "vanderpol",
        dim: 2,
        params: &[pos("eps", 0.01)],
        state_labels: &["x", "y"],
        domain: &[Free, Free],
        citation: "Van der Pol oscillator in Lienard form with an S-shaped critical manifold",
        factored: &[],
        rhs: vanderpol_rhs,
        jac: Some(vanderpol_jac),
        growth: None,
    },
    ModelDef {
        id: ModelId::Hiv,
        id_str: "hiv",
        dim: 2,
        params: &[pos("A", 0.364), pos("B", 0.06), pos("C", 0.823), pos("D", 0.057)],
        state_labels: &["x", "y"],
        domain: &[Nn, Nn],
        citation: "healthy/infected cell model with saturating infection enhancement",
        factored: &[1],
        rhs: hiv_rhs,
        jac: Some(hiv_jac),
        growth: Some(hiv_growth),
    },
    ModelDef {
        id: ModelId::Gause,
        id_str: "gause",
        dim: 2,
        params: &[
            pos("r", 1.0),
            pos("K", 15.0),
            pos("m", 1.0),
            pos("a", 10.0),
            pos("c", 1.0),
            pos("eps", 0.1),
        ],
        state_labels: &["x", "y"],
        domain: &[Nn, Nn],
        citation: "Gause predator-prey with logistic prey and Holling type II response",
        factored: &[0, 1],
        rhs: gause_rhs,
        jac: Some(gause_jac),
        growth: Some(gause_growth),
    },
    ModelDef {
        id: ModelId::SirEpidemic,
        id_str: "sir-epidemic",
        dim: 3,
        params: &[
            pos("alpha", 0.048),
            pos("beta", 1.0),
            pos("gamma", 0.75),
            pos("d", 0.2),
            pos("p", 0.01),
            pos("K", 0.1),
            pos("Nstar", 400.0),
            pos("eps", 0.005),
        ],
        state_labels: &["S", "I", "N"],
        domain: &[Nn, Nn, Nn],
        citation: "SIR epidemic with logistic demography and saturating incidence",
        factored: &[1],
        rhs: sir_epidemic_rhs,
        jac: Some(sir_epidemic_jac),
        growth: Some(sir_epidemic_growth),
    },
    ModelDef {
        id: ModelId::Fear,
        id_str: "fear",
        dim: 2,
        params: &[
            pos("delta1", 0.2),
            pos("delta2", 0.1),
            pos("kappa", 5.0),
            pos("gamma", 0.1),
            pos("theta", 2.0),
            pos("eps", 0.1),
        ],
        state_labels: &["x", "y"],
        domain: &[Nn, Nn],
        citation: "predator-prey with fear and carry-over effects on prey growth",
        factored: &[0, 1],
        rhs: fear_rhs,
        jac: Some(fear_jac),
        growth: Some(fear_growth),
    },
    ModelDef {
        id: ModelId::FoodWeb,
        id_str: "foodweb",
        dim: 3,
        params: &[
            pos("alpha", 2.5),
            pos("gammabar", 1.0),
            pos("beta", 0.2),
            pos("gamma", 0.25),
            pos("delta", 1.0),
            pos("d1", 0.5),
            pos("d2", 0.26),
        ],
        state_labels: &["x", "y", "z"],
        domain: &[Nn, Nn, Nn],
        citation: "three-species Lotka-Volterra food web with omnivory",
        factored: &[0, 1, 2],
        rhs: foodweb_rhs,
        jac: Some(foodweb_jac),
        growth: Some(foodweb_growth),
    },
    ModelDef {
        id: ModelId::Enso,
        id_str: "enso",
        dim: 3,
        params: &[
            pos("a", 2.0),
            pos("c", 1.4),
            pos("k", 0.7),
            pos("rho", 0.01),
            pos("delta", 0.1),
        ],
        state_labels: &["x", "y", "z"],
        domain: &[Np, Free, Nn],
        citation: "three-timescale El Nino Southern Oscillation conceptual model",
        factored: &[0],
        rhs: enso_rhs,
        jac: Some(enso_jac),
        growth: Some(enso_growth),
    },
    ModelDef {
        id: ModelId::Goodwin,
        id_str: "goodwin",
        dim: 6,
        params: &[
            pos("alpha", 1.0),
            pos("K", 50.0),
            pos("rho", 9.0),
            pos("b1", 1.0),
            pos("b2", 1.0),
            pos("b3", 1.0),
            pos("b4", 1.0),
            pos("b5", 1.0),
            pos("b6", 10.0),
        ],
        state_labels: &["S1", "S2", "S3", "S4", "S5", "S6"],
        domain: &[Nn, Nn, Nn, Nn, Nn, Nn],
        citation: "Goodwin-type metabolic chain with end-product feedback inhibition (n = 5)",
        factored: &[],
        rhs: goodwin_rhs,
        jac: Some(goodwin_jac),
        growth: None,
    },
    ModelDef {
        id: ModelId::SirSecondary,
        id_str: "sir-secondary",
        dim: 3,
        params: &[pos("c1", 1.0), pos("c2", 5.0), pos("c3", 4.0), pos("c4", 90.0)],
        state_labels: &["x", "y", "z"],
        domain: &[Nn, Nn, Nn],
        citation: "epidemic model with a secondary environmental transmission route",
        factored: &[],
        rhs: sir_secondary_rhs,
        jac: Some(sir_secondary_jac),
        growth: None,
    },
];

/// Summary row returned by [`list_models`].
#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub id: ModelId,
    pub dim: usize,
    pub params: Vec<ParamSpec>,
    pub state_labels: Vec<&'static str>,
    pub citation: &'static str,
}

/// All registered models in a fixed order.
pub fn list_models() -> Vec<ModelInfo> {
    REGISTRY
        .iter()
        .map(|d| ModelInfo {
            id: d.id,
            dim: d.dim,
            params: d.params.to_vec(),
            state_labels: d.state_labels.to_vec(),
            citation: d.citation,
        })
        .collect()
}

/// Complete parameter values for one model, stored in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    model: ModelId,
    values: Vec<f64>,
    bif: Option<usize>,
}

impl ParameterSet {
    pub fn defaults(model: ModelId) -> Self {
        ParameterSet {
            model,
            values: model.def().params.iter().map(|p| p.default).collect(),
            bif: None,
        }
    }

    /// Builds a set from explicit values; every schema name must be present.
    pub fn from_values<'a, I>(model: ModelId, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let def = model.def();
        let mut vals: Vec<Option<f64>> = vec![None; def.params.len()];
        for (name, v) in pairs {
            let i = index_of(model, name)?;
            vals[i] = Some(v);
        }
        let mut values = Vec::with_capacity(vals.len());
        for (spec, v) in def.params.iter().zip(vals) {
            values.push(v.ok_or_else(|| Error::MissingParameter {
                name: spec.name.to_string(),
            })?);
        }
        let ps = ParameterSet {
            model,
            values,
            bif: None,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn model(&self) -> ModelId {
        self.model
    }

    pub fn def(&self) -> &'static ModelDef {
        self.model.def()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.values[index_of(self.model, name)?])
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        index_of(self.model, name)
    }

    /// Sets a value, enforcing the sign constraint unless `name` is the
    /// designated bifurcation parameter.
    pub fn set(&mut self, name: &str, v: f64) -> Result<()> {
        let i = index_of(self.model, name)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("parameter value"));
        }
        if self.bif != Some(i) {
            check_constraint(&self.def().params[i], v)?;
        }
        self.values[i] = v;
        Ok(())
    }

    pub fn with(mut self, name: &str, v: f64) -> Result<Self> {
        self.set(name, v)?;
        Ok(self)
    }

    /// Marks `name` as the bifurcation parameter; it may then leave its
    /// constraint region.
    pub fn set_bif_param(&mut self, name: &str) -> Result<()> {
        self.bif = Some(index_of(self.model, name)?);
        Ok(())
    }

    pub fn with_bif_param(mut self, name: &str) -> Result<Self> {
        self.set_bif_param(name)?;
        Ok(self)
    }

    pub fn bif_param(&self) -> Option<&'static str> {
        self.bif.map(|i| self.def().params[i].name)
    }

    pub fn bif_index(&self) -> Option<usize> {
        self.bif
    }

    /// Writes the bifurcation parameter without any check.
    pub(crate) fn set_bif_value(&mut self, v: f64) {
        let i = self.bif.expect("bifurcation parameter not designated");
        self.values[i] = v;
    }

    /// Copy with the bifurcation parameter set to `v` (no constraint check).
    pub fn with_bif_value(&self, v: f64) -> Self {
        let mut out = self.clone();
        out.set_bif_value(v);
        out
    }

    pub fn bif_value(&self) -> Option<f64> {
        self.bif.map(|i| self.values[i])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (spec, &v)) in self.def().params.iter().zip(&self.values).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("parameter value"));
            }
            if self.bif != Some(i) {
                check_constraint(spec, v)?;
            }
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.def()
            .params
            .iter()
            .zip(&self.values)
            .map(|(s, &v)| (s.name.to_string(), v))
            .collect()
    }

    /// Applies overrides on top of the current values.
    pub fn apply(&mut self, overrides: &BTreeMap<String, f64>) -> Result<()> {
        for (k, &v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn index_of(model: ModelId, name: &str) -> Result<usize> {
    model
        .def()
        .param_index(name)
        .ok_or_else(|| Error::UnknownParameter {
            model: model.as_str().to_string(),
            name: name.to_string(),
        })
}

fn check_constraint(spec: &ParamSpec, v: f64) -> Result<()> {
    if spec.constraint.holds(v) {
        Ok(())
    } else {
        Err(Error::ParameterConstraint {
            name: spec.name.to_string(),
            value: v,
            constraint: spec.constraint.as_str(),
        })
    }
}

/// JSON document `{"model": "<id>", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelId,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelConfig {
    pub fn parse(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Paper defaults overridden by the document's values.
    pub fn parameter_set(&self) -> Result<ParameterSet> {
        let mut ps = ParameterSet::defaults(self.model);
        ps.apply(&self.params)?;
        Ok(ps)
    }
}

fn check_state(def: &ModelDef, state: &[f64]) -> Result<()> {
    if state.len() != def.dim {
        return Err(Error::DimensionMismatch {
            expected: def.dim,
            got: state.len(),
        });
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    Ok(())
}

/// Instantaneous derivative of `model` at `state`.
pub fn rhs(model: ModelId, params: &ParameterSet, state: &[f64]) -> Result<Vec<f64>> {
    let def = model.def();
    if params.model != model {
        return Err(Error::InvalidInput(format!(
            "parameter set belongs to `{}`, not `{model}`",
            params.model
        )));
    }
    check_state(def, state)?;
    let mut out = vec![0.0; def.dim];
    def.eval(&params.values, state, &mut out);
    Ok(out)
}

/// Jacobian of `model` at `state` (exact override where registered).
pub fn jacobian(model: ModelId, params: &ParameterSet, state: &[f64]) -> Result<Matrix> {
    let def = model.def();
    if params.model != model {
        return Err(Error::InvalidInput(format!(
            "parameter set belongs to `{}`, not `{model}`",
            params.model
        )));
    }
    check_state(def, state)?;
    let mut j = Matrix::zeros(def.dim);
    def.eval_jacobian(&params.values, state, &mut j);
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_and_order_is_stable() {
        let ids: Vec<_> = list_models().iter().map(|m| m.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "ushape",
                "vanderpol",
                "hiv",
                "gause",
                "sir-epidemic",
                "fear",
                "foodweb",
                "enso",
                "goodwin",
                "sir-secondary"
            ]
        );
        for m in ModelId::ALL {
            assert_eq!(m.as_str().parse::<ModelId>().unwrap(), m);
            assert_eq!(m.def().id, m);
            assert_eq!(m.def().state_labels.len(), m.def().dim);
            assert_eq!(m.def().domain.len(), m.def().dim);
        }
        assert!(matches!("nosuch".parse::<ModelId>(), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn dimensions() {
        let dim = |id: &str| id.parse::<ModelId>().unwrap().def().dim;
        assert_eq!(dim("gause"), 2);
        assert_eq!(dim("goodwin"), 6);
        assert_eq!(dim("enso"), 3);
        assert_eq!(dim("sir-epidemic"), 3);
    }

    #[test]
    fn vanderpol_jacobian_at_origin() {
        let ps = ParameterSet::defaults(ModelId::VanDerPol);
        let j = jacobian(ModelId::VanDerPol, &ps, &[0.0, 0.0]).unwrap();
        assert_eq!(j.rows(), vec![vec![100.0, 100.0], vec![-1.0, 0.0]]);
    }

    #[test]
    fn linear_test_system_fd_is_exact() {
        let a = [[1.5, -2.0], [0.25, 3.0]];
        let j = fd_jacobian_with(2, &[0.3, -0.7], 1e-7, |x, out| {
            out[0] = a[0][0] * x[0] + a[0][1] * x[1];
            out[1] = a[1][0] * x[0] + a[1][1] * x[1];
        });
        for r in 0..2 {
            for c in 0..2 {
                assert!((j[(r, c)] - a[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn closed_form_equilibria_have_zero_residual() {
        let norm = |m: ModelId, ps: &ParameterSet, x: &[f64]| {
            rhs(m, ps, x).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let g = ParameterSet::defaults(ModelId::Gause).with("eps", 0.2).unwrap();
        let xe = 0.2 * 10.0 / (1.0 - 0.2);
        let ye = (1.0 - xe / 15.0) * (xe + 10.0);
        for x in [[0.0, 0.0], [15.0, 0.0], [xe, ye]] {
            assert!(norm(ModelId::Gause, &g, &x) < 1e-12);
        }
        let f = ParameterSet::defaults(ModelId::Fear);
        assert!(norm(ModelId::Fear, &f, &[0.0, 0.0]) < 1e-12);
        assert!(norm(ModelId::Fear, &f, &[(1.0 - 0.2) / 0.1, 0.0]) < 1e-12);
        let e = ParameterSet::defaults(ModelId::Enso);
        assert!(norm(ModelId::Enso, &e, &[0.0, 0.0, 0.7]) < 1e-12);
        let h = ParameterSet::defaults(ModelId::Hiv);
        assert!(norm(ModelId::Hiv, &h, &[1.0 / 0.057, 0.0]) < 1e-12);
        let w = ParameterSet::defaults(ModelId::FoodWeb);
        assert!(norm(ModelId::FoodWeb, &w, &[0.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn constraints_and_bif_exception() {
        let mut ps = ParameterSet::defaults(ModelId::FoodWeb);
        assert!(matches!(
            ps.set("beta", -0.02),
            Err(Error::ParameterConstraint { .. })
        ));
        ps.set_bif_param("beta").unwrap();
        ps.set("beta", -0.02).unwrap();
        assert_eq!(ps.get("beta").unwrap(), -0.02);
        assert!(ps.set("alpha", -1.0).is_err());
        assert!(matches!(
            ps.set("nope", 1.0),
            Err(Error::UnknownParameter { .. })
        ));
    }

    #[test]
    fn from_values_requires_every_name() {
        let err = ParameterSet::from_values(ModelId::Hiv, [("A", 1.0), ("B", 1.0)]).unwrap_err();
        assert!(matches!(err, Error::MissingParameter { .. }));
        let ok = ParameterSet::from_values(
            ModelId::Hiv,
            [("A", 0.364), ("B", 0.06), ("C", 0.823), ("D", 0.057)],
        )
        .unwrap();
        assert_eq!(ok, ParameterSet::defaults(ModelId::Hiv));
    }

    #[test]
    fn config_document_parsing() {
        let cfg = ModelConfig::parse(r#"{"model": "gause", "params": {"eps": 0.05}}"#).unwrap();
        let ps = cfg.parameter_set().unwrap();
        assert_eq!(ps.get("eps").unwrap(), 0.05);
        assert_eq!(ps.get("K").unwrap(), 15.0);
        assert!(ModelConfig::parse(r#"{"model": "gause", "extra": 1}"#).is_err());
        assert!(ModelConfig::parse(r#"{"model": "nosuch"}"#).is_err());
        let bad = ModelConfig::parse(r#"{"model": "gause", "params": {"zeta": 1}}"#).unwrap();
        assert!(bad.parameter_set().unwrap_err().is_config());
    }

    #[test]
    fn rhs_rejects_bad_state() {
        let ps = ParameterSet::defaults(ModelId::Gause);
        assert!(matches!(
            rhs(ModelId::Gause, &ps, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            rhs(ModelId::Gause, &ps, &[f64::NAN, 1.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(rhs(ModelId::Fear, &ps, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn growth_matches_rhs_over_state() {
        for m in ModelId::ALL {
            let def = m.def();
            let ps = ParameterSet::defaults(m);
            let x: Vec<f64> = def
                .domain
                .iter()
                .enumerate()
                .map(|(i, r)| r.sign().unwrap_or(1.0) * (0.3 + 0.17 * i as f64))
                .collect();
            let f = rhs(m, &ps, &x).unwrap();
            for &i in def.factored {
                let g = def.eval_growth(ps.values(), &x, i);
                assert!((g * x[i] - f[i]).abs() < 1e-13, "{m} coordinate {i}");
            }
        }
    }
}
