//! Run configuration: JSON file, command-line flags and per-model presets,
//! merged in that order of increasing precedence reversed (flags win).

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use slowfast::integrate::{IntegratorConfig, Method};
use slowfast::studies::{study, Study};
use slowfast::{Error, ModelId, ParameterSet, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SLOWFAST_OUT";
pub const DEFAULT_OUT_DIR: &str = "slowfast-out";
pub const DEFAULT_TSPAN: (f64, f64) = (0.0, 500.0);
pub const DEFAULT_POINTS: usize = 37;

/// A state coordinate, by index or by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observable {
    Index(usize),
    Label(String),
}

impl Observable {
    pub fn parse(s: &str) -> Observable {
        s.parse().map(Observable::Index).unwrap_or_else(|_| Observable::Label(s.to_string()))
    }

    fn resolve(&self, model: ModelId) -> Result<usize> {
        let def = model.def();
        let i = match self {
            Observable::Index(i) => Some(*i),
            Observable::Label(l) => def.state_labels.iter().position(|s| s == l),
        };
        i.filter(|&i| i < def.dim)
            .ok_or_else(|| Error::Config(format!("model {model} has no state coordinate {self:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOverrides {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub model: Option<ModelId>,
    pub params: BTreeMap<String, f64>,
    pub bif_param: Option<String>,
    pub range: Option<(f64, f64)>,
    /// Explicit scan grid; otherwise `points` values spread over `range`.
    pub grid: Option<Vec<f64>>,
    pub points: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub tspan: Option<(f64, f64)>,
    pub observable: Option<Observable>,
    pub out_dir: Option<PathBuf>,
    pub integrator: IntegratorOverrides,
    pub plot: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    /// `self` with every field set in `top` replaced by `top`'s value.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        fn pick<T>(a: &mut Option<T>, b: Option<T>) {
            if b.is_some() {
                *a = b;
            }
        }
        pick(&mut self.command, top.command);
        pick(&mut self.model, top.model);
        self.params.extend(top.params);
        pick(&mut self.bif_param, top.bif_param);
        pick(&mut self.range, top.range);
        pick(&mut self.grid, top.grid);
        pick(&mut self.points, top.points);
        pick(&mut self.x0, top.x0);
        pick(&mut self.tspan, top.tspan);
        pick(&mut self.observable, top.observable);
        pick(&mut self.out_dir, top.out_dir);
        pick(&mut self.integrator.rtol, top.integrator.rtol);
        pick(&mut self.integrator.atol, top.integrator.atol);
        pick(&mut self.integrator.method, top.integrator.method);
        self.plot |= top.plot;
        self
    }

    /// Fills gaps from the model's preset and checks everything.
    pub fn resolve(&self) -> Result<Resolved> {
        let model = self
            .model
            .ok_or_else(|| Error::Config("no model given (use --model or a config file)".into()))?;
        let preset = study(model);
        let bif_param = match &self.bif_param {
            Some(b) => ParameterSet::defaults(model).index(b).map(|i| model.def().params[i].name)?,
            None => preset.bif_param,
        };
        let mut params = ParameterSet::defaults(model).with_bif_param(bif_param)?;
        params.apply(&self.params)?;

        let range = match self.range {
            Some(r) => Some(r),
            None if bif_param == preset.bif_param => Some(preset.range),
            None => None,
        };
        if let Some((lo, hi)) = range {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config(format!("range {lo}:{hi} must be finite and increasing")));
            }
        }
        let x0 = self.x0.clone().unwrap_or_else(|| preset.x0.to_vec());
        if x0.len() != model.def().dim {
            return Err(Error::DimensionMismatch {
                expected: model.def().dim,
                got: x0.len(),
            });
        }
        let tspan = self.tspan.unwrap_or(DEFAULT_TSPAN);
        if !(tspan.1 > tspan.0) {
            return Err(Error::Config(format!("tspan {}:{} must be increasing", tspan.0, tspan.1)));
        }
        let observable = match &self.observable {
            Some(o) => o.resolve(model)?,
            None => preset.observable,
        };
        let mut integrator = IntegratorConfig::default();
        if let Some(v) = self.integrator.rtol {
            integrator.rtol = v;
        }
        if let Some(v) = self.integrator.atol {
            integrator.atol = v;
        }
        if let Some(m) = self.integrator.method {
            integrator.method = m;
        }
        integrator.validate().map_err(|e| Error::Config(e.to_string()))?;
        let out_dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Resolved {
            model,
            params,
            bif_param,
            range,
            grid: self.grid.clone(),
            points: self.points.unwrap_or(DEFAULT_POINTS),
            x0,
            tspan,
            observable,
            out_dir,
            integrator,
            plot: self.plot,
            preset,
        })
    }
}

/// A fully determined run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: ModelId,
    pub params: ParameterSet,
    pub bif_param: &'static str,
    pub range: Option<(f64, f64)>,
    pub grid: Option<Vec<f64>>,
    pub points: usize,
    pub x0: Vec<f64>,
    pub tspan: (f64, f64),
    pub observable: usize,
    pub out_dir: PathBuf,
    pub integrator: IntegratorConfig,
    pub plot: bool,
    pub preset: Study,
}

impl Resolved {
    pub fn range(&self) -> Result<(f64, f64)> {
        self.range.ok_or_else(|| {
            Error::Config(format!(
                "no range for parameter {} (use --range lo:hi)",
                self.bif_param
            ))
        })
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        let (lo, hi) = self.range()?;
        let n = self.points.max(3);
        Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
    }

    pub fn labels(&self) -> &'static [&'static str] {
        self.model.def().state_labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            command: Some("scan".into()),
            model: Some(ModelId::FoodWeb),
            params: BTreeMap::from([("beta".to_string(), 0.2)]),
            bif_param: Some("beta".into()),
            range: Some((-0.1, 1.0)),
            grid: Some(vec![0.0, 0.5, 1.0]),
            points: Some(9),
            x0: Some(vec![1.0, 1.0, 1.0]),
            tspan: Some((0.0, 800.0)),
            observable: Some(Observable::Label("y".into())),
            out_dir: Some("out".into()),
            integrator: IntegratorOverrides {
                rtol: Some(1e-9),
                atol: None,
                method: Some(Method::ImplicitStiff),
            },
            plot: true,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn flags_override_file_which_overrides_presets() {
        let file = RunConfig::from_json(r#"{"model": "gause", "params": {"r": 2.0, "K": 12.0}, "tspan": [0, 100]}"#).unwrap();
        let flags = RunConfig {
            params: BTreeMap::from([("K".to_string(), 14.0)]),
            ..Default::default()
        };
        let r = file.overlay(flags).resolve().unwrap();
        assert_eq!(r.params.get("r").unwrap(), 2.0);
        assert_eq!(r.params.get("K").unwrap(), 14.0);
        assert_eq!(r.params.get("m").unwrap(), 1.0);
        assert_eq!(r.tspan, (0.0, 100.0));
        assert_eq!(r.bif_param, "eps");
        assert_eq!(r.range, Some((0.0, 0.6)));
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        assert!(RunConfig::from_json(r#"{"model": "gause", "colour": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": "nosuchmodel"}"#).is_err());
        let base = RunConfig {
            model: Some(ModelId::Gause),
            ..Default::default()
        };
        let bad = [
            RunConfig { x0: Some(vec![1.0]), ..base.clone() },
            RunConfig { range: Some((1.0, 0.0)), ..base.clone() },
            RunConfig { bif_param: Some("zeta".into()), ..base.clone() },
            RunConfig { observable: Some(Observable::Label("q".into())), ..base.clone() },
            RunConfig { params: BTreeMap::from([("r".to_string(), -1.0)]), ..base.clone() },
        ];
        for cfg in bad {
            assert!(cfg.resolve().unwrap_err().is_config(), "{cfg:?}");
        }
        let other_param = RunConfig { bif_param: Some("r".into()), ..base };
        assert!(other_param.resolve().unwrap().range().is_err());
    }
}
