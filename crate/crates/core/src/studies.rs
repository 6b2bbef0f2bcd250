//! Per-model scan presets: bifurcation parameter, range, observable,
//! initial condition and equilibrium seed box.

use serde::Serialize;

use crate::models::{ModelId, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    pub model: ModelId,
    pub bif_param: &'static str,
    pub range: (f64, f64),
    /// Coordinate used for oscillation metrics and plots.
    pub observable: usize,
    pub x0: &'static [f64],
    pub seed_bounds: &'static [(f64, f64)],
    pub seed_counts: &'static [usize],
    /// Parameter values of the published time-history panels.
    pub panels: &'static [f64],
}

impl Study {
    pub fn params(&self) -> ParameterSet {
        ParameterSet::defaults(self.model)
            .with_bif_param(self.bif_param)
            .expect("preset bifurcation parameter exists")
    }
}

pub fn study(model: ModelId) -> Study {
    use ModelId::*;
    match model {
        UShape => Study {
            model,
            bif_param: "eps",
            range: (0.0, 0.1),
            observable: 0,
            // on the symmetry line x = 0; orbits through it close up
            x0: &[0.0, 1.0],
            seed_bounds: &[(-2.0, 2.0), (-1.0, 3.0)],
            seed_counts: &[5, 5],
            panels: &[0.005],
        },
        VanDerPol => Study {
            model,
            bif_param: "eps",
            range: (0.005, 0.5),
            observable: 0,
            x0: &[0.5, 0.0],
            seed_bounds: &[(-3.0, 3.0), (-3.0, 3.0)],
            seed_counts: &[5, 5],
            panels: &[0.01],
        },
        Hiv => Study {
            model,
            bif_param: "D",
            range: (0.02, 0.1),
            observable: 1,
            x0: &[5.0, 13.0],
            seed_bounds: &[(0.0, 20.0), (0.0, 1.0)],
            seed_counts: &[6, 11],
            panels: &[0.057],
        },
        Gause => Study {
            model,
            bif_param: "eps",
            range: (0.0, 0.6),
            observable: 0,
            x0: &[5.0, 10.0],
            seed_bounds: &[(0.0, 16.0), (0.0, 15.0)],
            seed_counts: &[5, 5],
            panels: &[0.4, 0.3, 0.2, 0.1, 0.05, 0.02, 0.0],
        },
        SirEpidemic => Study {
            model,
            bif_param: "eps",
            range: (0.0, 0.05),
            observable: 1,
            x0: &[40.0, 20.0, 150.0],
            seed_bounds: &[(0.0, 400.0), (0.0, 100.0), (0.0, 450.0)],
            seed_counts: &[5, 5, 5],
            panels: &[0.02, 0.01, 0.005, 0.002, 0.001, 0.0],
        },
        Fear => Study {
            model,
            bif_param: "eps",
            range: (0.0, 0.6),
            observable: 0,
            x0: &[0.2, 0.9],
            seed_bounds: &[(0.0, 2.0), (0.0, 2.0)],
            seed_counts: &[6, 6],
            panels: &[0.3, 0.1, 0.05, 0.01, 0.005, 0.0],
        },
        FoodWeb => Study {
            model,
            bif_param: "beta",
            range: (-0.1, 1.0),
            observable: 1,
            x0: &[1.0, 1.0, 1.0],
            seed_bounds: &[(0.0, 1.5), (0.0, 1.5), (0.0, 1.5)],
            seed_counts: &[4, 4, 4],
            panels: &[0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.01, 0.001, 0.0],
        },
        Enso => Study {
            model,
            bif_param: "delta",
            range: (0.0, 0.4),
            observable: 0,
            x0: &[-0.001, -0.4, 0.8],
            seed_bounds: &[(-2.0, 0.0), (-1.0, 1.0), (0.0, 2.0)],
            seed_counts: &[5, 5, 5],
            panels: &[0.4, 0.16, 0.14, 0.12, 0.1, 0.08, 0.06, 0.04, 0.02, 0.01, 0.0],
        },
        Goodwin => Study {
            model,
            bif_param: "b6",
            range: (0.0, 45.0),
            observable: 5,
            x0: &[0.0; 6],
            seed_bounds: &[(0.0, 3.0); 6],
            seed_counts: &[2; 6],
            panels: &[45.0, 40.0, 30.0, 10.0, 1.0, 0.1, 0.03],
        },
        SirSecondary => Study {
            model,
            bif_param: "c3",
            range: (0.0, 12.0),
            observable: 1,
            x0: &[0.09777, 0.02081, 1.04290],
            seed_bounds: &[(0.0, 1.0), (0.0, 0.2), (0.0, 2.0)],
            seed_counts: &[5, 5, 5],
            panels: &[12.0, 10.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.1, 0.0],
        },
    }
}

pub fn studies() -> Vec<Study> {
    ModelId::ALL.iter().map(|&m| study(m)).collect()
}
