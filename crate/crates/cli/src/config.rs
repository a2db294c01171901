//! TOML run configuration.
//!
//! Every key is optional; absent keys take the default simulation
//! parameters. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;
use stgf_core::controller::{DroopConfig, StgfConfig};
use stgf_core::model::{CostParams, GridSignals, Input, PlantParams, State};
use stgf_core::sgf::ClassKappaSpec;
use stgf_core::sim::{ControllerKind, PlantMode, ReferenceStep, Scenario};
use stgf_core::trajopt::HorizonSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub r_pu: f64,
    pub l_pu: f64,
    pub i_max_pu: f64,
    /// Use the cross-coupling sign as printed (diagnostic only).
    pub literal_coupling: bool,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantParams::default();
        Self {
            r_pu: p.r,
            l_pu: p.l,
            i_max_pu: p.i_max,
            literal_coupling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub e_pu: f64,
    pub f_hz: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            e_pu: 1.0,
            f_hz: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub m_p: f64,
    pub m_q: f64,
    pub tau_v: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostParams::default();
        Self {
            m_p: c.m_p,
            m_q: c.m_q,
            tau_v: c.tau_v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerType {
    Stgf,
    Droop,
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaForm {
    /// `gain * (exp(rate z) - 1)` on inequalities, `gain * z` on equalities.
    Shifted,
    /// `gain * exp(rate z)` on inequalities, `gain * z` on equalities.
    Printed,
    /// `gain * exp(rate z)` on both.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtrlSection {
    #[serde(rename = "type")]
    pub kind: ControllerType,
    pub horizon: usize,
    pub k_updates: usize,
    pub xi: f64,
    pub alpha_gain: f64,
    pub alpha_rate: f64,
    pub alpha_form: AlphaForm,
    pub warm_start: bool,
}

impl Default for CtrlSection {
    fn default() -> Self {
        let s = StgfConfig::default();
        Self {
            kind: ControllerType::Stgf,
            horizon: s.horizon.horizon,
            k_updates: s.k_updates,
            xi: s.xi,
            alpha_gain: 20.0,
            alpha_rate: 10.0,
            alpha_form: AlphaForm::Shifted,
            warm_start: s.warm_start,
        }
    }
}

/// Droop gains; absent keys use [`DroopConfig::for_plant`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopSection {
    pub k_p: Option<f64>,
    pub k_q: Option<f64>,
    pub tau_f: Option<f64>,
    pub i_thresh: Option<f64>,
    pub k_vi: Option<f64>,
    pub k_sync: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantModel {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_ms: f64,
    pub n_steps: usize,
    pub substeps: usize,
    pub plant_model: PlantModel,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt_ms: 1.0,
            n_steps: 300,
            substeps: 10,
            plant_model: PlantModel::Rk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub at: usize,
    pub p_ref: f64,
    pub q_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub steps: Vec<StepEntry>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            steps: vec![StepEntry {
                at: 100,
                p_ref: 2.5,
                q_ref: -0.5,
            }],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub grid: GridSection,
    pub cost: CostSection,
    pub ctrl: CtrlSection,
    pub droop: DroopSection,
    pub sim: SimSection,
    pub scenario: ScenarioSection,
}

/// A configuration turned into core types.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub plant: PlantParams,
    pub grid: GridSignals,
    /// Cost with the references in force at cycle 0.
    pub cost: CostParams,
    pub scenario: Scenario,
    pub stgf: StgfConfig,
    pub droop: DroopConfig,
    pub kind: ControllerType,
}

impl Resolved {
    pub fn controller(&self, kind: ControllerType) -> ControllerKind {
        match kind {
            ControllerType::Stgf => ControllerKind::Stgf(self.stgf),
            ControllerType::Droop => ControllerKind::Droop(self.droop),
            ControllerType::OpenLoop => ControllerKind::OpenLoop,
        }
    }

    /// Cost with the references of the last scheduled step.
    pub fn final_cost(&self) -> CostParams {
        let mut c = self.cost;
        if let Some(s) = self.scenario.references.last() {
            c.p_ref = s.p_ref;
            c.q_ref = s.q_ref;
        }
        c
    }
}

fn key_err(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {e}"))
}

fn positive(key: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(key_err(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let plant = PlantParams {
            r: positive("plant.r_pu", self.plant.r_pu)?,
            l: positive("plant.l_pu", self.plant.l_pu)?,
            i_max: positive("plant.i_max_pu", self.plant.i_max_pu)?,
            literal_coupling: self.plant.literal_coupling,
            ..PlantParams::default()
        };
        plant.validate().map_err(|e| key_err("plant", e))?;

        let grid = GridSignals {
            e_mag: self.grid.e_pu,
            omega_e: 2.0 * PI * positive("grid.f_hz", self.grid.f_hz)?,
        };
        grid.validate().map_err(|e| key_err("grid", e))?;

        let cost = CostParams {
            m_p: self.cost.m_p,
            m_q: self.cost.m_q,
            tau_v: self.cost.tau_v,
            ..CostParams::default()
        };
        cost.validate().map_err(|e| key_err("cost", e))?;

        let dt = positive("sim.dt_ms", self.sim.dt_ms)? * 1e-3;
        let plant_mode = match self.sim.plant_model {
            PlantModel::Rk4 => {
                if self.sim.substeps == 0 {
                    return Err(key_err("sim.substeps", "must be at least 1"));
                }
                PlantMode::Rk4 {
                    substeps: self.sim.substeps,
                }
            }
            PlantModel::Euler => PlantMode::Euler,
        };
        let scenario = Scenario {
            n_steps: self.sim.n_steps,
            dt,
            x_init: State::default(),
            u_init: Input::new(grid.e_mag, grid.omega_e),
            grid,
            references: self
                .scenario
                .steps
                .iter()
                .map(|s| ReferenceStep {
                    at: s.at,
                    p_ref: s.p_ref,
                    q_ref: s.q_ref,
                })
                .collect(),
            grid_steps: Vec::new(),
            plant_mode,
        };
        scenario
            .validate()
            .map_err(|e| key_err("scenario.steps", e))?;

        let c = &self.ctrl;
        let horizon = HorizonSpec::new(c.horizon, dt).map_err(|e| key_err("ctrl.horizon", e))?;
        let gain = positive("ctrl.alpha_gain", c.alpha_gain)?;
        let rate = positive("ctrl.alpha_rate", c.alpha_rate)?;
        let kappa = match c.alpha_form {
            AlphaForm::Shifted => ClassKappaSpec::vanishing(gain, rate),
            AlphaForm::Printed => ClassKappaSpec::printed_exponential(gain, rate),
            AlphaForm::Literal => ClassKappaSpec::exponential_everywhere(gain, rate),
        };
        let stgf = StgfConfig {
            horizon,
            k_updates: c.k_updates,
            xi: positive("ctrl.xi", c.xi)?,
            kappa,
            warm_start: c.warm_start,
        };
        stgf.validate().map_err(|e| key_err("ctrl", e))?;

        let base = DroopConfig::for_plant(&plant);
        let d = &self.droop;
        let droop = DroopConfig {
            k_p: d.k_p.unwrap_or(base.k_p),
            k_q: d.k_q.unwrap_or(base.k_q),
            tau_f: d.tau_f.unwrap_or(base.tau_f),
            i_thresh: d.i_thresh.unwrap_or(base.i_thresh),
            k_vi: d.k_vi.unwrap_or(base.k_vi),
            k_sync: d.k_sync.unwrap_or(base.k_sync),
        };
        droop.validate(&plant).map_err(|e| key_err("droop", e))?;

        Ok(Resolved {
            plant,
            grid,
            cost,
            scenario,
            stgf,
            droop,
            kind: c.kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let r = cfg.resolve().unwrap();
        assert_eq!(r.scenario, Scenario::default());
        assert_eq!(r.stgf, StgfConfig::default());
        assert_eq!(r.plant, PlantParams::default());
        assert_eq!(r.cost, CostParams::default());
        assert_eq!(r.kind, ControllerType::Stgf);
        let f = r.final_cost();
        assert_eq!((f.p_ref, f.q_ref), (2.5, -0.5));
    }

    #[test]
    fn canonical_keys_parse() {
        let text = r#"
            [plant]
            r_pu = 0.01
            l_pu = 0.02
            i_max_pu = 1.2
            [grid]
            e_pu = 1.02
            f_hz = 50.0
            [cost]
            m_p = 3.0
            m_q = 0.1
            tau_v = 0.2
            [ctrl]
            type = "droop"
            horizon = 5
            k_updates = 3
            xi = 5e-4
            alpha_gain = 10.0
            alpha_rate = 5.0
            [sim]
            dt_ms = 0.5
            n_steps = 40
            [scenario]
            steps = [{ at = 0, p_ref = 0.5, q_ref = 0.1 }, { at = 20, p_ref = 1.0, q_ref = 0.0 }]
        "#;
        let r = RunConfig::from_toml_str(text).unwrap().resolve().unwrap();
        assert_eq!(r.plant.r, 0.01);
        assert_eq!(r.plant.i_max, 1.2);
        assert!((r.grid.omega_e - 100.0 * PI).abs() < 1e-12);
        assert_eq!(r.cost.tau_v, 0.2);
        assert_eq!(r.kind, ControllerType::Droop);
        assert_eq!(r.stgf.horizon.horizon, 5);
        assert_eq!(r.stgf.horizon.dt, 5e-4);
        assert_eq!(r.stgf.k_updates, 3);
        assert_eq!(r.scenario.n_steps, 40);
        assert_eq!(r.scenario.references.len(), 2);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[plant]\nr_ohm = 1.0\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("r_ohm"), "{err}");
        let err = RunConfig::from_toml_str("[ctrlx]\n").unwrap_err();
        assert!(err.to_string().contains("ctrlx"), "{err}");
    }

    #[test]
    fn bad_values_name_their_key() {
        let err = RunConfig::from_toml_str("[sim]\ndt_ms = -1.0\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("sim.dt_ms"), "{err}");
        let err = RunConfig::from_toml_str("[scenario]\nsteps = [{at = 5, p_ref = 1.0, q_ref = 0.0}, {at = 5, p_ref = 1.0, q_ref = 0.0}]\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("scenario.steps"), "{err}");
        let err = RunConfig::from_toml_str("[ctrl]\ntype = \"mpc\"\n").unwrap_err();
        assert!(err.to_string().contains("mpc"), "{err}");
    }
}
