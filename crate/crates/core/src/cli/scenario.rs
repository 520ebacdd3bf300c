use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentProfile, ManipulationMatrix};
use crate::altmin::{Scenario, DEFAULT_MAX_ITERS};
use crate::choice::{ChoiceModel, ChoiceSpec};
use crate::error::{Error, Result};
use crate::linalg::{check_simplex, SIMPLEX_TOL};
use crate::net::{NetworkState, TransitionMatrix};
use crate::orgs::OrganizationProfile;

pub const DEFAULT_SEED: u64 = 0;

/// Either a path to a header-free CSV (relative paths resolve against the
/// scenario file) or the rows of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSource {
    Path(PathBuf),
    Inline(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub aspired_state: Vec<f64>,
    pub choice_model: ChoiceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizationEntry {
    pub eta: f64,
    pub tau: f64,
    pub anchor: Vec<f64>,
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: NetworkSource,
    pub horizon: u32,
    pub agents: Vec<AgentEntry>,
    pub organizations: Vec<OrganizationEntry>,
    #[serde(default)]
    pub delta1: f64,
    #[serde(default)]
    pub delta2: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Columns of the initial manipulation matrix, one per organization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
}

fn state(values: &[f64], n: usize, what: impl Fn() -> String) -> Result<NetworkState> {
    if values.len() != n {
        return Err(Error::dims(what(), n, values.len()));
    }
    check_simplex(values, SIMPLEX_TOL, &what)?;
    NetworkState::from_slice(values)
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario file serializes")
    }

    /// Validates every field and builds the scenario. `base` resolves a
    /// relative network path.
    pub fn into_scenario(self, base: Option<&Path>) -> Result<Scenario> {
        let network = match &self.network {
            NetworkSource::Inline(rows) => TransitionMatrix::from_rows(rows)?,
            NetworkSource::Path(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                TransitionMatrix::from_csv(path)?
            }
        };
        let n = network.n();
        let k = self.organizations.len();
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let aspired_state = state(&a.aspired_state, n, || format!("agent {i} aspired_state"))?;
                let model = ChoiceModel::from_spec(&a.choice_model, k).map_err(|e| match e {
                    Error::InvalidModel(m) => Error::InvalidModel(format!("agent {i}: {m}")),
                    other => other,
                })?;
                Ok(AgentProfile { aspired_state, model })
            })
            .collect::<Result<Vec<_>>>()?;
        let orgs = self
            .organizations
            .iter()
            .enumerate()
            .map(|(j, o)| {
                let anchor = state(&o.anchor, n, || format!("organization {j} anchor"))?;
                OrganizationProfile::new(o.eta, o.tau, anchor).map_err(|e| match e {
                    Error::InvalidParameter(m) => Error::InvalidParameter(format!("organization {j}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let seed = self.seed.unwrap_or_else(|| {
            info!("scenario has no seed; using {DEFAULT_SEED}");
            DEFAULT_SEED
        });
        let mut scenario = Scenario::new(network, self.horizon, agents, orgs)?
            .with_deltas(self.delta1, self.delta2)?
            .with_max_iters(self.max_iters)
            .with_seed(seed);
        if let Some(cols) = &self.x0 {
            if cols.len() != k {
                return Err(Error::dims("x0 columns", k, cols.len()));
            }
            let cols = cols
                .iter()
                .enumerate()
                .map(|(j, c)| state(c, n, || format!("x0 column {j}")).map(NetworkState::into_vector))
                .collect::<Result<Vec<DVector<f64>>>>()?;
            scenario = scenario.with_x0(ManipulationMatrix::from_columns(&cols)?)?;
        }
        Ok(scenario)
    }

    /// File form of a scenario: inline network, explicit seed and `x0`.
    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        let organizations = s
            .orgs
            .iter()
            .enumerate()
            .map(|(j, o)| {
                let anchor = o.anchor().ok_or_else(|| {
                    Error::InvalidParameter(format!("organization {j} has no anchor payoff"))
                })?;
                Ok(OrganizationEntry {
                    eta: o.eta,
                    tau: o.tau(),
                    anchor: anchor.as_vector().iter().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            network: NetworkSource::Inline(s.network.rows()),
            horizon: s.t,
            agents: s
                .agents
                .iter()
                .map(|a| AgentEntry {
                    aspired_state: a.aspired_state.as_vector().iter().copied().collect(),
                    choice_model: a.model.to_spec(),
                })
                .collect(),
            organizations,
            delta1: s.delta1,
            delta2: s.delta2,
            max_iters: s.max_iters,
            seed: Some(s.seed),
            x0: Some(
                s.x0.matrix()
                    .column_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect(),
            ),
        })
    }
}

pub fn parse_scenario_str(text: &str, base: Option<&Path>) -> Result<Scenario> {
    ScenarioFile::from_json(text)?.into_scenario(base)
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, path.parent())
}
