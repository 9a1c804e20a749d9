//! Versioned JSON documents and CSV tables.
//!
//! Every document carries a `schema` tag; reading a document with a
//! different tag is an error rather than a best-effort parse.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::hfl_sim::{HflConfig, LossKind, WeightVector};
use crate::scenario::{Assignment, GeneratorConfig, Scenario};
use crate::sroa::{SolverConfig, SroaOutcome};
use crate::tsia::{TsiaConfig, TsiaResult, TsiaStep};

/// `f64` fields that may hold `inf` (e.g. the objective of an infeasible
/// pattern). JSON has no infinity, so non-finite values travel as strings.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "expected a number, `inf`, `-inf` or `nan`, got `{other}`"
                ))),
            },
        }
    }
}

/// A JSON document with a fixed schema tag.
pub trait Document: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;

    fn schema(&self) -> &str;

    fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>");
        if found != Self::SCHEMA {
            return Err(Error::Schema {
                expected: Self::SCHEMA.to_string(),
                found: found.to_string(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

macro_rules! document {
    ($ty:ty, $tag:literal) => {
        impl Document for $ty {
            const SCHEMA: &'static str = $tag;

            fn schema(&self) -> &str {
                &self.schema
            }
        }
    };
}

/// Units of every physical quantity stored in a scenario.
pub fn scenario_units() -> BTreeMap<String, String> {
    [
        ("bandwidth", "Hz"),
        ("cpu_freq", "Hz"),
        ("power", "W"),
        ("noise_density", "W/Hz"),
        ("model_size", "bit"),
        ("cloud_rate", "bit/s"),
        ("cycles_per_sample", "cycle"),
        ("capacitance_coeff", "J/(cycle*Hz^2)"),
        ("position", "m"),
        ("gain", "linear"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub schema: String,
    pub units: BTreeMap<String, String>,
    /// Generator inputs, when the scenario was drawn rather than hand-written.
    pub seed: Option<u64>,
    pub generator: Option<GeneratorConfig>,
    pub scenario: Scenario,
}
document!(ScenarioDocument, "hfl.scenario/1");

impl ScenarioDocument {
    pub fn new(scenario: Scenario, seed: Option<u64>, generator: Option<GeneratorConfig>) -> Self {
        ScenarioDocument {
            schema: Self::SCHEMA.into(),
            units: scenario_units(),
            seed,
            generator,
            scenario,
        }
    }

    /// Read, check units, and validate the scenario.
    pub fn load(path: &Path) -> Result<Self> {
        let doc = Self::read(path)?;
        if doc.units != scenario_units() {
            return Err(Error::InvalidInput(format!(
                "{}: unexpected units block",
                path.display()
            )));
        }
        doc.scenario.validate()?;
        Ok(doc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SroaDocument {
    pub schema: String,
    pub solver: SolverConfig,
    pub assignment: Assignment,
    pub outcome: SroaOutcome,
}
document!(SroaDocument, "hfl.sroa/1");

impl SroaDocument {
    pub fn new(solver: SolverConfig, assignment: Assignment, outcome: SroaOutcome) -> Self {
        SroaDocument {
            schema: Self::SCHEMA.into(),
            solver,
            assignment,
            outcome,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsiaDocument {
    pub schema: String,
    pub config: TsiaConfig,
    pub result: TsiaResult,
}
document!(TsiaDocument, "hfl.tsia/1");

impl TsiaDocument {
    pub fn new(config: TsiaConfig, result: TsiaResult) -> Self {
        TsiaDocument {
            schema: Self::SCHEMA.into(),
            config,
            result,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HflDocument {
    pub schema: String,
    pub config: HflConfig,
    pub loss: LossKind,
    pub task_seed: u64,
    pub dim: usize,
    /// `true` for the two-tier reference run.
    pub flat: bool,
    pub assignment: Assignment,
    pub losses: Vec<f64>,
    pub weights: WeightVector,
}
document!(HflDocument, "hfl.hfl_sim/1");

impl HflDocument {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: HflConfig,
        loss: LossKind,
        task_seed: u64,
        dim: usize,
        flat: bool,
        assignment: Assignment,
        losses: Vec<f64>,
        weights: WeightVector,
    ) -> Self {
        HflDocument {
            schema: Self::SCHEMA.into(),
            config,
            loss,
            task_seed,
            dim,
            flat,
            assignment,
            losses,
            weights,
        }
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::InvalidInput(format!("csv: {other:?}")),
        }
    }
}

#[derive(Serialize)]
struct UserRow {
    user: usize,
    edge: usize,
    bandwidth: f64,
    cpu_freq: f64,
    power: f64,
    t_cmp: f64,
    e_cmp: f64,
    t_com: f64,
    e_com: f64,
}

/// One row per user: allocation and per-edge-iteration costs.
pub fn write_allocation_csv<W: Write>(
    out: W,
    alloc: &crate::cost::Allocation,
    report: &CostReport,
) -> Result<()> {
    let mut w = csv_writer(out);
    for u in &report.users {
        w.serialize(UserRow {
            user: u.user,
            edge: u.edge,
            bandwidth: alloc.bandwidth[u.user],
            cpu_freq: alloc.cpu_freq[u.user],
            power: alloc.power[u.user],
            t_cmp: u.t_cmp,
            e_cmp: u.e_cmp,
            t_com: u.t_com,
            e_com: u.e_com,
        })?;
    }
    finish(w)
}

/// One row per edge, per global iteration.
pub fn write_edges_csv<W: Write>(out: W, report: &CostReport) -> Result<()> {
    let mut w = csv_writer(out);
    for e in &report.edges {
        w.serialize(e)?;
    }
    finish(w)
}

#[derive(Serialize)]
struct TraceRow {
    q: usize,
    stage: u8,
    m_plus: Option<usize>,
    m_minus: Option<usize>,
    user: Option<usize>,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "R_star")]
    r_star: f64,
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TsiaStep]) -> Result<()> {
    let mut w = csv_writer(out);
    for s in trace {
        w.serialize(TraceRow {
            q: s.q,
            stage: s.stage.number(),
            m_plus: s.m_plus,
            m_minus: s.m_minus,
            user: s.user,
            r: s.objective,
            r_star: s.best_objective,
        })?;
    }
    finish(w)
}

/// One point of an importance-weight sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub feasible: bool,
    #[serde(rename = "R")]
    pub objective: f64,
    #[serde(rename = "E_sum")]
    pub e_sum: Option<f64>,
    #[serde(rename = "T_sum")]
    pub t_sum: Option<f64>,
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Serialize)]
struct LossRow {
    global_iter: usize,
    loss: f64,
}

/// `global_iter` counts from 1.
pub fn write_loss_csv<W: Write>(out: W, losses: &[f64]) -> Result<()> {
    let mut w = csv_writer(out);
    for (i, &loss) in losses.iter().enumerate() {
        w.serialize(LossRow {
            global_iter: i + 1,
            loss,
        })?;
    }
    finish(w)
}
