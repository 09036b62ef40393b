//! Python bindings: scenario runs, ledger verification, the network and the
//! deterministic building blocks (keys, fixed-point, thermostat, dispatch,
//! swarm aggregation, forecasting).

use std::path::PathBuf;

use egsl_core::cli;
use egsl_core::codec::Value;
use egsl_core::crypto::{Hash, KeyPair};
use egsl_core::energy::{evaluate_dispatch, EnergyConfig};
use egsl_core::fixed::Fixed;
use egsl_core::forecast::{Forecaster, SeasonalNaive};
use egsl_core::gov::{thermostat_step, Answer, ThermostatConfig, ThermostatProfile};
use egsl_core::ledger::{LedgerFile, LedgerMode, TxRequest};
use egsl_core::net::{Network, NetworkConfig, Submission};
use egsl_core::policy;
use egsl_core::scenario::{self, RunOptions, RunReport, Script};
use egsl_core::swarm;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(egsl, EgslError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    EgslError::new_err(e.to_string())
}

fn fixed(s: &str) -> PyResult<Fixed> {
    s.parse().map_err(|e: egsl_core::fixed::FixedError| PyValueError::new_err(e.to_string()))
}

fn mode(s: Option<&str>) -> PyResult<Option<LedgerMode>> {
    match s {
        None => Ok(None),
        Some("chain") => Ok(Some(LedgerMode::Chain)),
        Some("dag") => Ok(Some(LedgerMode::Dag)),
        Some(other) => Err(PyValueError::new_err(format!("ledger mode must be chain or dag, got `{other}`"))),
    }
}

/// Ed25519 key derived from a run seed and a label, as scenario runs do.
#[pyclass(name = "KeyPair", module = "egsl", frozen)]
struct PyKeyPair {
    inner: KeyPair,
}

#[pymethods]
impl PyKeyPair {
    #[staticmethod]
    fn derive(seed: u64, label: &str) -> PyKeyPair {
        PyKeyPair { inner: KeyPair::derive(seed, label) }
    }

    /// Hex identity id (SHA-256 of the public key).
    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_hex()
    }

    #[getter]
    fn public_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.public().as_bytes())
    }

    fn sign<'py>(&self, py: Python<'py>, message: &[u8]) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.sign(message).bytes)
    }

    fn verify(&self, message: &[u8], signature: &[u8]) -> PyResult<bool> {
        let sig: [u8; 64] = signature.try_into().map_err(|_| PyValueError::new_err("signature must be 64 bytes"))?;
        Ok(self.inner.public().verify(message, &sig))
    }

    fn __repr__(&self) -> String {
        format!("KeyPair({})", self.inner.id().to_hex())
    }
}

/// Outcome of a scenario run.
#[pyclass(module = "egsl", frozen)]
struct RunResult {
    report: RunReport,
    ledger: Vec<u8>,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn passed(&self) -> bool {
        self.report.passed()
    }

    #[getter]
    fn final_state_root(&self) -> String {
        self.report.final_state_root.to_hex()
    }

    #[getter]
    fn blocks(&self) -> usize {
        self.report.blocks
    }

    #[getter]
    fn transactions(&self) -> usize {
        self.report.transactions
    }

    /// The run report as pretty JSON (parse with `json.loads`).
    fn report_json(&self) -> String {
        self.report.to_json()
    }

    fn ledger_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.ledger)
    }
}

fn run_script(script: &Script, seed_override: Option<u64>, ledger_mode: Option<&str>, out_dir: Option<PathBuf>) -> PyResult<RunResult> {
    let opts = RunOptions { seed_override, ledger_mode: mode(ledger_mode)?, test_mode: false };
    let outcome = match out_dir {
        Some(dir) => scenario::run_to_dir(script, &opts, &dir),
        None => scenario::run(script, &opts),
    }
    .map_err(err)?;
    Ok(RunResult { ledger: outcome.network.ledger().to_bytes().to_vec(), report: outcome.report })
}

/// Runs a scenario script file; with `out_dir`, also writes ledger.egsl and report.json.
#[pyfunction]
#[pyo3(signature = (path, seed_override=None, ledger_mode=None, out_dir=None))]
fn run_scenario(path: PathBuf, seed_override: Option<u64>, ledger_mode: Option<&str>, out_dir: Option<PathBuf>) -> PyResult<RunResult> {
    run_script(&Script::load(&path).map_err(err)?, seed_override, ledger_mode, out_dir)
}

/// Runs a scenario given as JSON text.
#[pyfunction]
#[pyo3(signature = (text, seed_override=None, ledger_mode=None))]
fn run_scenario_json(text: &str, seed_override: Option<u64>, ledger_mode: Option<&str>) -> PyResult<RunResult> {
    run_script(&Script::parse(text).map_err(err)?, seed_override, ledger_mode, None)
}

/// Verifies a ledger image; returns `(exit_code, report_text)` with the
/// CLI's codes: 0 valid, 1 invalid block or replay mismatch, 2 unreadable.
#[pyfunction]
fn verify_ledger(data: &[u8]) -> (i32, String) {
    let out = cli::verify_bytes(data);
    (out.code, out.stdout + &out.stderr)
}

#[pyfunction]
fn sha256_hex(data: &[u8]) -> String {
    Hash::digest(data).to_hex()
}

/// Thermostat decision for one sample; returns `(action, prompt_text)`.
#[pyfunction]
#[pyo3(signature = (temp_c, consumption_w, answer=None, profile="paperLiteral"))]
fn thermostat(temp_c: &str, consumption_w: &str, answer: Option<&str>, profile: &str) -> PyResult<(String, Option<String>)> {
    let profile = match profile {
        "paperLiteral" => ThermostatProfile::PaperLiteral,
        "conventional" => ThermostatProfile::Conventional,
        other => return Err(PyValueError::new_err(format!("unknown profile `{other}`"))),
    };
    let answer = answer.map(str::parse::<Answer>).transpose().map_err(err)?;
    let action = thermostat_step(fixed(temp_c)?, fixed(consumption_w)?, answer, &ThermostatConfig::with_profile(profile))
        .map_err(err)?;
    let text = match &action {
        egsl_core::gov::ThermostatAction::SendPrompt(t) => Some(t.clone()),
        _ => None,
    };
    Ok((action.label().to_owned(), text))
}

/// Dispatch evaluation with the default tariff and thresholds unless given;
/// returns `(surplus, payment)` as decimal strings or None below the trigger.
#[pyfunction]
#[pyo3(signature = (produced_kwh, daily_need_kwh="14", min_surplus_kwh="1", tariff="0.10"))]
fn dispatch(produced_kwh: &str, daily_need_kwh: &str, min_surplus_kwh: &str, tariff: &str) -> PyResult<Option<(String, String)>> {
    let cfg = EnergyConfig {
        daily_need_kwh: fixed(daily_need_kwh)?,
        min_surplus_kwh: fixed(min_surplus_kwh)?,
        tariff: fixed(tariff)?,
        ..EnergyConfig::default()
    };
    Ok(evaluate_dispatch(fixed(produced_kwh)?, &cfg)
        .map_err(|e| err(e.message))?
        .map(|(s, p)| (s.to_string(), p.to_string())))
}

/// Push-sum district total: `(total, to_central, to_trade)` as decimal strings.
#[pyfunction]
#[pyo3(signature = (surpluses, seed=0, rounds=None, central_fraction="0.7"))]
fn aggregate(surpluses: Vec<String>, seed: u64, rounds: Option<usize>, central_fraction: &str) -> PyResult<Option<(String, String, String)>> {
    let values = surpluses.iter().map(|s| fixed(s)).collect::<PyResult<Vec<_>>>()?;
    let rounds = rounds.unwrap_or_else(|| swarm::default_rounds(values.len()));
    let Some((total, _)) = swarm::aggregate(&values, rounds, seed).map_err(err)? else {
        return Ok(None);
    };
    let split = swarm::split(total, fixed(central_fraction)?).map_err(err)?;
    Ok(Some((split.total.to_string(), split.to_central.to_string(), split.to_trade.to_string())))
}

/// Hourly load forecast: `(values, peak_hours)`, values as decimal strings.
#[pyfunction]
#[pyo3(signature = (history, horizon=24, peak_k=3))]
fn forecast(history: Vec<String>, horizon: usize, peak_k: usize) -> PyResult<(Vec<String>, Vec<u32>)> {
    let history = history.iter().map(|s| fixed(s)).collect::<PyResult<Vec<_>>>()?;
    let f = SeasonalNaive { peak_k }.forecast(&history, horizon).map_err(err)?;
    Ok((f.values.iter().map(Fixed::to_string).collect(), f.peak_hours.into_iter().map(u32::from).collect()))
}

/// A simulated permissioned network driven directly by the authority.
#[pyclass(name = "Network", module = "egsl", unsendable)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (seed=0, peer_count=4, quorum_k=None, batch_size=10, ledger_mode="chain"))]
    fn new(seed: u64, peer_count: usize, quorum_k: Option<usize>, batch_size: usize, ledger_mode: &str) -> PyResult<Self> {
        let ledger_mode = mode(Some(ledger_mode))?.expect("given");
        let config = NetworkConfig { peer_count, quorum_k, batch_size, ledger_mode, test_mode: false };
        let inner = Network::new(config, KeyPair::derive(seed, "authority"), LedgerFile::new(ledger_mode)).map_err(err)?;
        Ok(PyNetwork { inner })
    }

    /// Submits an authority `configure` of `name` to a JSON value; returns
    /// True if endorsed, else the rejection reason.
    fn configure(&mut self, name: &str, value_json: &str, logical_time: u64) -> PyResult<(bool, Option<String>)> {
        let json: serde_json::Value = serde_json::from_str(value_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let args = Value::map().with("name", name).with("value", Value::from_json(&json).map_err(err)?).build();
        let req = TxRequest::new(self.inner.authority(), policy::SYSTEM, "configure", &args, logical_time).map_err(err)?;
        Ok(match self.inner.submit(req).map_err(err)? {
            Submission::Accepted { .. } => (true, None),
            Submission::Rejected(r) => (false, Some(r.label().to_owned())),
        })
    }

    /// Cuts blocks until nothing is pending; returns how many were cut.
    fn drain(&mut self) -> PyResult<usize> {
        Ok(self.inner.drain().map_err(err)?.len())
    }

    #[getter]
    fn pending(&self) -> usize {
        self.inner.pending()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.ledger().len()
    }

    #[getter]
    fn state_root(&self) -> String {
        self.inner.state().root().to_hex()
    }

    fn peer_roots(&self) -> Vec<String> {
        self.inner.peers().iter().map(|p| p.replica.root().to_hex()).collect()
    }

    fn ledger_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.ledger().to_bytes())
    }
}

#[pymodule]
pub fn egsl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EgslError", m.py().get_type::<EgslError>())?;
    m.add_class::<PyKeyPair>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_json, m)?)?;
    m.add_function(wrap_pyfunction!(verify_ledger, m)?)?;
    m.add_function(wrap_pyfunction!(sha256_hex, m)?)?;
    m.add_function(wrap_pyfunction!(thermostat, m)?)?;
    m.add_function(wrap_pyfunction!(dispatch, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(forecast, m)?)?;
    Ok(())
}
