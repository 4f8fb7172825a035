//! Overhead experiments for k-resilient DHT access control: the analytic
//! model, scripted measurement runs on the simulator, and report output.

pub mod experiment;
pub mod formulas;
pub mod report;
pub mod script;

pub use experiment::{predict_all, run_bench, BenchConfig};
pub use formulas::{FormulaSet, Params, Profile, Scheme};
pub use report::{emit, Format, OverheadReport, Row, Status};
pub use script::{run_experiment, ScriptRun};
