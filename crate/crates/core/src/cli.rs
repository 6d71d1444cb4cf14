//! Command-line front end.
//!
//! Mode and state indices on the command line and in CSV files are 1-based.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::assign::{self, AssignOptions, BlockingKind, BlockingRequest, Feasibility, GainFile};
use crate::error::{Error, Result};
use crate::modal::{self, ModalDecomposition, ModePair};
use crate::model::{self, HeffronParams, LtiSystem};
use crate::verify::{self, Tolerances, VerificationReport};

pub const EXIT_USAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "eigenblock",
    version,
    about = "Modal analysis and eigenvector-blocking state feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write modes.csv, participation.csv and observability.csv for a model.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize F that removes the given states from one mode pair.
    BlockParticipation {
        #[command(flatten)]
        common: BlockArgs,
        /// Comma-separated 1-based state indices.
        #[arg(long, value_delimiter = ',', required = true)]
        states: Vec<usize>,
    },
    /// Synthesize F that makes one mode pair unobservable in C.
    BlockObservability {
        #[command(flatten)]
        common: BlockArgs,
    },
    /// Apply an ordered list of blocking requests read from a JSON plan.
    Sequential {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Re-check a gain file against a model using only the two files.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gain: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Assemble the three-machine Heffron-Phillips model.
    BuildHeffron {
        /// Parameter file; the bundled synthetic fixture when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Use K5 in both exciter columns, as originally printed.
        #[arg(long)]
        literal_paper_structure: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TolArgs {
    #[arg(long)]
    pub tol_spectrum: Option<f64>,
    #[arg(long)]
    pub tol_block: Option<f64>,
}

impl TolArgs {
    fn tolerances(&self) -> Result<Tolerances> {
        let mut t = Tolerances::default();
        for (name, v, slot) in [
            ("--tol-spectrum", self.tol_spectrum, &mut t.spectrum),
            ("--tol-block", self.tol_block, &mut t.block),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Validation(format!(
                        "{name} must be a positive number"
                    )));
                }
                *slot = v;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accept requests that only meet m+1 <= q (or rank(C)+1 <= q).
    #[arg(long)]
    pub relax_feasibility: bool,
    #[command(flatten)]
    pub tol: TolArgs,
}

impl SynthArgs {
    fn options(&self) -> Result<AssignOptions> {
        Ok(AssignOptions {
            feasibility: if self.relax_feasibility {
                Feasibility::Existence
            } else {
                Feasibility::Sufficient
            },
            seed: self.seed,
            tolerances: self.tol.tolerances()?,
            ..AssignOptions::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct BlockArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub selector: PairSelector,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct PairSelectorGroup {
    /// 1-based index of either member of the pair.
    #[arg(long)]
    pub pair_index: Option<usize>,
    /// Frequency in Hz; the nearest pair inside the window is chosen.
    #[arg(long)]
    pub pair_freq: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PairSelector {
    #[command(flatten)]
    pub which: PairSelectorGroup,
    #[arg(long, default_value_t = 0.1, requires = "pair_freq")]
    pub pair_freq_window: f64,
}

/// Pair choice shared by flags and plan files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Index(usize),
    Frequency { hz: f64, window: f64 },
}

impl PairSelector {
    fn selector(&self) -> Selector {
        match (self.which.pair_index, self.which.pair_freq) {
            (Some(i), _) => Selector::Index(i),
            (None, Some(hz)) => Selector::Frequency {
                hz,
                window: self.pair_freq_window,
            },
            (None, None) => unreachable!("clap enforces one selector"),
        }
    }
}

/// Resolves a selector against the classified pairs of `md`.
pub fn select_pair(md: &ModalDecomposition, sel: Selector) -> Result<ModePair> {
    let pairs = modal::conjugate_pairs(md)?;
    match sel {
        Selector::Index(i) => {
            if i == 0 || i > md.n() {
                return Err(Error::Validation(format!(
                    "pair index {i} out of range 1..={}",
                    md.n()
                )));
            }
            pairs
                .into_iter()
                .find(|p| p.contains(i - 1))
                .ok_or_else(|| {
                    Error::NoSuchPair(format!("mode {i} is real, not part of a conjugate pair"))
                })
        }
        Selector::Frequency { hz, window } => {
            if !(hz.is_finite() && window.is_finite() && window >= 0.0) {
                return Err(Error::Validation(
                    "pair frequency and window must be finite".into(),
                ));
            }
            pairs
                .into_iter()
                .filter(|p| (p.frequency_hz - hz).abs() <= window)
                .min_by(|a, b| {
                    (a.frequency_hz - hz)
                        .abs()
                        .total_cmp(&(b.frequency_hz - hz).abs())
                        .then(a.index.cmp(&b.index))
                })
                .ok_or_else(|| {
                    Error::NoSuchPair(format!("no oscillatory pair within {window} Hz of {hz} Hz"))
                })
        }
    }
}

/// One stage of a sequential plan file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStage {
    pub kind: String,
    #[serde(default)]
    pub pair_index: Option<usize>,
    #[serde(default)]
    pub pair_freq: Option<f64>,
    #[serde(default)]
    pub pair_freq_window: Option<f64>,
    /// 1-based; participation stages only.
    #[serde(default)]
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub stages: Vec<PlanStage>,
}

impl Plan {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            context: "plan file".into(),
            source,
        })
    }

    pub fn requests(&self, md: &ModalDecomposition) -> Result<Vec<BlockingRequest>> {
        self.stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let sel = match (s.pair_index, s.pair_freq) {
                    (Some(i), None) => Selector::Index(i),
                    (None, Some(hz)) => Selector::Frequency {
                        hz,
                        window: s.pair_freq_window.unwrap_or(0.1),
                    },
                    _ => {
                        return Err(Error::Validation(format!(
                            "plan stage {}: give exactly one of pair_index, pair_freq",
                            k + 1
                        )))
                    }
                };
                let kind = match s.kind.as_str() {
                    "participation" => BlockingKind::Participation {
                        states: one_based_states(&s.states)?,
                    },
                    "observability" if s.states.is_empty() => BlockingKind::Observability,
                    "observability" => {
                        return Err(Error::Validation(format!(
                            "plan stage {}: observability stages take no states",
                            k + 1
                        )))
                    }
                    other => {
                        return Err(Error::Validation(format!(
                            "plan stage {}: unknown kind `{other}`",
                            k + 1
                        )))
                    }
                };
                Ok(BlockingRequest {
                    pair: select_pair(md, sel)?,
                    kind,
                })
            })
            .collect()
    }
}

fn one_based_states(states: &[usize]) -> Result<Vec<usize>> {
    states
        .iter()
        .map(|&k| {
            k.checked_sub(1)
                .ok_or_else(|| Error::Validation("state indices are 1-based".into()))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_modes_csv(path: &Path, md: &ModalDecomposition) -> Result<()> {
    let classes = modal::mode_classes(md);
    let header = ["index", "re", "im", "freq_hz", "damping", "class"].map(String::from);
    let rows: Vec<Vec<String>> = md
        .eigenvalues
        .iter()
        .zip(&classes)
        .enumerate()
        .map(|(i, (l, c))| {
            vec![
                (i + 1).to_string(),
                num(l.re),
                num(l.im),
                num(modal::frequency_hz(*l)),
                num(modal::damping_ratio(*l)),
                c.as_str().to_string(),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// `|p_ki|` with one row per state; column `j` holds mode `order[j]`.
pub fn write_participation_csv(
    path: &Path,
    sys: &LtiSystem,
    md: &ModalDecomposition,
    order: &[usize],
) -> Result<()> {
    let p = modal::participation_matrix(md).magnitudes();
    let mut header = vec!["state".to_string()];
    header.extend((1..=order.len()).map(|j| format!("mode_{j}")));
    let rows: Vec<Vec<String>> = (0..md.n())
        .map(|k| {
            let mut r = vec![sys.state_labels[k].clone()];
            r.extend(order.iter().map(|&j| num(p[(k, j)])));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// `||C v_i||` for mode `order[j]` in row `j`.
pub fn write_observability_csv(
    path: &Path,
    sys: &LtiSystem,
    md: &ModalDecomposition,
    order: &[usize],
) -> Result<()> {
    let o = modal::observability_coefficients(&sys.c, md)?;
    let header = ["mode", "re", "im", "norm_cv"].map(String::from);
    let rows: Vec<Vec<String>> = order
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let l = md.eigenvalues[i];
            vec![(j + 1).to_string(), num(l.re), num(l.im), num(o.norms[i])]
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Closed-loop decomposition and, for each open-loop mode, the index of its
/// matched closed-loop mode.
fn closed_loop_view(
    sys: &LtiSystem,
    open: &ModalDecomposition,
    f: &crate::numerics::RealMatrix,
) -> Result<(LtiSystem, ModalDecomposition, Vec<usize>)> {
    let cl = sys.with_state_matrix(sys.closed_loop(f)?)?;
    let md = modal::modal_decomposition(&cl)?;
    let order = verify::match_spectra(&open.eigenvalues, &md.eigenvalues)
        .into_iter()
        .map(|(j, _)| j)
        .collect();
    Ok((cl, md, order))
}

fn write_report(path: &Path, report: &VerificationReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serialization is infallible");
    write_file(path, &(text + "\n"))
}

fn print_report(report: &VerificationReport) {
    println!(
        "verification: {} (spectrum shift {:e}, blocked participation {:e}, untouched residual {:e})",
        if report.pass { "pass" } else { "FAIL" },
        report.spectrum_max_shift,
        report.blocked_participation_max,
        report.untouched_eigvec_residual
    );
}

pub fn cmd_analyze(model_path: &Path, out: &Path) -> Result<()> {
    let sys = model::load_system(model_path)?;
    let md = modal::modal_decomposition(&sys)?;
    create_dir(out)?;
    let order: Vec<usize> = (0..md.n()).collect();
    write_modes_csv(&out.join("modes.csv"), &md)?;
    write_participation_csv(&out.join("participation.csv"), &sys, &md, &order)?;
    write_observability_csv(&out.join("observability.csv"), &sys, &md, &order)?;
    let pairs = modal::conjugate_pairs(&md)?;
    println!(
        "{} modes, {} oscillatory pairs, cond(V) = {:e}",
        md.n(),
        pairs.len(),
        md.cond_v
    );
    for p in &pairs {
        println!(
            "  modes {},{}: {:.4} Hz, damping {:.4}, {}",
            p.index + 1,
            p.conj_index() + 1,
            p.frequency_hz,
            p.damping_ratio,
            p.class.as_str()
        );
    }
    Ok(())
}

fn write_before_after(
    out: &Path,
    sys: &LtiSystem,
    open: &ModalDecomposition,
    f: &crate::numerics::RealMatrix,
    participation: bool,
    observability: bool,
) -> Result<()> {
    let (cl, closed, order) = closed_loop_view(sys, open, f)?;
    let identity: Vec<usize> = (0..open.n()).collect();
    if participation {
        write_participation_csv(&out.join("participation_before.csv"), sys, open, &identity)?;
        write_participation_csv(&out.join("participation_after.csv"), &cl, &closed, &order)?;
    }
    if observability {
        write_observability_csv(&out.join("observability_before.csv"), sys, open, &identity)?;
        write_observability_csv(&out.join("observability_after.csv"), &cl, &closed, &order)?;
    }
    Ok(())
}

pub fn cmd_block(args: &BlockArgs, states: Option<&[usize]>) -> Result<()> {
    let sys = model::load_system(&args.model)?;
    let opts = args.synth.options()?;
    let open = modal::modal_decomposition(&sys)?;
    let pair = select_pair(&open, args.selector.selector())?;
    let result = match states {
        Some(s) => assign::block_participation(&sys, &pair, &one_based_states(s)?, &opts)?,
        None => assign::block_observability(&sys, &pair, &opts)?,
    };
    let report = result
        .report
        .clone()
        .expect("blocking results carry their verification report");
    create_dir(&args.out)?;
    GainFile::from_result(&result).save(args.out.join("gain.json"))?;
    write_report(&args.out.join("verification.json"), &report)?;
    write_before_after(
        &args.out,
        &sys,
        &open,
        &result.f,
        states.is_some(),
        states.is_none(),
    )?;
    println!(
        "blocked modes {},{} ({:.4} Hz), cond(V_hat) = {:e}, |F|max = {:e}",
        pair.index + 1,
        pair.conj_index() + 1,
        pair.frequency_hz,
        result.cond_v_hat,
        result.f.norm_max()
    );
    print_report(&report);
    if report.pass {
        Ok(())
    } else {
        Err(Error::VerificationFailed(report.failures().join(", ")))
    }
}

pub fn cmd_sequential(
    model_path: &Path,
    plan_path: &Path,
    out: &Path,
    synth: &SynthArgs,
) -> Result<()> {
    let sys = model::load_system(model_path)?;
    let opts = synth.options()?;
    let text = fs::read_to_string(plan_path).map_err(|e| Error::io(plan_path, e))?;
    let open = modal::modal_decomposition(&sys)?;
    let requests = Plan::from_json(&text)?.requests(&open)?;
    let res = assign::sequential_block(&sys, &requests, &opts)?;
    create_dir(out)?;
    GainFile::from_sequential(&res).save(out.join("gain.json"))?;
    write_report(&out.join("verification.json"), &res.report)?;
    write_before_after(out, &sys, &open, &res.f, true, true)?;
    for (k, s) in res.stages.iter().enumerate() {
        println!(
            "stage {}: {} on modes {},{}, cond(V_hat) = {:e}",
            k + 1,
            s.request.kind.name(),
            s.request.pair.index + 1,
            s.request.pair.conj_index() + 1,
            s.cond_v_hat
        );
    }
    print_report(&res.report);
    if res.report.pass {
        Ok(())
    } else {
        Err(Error::VerificationFailed(res.report.failures().join(", ")))
    }
}

/// Verifies the files and returns the report; the caller decides the exit.
pub fn verify_files(
    model_path: &Path,
    gain_path: &Path,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    let sys = model::load_system(model_path)?;
    let gain = GainFile::load(gain_path)?;
    if gain.f.shape() != (sys.q(), sys.n()) {
        return Err(Error::Dimension {
            field: "F".into(),
            expected: format!("{}x{}", sys.q(), sys.n()),
            found: format!("{}x{}", gain.f.rows(), gain.f.cols()),
        });
    }
    if !gain.f.is_finite() {
        return Err(Error::Validation(
            "gain F contains non-finite entries".into(),
        ));
    }
    verify::verify_gain(
        &sys,
        &gain.f,
        &gain.targets()?,
        tol,
        gain.realness_residual(),
    )
}

pub fn cmd_verify(
    model_path: &Path,
    gain_path: &Path,
    out: Option<&Path>,
    tol: &Tolerances,
) -> Result<()> {
    let report = verify_files(model_path, gain_path, tol)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_report(&dir.join("verification.json"), &report)?;
    }
    print_report(&report);
    if report.pass {
        Ok(())
    } else {
        Err(Error::VerificationFailed(report.failures().join(", ")))
    }
}

pub fn cmd_build_heffron(params: Option<&Path>, literal: bool, out: &Path) -> Result<()> {
    let mut p = match params {
        Some(path) => HeffronParams::load(path)?,
        None => HeffronParams::synthetic_fixture(),
    };
    p.literal_paper_structure |= literal;
    let sys = model::build_heffron_phillips(&p)?;
    create_dir(out)?;
    model::save_system(&sys, out.join("model.json"))?;
    println!(
        "wrote {}-state model to {}",
        sys.n(),
        out.join("model.json").display()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze { model, out } => cmd_analyze(model, out),
        Command::BlockParticipation { common, states } => cmd_block(common, Some(states)),
        Command::BlockObservability { common } => cmd_block(common, None),
        Command::Sequential {
            model,
            plan,
            out,
            synth,
        } => cmd_sequential(model, plan, out, synth),
        Command::Verify {
            model,
            gain,
            out,
            tol,
        } => cmd_verify(model, gain, out.as_deref(), &tol.tolerances()?),
        Command::BuildHeffron {
            params,
            literal_paper_structure,
            out,
        } => cmd_build_heffron(params.as_deref(), *literal_paper_structure, out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_stable_system;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["eigenblock"]), EXIT_USAGE);
        assert_eq!(run(["eigenblock", "analyze"]), EXIT_USAGE);
        assert_eq!(
            run([
                "eigenblock",
                "block-observability",
                "--model",
                "m",
                "--out",
                "o",
                "--pair-index",
                "1",
                "--pair-freq",
                "1"
            ]),
            EXIT_USAGE
        );
    }

    #[test]
    fn missing_model_exits_two() {
        assert_eq!(
            run([
                "eigenblock",
                "analyze",
                "--model",
                "/nonexistent/m.json",
                "--out",
                "/tmp/x"
            ]),
            2
        );
    }

    #[test]
    fn select_by_index_and_frequency() {
        let sys = random_stable_system(6, 3, 1, 7).unwrap();
        let md = modal::modal_decomposition(&sys).unwrap();
        let pairs = modal::conjugate_pairs(&md).unwrap();
        let p = pairs[1];
        assert_eq!(select_pair(&md, Selector::Index(p.index + 1)).unwrap(), p);
        assert_eq!(select_pair(&md, Selector::Index(p.index + 2)).unwrap(), p);
        let by_freq = select_pair(
            &md,
            Selector::Frequency {
                hz: p.frequency_hz + 1e-3,
                window: 0.01,
            },
        )
        .unwrap();
        assert_eq!(by_freq, p);
        assert!(matches!(
            select_pair(&md, Selector::Index(0)),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            select_pair(
                &md,
                Selector::Frequency {
                    hz: 1e3,
                    window: 0.1
                }
            ),
            Err(Error::NoSuchPair(_))
        ));
    }

    #[test]
    fn plan_parsing() {
        let sys = random_stable_system(8, 4, 1, 7).unwrap();
        let md = modal::modal_decomposition(&sys).unwrap();
        let pairs = modal::conjugate_pairs(&md).unwrap();
        let text = format!(
            r#"{{"stages": [{{"kind": "participation", "pair_index": {}, "states": [1, 2]}},
                          {{"kind": "observability", "pair_freq": {}}}]}}"#,
            pairs[0].index + 1,
            pairs[1].frequency_hz
        );
        let reqs = Plan::from_json(&text).unwrap().requests(&md).unwrap();
        assert_eq!(
            reqs[0].kind,
            BlockingKind::Participation { states: vec![0, 1] }
        );
        assert_eq!(reqs[1].pair, pairs[1]);
        let bad = r#"{"stages": [{"kind": "participation", "states": [1]}]}"#;
        assert!(Plan::from_json(bad).unwrap().requests(&md).is_err());
        assert!(Plan::from_json(r#"{"stages": [], "extra": 1}"#).is_err());
    }
}
