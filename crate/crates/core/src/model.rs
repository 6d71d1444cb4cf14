//! LTI system container, JSON model files, the analytical Heffron-Phillips
//! three-machine builder, tie-line output matrices and a seeded generator of
//! random stable controllable systems.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, RealMatrix};

/// `dx/dt = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
}

fn default_labels(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

impl LtiSystem {
    /// Builds a system with default labels `x1..xn`, `u1..uq`, `y1..yp`.
    pub fn new(a: RealMatrix, b: RealMatrix, c: RealMatrix) -> Result<Self> {
        let sys = Self {
            state_labels: default_labels("x", a.rows()),
            input_labels: default_labels("u", b.cols()),
            output_labels: default_labels("y", c.rows()),
            a,
            b,
            c,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn q(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    /// Same model with a different state matrix (closed loop, for instance).
    pub fn with_state_matrix(&self, a: RealMatrix) -> Result<Self> {
        let sys = Self { a, ..self.clone() };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_output_matrix(&self, c: RealMatrix) -> Result<Self> {
        let sys = Self {
            output_labels: default_labels("y", c.rows()),
            c,
            ..self.clone()
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Checks dimensions, label counts and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.a.rows();
        let dims = [
            ("A", self.a.shape(), (n, n)),
            ("B", (self.b.rows(), 0), (n, 0)),
            ("C", (0, self.c.cols()), (0, n)),
        ];
        for (field, found, expected) in dims {
            if found != expected {
                return Err(Error::Dimension {
                    field: field.into(),
                    expected: shape_str(expected, field),
                    found: shape_str(found, field),
                });
            }
        }
        let labels = [
            ("state_labels", self.state_labels.len(), n),
            ("input_labels", self.input_labels.len(), self.q()),
            ("output_labels", self.output_labels.len(), self.p()),
        ];
        for (field, found, expected) in labels {
            if found != expected {
                return Err(Error::Dimension {
                    field: field.into(),
                    expected: format!("{expected} labels"),
                    found: format!("{found} labels"),
                });
            }
        }
        for (field, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            if !m.is_finite() {
                return Err(Error::Validation(format!("{field} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `A + B F`
    pub fn closed_loop(&self, f: &RealMatrix) -> Result<RealMatrix> {
        Ok(self.a.add(&self.b.matmul(f)?)?)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            n: self.n(),
            q: self.q(),
            p: self.p(),
            a: self.a.to_rows(),
            b: self.b.to_rows(),
            c: self.c.to_rows(),
            state_labels: Some(self.state_labels.clone()),
            input_labels: Some(self.input_labels.clone()),
            output_labels: Some(self.output_labels.clone()),
        };
        serde_json::to_string_pretty(&file).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            context: "model file".into(),
            source,
        })?;
        file.into_system()
    }
}

fn shape_str((r, c): (usize, usize), field: &str) -> String {
    match field {
        "B" => format!("{r} rows"),
        "C" => format!("{c} columns"),
        _ => format!("{r}x{c}"),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n: usize,
    q: usize,
    p: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_labels: Option<Vec<String>>,
}

fn checked_matrix(
    field: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<RealMatrix> {
    if rows.len() != nrows {
        return Err(Error::Dimension {
            field: field.into(),
            expected: format!("{nrows} rows"),
            found: format!("{} rows", rows.len()),
        });
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension {
            field: format!("{field}[{i}]"),
            expected: format!("{ncols} columns"),
            found: format!("{} columns", r.len()),
        });
    }
    if nrows == 0 {
        return Ok(RealMatrix::zeros(0, ncols));
    }
    Ok(RealMatrix::from_rows(rows)?)
}

impl ModelFile {
    fn into_system(self) -> Result<LtiSystem> {
        let a = checked_matrix("A", &self.a, self.n, self.n)?;
        let b = checked_matrix("B", &self.b, self.n, self.q)?;
        let c = checked_matrix("C", &self.c, self.p, self.n)?;
        let sys = LtiSystem {
            state_labels: self
                .state_labels
                .unwrap_or_else(|| default_labels("x", self.n)),
            input_labels: self
                .input_labels
                .unwrap_or_else(|| default_labels("u", self.q)),
            output_labels: self
                .output_labels
                .unwrap_or_else(|| default_labels("y", self.p)),
            a,
            b,
            c,
        };
        sys.validate()?;
        Ok(sys)
    }
}

pub fn load_system(path: impl AsRef<Path>) -> Result<LtiSystem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LtiSystem::from_json(&text)
}

pub fn save_system(sys: &LtiSystem, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sys.to_json() + "\n").map_err(|e| Error::io(path, e))
}

/// Signed incidence matrix mapping machine injections to tie-line flows.
#[derive(Debug, Clone, PartialEq)]
pub struct TieLineIncidence(RealMatrix);

impl TieLineIncidence {
    pub fn new(m: RealMatrix) -> Result<Self> {
        for i in 0..m.rows() {
            let row = m.row(i);
            let plus = row.iter().filter(|&&x| x == 1.0).count();
            let minus = row.iter().filter(|&&x| x == -1.0).count();
            let zeros = row.iter().filter(|&&x| x == 0.0).count();
            if plus != 1 || minus != 1 || zeros != row.len() - 2 {
                return Err(Error::Validation(format!(
                    "incidence row {i} must contain exactly one +1 and one -1"
                )));
            }
        }
        Ok(Self(m))
    }

    /// Rows (P12, P13, P23) over three machine injections.
    pub fn three_machine() -> Self {
        Self(
            RealMatrix::from_rows(&[
                vec![1.0, -1.0, 0.0],
                vec![1.0, 0.0, -1.0],
                vec![0.0, 1.0, -1.0],
            ])
            .expect("static shape"),
        )
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.0
    }
}

/// `C = inc * [K1 0 K2 0]` in the (delta, omega, E'q, E'fd) state ordering.
pub fn build_tieline_output(
    k1: &RealMatrix,
    k2: &RealMatrix,
    inc: &TieLineIncidence,
) -> Result<RealMatrix> {
    let machines = inc.matrix().cols();
    for (field, k) in [("K1", k1), ("K2", k2)] {
        if k.shape() != (machines, machines) {
            return Err(Error::Dimension {
                field: field.into(),
                expected: format!("{machines}x{machines}"),
                found: format!("{}x{}", k.rows(), k.cols()),
            });
        }
    }
    let mut injections = RealMatrix::zeros(machines, 4 * machines);
    injections.set_block(0, 0, k1);
    injections.set_block(0, 2 * machines, k2);
    Ok(inc.matrix().matmul(&injections)?)
}

/// Parameters of the three-machine Heffron-Phillips model.
///
/// `m`, `d`, `td0`, `ta` and `ka` are per-machine diagonal matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeffronParams {
    pub m: RealMatrix,
    pub d: RealMatrix,
    pub td0: RealMatrix,
    pub ta: RealMatrix,
    pub ka: RealMatrix,
    pub k: [RealMatrix; 6],
    pub omega0: f64,
    /// Use K5 in both exciter-row blocks, as printed in the original
    /// derivation, instead of K6 in the E'q column.
    pub literal_paper_structure: bool,
}

const SYNTHETIC_FIXTURE: &str = include_str!("../fixtures/heffron_synthetic.json");

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn to_matrix(&self, field: &str) -> Result<RealMatrix> {
        let m = match self {
            MatrixSpec::Scalar(s) => RealMatrix::identity(3).scale(*s),
            MatrixSpec::Diagonal(d) if d.len() == 3 => RealMatrix::diagonal(d),
            MatrixSpec::Diagonal(d) => {
                return Err(Error::Dimension {
                    field: field.into(),
                    expected: "3 diagonal entries".into(),
                    found: format!("{} entries", d.len()),
                })
            }
            MatrixSpec::Full(rows) => checked_matrix(field, rows, 3, 3)?,
        };
        Ok(m)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeffronFile {
    #[serde(rename = "M")]
    m: MatrixSpec,
    #[serde(rename = "D")]
    d: MatrixSpec,
    #[serde(rename = "Td0")]
    td0: MatrixSpec,
    #[serde(rename = "TA")]
    ta: MatrixSpec,
    #[serde(rename = "KA")]
    ka: MatrixSpec,
    #[serde(rename = "K1")]
    k1: MatrixSpec,
    #[serde(rename = "K2")]
    k2: MatrixSpec,
    #[serde(rename = "K3")]
    k3: MatrixSpec,
    #[serde(rename = "K4")]
    k4: MatrixSpec,
    #[serde(rename = "K5")]
    k5: MatrixSpec,
    #[serde(rename = "K6")]
    k6: MatrixSpec,
    omega0: f64,
    #[serde(default)]
    literal_paper_structure: bool,
    #[serde(default, rename = "_comment")]
    _comment: Option<String>,
}

impl HeffronParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: HeffronFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            context: "Heffron parameter file".into(),
            source,
        })?;
        let params = Self {
            m: f.m.to_matrix("M")?,
            d: f.d.to_matrix("D")?,
            td0: f.td0.to_matrix("Td0")?,
            ta: f.ta.to_matrix("TA")?,
            ka: f.ka.to_matrix("KA")?,
            k: [
                f.k1.to_matrix("K1")?,
                f.k2.to_matrix("K2")?,
                f.k3.to_matrix("K3")?,
                f.k4.to_matrix("K4")?,
                f.k5.to_matrix("K5")?,
                f.k6.to_matrix("K6")?,
            ],
            omega0: f.omega0,
            literal_paper_structure: f.literal_paper_structure,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The committed synthetic parameter set shipped with the crate.
    pub fn synthetic_fixture() -> Self {
        Self::from_json(SYNTHETIC_FIXTURE).expect("shipped fixture is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let diag = [
            ("M", &self.m, true),
            ("D", &self.d, false),
            ("Td0", &self.td0, true),
            ("TA", &self.ta, true),
            ("KA", &self.ka, false),
        ];
        for (field, m, positive) in diag {
            check_3x3(field, m)?;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j && m[(i, j)] != 0.0 {
                        return Err(Error::Validation(format!("{field} must be diagonal")));
                    }
                }
                if positive && !(m[(i, i)] > 0.0) {
                    return Err(Error::Validation(format!(
                        "{field}[{i}][{i}] = {} must be strictly positive",
                        m[(i, i)]
                    )));
                }
            }
        }
        for (i, k) in self.k.iter().enumerate() {
            check_3x3(&format!("K{}", i + 1), k)?;
        }
        let finite = self.omega0.is_finite()
            && [&self.m, &self.d, &self.td0, &self.ta, &self.ka]
                .into_iter()
                .chain(self.k.iter())
                .all(RealMatrix::is_finite);
        if !finite {
            return Err(Error::Validation("non-finite Heffron parameter".into()));
        }
        Ok(())
    }
}

fn check_3x3(field: &str, m: &RealMatrix) -> Result<()> {
    if m.shape() != (3, 3) {
        return Err(Error::Dimension {
            field: field.into(),
            expected: "3x3".into(),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

fn diag_inverse(m: &RealMatrix) -> RealMatrix {
    RealMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 / m[(i, i)] } else { 0.0 })
}

/// Assembles the 12-state linearized model with state ordering
/// `[delta; omega; E'q; E'fd]` and one stabilizer input per machine. The
/// output matrix is the tie-line power flow `(P12, P13, P23)`.
pub fn build_heffron_phillips(params: &HeffronParams) -> Result<LtiSystem> {
    params.validate()?;
    let [k1, k2, k3, k4, k5, k6] = &params.k;
    let m_inv = diag_inverse(&params.m);
    let td0_inv = diag_inverse(&params.td0);
    let ta_inv = diag_inverse(&params.ta);
    let exciter_eq = if params.literal_paper_structure {
        k5
    } else {
        k6
    };
    let neg = |m: RealMatrix| m.scale(-1.0);

    let mut a = RealMatrix::zeros(12, 12);
    a.set_block(0, 3, &RealMatrix::identity(3).scale(params.omega0));
    a.set_block(3, 0, &neg(m_inv.matmul(k1)?));
    a.set_block(3, 3, &neg(m_inv.matmul(&params.d)?));
    a.set_block(3, 6, &neg(m_inv.matmul(k2)?));
    a.set_block(6, 0, &neg(td0_inv.matmul(k4)?));
    a.set_block(6, 6, &neg(td0_inv.matmul(k3)?));
    a.set_block(6, 9, &td0_inv);
    a.set_block(9, 0, &neg(ta_inv.matmul(&k5.matmul(&params.ka)?)?));
    a.set_block(9, 6, &neg(ta_inv.matmul(&exciter_eq.matmul(&params.ka)?)?));
    a.set_block(9, 9, &neg(ta_inv.clone()));

    let mut b = RealMatrix::zeros(12, 3);
    b.set_block(9, 0, &ta_inv.matmul(&params.ka)?);

    let c = build_tieline_output(k1, k2, &TieLineIncidence::three_machine())?;

    let mut state_labels = Vec::with_capacity(12);
    for group in ["delta", "omega", "eq", "efd"] {
        state_labels.extend((1..=3).map(|i| format!("{group}_{i}")));
    }
    let sys = LtiSystem {
        a,
        b,
        c,
        state_labels,
        input_labels: (1..=3).map(|i| format!("u_pss_{i}")).collect(),
        output_labels: vec!["P12".into(), "P13".into(), "P23".into()],
    };
    sys.validate()?;
    Ok(sys)
}

const RANDOM_RETRY_BUDGET: usize = 64;
const MIN_EIGEN_GAP: f64 = 0.05;

/// Seeded random system with a prescribed open-left-half-plane spectrum.
///
/// The spectrum has `n/2 - 1` complex-conjugate pairs and two real modes,
/// all separated by at least 0.05. `A = T D T^-1` with a well-conditioned
/// random `T`; `(A, B)` is PBH-controllable at every mode.
pub fn random_stable_system(n: usize, q: usize, p: usize, seed: u64) -> Result<LtiSystem> {
    if n < 4 || n % 2 != 0 || q == 0 || p == 0 {
        return Err(Error::Validation(format!(
            "random_stable_system needs even n >= 4, q >= 1, p >= 1 (got n={n}, q={q}, p={p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_RETRY_BUDGET {
        if let Some(sys) = try_random_system(&mut rng, n, q, p)? {
            return Ok(sys);
        }
    }
    Err(Error::Validation(format!(
        "random_stable_system: retry budget of {RANDOM_RETRY_BUDGET} exhausted (n={n}, q={q}, p={p}, seed={seed})"
    )))
}

fn random_spectrum(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..(n / 2 - 1) {
        let z = Complex64::new(-rng.random_range(0.05..1.5), rng.random_range(0.6..12.0));
        out.push(z);
        out.push(z.conj());
    }
    for _ in 0..2 {
        out.push(Complex64::new(-rng.random_range(0.2..6.0), 0.0));
    }
    out
}

fn min_gap(values: &[Complex64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            gap = gap.min((a - b).norm());
        }
    }
    gap
}

fn try_random_system(
    rng: &mut ChaCha8Rng,
    n: usize,
    q: usize,
    p: usize,
) -> Result<Option<LtiSystem>> {
    let spectrum = random_spectrum(rng, n);
    let t = RealMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b = RealMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
    let c = RealMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    if min_gap(&spectrum) < MIN_EIGEN_GAP {
        return Ok(None);
    }
    let tc = t.to_complex();
    if numerics::condition_number(&tc)? > 50.0 {
        return Ok(None);
    }

    // Real block-diagonal form: [[re, im], [-im, re]] has eigenvalues re +- i im.
    let mut d = RealMatrix::zeros(n, n);
    let mut k = 0;
    while k < n {
        let z = spectrum[k];
        if z.im != 0.0 {
            d[(k, k)] = z.re;
            d[(k + 1, k + 1)] = z.re;
            d[(k, k + 1)] = z.im;
            d[(k + 1, k)] = -z.im;
            k += 2;
        } else {
            d[(k, k)] = z.re;
            k += 1;
        }
    }
    // A^T = T^-T (T D)^T
    let td = t.matmul(&d)?.to_complex();
    let at = numerics::solve(&tc.transpose(), &td.transpose())?.x;
    let a = at.transpose().re();

    let a_norm = a.norm_2()?;
    let b_norm = b.norm_2()?;
    let bc = b.to_complex();
    for &lambda in &spectrum {
        let shifted = a
            .to_complex()
            .sub(&ComplexMatrix::identity(n).scale(lambda))?;
        let s = numerics::singular_values(&shifted.hstack(&bc)?)?;
        let smin = s.last().copied().unwrap_or(0.0);
        if smin <= 1e-6 * (a_norm + b_norm + lambda.norm()) {
            return Ok(None);
        }
    }
    Ok(Some(LtiSystem::new(a, b, c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_coupling_params() -> HeffronParams {
        let i = RealMatrix::identity(3);
        HeffronParams {
            m: i.clone(),
            d: i.clone(),
            td0: i.clone(),
            ta: i.clone(),
            ka: i.clone(),
            k: std::array::from_fn(|_| RealMatrix::zeros(3, 3)),
            omega0: 1.0,
            literal_paper_structure: false,
        }
    }

    #[test]
    fn parses_minimal_model_with_default_labels() {
        let sys = LtiSystem::from_json(
            r#"{"n":2,"q":1,"p":1,"A":[[0,1],[-1,-1]],"B":[[0],[1]],"C":[[1,0]]}"#,
        )
        .unwrap();
        assert_eq!((sys.n(), sys.q(), sys.p()), (2, 1, 1));
        assert_eq!(sys.state_labels, vec!["x1", "x2"]);
        assert_eq!(sys.input_labels, vec!["u1"]);
        assert_eq!(sys.output_labels, vec!["y1"]);
        assert_eq!(sys.a[(1, 0)], -1.0);
    }

    #[test]
    fn b_row_count_mismatch_is_reported() {
        let err = LtiSystem::from_json(
            r#"{"n":2,"q":1,"p":1,"A":[[0,1],[-1,-1]],"B":[[0]],"C":[[1,0]]}"#,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Dimension { field, .. } if field == "B"),
            "{err}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_field_is_named() {
        let err = LtiSystem::from_json(r#"{"n":1,"q":1,"p":1,"A":[[0]],"B":[[0]]}"#).unwrap_err();
        assert!(err.to_string().contains("`C`"), "{err}");
    }

    #[test]
    fn label_count_mismatch_is_reported() {
        let err = LtiSystem::from_json(
            r#"{"n":1,"q":1,"p":1,"A":[[0]],"B":[[0]],"C":[[1]],"state_labels":["a","b"]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { ref field, .. } if field == "state_labels"));
    }

    #[test]
    fn zero_coupling_heffron_structure() {
        let sys = build_heffron_phillips(&zero_coupling_params()).unwrap();
        let mut expected = RealMatrix::zeros(12, 12);
        for i in 0..3 {
            expected[(i, 3 + i)] = 1.0;
            expected[(3 + i, 3 + i)] = -1.0;
            expected[(6 + i, 9 + i)] = 1.0;
            expected[(9 + i, 9 + i)] = -1.0;
        }
        assert_eq!(sys.a, expected);
    }

    #[test]
    fn heffron_input_is_exciter_only() {
        for params in [zero_coupling_params(), HeffronParams::synthetic_fixture()] {
            let sys = build_heffron_phillips(&params).unwrap();
            assert_eq!(sys.b.block(0, 0, 9, 3), RealMatrix::zeros(9, 3));
            assert_ne!(sys.b.block(9, 0, 3, 3), RealMatrix::zeros(3, 3));
        }
    }

    #[test]
    fn literal_structure_switch_swaps_exciter_block() {
        let mut params = HeffronParams::synthetic_fixture();
        let default = build_heffron_phillips(&params).unwrap();
        params.literal_paper_structure = true;
        let literal = build_heffron_phillips(&params).unwrap();
        assert_eq!(literal.a.block(9, 0, 3, 3), literal.a.block(9, 6, 3, 3));
        assert_ne!(default.a.block(9, 6, 3, 3), literal.a.block(9, 6, 3, 3));
        assert_eq!(default.a.block(0, 0, 9, 12), literal.a.block(0, 0, 9, 12));
    }

    #[test]
    fn non_positive_time_constant_rejected() {
        let mut params = zero_coupling_params();
        params.td0[(1, 1)] = 0.0;
        assert!(matches!(
            build_heffron_phillips(&params),
            Err(Error::Validation(_))
        ));
        let mut params = zero_coupling_params();
        params.m[(0, 0)] = -2.0;
        assert!(matches!(
            build_heffron_phillips(&params),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn heffron_file_broadcasts_scalars() {
        let text = r#"{"M":2,"D":[1,2,3],"Td0":5,"TA":0.1,"KA":10,
            "K1":1,"K2":0,"K3":1,"K4":0,"K5":0,"K6":0,"omega0":377}"#;
        let p = HeffronParams::from_json(text).unwrap();
        assert_eq!(p.m, RealMatrix::identity(3).scale(2.0));
        assert_eq!(p.d, RealMatrix::diagonal(&[1.0, 2.0, 3.0]));
        assert!(!p.literal_paper_structure);
        let bad = text.replace("\"TA\":0.1", "\"TA\":-0.1");
        assert!(HeffronParams::from_json(&bad).is_err());
    }

    #[test]
    fn incidence_validation() {
        assert!(
            TieLineIncidence::new(RealMatrix::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap()).is_err()
        );
        assert!(
            TieLineIncidence::new(RealMatrix::from_rows(&[vec![0.0, -1.0, 1.0]]).unwrap()).is_ok()
        );
    }

    #[test]
    fn tieline_with_identity_k1() {
        let inc = TieLineIncidence::three_machine();
        let c =
            build_tieline_output(&RealMatrix::identity(3), &RealMatrix::zeros(3, 3), &inc).unwrap();
        let mut expected = RealMatrix::zeros(3, 12);
        expected.set_block(0, 0, inc.matrix());
        assert_eq!(c, expected);
    }

    #[test]
    fn tieline_kills_common_mode_angle() {
        let k1 = RealMatrix::from_rows(&[
            vec![2.0, -0.5, -0.5],
            vec![-0.25, 1.5, -0.25],
            vec![0.5, -1.0, 1.5],
        ])
        .unwrap();
        let c = build_tieline_output(
            &k1,
            &RealMatrix::identity(3),
            &TieLineIncidence::three_machine(),
        )
        .unwrap();
        let mut x = vec![0.0; 12];
        x[..3].fill(1.0);
        assert!(c.matvec(&x).unwrap().iter().all(|y| *y == 0.0));
    }

    #[test]
    fn tieline_dimension_check() {
        let inc = TieLineIncidence::three_machine();
        assert!(
            build_tieline_output(&RealMatrix::identity(2), &RealMatrix::zeros(3, 3), &inc).is_err()
        );
    }

    #[test]
    fn random_system_is_deterministic() {
        let a = random_stable_system(6, 2, 1, 9).unwrap();
        let b = random_stable_system(6, 2, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_stable_system(6, 2, 1, 10).unwrap());
    }

    #[test]
    fn random_system_rejects_bad_sizes() {
        assert!(random_stable_system(5, 2, 1, 0).is_err());
        assert!(random_stable_system(2, 1, 1, 0).is_err());
        assert!(random_stable_system(6, 0, 1, 0).is_err());
    }
}
