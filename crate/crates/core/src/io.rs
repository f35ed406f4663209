//! CSV formats: trajectories, system sidecars, online windows, predictions,
//! Monte Carlo records and summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing a
//! written file reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hankel::OnlineWindow;
use crate::lti::{StateSpace, Trajectory};
use crate::montecarlo::{AggregateStats, BoxStats, ScenarioRecord};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("{source_name}: {msg}")]
    Invalid { source_name: String, msg: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Line-oriented CSV reader with 1-based line numbers in errors.
struct Rows<'a> {
    source_name: &'a str,
    lines: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Rows<'a> {
    fn new(text: &'a str, source_name: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
            .collect();
        Rows { source_name, lines }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> IoError {
        IoError::Parse {
            source_name: self.source_name.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn header(&self) -> Result<&(usize, Vec<&'a str>)> {
        self.lines.first().ok_or_else(|| self.err(1, "missing header"))
    }

    fn float(&self, line: usize, field: &str, name: &str) -> Result<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.err(line, format!("{name}: cannot parse {field:?} as a number")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("{name}: non-finite value {field:?}")));
        }
        Ok(v)
    }

    fn opt_float(&self, line: usize, field: &str, name: &str) -> Result<Option<f64>> {
        if field.is_empty() {
            Ok(None)
        } else {
            self.float(line, field, name).map(Some)
        }
    }

    fn uint(&self, line: usize, field: &str, name: &str) -> Result<usize> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("{name}: cannot parse {field:?} as an integer")))
    }

    fn boolean(&self, line: usize, field: &str, name: &str) -> Result<bool> {
        match field {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(self.err(line, format!("{name}: expected true or false, got {field:?}"))),
        }
    }
}

fn trajectory_header(m: usize, p: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=m {
        let _ = write!(h, ",u{i}");
    }
    for i in 1..=p {
        let _ = write!(h, ",y{i}");
    }
    h
}

/// Parses a `t,u1..um,y1..yp` header into `(m, p)`.
fn parse_trajectory_header(rows: &Rows) -> Result<(usize, usize)> {
    let (line, fields) = rows.header()?;
    let m = fields.iter().filter(|f| f.starts_with('u')).count();
    let p = fields.len().saturating_sub(1 + m);
    if trajectory_header(m, p) != fields.join(",") {
        return Err(rows.err(*line, format!("expected header t,u1..um,y1..yp, got {:?}", fields.join(","))));
    }
    if m == 0 || p == 0 {
        return Err(rows.err(*line, "trajectory needs at least one input and one output column"));
    }
    Ok((m, p))
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = trajectory_header(traj.m(), traj.p());
    s.push('\n');
    for t in 0..traj.len() {
        s.push_str(&t.to_string());
        for v in traj.inputs.column(t).iter().chain(traj.outputs.column(t).iter()) {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// Parses a trajectory; future outputs may be left blank when `blank_from`
/// is set, in which case they are read as zero.
fn parse_trajectory_impl(text: &str, source_name: &str, blank_from: Option<usize>) -> Result<Trajectory> {
    let rows = Rows::new(text, source_name);
    let (m, p) = parse_trajectory_header(&rows)?;
    let data = &rows.lines[1..];
    if data.is_empty() {
        return Err(rows.err(rows.lines[0].0, "trajectory has no samples"));
    }
    let mut u = Matrix::zeros(m, data.len());
    let mut y = Matrix::zeros(p, data.len());
    for (k, (line, fields)) in data.iter().enumerate() {
        if fields.len() != 1 + m + p {
            return Err(rows.err(*line, format!("expected {} fields, found {}", 1 + m + p, fields.len())));
        }
        if rows.uint(*line, fields[0], "t")? != k {
            return Err(rows.err(*line, format!("time index {} out of sequence, expected {k}", fields[0])));
        }
        for i in 0..m {
            u[(i, k)] = rows.float(*line, fields[1 + i], &format!("u{}", i + 1))?;
        }
        for i in 0..p {
            let field = fields[1 + m + i];
            let name = format!("y{}", i + 1);
            y[(i, k)] = match blank_from {
                Some(b) if k >= b && field.is_empty() => 0.0,
                _ => rows.float(*line, field, &name)?,
            };
        }
    }
    Trajectory::new(u, y).map_err(|e| IoError::Invalid {
        source_name: source_name.to_string(),
        msg: e.to_string(),
    })
}

pub fn parse_trajectory(text: &str, source_name: &str) -> Result<Trajectory> {
    parse_trajectory_impl(text, source_name, None)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_text(path)?, &path.display().to_string())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_text(path, &format_trajectory(traj))
}

/// Online window from a trajectory-format file with at least `t_p + t_f`
/// rows. Outputs after the first `t_p` rows are ignored and may be blank.
pub fn parse_online_window(text: &str, source_name: &str, t_p: usize, t_f: usize) -> Result<OnlineWindow> {
    let traj = parse_trajectory_impl(text, source_name, Some(t_p))?;
    OnlineWindow::from_trajectory(&traj, t_p, t_f).map_err(|e| IoError::Invalid {
        source_name: source_name.to_string(),
        msg: e.to_string(),
    })
}

pub fn read_online_window(path: &Path, t_p: usize, t_f: usize) -> Result<OnlineWindow> {
    parse_online_window(&read_text(path)?, &path.display().to_string(), t_p, t_f)
}

/// `A, B, C, D` as consecutive blocks, each introduced by `matrix,<name>,<rows>,<cols>`.
pub fn format_system(sys: &StateSpace) -> String {
    let mut s = String::new();
    for (name, mat) in [("A", sys.a()), ("B", sys.b()), ("C", sys.c()), ("D", sys.d())] {
        let _ = writeln!(s, "matrix,{name},{},{}", mat.nrows(), mat.ncols());
        for i in 0..mat.nrows() {
            let row: Vec<String> = mat.row(i).iter().map(|v| fmt_f64(*v)).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
    }
    s
}

pub fn parse_system(text: &str, source_name: &str) -> Result<StateSpace> {
    let rows = Rows::new(text, source_name);
    let mut mats = Vec::new();
    let mut idx = 0;
    for name in ["A", "B", "C", "D"] {
        let (line, fields) = rows
            .lines
            .get(idx)
            .ok_or_else(|| rows.err(rows.lines.last().map_or(1, |l| l.0), format!("missing block {name}")))?;
        if fields.len() != 4 || fields[0] != "matrix" || fields[1] != name {
            return Err(rows.err(*line, format!("expected `matrix,{name},<rows>,<cols>`")));
        }
        let r = rows.uint(*line, fields[2], "rows")?;
        let c = rows.uint(*line, fields[3], "cols")?;
        let mut mat = Matrix::zeros(r, c);
        for i in 0..r {
            let (line, fields) = rows
                .lines
                .get(idx + 1 + i)
                .ok_or_else(|| rows.err(*line, format!("block {name} truncated")))?;
            if fields.len() != c {
                return Err(rows.err(*line, format!("expected {c} fields, found {}", fields.len())));
            }
            for (j, f) in fields.iter().enumerate() {
                mat[(i, j)] = rows.float(*line, f, name)?;
            }
        }
        idx += 1 + r;
        mats.push(mat);
    }
    if let Some((line, _)) = rows.lines.get(idx) {
        return Err(rows.err(*line, "unexpected content after block D"));
    }
    let d = mats.pop().unwrap();
    let c = mats.pop().unwrap();
    let b = mats.pop().unwrap();
    let a = mats.pop().unwrap();
    StateSpace::new(a, b, c, d).map_err(|e| IoError::Invalid {
        source_name: source_name.to_string(),
        msg: e.to_string(),
    })
}

pub fn read_system(path: &Path) -> Result<StateSpace> {
    parse_system(&read_text(path)?, &path.display().to_string())
}

pub fn write_system(path: &Path, sys: &StateSpace) -> Result<()> {
    write_text(path, &format_system(sys))
}

/// `step,y1..yp` with one row per predicted step.
pub fn format_prediction(y_pred: &Vector, p: usize) -> String {
    let mut s = String::from("step");
    for i in 1..=p {
        let _ = write!(s, ",y{i}");
    }
    s.push('\n');
    for (k, chunk) in y_pred.as_slice().chunks(p).enumerate() {
        s.push_str(&k.to_string());
        for v in chunk {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// Parses [`format_prediction`] output back into the stacked vector.
pub fn parse_prediction(text: &str, source_name: &str) -> Result<Vector> {
    let rows = Rows::new(text, source_name);
    let (line, header) = rows.header()?;
    if header.first() != Some(&"step") || header.len() < 2 {
        return Err(rows.err(*line, "expected header step,y1..yp"));
    }
    let mut out = Vec::new();
    for (line, fields) in &rows.lines[1..] {
        if fields.len() != header.len() {
            return Err(rows.err(*line, format!("expected {} fields, found {}", header.len(), fields.len())));
        }
        for (f, name) in fields[1..].iter().zip(&header[1..]) {
            out.push(rows.float(*line, f, name)?);
        }
    }
    Ok(Vector::from_vec(out))
}

pub fn format_vector(header: &str, v: &Vector) -> String {
    let mut s = format!("{header}\n");
    for x in v.iter() {
        s.push_str(&fmt_f64(*x));
        s.push('\n');
    }
    s
}

pub const RECORD_HEADER: &str = "system_id,n,m,p,Tp,Tf,N,realization,err_raw,err_tsvd,norm_ypred,bound1,bound2,delta_sn_raw,delta_sn_tsvd,relgap1,relgap2,tsvd_improved,applicable1,applicable2";

pub fn format_records(records: &[ScenarioRecord]) -> String {
    let mut s = String::with_capacity(64 + records.len() * 200);
    s.push_str(RECORD_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.system_id,
            r.n,
            r.m,
            r.p,
            r.t_p,
            r.t_f,
            fmt_f64(r.noise),
            r.realization,
            fmt_f64(r.err_raw),
            fmt_f64(r.err_tsvd),
            fmt_f64(r.norm_ypred),
            fmt_opt(r.bound1),
            fmt_opt(r.bound2),
            fmt_f64(r.delta_sn_raw),
            fmt_f64(r.delta_sn_tsvd),
            fmt_opt(r.relgap1),
            fmt_opt(r.relgap2),
            r.tsvd_improved,
            r.applicable1(),
            r.applicable2(),
        );
    }
    s
}

pub fn parse_records(text: &str, source_name: &str) -> Result<Vec<ScenarioRecord>> {
    let rows = Rows::new(text, source_name);
    let (line, header) = rows.header()?;
    if header.join(",") != RECORD_HEADER {
        return Err(rows.err(*line, "unexpected records header"));
    }
    let width = header.len();
    let mut out = Vec::with_capacity(rows.lines.len() - 1);
    for (line, f) in &rows.lines[1..] {
        let line = *line;
        if f.len() != width {
            return Err(rows.err(line, format!("expected {width} fields, found {}", f.len())));
        }
        let rec = ScenarioRecord {
            system_id: rows.uint(line, f[0], "system_id")?,
            n: rows.uint(line, f[1], "n")?,
            m: rows.uint(line, f[2], "m")?,
            p: rows.uint(line, f[3], "p")?,
            t_p: rows.uint(line, f[4], "Tp")?,
            t_f: rows.uint(line, f[5], "Tf")?,
            noise: rows.float(line, f[6], "N")?,
            realization: rows.uint(line, f[7], "realization")?,
            err_raw: rows.float(line, f[8], "err_raw")?,
            err_tsvd: rows.float(line, f[9], "err_tsvd")?,
            norm_ypred: rows.float(line, f[10], "norm_ypred")?,
            bound1: rows.opt_float(line, f[11], "bound1")?,
            bound2: rows.opt_float(line, f[12], "bound2")?,
            delta_sn_raw: rows.float(line, f[13], "delta_sn_raw")?,
            delta_sn_tsvd: rows.float(line, f[14], "delta_sn_tsvd")?,
            relgap1: rows.opt_float(line, f[15], "relgap1")?,
            relgap2: rows.opt_float(line, f[16], "relgap2")?,
            tsvd_improved: rows.boolean(line, f[17], "tsvd_improved")?,
        };
        if rows.boolean(line, f[18], "applicable1")? != rec.applicable1()
            || rows.boolean(line, f[19], "applicable2")? != rec.applicable2()
        {
            return Err(rows.err(line, "applicability flags disagree with bound fields"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<ScenarioRecord>> {
    parse_records(&read_text(path)?, &path.display().to_string())
}

pub fn write_records(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    write_text(path, &format_records(records))
}

const BOX_FIELDS: [&str; 5] = ["q1", "median", "q3", "whisker_low", "whisker_high"];

fn box_header(prefix: &str) -> String {
    let mut v: Vec<String> = BOX_FIELDS.iter().map(|f| format!("{prefix}_{f}")).collect();
    v.push(format!("{prefix}_outliers"));
    v.join(",")
}

fn box_cells(b: &Option<BoxStats>) -> String {
    match b {
        Some(b) => {
            let vals = [b.q1, b.median, b.q3, b.whisker_low, b.whisker_high];
            let mut v: Vec<String> = vals.iter().map(|x| fmt_f64(*x)).collect();
            v.push(b.outliers.to_string());
            v.join(",")
        }
        None => vec![""; BOX_FIELDS.len() + 1].join(","),
    }
}

/// One row per noise level, then a `global` row carrying the improvement
/// fraction and slopes. Normalized errors are divided by `‖y_pred‖₂`.
pub fn format_summary(stats: &AggregateStats) -> String {
    let boxes = ["relgap1", "relgap2", "worst_relgap1", "worst_relgap2", "nerr_raw", "nerr_tsvd"];
    let mut header = vec![
        "level".to_string(),
        "N".into(),
        "scenarios".into(),
        "applicable1".into(),
        "applicable2".into(),
        "mean_bound1".into(),
        "mean_bound2".into(),
        "max_relgap1".into(),
        "max_relgap2".into(),
    ];
    header.extend(boxes.iter().map(|b| box_header(b)));
    header.extend(["tsvd_improved_fraction".into(), "slope_bound1".into(), "slope_bound2".into()]);
    let header = header.join(",");
    let width = header.split(',').count();

    let mut s = header.clone();
    s.push('\n');
    for (i, l) in stats.levels.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            fmt_f64(l.noise),
            l.scenarios.to_string(),
            l.applicable1.to_string(),
            l.applicable2.to_string(),
            fmt_opt(l.mean_bound1),
            fmt_opt(l.mean_bound2),
            fmt_opt(l.max_relgap1),
            fmt_opt(l.max_relgap2),
        ];
        for b in [
            &l.relgap1,
            &l.relgap2,
            &l.worst_case_relgap1,
            &l.worst_case_relgap2,
            &l.normalized_err_raw,
            &l.normalized_err_tsvd,
        ] {
            row.push(box_cells(b));
        }
        row.extend([String::new(), String::new(), String::new()]);
        s.push_str(&row.join(","));
        s.push('\n');
    }
    let mut global = vec![
        "global".to_string(),
        String::new(),
        stats.scenarios.to_string(),
        stats.applicable1.to_string(),
        stats.applicable2.to_string(),
    ];
    global.resize(width - 3, String::new());
    global.extend([
        fmt_f64(stats.tsvd_improved_fraction),
        fmt_opt(stats.slope_bound1),
        fmt_opt(stats.slope_bound2),
    ]);
    s.push_str(&global.join(","));
    s.push('\n');
    s
}

pub fn write_summary(path: &Path, stats: &AggregateStats) -> Result<()> {
    write_text(path, &format_summary(stats))
}
