//! Datasets and declarative model specifications.
//!
//! The CSV layout is a header row followed by one row per unit: column `sel`
//! holds the 0/1 selection indicator, column `out` the outcome (empty when
//! `sel` is 0), and every further column is a covariate.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copulas::CopulaKind;
use crate::error::{Error, Result};
use crate::margins::MarginFamily;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sel: Vec<bool>,
    /// Outcome values; `NaN` for unselected rows.
    pub out: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Dataset {
    pub fn new(sel: Vec<bool>, out: Vec<f64>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = sel.len();
        if out.len() != n {
            return Err(Error::Parse(format!("outcome has {} rows, selection has {n}", out.len())));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Parse(format!("column '{name}' has {} rows, expected {n}", col.len())));
            }
            if name == "sel" || name == "out" {
                return Err(Error::Parse(format!("covariate name '{name}' is reserved")));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("non-finite value in column '{name}' at row {}", i + 1)));
            }
        }
        for i in 0..n {
            if sel[i] && !out[i].is_finite() {
                return Err(Error::Parse(format!("row {}: selected but outcome is missing", i + 1)));
            }
        }
        let out = out.into_iter().zip(&sel).map(|(y, &s)| if s { y } else { f64::NAN }).collect();
        Ok(Self { sel, out, columns })
    }

    pub fn n(&self) -> usize {
        self.sel.len()
    }

    pub fn n_selected(&self) -> usize {
        self.sel.iter().filter(|&&s| s).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.sel[i]).collect()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
            .ok_or_else(|| Error::Parse(format!("no covariate column named '{name}'")))
    }

    /// Keep only the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            sel: rows.iter().map(|&i| self.sel[i]).collect(),
            out: rows.iter().map(|&i| self.out[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, c)| (n.clone(), rows.iter().map(|&i| c[i]).collect()))
                .collect(),
        }
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let pos = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("missing required column '{name}'")))
        };
        let (isel, iout) = (pos("sel")?, pos("out")?);
        let cov: Vec<usize> = (0..headers.len()).filter(|&j| j != isel && j != iout).collect();
        let mut sel = Vec::new();
        let mut out = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); cov.len()];
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let s = match field(isel) {
                "1" | "1.0" => true,
                "0" | "0.0" => false,
                other => return Err(Error::Parse(format!("row {row}: 'sel' must be 0 or 1, found '{other}'"))),
            };
            let o = field(iout);
            let y = if o.is_empty() || o.eq_ignore_ascii_case("na") {
                if s {
                    return Err(Error::Parse(format!("row {row}: selected but outcome is missing")));
                }
                f64::NAN
            } else {
                o.parse::<f64>().map_err(|_| Error::Parse(format!("row {row}: cannot parse outcome '{o}'")))?
            };
            sel.push(s);
            out.push(y);
            for (k, &j) in cov.iter().enumerate() {
                let v = field(j).parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {row}: cannot parse '{}' in column '{}'", field(j), &headers[j]))
                })?;
                cols[k].push(v);
            }
        }
        let columns = cov.iter().map(|&j| headers[j].to_string()).zip(cols).collect();
        Dataset::new(sel, out, columns)
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["sel".to_string(), "out".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![
                if self.sel[i] { "1".to_string() } else { "0".to_string() },
                if self.sel[i] { format_num(self.out[i]) } else { String::new() },
            ];
            rec.extend(self.columns.iter().map(|(_, c)| format_num(c[i])));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Smooth,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub column: String,
    pub kind: TermKind,
}

impl Term {
    pub fn smooth(column: &str) -> Self {
        Self { column: column.to_string(), kind: TermKind::Smooth }
    }

    pub fn linear(column: &str) -> Self {
        Self { column: column.to_string(), kind: TermKind::Linear }
    }
}

/// How the two equations are linked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    Normal,
    Clayton,
    Joe,
    Frank,
    Gumbel,
    Amh,
    /// Equations fitted jointly but with the copula fixed at independence.
    Independence,
}

impl Dependence {
    pub fn copula(self) -> Option<CopulaKind> {
        match self {
            Dependence::Normal => Some(CopulaKind::Normal),
            Dependence::Clayton => Some(CopulaKind::Clayton),
            Dependence::Joe => Some(CopulaKind::Joe),
            Dependence::Frank => Some(CopulaKind::Frank),
            Dependence::Gumbel => Some(CopulaKind::Gumbel),
            Dependence::Amh => Some(CopulaKind::Amh),
            Dependence::Independence => None,
        }
    }
}

impl From<CopulaKind> for Dependence {
    fn from(k: CopulaKind) -> Self {
        match k {
            CopulaKind::Normal => Dependence::Normal,
            CopulaKind::Clayton => Dependence::Clayton,
            CopulaKind::Joe => Dependence::Joe,
            CopulaKind::Frank => Dependence::Frank,
            CopulaKind::Gumbel => Dependence::Gumbel,
            CopulaKind::Amh => Dependence::Amh,
        }
    }
}

impl std::str::FromStr for Dependence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("independence") {
            Ok(Dependence::Independence)
        } else {
            Ok(s.parse::<CopulaKind>()?.into())
        }
    }
}

fn default_knots() -> usize {
    8
}
fn default_degree() -> usize {
    3
}
fn default_order() -> usize {
    2
}

/// Declarative description of both equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub selection: Vec<Term>,
    pub outcome: Vec<Term>,
    pub margin: MarginFamily,
    pub copula: Dependence,
    /// Number of equidistant interior intervals per smooth.
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_order")]
    pub penalty_order: usize,
    /// Starting copula parameter on the natural scale.
    #[serde(default)]
    pub theta_start: Option<f64>,
    /// Hold the copula parameter fixed at `theta_start`.
    #[serde(default)]
    pub fix_theta: bool,
    /// Fix the margin's auxiliary parameter (Gaussian sd or gamma shape) at this natural-scale value.
    #[serde(default)]
    pub fix_aux: Option<f64>,
    /// Fixed smoothing parameters, one per smooth term (selection terms first);
    /// when absent they are chosen by UBRE.
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn new(selection: Vec<Term>, outcome: Vec<Term>, margin: MarginFamily, copula: Dependence) -> Self {
        Self {
            selection,
            outcome,
            margin,
            copula,
            knots: default_knots(),
            degree: default_degree(),
            penalty_order: default_order(),
            theta_start: None,
            fix_theta: false,
            fix_aux: None,
            lambda: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots < 1 {
            return Err(Error::InvalidParameter("knots must be at least 1".into()));
        }
        if self.penalty_order < 1 || self.penalty_order >= self.knots + self.degree {
            return Err(Error::InvalidParameter(format!(
                "penalty order {} must lie in [1, {})",
                self.penalty_order,
                self.knots + self.degree
            )));
        }
        if self.fix_theta && self.theta_start.is_none() {
            return Err(Error::InvalidParameter("fix_theta requires theta_start".into()));
        }
        if let (Some(k), Some(t)) = (self.copula.copula(), self.theta_start) {
            k.validate(t)?;
        }
        if let Some(a) = self.fix_aux {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter(format!("fixed auxiliary parameter {a} must be positive")));
            }
        }
        if let Some(l) = &self.lambda {
            let n_smooth = self.selection.iter().chain(&self.outcome).filter(|t| t.kind == TermKind::Smooth).count();
            if l.len() != n_smooth {
                return Err(Error::InvalidParameter(format!("{} smoothing parameters given for {n_smooth} smooth terms", l.len())));
            }
            if l.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidParameter("smoothing parameters must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_missing_outcome() {
        let text = "sel,out,x1,x2\n1,2.5,0.1,3\n0,,0.2,4\n1,0.75,0.3,5\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.n_selected(), 2);
        assert!(d.out[1].is_nan());
        assert_eq!(d.column("x2").unwrap(), &[3.0, 4.0, 5.0]);
        let mut buf = Vec::new();
        d.write_csv_to(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back.sel, d.sel);
        assert_eq!(back.columns, d.columns);

        let bad = "sel,out,x1\n1,1.0,0.1\n1,,0.2\n";
        let err = Dataset::from_csv_reader(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn spec_json_defaults() {
        let s = r#"{"selection":[{"column":"x1","kind":"smooth"}],
                    "outcome":[{"column":"x2","kind":"linear"}],
                    "margin":"gamma","copula":"gumbel"}"#;
        let spec = ModelSpec::from_json(s).unwrap();
        assert_eq!((spec.knots, spec.degree, spec.penalty_order), (8, 3, 2));
        assert_eq!(spec.copula.copula(), Some(CopulaKind::Gumbel));
        assert!("independence".parse::<Dependence>().unwrap().copula().is_none());
    }
}
