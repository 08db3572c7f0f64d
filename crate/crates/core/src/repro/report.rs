use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::RateFit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorCurve {
    pub order: u8,
    pub method: String,
    pub errors: Vec<f64>,
    pub fit: Option<RateFit>,
}

/// `max_k |E g(x_k) - E g(X_{k eta})|` against `eta`, per SME order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorReport {
    pub experiment: String,
    pub seed: u64,
    pub eta_grid: Vec<f64>,
    pub curves: Vec<WeakErrorCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kappa: f64,
    pub rate: f64,
    pub family: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// One log-log fit per family, in order of first appearance.
    pub fits: Vec<(String, RateFit)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRow {
    pub family: String,
    pub mu: Option<f64>,
    pub eta: f64,
    pub k: usize,
    pub t: f64,
    pub mean_f: f64,
    pub stderr: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<DynamicsRow>,
}

impl DynamicsReport {
    /// Rows of one series, in `k` order.
    pub fn series(&self, family: &str, mu: Option<f64>, eta: f64, method: &str) -> Vec<&DynamicsRow> {
        self.rows
            .iter()
            .filter(|r| r.family == family && r.mu == mu && r.eta == eta && r.method == method)
            .collect()
    }
}

pub const WEAK_ERROR_HEADER: &str = "experiment,order,eta,max_weak_error,method";
pub const SWEEP_HEADER: &str = "experiment,kappa,rate,family";
pub const DYNAMICS_HEADER: &str = "experiment,family,mu,eta,k,t,mean_f,stderr,method";

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn preamble(experiment: &str, seed: u64, header: &str) -> String {
    format!("# experiment={experiment} seed={seed}\n{header}\n")
}

fn footer(out: &mut String, fit: &RateFit) {
    writeln!(
        out,
        "#slope,{},#intercept,{},#residual,{}",
        num(fit.slope),
        num(fit.intercept),
        num(fit.residual)
    )
    .expect("string write");
}

impl WeakErrorReport {
    pub fn to_csv(&self) -> String {
        let mut out = preamble(&self.experiment, self.seed, WEAK_ERROR_HEADER);
        for c in &self.curves {
            for (eta, err) in self.eta_grid.iter().zip(&c.errors) {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.experiment,
                    c.order,
                    num(*eta),
                    num(*err),
                    c.method
                )
                .expect("string write");
            }
        }
        for fit in self.curves.iter().filter_map(|c| c.fit.as_ref()) {
            footer(&mut out, fit);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, WEAK_ERROR_HEADER)?;
        let mut eta_grid: Vec<f64> = Vec::new();
        let mut curves: Vec<WeakErrorCurve> = Vec::new();
        let mut experiment = doc.experiment.clone();
        for row in &doc.rows {
            experiment = row[0].clone();
            let order: u8 = parse_field(&row[1], "order")?;
            let eta: f64 = parse_field(&row[2], "eta")?;
            let err: f64 = parse_field(&row[3], "max_weak_error")?;
            match curves.iter_mut().find(|c| c.order == order) {
                Some(c) => c.errors.push(err),
                None => curves.push(WeakErrorCurve {
                    order,
                    method: row[4].clone(),
                    errors: vec![err],
                    fit: None,
                }),
            }
            if curves.len() == 1 {
                eta_grid.push(eta);
            }
        }
        if doc.fits.len() > curves.len() {
            return Err(csv_error("more footer rows than curves"));
        }
        for (c, fit) in curves.iter_mut().zip(doc.fits) {
            c.fit = Some(RateFit {
                window: (0, c.errors.len().saturating_sub(1)),
                ..fit
            });
        }
        Ok(WeakErrorReport {
            experiment,
            seed: doc.seed,
            eta_grid,
            curves,
        })
    }
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = preamble(&self.experiment, self.seed, SWEEP_HEADER);
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", self.experiment, num(r.kappa), num(r.rate), r.family).expect("string write");
        }
        for (_, fit) in &self.fits {
            footer(&mut out, fit);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, SWEEP_HEADER)?;
        let mut rows = Vec::new();
        let mut families: Vec<String> = Vec::new();
        for row in &doc.rows {
            let family = row[3].clone();
            if !families.contains(&family) {
                families.push(family.clone());
            }
            rows.push(SweepRow {
                kappa: parse_field(&row[1], "kappa")?,
                rate: parse_field(&row[2], "rate")?,
                family,
            });
        }
        let fits = families
            .into_iter()
            .zip(doc.fits)
            .map(|(f, fit)| {
                let n = rows.iter().filter(|r| r.family == f).count();
                (
                    f,
                    RateFit {
                        window: (0, n.saturating_sub(1)),
                        ..fit
                    },
                )
            })
            .collect();
        Ok(SweepReport {
            experiment: doc.experiment,
            seed: doc.seed,
            rows,
            fits,
        })
    }
}

impl DynamicsReport {
    pub fn to_csv(&self) -> String {
        let mut out = preamble(&self.experiment, self.seed, DYNAMICS_HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.experiment,
                r.family,
                r.mu.map(num).unwrap_or_default(),
                num(r.eta),
                r.k,
                num(r.t),
                num(r.mean_f),
                num(r.stderr),
                r.method
            )
            .expect("string write");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, DYNAMICS_HEADER)?;
        let rows = doc
            .rows
            .iter()
            .map(|row| {
                Ok(DynamicsRow {
                    family: row[1].clone(),
                    mu: if row[2].is_empty() {
                        None
                    } else {
                        Some(parse_field(&row[2], "mu")?)
                    },
                    eta: parse_field(&row[3], "eta")?,
                    k: parse_field(&row[4], "k")?,
                    t: parse_field(&row[5], "t")?,
                    mean_f: parse_field(&row[6], "mean_f")?,
                    stderr: parse_field(&row[7], "stderr")?,
                    method: row[8].clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DynamicsReport {
            experiment: doc.experiment,
            seed: doc.seed,
            rows,
        })
    }
}

fn csv_error(msg: &str) -> Error {
    Error::invalid(format!("malformed CSV: {msg}"))
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| csv_error(&format!("cannot parse {name} from {s:?}")))
}

struct CsvDoc {
    experiment: String,
    seed: u64,
    rows: Vec<Vec<String>>,
    fits: Vec<RateFit>,
}

impl CsvDoc {
    fn parse(text: &str, header: &str) -> Result<Self> {
        let mut lines = text.lines();
        let comment = lines.next().ok_or_else(|| csv_error("empty file"))?;
        let mut experiment = String::new();
        let mut seed = 0;
        for part in comment.trim_start_matches('#').split_whitespace() {
            if let Some(v) = part.strip_prefix("experiment=") {
                experiment = v.to_string();
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = parse_field(v, "seed")?;
            }
        }
        if lines.next() != Some(header) {
            return Err(csv_error("unexpected header"));
        }
        let width = header.split(',').count();
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        for line in lines {
            if line.starts_with("#slope") {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(csv_error("footer needs six fields"));
                }
                fits.push(RateFit {
                    slope: parse_field(f[1], "slope")?,
                    intercept: parse_field(f[3], "intercept")?,
                    residual: parse_field(f[5], "residual")?,
                    window: (0, 0),
                });
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != width {
                return Err(csv_error(&format!("row has {} fields, expected {width}", row.len())));
            }
            rows.push(row);
        }
        Ok(CsvDoc {
            experiment,
            seed,
            rows,
            fits,
        })
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
