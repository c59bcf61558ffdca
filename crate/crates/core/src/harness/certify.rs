use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::bounds::Certification;
use crate::error::{Error, Result};
use crate::tabular::load_records;

const TRACE_HEADER: &str = "iter,lambda,err_norm,gap,bound_thm2,bound_thm1";

fn looks_like_trace(path: &Path) -> Result<bool> {
    let mut first = String::new();
    BufReader::new(std::fs::File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end() == TRACE_HEADER)
}

fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, found)?;
        } else if p.extension().is_some_and(|e| e == "csv") && looks_like_trace(&p)? {
            found.push(p);
        }
    }
    Ok(())
}

/// Trace files named directly plus every trace CSV below named directories.
pub fn find_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut found)?;
        } else if p.exists() {
            found.push(p.clone());
        } else {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", p.display()),
            )));
        }
    }
    if found.is_empty() {
        let shown = paths.first().cloned().unwrap_or_default();
        return Err(Error::NoTraces(shown));
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub files: Vec<PathBuf>,
    pub certification: Certification,
}

impl CertificationReport {
    pub fn is_sound(&self) -> bool {
        self.certification.violations == 0
    }
}

impl fmt::Display for CertificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.certification;
        writeln!(f, "{:<12}{:>12}", "runs", c.runs)?;
        writeln!(f, "{:<12}{:>12}", "iterations", c.iterations)?;
        writeln!(f, "{:<12}{:>12}", "violations", c.violations)?;
        for &(run, iter) in c.violating.iter().take(20) {
            writeln!(f, "  violated at iter {iter} of {}", self.files[run].display())?;
        }
        if c.violating.len() > 20 {
            writeln!(f, "  ... {} more", c.violating.len() - 20)?;
        }
        Ok(())
    }
}

/// Checks every recorded gap against the recorded bounds.
pub fn certify_bounds(paths: &[PathBuf]) -> Result<CertificationReport> {
    let files = find_traces(paths)?;
    let mut certification = Certification::default();
    for f in &files {
        certification.check(&load_records(f)?);
    }
    Ok(CertificationReport {
        files,
        certification,
    })
}

/// Writes the soundness table as CSV.
pub fn write_certification(report: &CertificationReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["file", "iter"])?;
    for &(run, iter) in &report.certification.violating {
        w.write_record([report.files[run].display().to_string(), iter.to_string()])?;
    }
    w.write_record(["runs", &report.certification.runs.to_string()])?;
    w.write_record(["iterations", &report.certification.iterations.to_string()])?;
    w.write_record(["violations", &report.certification.violations.to_string()])?;
    w.flush()?;
    Ok(())
}
