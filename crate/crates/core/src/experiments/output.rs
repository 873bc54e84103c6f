//! CSV artifacts and their JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::{Failure, SweepReport, SweepRow};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = ["axis", "value", "scheme", "metric", "mean", "stderr", "n_geometries", "seed", "config_hash"];

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

/// Writes rows in the fixed column order to any sink.
pub fn write_csv<W: Write>(rows: &[SweepRow], sink: W, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.axis.clone(),
            format_float(r.value),
            r.scheme.clone(),
            r.metric.clone(),
            format_float(r.mean),
            format_float(r.stderr),
            r.n_geometries.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    write_csv(rows, std::io::BufWriter::new(file), path)
}

pub fn parse_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rd.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let bad = |what: &str, line: usize| Error::Config(format!("{}:{line}: cannot parse {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = i + 2;
        let num = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what, line));
        rows.push(SweepRow {
            axis: rec[0].to_string(),
            value: num(1, "value")?,
            scheme: rec[2].to_string(),
            metric: rec[3].to_string(),
            mean: num(4, "mean")?,
            stderr: num(5, "stderr")?,
            n_geometries: rec[6].parse().map_err(|_| bad("n_geometries", line))?,
            seed: rec[7].parse().map_err(|_| bad("seed", line))?,
            config_hash: rec[8].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    axis: &'a str,
    seed: u64,
    config_hash: &'a str,
    excluded_geometries: usize,
    failures: &'a [Failure],
}

/// `<out>.report.json` next to a CSV artifact.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".report.json");
    csv_path.with_file_name(name)
}

/// Writes the CSV and its failure report.
pub fn emit_report(report: &SweepReport, path: &Path) -> Result<()> {
    emit_csv(&report.rows, path)?;
    let side = sidecar_path(path);
    let body = Sidecar {
        axis: report.axis.name(),
        seed: report.seed,
        config_hash: &report.config_hash,
        excluded_geometries: report.failures.len(),
        failures: &report.failures,
    };
    let mut text = serde_json::to_string_pretty(&body).expect("sidecar is serializable");
    text.push('\n');
    std::fs::write(&side, text).map_err(|source| Error::Io { path: side, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, mean: f64) -> SweepRow {
        SweepRow {
            axis: "power".into(),
            value,
            scheme: "wzf-opt".into(),
            metric: "wzf_sur".into(),
            mean,
            stderr: 0.012345678901234,
            n_geometries: 100,
            seed: 42,
            config_hash: "0123456789abcdef".into(),
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), CSV_HEADER.join(",") + "\n");
        assert!(parse_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![row(-10.0, 23.456789012345678), row(1e-11, 1.0 / 3.0), row(0.1, f64::NAN)];
        emit_csv(&rows, &p).unwrap();
        let back = parse_csv(&p).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.stderr, b.stderr);
            assert_eq!((a.n_geometries, a.seed, &a.config_hash), (b.n_geometries, b.seed, &b.config_hash));
        }
    }

    #[test]
    fn missing_directory_reports_path() {
        let p = Path::new("/nonexistent-dir/x.csv");
        match emit_csv(&[], p) {
            Err(Error::Io { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sidecar_sits_next_to_csv() {
        assert_eq!(sidecar_path(Path::new("/a/b/out.csv")), Path::new("/a/b/out.csv.report.json"));
    }
}
