//! On-disk formats.
//!
//! * dataset: `<name>.csv` with one row per pair (`x_0..x_{d-1}, y_0..y_{d-1}`)
//!   plus a `<name>.json` metadata sidecar;
//! * model: a directory holding the dataset next to `theta.csv` and `model.json`;
//! * spectrum: JSON report, with `re,im` CSV and SVG renderings;
//! * trajectory: CSV of predicted against reference states over time.
//!
//! Floats are written with 17 significant digits so files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DatasetMeta, SnapshotDataset};
use crate::error::{Error, Result};
use crate::kedmd::{fit, EdmdModel};
use crate::kernel::KernelSpec;
use crate::predict::PredictedTrajectory;
use crate::spectral::SpectrumReport;

/// Round-trip formatting of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format_err(path, format!("bad number '{s}': {e}")))
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e.to_string()))
}

/// Writes the pair CSV and its JSON sidecar.
pub fn write_dataset(ds: &SnapshotDataset, csv_path: &Path) -> Result<()> {
    let d = ds.dim();
    let mut w = csv::Writer::from_path(csv_path)?;
    let header: Vec<String> = (0..d)
        .map(|i| format!("x{i}"))
        .chain((0..d).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header)?;
    for (x, y) in ds.xs.iter().zip(&ds.ys) {
        w.write_record(x.iter().chain(y).map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    write_json(&sidecar_path(csv_path), &ds.meta)
}

/// Reads a dataset and validates it against the system in its sidecar.
pub fn read_dataset(csv_path: &Path) -> Result<SnapshotDataset> {
    let meta: DatasetMeta = read_json(&sidecar_path(csv_path))?;
    let d = meta.system.dim();
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 * d {
            return Err(format_err(
                csv_path,
                format!("expected {} columns, found {}", 2 * d, rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .map(|s| parse_f64(csv_path, s))
            .collect::<Result<Vec<_>>>()?;
        xs.push(vals[..d].to_vec());
        ys.push(vals[d..].to_vec());
    }
    let ds = SnapshotDataset { xs, ys, meta };
    ds.validate()?;
    Ok(ds)
}

pub fn write_matrix(m: &Mat<f64>, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(m.nrows() * m.ncols() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&fmt_f64(m[(i, j)]));
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Mat<f64>> {
    let text = fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| parse_f64(path, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format_err(path, "ragged matrix"));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Hyperparameters stored in `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kernel: KernelSpec,
    pub beta: f64,
    pub rank: usize,
    pub effective_rank: usize,
    pub n: usize,
}

pub const MODEL_HEADER: &str = "model.json";
pub const MODEL_THETA: &str = "theta.csv";
pub const MODEL_DATASET: &str = "dataset.csv";

/// Writes a model directory; returns the files written.
pub fn write_model(model: &EdmdModel, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ds_path = dir.join(MODEL_DATASET);
    write_dataset(&model.dataset, &ds_path)?;
    let theta_path = dir.join(MODEL_THETA);
    write_matrix(&model.theta, &theta_path)?;
    let header = ModelHeader {
        kernel: model.kernel.spec().clone(),
        beta: model.beta,
        rank: model.rank,
        effective_rank: model.effective_rank,
        n: model.n(),
    };
    let header_path = dir.join(MODEL_HEADER);
    write_json(&header_path, &header)?;
    Ok(vec![sidecar_path(&ds_path), ds_path, theta_path, header_path])
}

/// Reads a model directory. The fit is recomputed from the stored sample and
/// hyperparameters and checked against the stored coefficients.
pub fn read_model(dir: &Path) -> Result<EdmdModel> {
    let header: ModelHeader = read_json(&dir.join(MODEL_HEADER))?;
    let ds = read_dataset(&dir.join(MODEL_DATASET))?;
    if ds.len() != header.n {
        return Err(format_err(
            &dir.join(MODEL_HEADER),
            format!("header says n = {}, dataset has {}", header.n, ds.len()),
        ));
    }
    let model = fit(&ds, &header.kernel, header.beta, header.rank)?;
    let theta_path = dir.join(MODEL_THETA);
    let stored = read_matrix(&theta_path)?;
    if stored.nrows() != model.n() || stored.ncols() != model.n() {
        return Err(format_err(&theta_path, "coefficient matrix has the wrong shape"));
    }
    let scale = model.theta.norm_max().max(1.0);
    let diff = (&stored - &model.theta).norm_max();
    if diff > 1e-8 * scale {
        return Err(format_err(
            &theta_path,
            format!("stored coefficients differ from the refit by {diff:e}"),
        ));
    }
    Ok(model)
}

pub fn write_spectrum_json(report: &SpectrumReport, path: &Path) -> Result<()> {
    write_json(path, report)
}

pub fn read_spectrum_json(path: &Path) -> Result<SpectrumReport> {
    read_json(path)
}

pub fn write_spectrum_csv(report: &SpectrumReport, path: &Path) -> Result<()> {
    let mut s = String::from("re,im\n");
    for e in &report.eigenvalues {
        let _ = writeln!(s, "{},{}", fmt_f64(e.re), fmt_f64(e.im));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Unit circle with one marker per eigenvalue.
pub fn spectrum_svg(report: &SpectrumReport) -> String {
    let extent = (1.15_f64).max(1.1 * report.spectral_radius);
    let px = 480.0;
    let scale = px / (2.0 * extent);
    let map = |re: f64, im: f64| ((re + extent) * scale, (extent - im) * scale);
    let (cx, cy) = map(0.0, 0.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" viewBox="0 0 {px} {px}">"#
    );
    let _ = writeln!(s, r#"  <rect width="{px}" height="{px}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"  <line x1="0" y1="{cy:.2}" x2="{px}" y2="{cy:.2}" stroke="silver" stroke-width="1"/>"#
    );
    let _ = writeln!(
        s,
        r#"  <line x1="{cx:.2}" y1="0" x2="{cx:.2}" y2="{px}" stroke="silver" stroke-width="1"/>"#
    );
    let _ = writeln!(
        s,
        r#"  <circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        scale
    );
    for e in &report.eigenvalues {
        let (x, y) = map(e.re, e.im);
        let colour = if e.modulus() > 1.0 { "#c0392b" } else { "#2e6fba" };
        let _ = writeln!(
            s,
            r#"  <circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{colour}" fill-opacity="0.8"/>"#
        );
    }
    let _ = writeln!(
        s,
        r#"  <text x="8" y="20" font-family="sans-serif" font-size="13">spectral radius {:.4}</text>"#,
        report.spectral_radius
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_spectrum_svg(report: &SpectrumReport, path: &Path) -> Result<()> {
    fs::write(path, spectrum_svg(report))?;
    Ok(())
}

/// `t, xhat_*, [ref_*, error]` with `t` in time units (`step × dt`).
pub fn write_trajectory_csv(traj: &PredictedTrajectory, dt: f64, path: &Path) -> Result<()> {
    let d = traj.states[0].len();
    let mut s = String::from("t");
    for i in 0..d {
        let _ = write!(s, ",xhat{i}");
    }
    if traj.reference.is_some() {
        for i in 0..d {
            let _ = write!(s, ",ref{i}");
        }
        s.push_str(",error");
    }
    s.push('\n');
    for (t, x) in traj.states.iter().enumerate() {
        s.push_str(&fmt_f64(t as f64 * dt));
        for v in x {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        if let (Some(reference), Some(errors)) = (&traj.reference, &traj.errors) {
            match (reference.get(t), errors.get(t)) {
                (Some(r), Some(e)) => {
                    for v in r {
                        s.push(',');
                        s.push_str(&fmt_f64(*v));
                    }
                    s.push(',');
                    s.push_str(&fmt_f64(*e));
                }
                _ => {
                    for _ in 0..=d {
                        s.push(',');
                    }
                }
            }
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_snapshots, DomainBox, SystemSpec};
    use crate::spectral::spectrum;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn json_floats_round_trip_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..5000).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_json(&p, &values).unwrap();
        let back: Vec<f64> = read_json(&p).unwrap();
        assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn dataset_and_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = SystemSpec::VanDerPol { mu: -1.0 };
        let ds = generate_snapshots(&sys, &DomainBox::symmetric(2, 1.0), 4, 0.2, 1.0, 3).unwrap();
        let p = dir.path().join("data.csv");
        write_dataset(&ds, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds);

        let model = fit(&ds, &KernelSpec::linear_wendland(2, 1, 3.0), 1e-6, 6).unwrap();
        let mdir = dir.path().join("model");
        let files = write_model(&model, &mdir).unwrap();
        assert_eq!(files.len(), 4);
        let back = read_model(&mdir).unwrap();
        assert_eq!(back.theta, model.theta);

        let theta_path = mdir.join(MODEL_THETA);
        let mut t = read_matrix(&theta_path).unwrap();
        t[(0, 0)] += 1.0;
        write_matrix(&t, &theta_path).unwrap();
        assert!(read_model(&mdir).is_err());
    }

    #[test]
    fn spectrum_files() {
        let dir = tempfile::tempdir().unwrap();
        let sys = SystemSpec::LinearMap {
            matrix: vec![vec![0.5, 0.0], vec![0.0, 0.8]],
        };
        let ds = generate_snapshots(&sys, &DomainBox::symmetric(2, 1.0), 30, 1.0, 1.0, 3).unwrap();
        let model = fit(&ds, &KernelSpec::linear_wendland(2, 1, 3.0), 1e-8, 5).unwrap();
        let rep = spectrum(&model).unwrap();
        let j = dir.path().join("s.json");
        write_spectrum_json(&rep, &j).unwrap();
        assert_eq!(read_spectrum_json(&j).unwrap(), rep);
        let c = dir.path().join("s.csv");
        write_spectrum_csv(&rep, &c).unwrap();
        let text = fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().count(), rep.eigenvalues.len() + 1);
        let svg = spectrum_svg(&rep);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("fill-opacity").count(), rep.eigenvalues.len());
    }

    #[test]
    fn malformed_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_matrix(&p).is_err());
        fs::write(&p, "1,abc\n").unwrap();
        assert!(read_matrix(&p).is_err());
        assert!(read_dataset(&dir.path().join("missing.csv")).is_err());
    }
}
