use std::io::Write;

use super::metrics::{chamfer, hausdorff, p2f};
use crate::error::Result;
use crate::geometry::cloud::{normalize, PointCloud, TriangleMesh};

pub const CSV_HEADER: &str = "shape,cd,hd,p2f_mean,p2f_std";

/// Evaluation metrics for one shape, in raw units of the normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub shape: String,
    pub cd: f64,
    pub hd: f64,
    /// `(mean, std)`, present when a mesh was supplied.
    pub p2f: Option<(f64, f64)>,
}

impl MetricReport {
    /// Scores `pred` against `gt` after mapping both (and the mesh) into the
    /// frame where `gt` is centred with unit max radius.
    pub fn evaluate(
        shape: &str,
        pred: &PointCloud,
        gt: &PointCloud,
        mesh: Option<&TriangleMesh>,
    ) -> Result<Self> {
        let (gt_n, tf) = normalize(gt)?;
        let pred_n = tf.apply(pred);
        let p2f = match mesh {
            Some(m) => {
                let verts = m.vertices().iter().map(|v| tf.apply_point(v)).collect();
                let mesh_n = TriangleMesh::new(verts, m.faces().to_vec())?;
                Some(p2f(&pred_n, &mesh_n)?)
            }
            None => None,
        };
        Ok(Self {
            shape: shape.to_string(),
            cd: chamfer(&pred_n, &gt_n)?,
            hd: hausdorff(&pred_n, &gt_n)?,
            p2f,
        })
    }

    /// Arithmetic mean of several reports; P2F is averaged only if every report has it.
    pub fn mean(shape: &str, reports: &[MetricReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let p2f = reports
            .iter()
            .map(|r| r.p2f)
            .collect::<Option<Vec<_>>>()
            .map(|v| {
                (
                    v.iter().map(|p| p.0).sum::<f64>() / n,
                    v.iter().map(|p| p.1).sum::<f64>() / n,
                )
            });
        Some(Self {
            shape: shape.to_string(),
            cd: reports.iter().map(|r| r.cd).sum::<f64>() / n,
            hd: reports.iter().map(|r| r.hd).sum::<f64>() / n,
            p2f,
        })
    }

    /// One CSV row, values ×10³ with three decimals; P2F fields empty when absent.
    pub fn csv_row(&self) -> String {
        let f = |v: f64| format!("{:.3}", v * 1e3);
        let (pm, ps) = match self.p2f {
            Some((m, s)) => (f(m), f(s)),
            None => (String::new(), String::new()),
        };
        format!("{},{},{},{},{}", self.shape, f(self.cd), f(self.hd), pm, ps)
    }
}

pub fn write_csv<W: Write>(mut out: W, reports: &[MetricReport]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
