//! Overlap and surface-distance metrics, and per-round report records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distance::edt;
use crate::error::{Error, Result};
use crate::volume::{LabelMap, Spacing};

/// `2 |A & B| / (|A| + |B|)` over foreground voxels; two empty masks score 1.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    a.dims().check_same(&b.dims(), "label map")?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        na += x as usize;
        nb += y as usize;
        both += (x & y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with at least one background 6-neighbor. Voxels on the
/// edge of the grid count as touching background.
pub fn surface(m: &LabelMap) -> Vec<bool> {
    let d = m.dims();
    let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
    (0..d.len())
        .map(|i| {
            m.is_fg(i)
                && steps.iter().any(|&s| match d.offset(d.coord_unchecked(i), s) {
                    Some(j) => !m.is_fg(j),
                    None => true,
                })
        })
        .collect()
}

/// Average symmetric surface distance in mm: the mean, over the surface
/// voxels of both masks, of the distance to the other mask's surface.
pub fn assd(a: &LabelMap, b: &LabelMap, spacing: Spacing) -> Result<f64> {
    let dims = a.dims();
    dims.check_same(&b.dims(), "label map")?;
    if a.count_foreground() == 0 || b.count_foreground() == 0 {
        return Err(Error::UndefinedMetric("surface distance of an empty mask".into()));
    }
    let (sa, sb) = (surface(a), surface(b));
    let (da, db) = (edt(&sa, dims, spacing), edt(&sb, dims, spacing));
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..dims.len() {
        if sa[i] {
            total += db[i];
            count += 1;
        }
        if sb[i] {
            total += da[i];
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub weights: f64,
    pub train: f64,
    pub infer: f64,
    pub graphcut: f64,
}

/// One report row. Metrics are absent without ground truth; timings are
/// null when the run was asked to be reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assd: Option<f64>,
    pub scribble_voxels: usize,
    pub t_weights: Option<f64>,
    pub t_train: Option<f64>,
    pub t_infer: Option<f64>,
    pub t_graphcut: Option<f64>,
}

impl EvalReport {
    /// A row for `pred`, scored against `gt` when given. ASSD is left out
    /// when either mask is empty.
    pub fn new(
        round: usize,
        pred: &LabelMap,
        gt: Option<&LabelMap>,
        scribble_voxels: usize,
        times: Option<StageTimes>,
    ) -> Result<Self> {
        let (dice, assd) = match gt {
            Some(gt) => {
                let d = dice(pred, gt)?;
                let a = match assd(pred, gt, gt.spacing()) {
                    Ok(a) => Some(a),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                (Some(d), a)
            }
            None => (None, None),
        };
        Ok(EvalReport {
            round,
            dice,
            assd,
            scribble_voxels,
            t_weights: times.map(|t| t.weights),
            t_train: times.map(|t| t.train),
            t_infer: times.map(|t| t.infer),
            t_graphcut: times.map(|t| t.graphcut),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Writes one JSON object per line.
pub fn write_reports(mut w: impl Write, rows: &[EvalReport]) -> std::io::Result<()> {
    for r in rows {
        writeln!(w, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
