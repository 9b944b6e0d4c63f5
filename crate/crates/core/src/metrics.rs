//! Error metrics between predicted and reference temperature fields, dataset
//! aggregation and heatmap export.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{layout_fields, Dataset, Split};
use crate::fdm::{solve_fdm, SolverConfig};
use crate::grid::ScalarField;
use crate::net::{ParameterSet, UNet};
use crate::{Error, Result};

/// All values in kelvin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    /// Mean absolute error over every node.
    pub mae_k: f64,
    /// Mean absolute error over nodes covered by a component.
    pub cmae_k: f64,
    /// Largest absolute error.
    pub maxae_k: f64,
    /// Absolute difference of the two maximum temperatures.
    pub mtae_k: f64,
}

impl MetricSet {
    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let mut m = MetricSet::default();
        for s in sets {
            m.mae_k += s.mae_k / n;
            m.cmae_k += s.cmae_k / n;
            m.maxae_k += s.maxae_k / n;
            m.mtae_k += s.mtae_k / n;
        }
        m
    }
}

/// Mean absolute error over all nodes.
pub fn mae(pred: &ScalarField, reference: &ScalarField) -> Result<f64> {
    pred.check_same_grid(reference)?;
    let sum: f64 = pred.values().iter().zip(reference.values()).map(|(p, r)| (p - r).abs()).sum();
    Ok(sum / pred.values().len() as f64)
}

/// Nodes where the rasterized intensity is positive.
pub fn component_mask(intensity: &ScalarField) -> Vec<bool> {
    intensity.values().iter().map(|&q| q > 0.0).collect()
}

pub fn evaluate_pair(pred: &ScalarField, reference: &ScalarField, components: &[bool]) -> Result<MetricSet> {
    pred.check_same_grid(reference)?;
    evaluate_values(pred.values(), reference.values(), components)
}

/// [`evaluate_pair`] on raw node values of equal length.
pub fn evaluate_values(pred: &[f64], reference: &[f64], components: &[bool]) -> Result<MetricSet> {
    if pred.len() != reference.len() || components.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} predicted, {} reference and {} mask values",
            pred.len(),
            reference.len(),
            components.len()
        )));
    }
    let covered = components.iter().filter(|&&c| c).count();
    if covered == 0 {
        return Err(Error::EmptyComponentMask);
    }
    let (mut sum, mut csum, mut max) = (0.0, 0.0, 0.0f64);
    for ((p, r), &c) in pred.iter().zip(reference).zip(components) {
        let e = (p - r).abs();
        sum += e;
        max = max.max(e);
        if c {
            csum += e;
        }
    }
    let peak = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MetricSet {
        mae_k: sum / pred.len() as f64,
        cmae_k: csum / covered as f64,
        maxae_k: max,
        mtae_k: (peak(pred) - peak(reference)).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    /// Sample id and its metrics, in manifest order.
    pub rows: Vec<(usize, MetricSet)>,
    pub mean: MetricSet,
}

impl DatasetEvaluation {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,mae,cmae,maxae,mtae\n");
        for (id, m) in &self.rows {
            out.push_str(&format!("{id},{},{},{},{}\n", m.mae_k, m.cmae_k, m.maxae_k, m.mtae_k));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Metrics of the network on every sample of `split`. Samples without a
/// stored label are solved with `solve_missing`, or fail with
/// `MissingLabel` when it is `None`.
pub fn evaluate_dataset(
    net: &UNet,
    params: &ParameterSet<f32>,
    dataset: &Dataset,
    split: Split,
    solve_missing: Option<&SolverConfig>,
) -> Result<DatasetEvaluation> {
    let case = dataset.case();
    let mask = case.mask()?;
    let entries: Vec<_> = dataset.manifest.entries(split).collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("split {split:?} has no samples")));
    }
    if solve_missing.is_none() {
        if let Some(e) = entries.iter().find(|e| e.temperature.is_none()) {
            return Err(Error::MissingLabel(format!("{:05}", e.id)));
        }
    }
    let rows = entries
        .par_iter()
        .map(|e| {
            let layout = dataset.layout(e)?;
            let reference = match (&e.temperature, solve_missing) {
                (Some(_), _) => dataset.label(e)?,
                (None, Some(solver)) => solve_fdm(&case.problem(layout.clone())?, solver)?.0,
                (None, None) => return Err(Error::MissingLabel(format!("{:05}", e.id))),
            };
            let (phi, input) = layout_fields(case, &layout)?;
            let pred = net.forward(params, &input, &mask, case.sink_temp_k())?;
            Ok((e.id, evaluate_pair(&pred, &reference, &component_mask(&phi))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = MetricSet::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(DatasetEvaluation { rows, mean })
}

/// Colormap used by [`export_heatmap`]: with `t` the value rescaled to
/// [0, 1], red = t, green = 1 − |2t − 1|, blue = 1 − t. Cold is blue, the
/// midpoint green, hot red, and `t` reads back directly from the red channel.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t]
}

/// Writes `path` as a 16-bit RGB PNG, one pixel per node with image row `i`
/// showing grid row `i`, and the raw field as `.tfpf` beside it. The PNG
/// carries `min`, `max` and `colormap` text chunks. A constant field maps
/// to the colormap midpoint.
pub fn export_heatmap(field: &ScalarField, path: &Path) -> Result<()> {
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("cannot export a field with non-finite values".into()));
    }
    let (rows, cols) = field.shape();
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let mut pixels = Vec::with_capacity(rows * cols * 6);
    for &v in field.values() {
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        for ch in colormap(t) {
            pixels.extend_from_slice(&((ch * 65535.0).round() as u16).to_be_bytes());
        }
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let text_err = |e: png::EncodingError| Error::format(path, e.to_string());
    enc.add_text_chunk("min".into(), format!("{lo:.6} K")).map_err(text_err)?;
    enc.add_text_chunk("max".into(), format!("{hi:.6} K")).map_err(text_err)?;
    enc.add_text_chunk("colormap".into(), "r=t g=1-|2t-1| b=1-t, t=(T-min)/(max-min)".into())
        .map_err(text_err)?;
    let mut writer = enc.write_header().map_err(text_err)?;
    writer.write_image_data(&pixels).map_err(text_err)?;
    writer.finish().map_err(text_err)?;
    field.save(&path.with_extension("tfpf"))
}
