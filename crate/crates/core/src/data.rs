//! Random heat-source layouts and persisted datasets.
//!
//! A dataset directory holds `manifest.json`, `layouts/NNNNN.json` and, when
//! labelled, `fields/NNNNN.tfpf` with the FDM temperature of each layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{build_mask, BoundarySpec, NodeMask};
use crate::fdm::{solve_fdm, SolveReport, SolverConfig};
use crate::grid::{rasterize_layout, ConductionProblem, GridSpec, HeatSource, LayoutSpec, ScalarField};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MAX_ATTEMPTS: usize = 1000;
pub const MAX_RESTARTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentTemplate {
    pub width_m: f64,
    pub height_m: f64,
    pub intensity_w_m2: f64,
}

impl ComponentTemplate {
    pub fn square(side_m: f64, intensity_w_m2: f64) -> Self {
        ComponentTemplate {
            width_m: side_m,
            height_m: side_m,
            intensity_w_m2,
        }
    }
}

/// Domain, boundary, material and the components every layout places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub grid: GridSpec,
    pub boundary: BoundarySpec,
    pub conductivity_w_mk: f64,
    pub components: Vec<ComponentTemplate>,
    /// Divisor applied to intensities before they enter the network.
    /// Defaults to the largest component intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
}

/// Size and intensity of the twelve components of the mixed case.
const CASE2_COMPONENTS: [(f64, f64, f64); 12] = [
    (0.016, 0.012, 4000.0),
    (0.012, 0.006, 16000.0),
    (0.018, 0.009, 6000.0),
    (0.018, 0.012, 8000.0),
    (0.018, 0.018, 10000.0),
    (0.012, 0.012, 14000.0),
    (0.018, 0.006, 16000.0),
    (0.009, 0.009, 20000.0),
    (0.006, 0.024, 8000.0),
    (0.006, 0.012, 16000.0),
    (0.012, 0.024, 10000.0),
    (0.024, 0.024, 20000.0),
];

impl CaseConfig {
    /// Twenty 0.01 m squares at 10000 W/m² on a 0.1 m plate.
    pub fn case1(cells: usize) -> Result<Self> {
        Self::build(
            "case1",
            cells,
            BoundarySpec::left_center_sink(),
            vec![ComponentTemplate::square(0.01, 10000.0); 20],
        )
    }

    /// Twelve rectangles of mixed size and intensity on a 0.1 m plate.
    pub fn case2(cells: usize) -> Result<Self> {
        let comps = CASE2_COMPONENTS
            .iter()
            .map(|&(w, h, q)| ComponentTemplate {
                width_m: w,
                height_m: h,
                intensity_w_m2: q,
            })
            .collect();
        Self::build("case2", cells, BoundarySpec::left_center_sink(), comps)
    }

    /// Small case for single-core runs: four 0.0125 m squares at
    /// 10000 W/m² and a 0.0125 m sink, 64 cells by default.
    pub fn desk(cells: usize) -> Result<Self> {
        Self::build(
            "desk",
            cells,
            BoundarySpec::left_sink(0.0125),
            vec![ComponentTemplate::square(0.0125, 10000.0); 4],
        )
    }

    fn build(name: &str, cells: usize, boundary: BoundarySpec, components: Vec<ComponentTemplate>) -> Result<Self> {
        let case = CaseConfig {
            name: name.into(),
            grid: GridSpec::square(0.1, cells)?,
            boundary,
            conductivity_w_mk: 1.0,
            components,
            input_scale: None,
        };
        case.validate()?;
        Ok(case)
    }

    /// Named preset with its default grid, or `cells` when given.
    pub fn preset(name: &str, cells: Option<usize>) -> Result<Self> {
        match name {
            "case1" => Self::case1(cells.unwrap_or(200)),
            "case2" => Self::case2(cells.unwrap_or(200)),
            "desk" => Self::desk(cells.unwrap_or(64)),
            other => Err(Error::Config(format!("unknown case preset {other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let case: CaseConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    /// Same case on a grid of `cells × cells` over the same domain.
    pub fn with_cells(&self, cells: usize) -> Result<Self> {
        let grid = GridSpec::new(
            self.grid.width_m(),
            self.grid.height_m(),
            cells,
            (cells as f64 * self.grid.height_m() / self.grid.width_m()).round() as usize,
        )?;
        let case = CaseConfig { grid, ..self.clone() };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.conductivity_w_mk > 0.0 && self.conductivity_w_mk.is_finite()) {
            return Err(Error::Config("conductivity must be positive".into()));
        }
        for (k, c) in self.components.iter().enumerate() {
            let ok = [c.width_m, c.height_m, c.intensity_w_m2].iter().all(|v| v.is_finite())
                && c.width_m > 0.0
                && c.height_m > 0.0
                && c.intensity_w_m2 >= 0.0;
            if !ok {
                return Err(Error::Config(format!("component {k} has invalid size or intensity")));
            }
        }
        if let Some(s) = self.input_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("input_scale must be positive".into()));
            }
        }
        build_mask(&self.grid, &self.boundary)?;
        Ok(())
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale.unwrap_or_else(|| {
            let m = self.components.iter().map(|c| c.intensity_w_m2).fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
    }

    pub fn mask(&self) -> Result<NodeMask> {
        build_mask(&self.grid, &self.boundary)
    }

    pub fn problem(&self, layout: LayoutSpec) -> Result<ConductionProblem> {
        ConductionProblem::new(self.grid, self.conductivity_w_mk, layout, self.boundary)
    }

    pub fn sink_temp_k(&self) -> f64 {
        self.boundary.sink_temp_k
    }
}

/// Places every component at a uniformly drawn node-aligned corner,
/// redrawing on overlap. A component that fails `MAX_ATTEMPTS` draws
/// restarts the whole layout, at most `MAX_RESTARTS` times.
pub fn sample_layout<R: Rng>(case: &CaseConfig, rng: &mut R) -> Result<LayoutSpec> {
    let grid = &case.grid;
    let h = grid.step_m();
    let slack = 1e-9 * h;
    // Highest corner index per component that keeps it inside the domain.
    let mut limits = Vec::with_capacity(case.components.len());
    for (k, c) in case.components.iter().enumerate() {
        let ci = ((grid.width_m() - c.width_m) / h + 1e-9).floor();
        let ri = ((grid.height_m() - c.height_m) / h + 1e-9).floor();
        if ci < 0.0 || ri < 0.0 {
            return Err(Error::Placement {
                component: k,
                restarts: 0,
            });
        }
        limits.push((ci as usize, ri as usize));
    }
    let mut failed = 0;
    for _ in 0..=MAX_RESTARTS {
        let mut placed: Vec<HeatSource> = Vec::with_capacity(case.components.len());
        let mut complete = true;
        for (k, (c, &(ci, ri))) in case.components.iter().zip(&limits).enumerate() {
            let mut ok = false;
            for _ in 0..MAX_ATTEMPTS {
                let col = rng.gen_range(0..=ci);
                let row = rng.gen_range(0..=ri);
                let s = HeatSource {
                    x_m: grid.x(col),
                    y_m: grid.y(row),
                    width_m: c.width_m,
                    height_m: c.height_m,
                    intensity_w_m2: c.intensity_w_m2,
                };
                if !placed.iter().any(|p| p.overlaps(&s, slack)) {
                    placed.push(s);
                    ok = true;
                    break;
                }
            }
            if !ok {
                failed = k;
                complete = false;
                break;
            }
        }
        if complete {
            let layout = LayoutSpec::new(case.name.clone(), placed);
            layout.validate(grid)?;
            return Ok(layout);
        }
    }
    Err(Error::Placement {
        component: failed,
        restarts: MAX_RESTARTS,
    })
}

/// Independent generator for sample `index` under `seed`.
pub fn sample_stream(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        SplitCounts { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Split of sample index `i` when samples are laid out train, val, test.
    pub fn split_of(&self, i: usize) -> Split {
        if i < self.train {
            Split::Train
        } else if i < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: usize,
    pub split: Split,
    /// Relative to the dataset directory.
    pub layout: String,
    pub temperature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub case: CaseConfig,
    pub seed: u64,
    /// Samples per split actually present.
    pub counts: SplitCounts,
    pub solver: Option<SolverConfig>,
    pub samples: Vec<SampleEntry>,
    /// Samples dropped during generation, with the reason.
    pub notes: Vec<String>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut counts = SplitCounts::new(0, 0, 0);
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id) {
                return Err(Error::Config(format!("sample {} listed twice", s.id)));
            }
            counts.bump(s.split);
        }
        if counts != self.counts {
            return Err(Error::Config("manifest split counts do not match its entries".into()));
        }
        Ok(())
    }
}

/// Options for [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub counts: SplitCounts,
    pub seed: u64,
    pub with_labels: bool,
    pub solver: SolverConfig,
}

fn layout_rel(id: usize) -> String {
    format!("layouts/{id:05}.json")
}

fn field_rel(id: usize) -> String {
    format!("fields/{id:05}.tfpf")
}

/// Samples, optionally labels, and writes a dataset under `out_dir`.
/// Output is a pure function of (case, options).
pub fn generate_dataset(case: &CaseConfig, opts: &GenerateOptions, out_dir: &Path) -> Result<DatasetManifest> {
    case.validate()?;
    if opts.with_labels {
        opts.solver.validate()?;
    }
    let total = opts.counts.total();
    let samples: Vec<(LayoutSpec, Option<(ScalarField, SolveReport)>)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let layout = sample_layout(case, &mut sample_stream(opts.seed, i))?;
            let label = if opts.with_labels {
                Some(solve_fdm(&case.problem(layout.clone())?, &opts.solver)?)
            } else {
                None
            };
            Ok((layout, label))
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(out_dir.join("layouts"))?;
    if opts.with_labels {
        fs::create_dir_all(out_dir.join("fields"))?;
    }
    let mut entries = Vec::with_capacity(total);
    let mut counts = SplitCounts::new(0, 0, 0);
    let mut notes = Vec::new();
    for (i, (layout, label)) in samples.into_iter().enumerate() {
        let split = opts.counts.split_of(i);
        let temperature = match label {
            Some((_, report)) if !report.converged => {
                notes.push(format!(
                    "sample {i} excluded: solver stopped at residual {:e} after {} iterations",
                    report.final_residual, report.iterations
                ));
                continue;
            }
            Some((field, _)) => {
                let rel = field_rel(i);
                field.save(&out_dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let rel = layout_rel(i);
        layout.save(&out_dir.join(&rel))?;
        counts.bump(split);
        entries.push(SampleEntry {
            id: i,
            split,
            layout: rel,
            temperature,
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        case: case.clone(),
        seed: opts.seed,
        counts,
        solver: opts.with_labels.then_some(opts.solver),
        samples: entries,
        notes,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A dataset opened from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported version {}", manifest.format_version)));
        }
        manifest.validate()?;
        manifest.case.validate()?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn case(&self) -> &CaseConfig {
        &self.manifest.case
    }

    pub fn layout(&self, entry: &SampleEntry) -> Result<LayoutSpec> {
        let layout = LayoutSpec::load(&self.root.join(&entry.layout))?;
        layout.validate(&self.manifest.case.grid)?;
        Ok(layout)
    }

    pub fn layouts(&self, split: Split) -> Result<Vec<LayoutSpec>> {
        self.manifest.entries(split).map(|e| self.layout(e)).collect()
    }

    pub fn label(&self, entry: &SampleEntry) -> Result<ScalarField> {
        let rel = entry
            .temperature
            .as_ref()
            .ok_or_else(|| Error::MissingLabel(format!("{:05}", entry.id)))?;
        ScalarField::load(&self.root.join(rel), self.manifest.case.grid)
    }

    /// Layouts with their labels; `MissingLabel` if any entry lacks one.
    pub fn labelled(&self, split: Split) -> Result<Vec<(LayoutSpec, ScalarField)>> {
        self.manifest
            .entries(split)
            .map(|e| Ok((self.layout(e)?, self.label(e)?)))
            .collect()
    }
}

/// Rasterized intensity and its network input for one layout.
pub fn layout_fields(case: &CaseConfig, layout: &LayoutSpec) -> Result<(ScalarField, ScalarField)> {
    let phi = rasterize_layout(layout, &case.grid)?;
    let input = crate::grid::normalize_input(&phi, case.input_scale())?;
    Ok((phi, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdm::stencil_residual;

    #[test]
    fn case_presets_match_their_tables() {
        let c1 = CaseConfig::case1(200).unwrap();
        assert_eq!(c1.components.len(), 20);
        assert!(c1.components.iter().all(|c| *c == ComponentTemplate::square(0.01, 10000.0)));
        let c2 = CaseConfig::case2(200).unwrap();
        assert_eq!(c2.components.len(), 12);
        assert_eq!(c2.components[11], ComponentTemplate::square(0.024, 20000.0));
        assert_eq!(c2.components[8].width_m, 0.006);
        assert_eq!(c2.components[8].height_m, 0.024);
        assert_eq!(c2.input_scale(), 20000.0);
        assert_eq!(c1.input_scale(), 10000.0);
    }

    #[test]
    fn sampled_layouts_are_valid_and_deterministic() {
        for case in [CaseConfig::case1(200).unwrap(), CaseConfig::case2(200).unwrap(), CaseConfig::desk(64).unwrap()] {
            let a = sample_layout(&case, &mut sample_stream(5, 3)).unwrap();
            let b = sample_layout(&case, &mut sample_stream(5, 3)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.sources.len(), case.components.len());
            a.validate(&case.grid).unwrap();
            for (s, c) in a.sources.iter().zip(&case.components) {
                assert_eq!((s.width_m, s.height_m, s.intensity_w_m2), (c.width_m, c.height_m, c.intensity_w_m2));
                assert!(case.grid.node_index(s.x_m).is_some() && case.grid.node_index(s.y_m).is_some());
            }
        }
    }

    #[test]
    fn infeasible_case_is_a_placement_error() {
        let mut case = CaseConfig::desk(64).unwrap();
        case.components = vec![ComponentTemplate::square(0.06, 1.0); 2];
        assert!(matches!(
            sample_layout(&case, &mut sample_stream(0, 0)),
            Err(Error::Placement { restarts: MAX_RESTARTS, .. })
        ));
        case.components = vec![ComponentTemplate::square(0.2, 1.0)];
        assert!(matches!(sample_layout(&case, &mut sample_stream(0, 0)), Err(Error::Placement { .. })));
    }

    #[test]
    fn unlabelled_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseConfig::desk(32).unwrap();
        let opts = GenerateOptions {
            counts: SplitCounts::new(2, 1, 1),
            seed: 11,
            with_labels: false,
            solver: SolverConfig::default(),
        };
        let m = generate_dataset(&case, &opts, dir.path()).unwrap();
        assert_eq!(m.samples.len(), 4);
        assert!(m.samples.iter().all(|s| s.temperature.is_none()));
        assert_eq!(m.entries(Split::Train).count(), 2);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert!(matches!(ds.labelled(Split::Test), Err(Error::MissingLabel(_))));
    }

    #[test]
    fn labelled_fields_satisfy_the_stencil() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseConfig::desk(32).unwrap();
        let solver = SolverConfig::default();
        let opts = GenerateOptions {
            counts: SplitCounts::new(2, 1, 1),
            seed: 12,
            with_labels: true,
            solver,
        };
        generate_dataset(&case, &opts, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let mask = case.mask().unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            for (layout, t) in ds.labelled(split).unwrap() {
                let problem = case.problem(layout).unwrap();
                let phi = problem.intensity().unwrap();
                let r = stencil_residual(&t, &phi, &problem, &mask).unwrap();
                // Stored values are f32: each of the five stencil terms can
                // carry half an ulp of rounding.
                let quant = 8.0 * t.max() * f32::EPSILON as f64 / 2.0;
                let worst = r.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(worst <= solver.tol + quant, "{worst}");
            }
        }
    }
}
