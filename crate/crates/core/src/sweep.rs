//! Hyperparameter sweeps over the benchmark scenes.
//!
//! Runs are recorded one JSON line each in `runs.jsonl`. A rerun with
//! `resume` skips every run already recorded as succeeded and retries the
//! rest; a recorded config hash that no longer matches aborts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dsynview::{scene_layout, scenes, Placements};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, layout_iou, AggregateTable, IouMode, MetricRow, ScorerRegistry};
use crate::geom::ErpGrid;
use crate::runner::{run_pipeline, write_run, Backend, BackendSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Bootstrap,
    Stride,
    MaskSize,
    MaskType,
    MaskIndices,
    Lora,
    BootstrapCoupling,
    NoiseCoupling,
    GlobalPrompt,
    FgEppa,
    MdMode,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 11] = [
        SweepAxis::Bootstrap,
        SweepAxis::Stride,
        SweepAxis::MaskSize,
        SweepAxis::MaskType,
        SweepAxis::MaskIndices,
        SweepAxis::Lora,
        SweepAxis::BootstrapCoupling,
        SweepAxis::NoiseCoupling,
        SweepAxis::GlobalPrompt,
        SweepAxis::FgEppa,
        SweepAxis::MdMode,
    ];

    /// Config key the axis writes to.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Bootstrap => "bootstrap",
            SweepAxis::Stride => "stride",
            SweepAxis::MaskSize => "mask_size",
            SweepAxis::MaskType => "mask_type",
            SweepAxis::MaskIndices => "mask_indices",
            SweepAxis::Lora => "lora",
            SweepAxis::BootstrapCoupling => "bootstrap_coupling",
            SweepAxis::NoiseCoupling => "noise_coupling",
            SweepAxis::GlobalPrompt => "global_prompt",
            SweepAxis::FgEppa => "fg_eppa",
            SweepAxis::MdMode => "md_mode",
        }
    }

    /// The benchmark's value range for this axis.
    pub fn default_values(self) -> Vec<Value> {
        use serde_json::json;
        match self {
            SweepAxis::Bootstrap => std::iter::once(1).chain((5..=50).step_by(5)).map(Value::from).collect(),
            SweepAxis::Stride => vec![json!(4), json!(8), json!(16), json!(32)],
            SweepAxis::MaskSize => vec![json!("S"), json!("M"), json!("L")],
            SweepAxis::MaskType => vec![json!("regular"), json!("erp_reproj")],
            SweepAxis::MaskIndices => (0u32..8)
                .map(|bits| json!((0..3).filter(|i| bits & (1 << i) != 0).collect::<Vec<_>>()))
                .collect(),
            SweepAxis::Lora => vec![json!("yes"), json!("bg-only"), json!("no")],
            SweepAxis::BootstrapCoupling => vec![json!("branches"), json!("objects"), json!("none")],
            SweepAxis::NoiseCoupling | SweepAxis::GlobalPrompt | SweepAxis::FgEppa => {
                vec![json!(true), json!(false)]
            }
            SweepAxis::MdMode => vec![json!("md_pano"), json!("md_pers"), json!("md_both")],
        }
    }

    /// Returns `base` with this axis set to `value`, validated.
    pub fn apply(self, base: &PipelineConfig, value: &Value) -> Result<PipelineConfig> {
        let mut obj = serde_json::to_value(base)?;
        obj[self.key()] = value.clone();
        let cfg: PipelineConfig = serde_json::from_value(obj)
            .map_err(|e| Error::Config(format!("{} = {}: {e}", self.key(), value)))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Table-friendly label of an axis value; never contains commas.
pub fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Bool(b) => if *b { "yes" } else { "no" }.to_string(),
        Value::Array(xs) if xs.is_empty() => "none".to_string(),
        Value::Array(xs) => xs.iter().map(value_label).collect::<Vec<_>>().join("+"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisValues {
    pub axis: SweepAxis,
    /// Defaults to the axis's benchmark range.
    #[serde(default)]
    pub values: Option<Vec<Value>>,
}

impl AxisValues {
    pub fn values(&self) -> Result<Vec<Value>> {
        match &self.values {
            None => Ok(self.axis.default_values()),
            Some(v) if v.is_empty() => Err(Error::Config(format!("axis {} has an empty value list", self.axis))),
            Some(v) => Ok(v.clone()),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_height() -> usize {
    512
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base_config: PipelineConfig,
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Option<Vec<Value>>,
    /// Further axes. Varied one at a time from the base config, or crossed
    /// with every other axis when `one_at_a_time` is false.
    #[serde(default)]
    pub extra_axes: Vec<AxisValues>,
    #[serde(default = "default_true")]
    pub one_at_a_time: bool,
    /// Benchmark scene indices; all six when absent.
    #[serde(default)]
    pub scenes: Option<Vec<usize>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Panorama height in pixels; the width is twice that.
    #[serde(default = "default_height")]
    pub height: usize,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub config_id: String,
    pub params: BTreeMap<String, String>,
    pub config: PipelineConfig,
}

/// One (config, scene, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub run_id: String,
    pub config_id: String,
    pub scene: usize,
    pub scene_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

/// A line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_id: String,
    pub config_hash: String,
    pub scene_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub metrics: MetricRow,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn axes(&self) -> Vec<AxisValues> {
        let mut v = vec![AxisValues {
            axis: self.axis,
            values: self.values.clone(),
        }];
        v.extend(self.extra_axes.iter().cloned());
        v
    }

    pub fn grid(&self) -> Result<ErpGrid> {
        ErpGrid::with_height(self.height)
    }

    pub fn scene_indices(&self) -> Result<Vec<usize>> {
        let n = scenes(Default::default(), Default::default()).len();
        let idx = self.scenes.clone().unwrap_or_else(|| (0..n).collect());
        if idx.is_empty() {
            return Err(Error::Config("sweep has no scenes".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Config(format!("scene index {bad} out of range for {n} scenes")));
        }
        Ok(idx)
    }

    /// SHA-256 of the spec's JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("spec serializes")))
    }

    /// Every config of the sweep, in a fixed order.
    pub fn configs(&self) -> Result<Vec<SweepConfig>> {
        self.base_config.validate()?;
        let axes = self.axes();
        let mut seen = BTreeSet::new();
        for a in &axes {
            if !seen.insert(a.axis) {
                return Err(Error::Config(format!("axis {} listed twice", a.axis)));
            }
        }
        let mut out = Vec::new();
        if self.one_at_a_time {
            for a in &axes {
                for v in a.values()? {
                    let config = a.axis.apply(&self.base_config, &v)?;
                    let label = value_label(&v);
                    out.push(SweepConfig {
                        config_id: format!("{}={label}", a.axis),
                        params: BTreeMap::from([(a.axis.key().to_string(), label)]),
                        config,
                    });
                }
            }
        } else {
            let mut partial = vec![(Vec::<(SweepAxis, Value)>::new(), self.base_config.clone())];
            for a in &axes {
                let values = a.values()?;
                let mut next = Vec::with_capacity(partial.len() * values.len());
                for (assigned, cfg) in &partial {
                    for v in &values {
                        let mut assigned = assigned.clone();
                        assigned.push((a.axis, v.clone()));
                        next.push((assigned, a.axis.apply(cfg, v)?));
                    }
                }
                partial = next;
            }
            for (assigned, config) in partial {
                let params: BTreeMap<String, String> = assigned
                    .iter()
                    .map(|(a, v)| (a.key().to_string(), value_label(v)))
                    .collect();
                let config_id = assigned
                    .iter()
                    .map(|(a, v)| format!("{a}={}", value_label(v)))
                    .collect::<Vec<_>>()
                    .join(";");
                out.push(SweepConfig {
                    config_id,
                    params,
                    config,
                });
            }
        }
        Ok(out)
    }

    /// Configs crossed with scenes and seeds.
    pub fn runs(&self, configs: &[SweepConfig]) -> Result<Vec<SweepRun>> {
        let scene_specs = scenes(Default::default(), Default::default());
        let idx = self.scene_indices()?;
        let mut out = Vec::new();
        for (ci, c) in configs.iter().enumerate() {
            for &s in &idx {
                for &seed in &self.seeds {
                    out.push(SweepRun {
                        run_id: format!("c{ci:03}-{}-s{seed}", scene_specs[s].scene_id()),
                        config_id: c.config_id.clone(),
                        scene: s,
                        scene_id: scene_specs[s].scene_id(),
                        seed,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Everything a sweep needs besides the spec.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub backend: BackendSpec,
    pub workers: usize,
    pub resume: bool,
    pub scorers: ScorerRegistry,
    pub iou_mode: IouMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub tables: Vec<AggregateTable>,
}

pub const RUNS_FILE: &str = "runs.jsonl";
pub const SWEEP_FILE: &str = "sweep.json";

#[derive(Debug, Serialize, Deserialize)]
struct SweepManifest {
    spec_hash: String,
    spec: SweepSpec,
    configs: Vec<SweepConfig>,
}

fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    // a torn final line from a killed run is dropped
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        match serde_json::from_str(l) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn execute_run(
    spec: &SweepSpec,
    cfg: &SweepConfig,
    run: &SweepRun,
    opts: &SweepOptions,
    out_dir: &Path,
) -> Result<MetricRow> {
    let c = &cfg.config;
    let scene = &scenes(c.mask_size, c.mask_type)[run.scene];
    let layout = scene_layout(scene, spec.grid()?, &Placements::default())?;
    let backend = Backend::new(&opts.backend, c.steps)?;
    let out = run_pipeline(&layout, c, backend.engine(), run.seed)?;
    let dir = out_dir.join("runs").join(&run.run_id);
    let manifest = write_run(&out, c, &opts.backend, run.seed, &dir)?;
    let images: Vec<PathBuf> = manifest.images.iter().map(|p| dir.join(p)).collect();
    let mut row = MetricRow {
        config_id: cfg.config_id.clone(),
        params: cfg.params.clone(),
        ..Default::default()
    };
    let layout = c.apply_to_layout(&layout)?;
    if !layout.regions.is_empty() {
        let objects: Vec<(u32, String)> = layout.regions.iter().map(|r| (r.object_id, r.prompt.clone())).collect();
        match opts.scorers.detect(&images[..1], &objects) {
            Ok(Some(dets)) => row.iou = Some(layout_iou(&layout, &dets[0], opts.iou_mode, 512)?),
            Ok(None) => {}
            Err(_) => row.failed.push(crate::evalkit::DETECTOR_ID.to_string()),
        }
    }
    opts.scorers.score_row(&mut row, &images[..1], &[]);
    Ok(row)
}

/// Runs (or resumes) a sweep in `out_dir` and writes the aggregate tables.
pub fn run_sweep(spec: &SweepSpec, opts: &SweepOptions, out_dir: &Path) -> Result<SweepReport> {
    let configs = spec.configs()?;
    let runs = spec.runs(&configs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join(SWEEP_FILE);
    let runs_path = out_dir.join(RUNS_FILE);
    let spec_hash = spec.hash();
    if manifest_path.exists() {
        if !opts.resume {
            return Err(Error::Config(format!(
                "{} already holds a sweep; resume it or choose another directory",
                out_dir.display()
            )));
        }
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let old: SweepManifest = serde_json::from_str(&text)?;
        if old.spec_hash != spec_hash {
            return Err(Error::Config(format!(
                "sweep spec hash {} does not match the recorded {}",
                spec_hash, old.spec_hash
            )));
        }
    } else {
        let m = SweepManifest {
            spec_hash: spec_hash.clone(),
            spec: spec.clone(),
            configs: configs.clone(),
        };
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&manifest_path, e))?;
    }

    let by_id: BTreeMap<&str, &SweepConfig> = configs.iter().map(|c| (c.config_id.as_str(), c)).collect();
    let mut records = read_records(&runs_path)?;
    let mut done = BTreeSet::new();
    for r in &records {
        let cfg = by_id
            .get(r.config_id.as_str())
            .ok_or_else(|| Error::Config(format!("recorded run {} has unknown config {}", r.run_id, r.config_id)))?;
        if cfg.config.hash() != r.config_hash {
            return Err(Error::Config(format!(
                "config hash of {} changed since run {} was recorded",
                r.config_id, r.run_id
            )));
        }
        if r.status == RunStatus::Ok {
            done.insert(r.run_id.clone());
        }
    }
    // retried runs replace their failed records
    records.retain(|r| r.status == RunStatus::Ok);
    let mut file_text = String::new();
    for r in &records {
        file_text.push_str(&serde_json::to_string(r)?);
        file_text.push('\n');
    }
    std::fs::write(&runs_path, file_text).map_err(|e| Error::io(&runs_path, e))?;

    let todo: Vec<&SweepRun> = runs.iter().filter(|r| !done.contains(&r.run_id)).collect();
    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .open(&runs_path)
        .map_err(|e| Error::io(&runs_path, e))?;
    let mut failed = 0;
    for chunk in todo.chunks(workers) {
        let results: Vec<RunRecord> = pool.install(|| {
            chunk
                .par_iter()
                .map(|run| {
                    let cfg = by_id[run.config_id.as_str()];
                    let (status, metrics) = match execute_run(spec, cfg, run, opts, out_dir) {
                        Ok(m) => (RunStatus::Ok, m),
                        Err(e) => (
                            RunStatus::Failed(e.to_string()),
                            MetricRow {
                                config_id: cfg.config_id.clone(),
                                params: cfg.params.clone(),
                                ..Default::default()
                            },
                        ),
                    };
                    RunRecord {
                        run_id: run.run_id.clone(),
                        config_id: cfg.config_id.clone(),
                        config_hash: cfg.config.hash(),
                        scene_id: run.scene_id.clone(),
                        seed: run.seed,
                        status,
                        metrics,
                    }
                })
                .collect()
        });
        for r in results {
            failed += usize::from(r.status != RunStatus::Ok);
            writeln!(file, "{}", serde_json::to_string(&r)?).map_err(|e| Error::io(&runs_path, e))?;
            records.push(r);
        }
        file.flush().map_err(|e| Error::io(&runs_path, e))?;
    }

    let order: BTreeMap<&str, usize> = runs.iter().enumerate().map(|(i, r)| (r.run_id.as_str(), i)).collect();
    records.sort_by_key(|r| order.get(r.run_id.as_str()).copied().unwrap_or(usize::MAX));
    let rows: Vec<MetricRow> = records
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .map(|r| r.metrics.clone())
        .collect();
    let tables = write_tables(&rows, &spec.axes(), out_dir)?;
    Ok(SweepReport {
        executed: todo.len(),
        skipped: done.len(),
        failed,
        tables,
    })
}

/// Writes `<axis>.csv`, `<axis>.txt` and `<axis>.plot.json` under `tables/`.
pub fn write_tables(rows: &[MetricRow], axes: &[AxisValues], out_dir: &Path) -> Result<Vec<AggregateTable>> {
    let dir = out_dir.join("tables");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tables = Vec::new();
    for a in axes {
        let key = a.axis.key();
        let relevant: Vec<MetricRow> = rows.iter().filter(|r| r.params.contains_key(key)).cloned().collect();
        let t = aggregate(&relevant, key);
        for (ext, body) in [
            ("csv", t.to_csv()),
            ("txt", t.to_text()),
            ("plot.json", serde_json::to_string_pretty(&t.plot_data())?),
        ] {
            let p = dir.join(format!("{key}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        tables.push(t);
    }
    Ok(tables)
}
