//! Metrics: seam-aware IoU against layout masks, out-of-process scorer
//! plugins and aggregation into appendix-style tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsynview::{mask_camera, REPROJECT_FOV_DEG};
use crate::error::{Error, Result};
use crate::geom::{project_mask_erp_to_persp, BinaryMask};
use crate::layout::Layout;
use crate::seed::rng;

/// Environment variable naming the scorer plugin directory.
pub const PLUGIN_DIR_ENV: &str = "PANODENSE_PLUGIN_DIR";

/// Plugin id of the object detector.
pub const DETECTOR_ID: &str = "detector";

/// Axis-aligned box in ERP pixels. `x1` may exceed the image width, in which
/// case the box continues across the seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoxF {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("invalid box ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub object_id: u32,
    pub predicted_box: BoxF,
    pub score: f64,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Overlap of two intervals on a circle of circumference `period`.
fn circular_overlap(a0: f64, a1: f64, b0: f64, b1: f64, period: f64) -> f64 {
    let a0n = a0.rem_euclid(period);
    let a1n = a0n + (a1 - a0);
    let b0n = b0.rem_euclid(period);
    let b1n = b0n + (b1 - b0);
    [-period, 0.0, period]
        .iter()
        .map(|k| overlap(a0n, a1n, b0n + k, b1n + k))
        .sum()
}

/// IoU of two boxes whose x-extent wraps with period `width`.
pub fn box_iou(a: &BoxF, b: &BoxF, width: f64) -> f64 {
    let ix = circular_overlap(a.x0, a.x1, b.x0, b.x1, width);
    let iy = overlap(a.y0, a.y1, b.y0, b.y1);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Tightest box around a mask's pixels, allowing it to cross the seam.
pub fn circular_bbox(mask: &BinaryMask) -> Option<BoxF> {
    let cols = mask.column_profile();
    let w = cols.len();
    let rows: Vec<usize> = mask.occupied_rows().collect();
    let (&r0, &r1) = (rows.first()?, rows.last()?);
    // the widest empty circular run marks where the box does not go
    let mut best = (0usize, 0usize);
    for start in 0..w {
        // runs begin right after an occupied column
        if cols[start] || !cols[(start + w - 1) % w] {
            continue;
        }
        let len = (0..w).take_while(|k| !cols[(start + k) % w]).count();
        if len > best.1 {
            best = (start, len);
        }
    }
    let (x0, x1) = if best.1 == 0 {
        (0.0, w as f64)
    } else {
        let x0 = (best.0 + best.1) % w;
        (x0 as f64, (x0 + w - best.1) as f64)
    };
    Some(BoxF {
        x0,
        y0: r0 as f64,
        x1,
        y1: (r1 + 1) as f64,
    })
}

/// IoU of a predicted box with the tight (seam-aware) box of a ground-truth mask.
pub fn iou(pred: &BoxF, gt_mask: &BinaryMask) -> Result<f64> {
    let gt = circular_bbox(gt_mask).ok_or_else(|| Error::Domain("ground-truth mask is empty".into()))?;
    Ok(box_iou(pred, &gt, gt_mask.width() as f64))
}

/// Where detections are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    /// Boxes in ERP pixels against the ERP mask.
    #[default]
    Panorama,
    /// Boxes in the 120° view centered on each object, against the projected mask.
    View,
}

/// Mean IoU over a layout's objects; objects without a detection score 0.
pub fn layout_iou(layout: &Layout, detections: &[DetectionRecord], mode: IouMode, view_size: usize) -> Result<f64> {
    if layout.regions.is_empty() {
        return Err(Error::Domain("layout has no objects to score".into()));
    }
    let mut total = 0.0;
    for r in &layout.regions {
        let best = detections
            .iter()
            .filter(|d| d.object_id == r.object_id)
            .max_by(|a, b| a.score.total_cmp(&b.score));
        let Some(d) = best else { continue };
        total += match mode {
            IouMode::Panorama => iou(&d.predicted_box, &r.mask)?,
            IouMode::View => {
                let cam = mask_camera(&r.mask, layout.grid, REPROJECT_FOV_DEG, view_size)?;
                let view = project_mask_erp_to_persp(&r.mask, &cam)?;
                let b = view.bbox().ok_or_else(|| Error::Domain("object not visible in its view".into()))?;
                let gt = BoxF::new(b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64)?;
                // no wrap inside a view
                box_iou(&d.predicted_box, &gt, f64::INFINITY)
            }
        };
    }
    Ok(total / layout.regions.len() as f64)
}

/// Stand-in detector: the mask box of every object, jittered by up to
/// `jitter` of its size, with a small chance of a miss.
pub fn synthetic_detections(layout: &Layout, jitter: f64, miss_rate: f64, seed: u64) -> Vec<DetectionRecord> {
    let mut r = rng(seed, &[0xde7]);
    layout
        .regions
        .iter()
        .filter_map(|reg| {
            let b = circular_bbox(&reg.mask)?;
            let miss = r.random::<f64>() < miss_rate;
            let mut j = |s: f64| (r.random::<f64>() * 2.0 - 1.0) * jitter * s;
            let (w, h) = (b.width(), b.height());
            let (dx0, dx1, dy0, dy1) = (j(w), j(w), j(h), j(h));
            if miss {
                return None;
            }
            Some(DetectionRecord {
                object_id: reg.object_id,
                predicted_box: BoxF {
                    x0: b.x0 + dx0,
                    y0: b.y0 + dy0,
                    x1: (b.x1 + dx1).max(b.x0 + dx0 + 1.0),
                    y1: (b.y1 + dy1).max(b.y0 + dy0 + 1.0),
                },
                score: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Iou,
    ClipScore,
    ImageReward,
    Fid,
    Cmmd,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Iou, Metric::ClipScore, Metric::ImageReward, Metric::Fid, Metric::Cmmd];

    /// Column header used in the text tables.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Iou => "IoU",
            Metric::ClipScore => "CS",
            Metric::ImageReward => "IR",
            Metric::Fid => "FID",
            Metric::Cmmd => "CMMD",
        }
    }

    /// Plugin id and CSV column name.
    pub fn id(self) -> &'static str {
        match self {
            Metric::Iou => "iou",
            Metric::ClipScore => "clip_score",
            Metric::ImageReward => "image_reward",
            Metric::Fid => "fid",
            Metric::Cmmd => "cmmd",
        }
    }
}

/// Scores of one run. Missing metrics stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub iou: Option<f64>,
    pub clip_score: Option<f64>,
    pub image_reward: Option<f64>,
    pub fid: Option<f64>,
    pub cmmd: Option<f64>,
    /// Plugins that failed while scoring this row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<String>,
}

impl MetricRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Iou => self.iou,
            Metric::ClipScore => self.clip_score,
            Metric::ImageReward => self.image_reward,
            Metric::Fid => self.fid,
            Metric::Cmmd => self.cmmd,
        }
    }

    pub fn set(&mut self, m: Metric, v: Option<f64>) {
        let slot = match m {
            Metric::Iou => &mut self.iou,
            Metric::ClipScore => &mut self.clip_score,
            Metric::ImageReward => &mut self.image_reward,
            Metric::Fid => &mut self.fid,
            Metric::Cmmd => &mut self.cmmd,
        };
        *slot = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub value: String,
    pub n: usize,
    /// Means in [`Metric::ALL`] order.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub group_by: String,
    pub rows: Vec<GroupRow>,
}

fn group_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Mean of each metric per value of `group_by`. Rows missing the parameter
/// are grouped under `-`. Values are summed in sorted order so the result
/// does not depend on row order.
pub fn aggregate(rows: &[MetricRow], group_by: &str) -> AggregateTable {
    let mut groups: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let key = r.params.get(group_by).cloned().unwrap_or_else(|| "-".into());
        groups.entry(key).or_default().push(r);
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| group_order(a, b));
    let out = keys
        .into_iter()
        .map(|k| {
            let members = &groups[&k];
            let means = Metric::ALL
                .iter()
                .map(|&m| {
                    let mut vals: Vec<f64> = members.iter().filter_map(|r| r.get(m)).collect();
                    if vals.is_empty() {
                        return None;
                    }
                    vals.sort_by(f64::total_cmp);
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            GroupRow {
                value: k,
                n: members.len(),
                means,
            }
        })
        .collect();
    AggregateTable {
        group_by: group_by.to_string(),
        rows: out,
    }
}

impl AggregateTable {
    /// Columns: `parameter,value,n,iou,clip_score,image_reward,fid,cmmd`; empty cells for missing metrics.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,value,n");
        for m in Metric::ALL {
            s.push(',');
            s.push_str(m.id());
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", self.group_by, r.value, r.n);
            for v in &r.means {
                s.push(',');
                if let Some(v) = v {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// `parameter & value & IoU & CS & IR & FID & CMMD \\` rows, two decimals, `--` for missing.
    pub fn to_text(&self) -> String {
        let mut s = String::from(" & ");
        for m in Metric::ALL {
            let _ = write!(s, " & {}", m.label());
        }
        s.push_str(" \\\\\n");
        for (i, r) in self.rows.iter().enumerate() {
            let name = if i == 0 { self.group_by.as_str() } else { "" };
            let _ = write!(s, "{name} & {}", r.value);
            for v in &r.means {
                match v {
                    Some(v) => {
                        let _ = write!(s, " & {v:.2}");
                    }
                    None => s.push_str(" & --"),
                }
            }
            s.push_str(" \\\\\n");
        }
        s
    }

    /// Metric-vs-parameter series for plotting.
    pub fn plot_data(&self) -> serde_json::Value {
        let mut series = serde_json::Map::new();
        series.insert(
            "x".into(),
            self.rows.iter().map(|r| r.value.clone()).collect::<Vec<_>>().into(),
        );
        for (k, m) in Metric::ALL.iter().enumerate() {
            series.insert(
                m.label().into(),
                self.rows.iter().map(|r| r.means[k]).collect::<Vec<_>>().into(),
            );
        }
        serde_json::json!({ "parameter": self.group_by, "series": series })
    }
}

/// Result of asking a plugin for a score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutcome {
    Value { value: f64, cached: bool },
    /// No plugin with that id is installed.
    Absent,
    Failed(String),
}

impl ScoreOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            ScoreOutcome::Value { value, .. } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PluginResult {
    metric: String,
    value: f64,
}

/// Out-of-process scorers. A plugin is an executable `<dir>/<id>` invoked as
/// `<id> images.txt refs.txt out.json`; the list files hold one absolute path
/// per line and the plugin writes `{"metric": <id>, "value": <number>}`.
#[derive(Debug, Clone)]
pub struct ScorerRegistry {
    pub plugin_dir: Option<PathBuf>,
    pub cache_dir: PathBuf,
}

impl ScorerRegistry {
    pub fn new(plugin_dir: Option<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            plugin_dir,
            cache_dir: cache_dir.into(),
        }
    }

    /// Plugin directory from [`PLUGIN_DIR_ENV`].
    pub fn from_env(cache_dir: impl Into<PathBuf>) -> Self {
        Self::new(std::env::var_os(PLUGIN_DIR_ENV).map(PathBuf::from), cache_dir)
    }

    pub fn plugin_path(&self, id: &str) -> Option<PathBuf> {
        let p = self.plugin_dir.as_ref()?.join(id);
        p.is_file().then_some(p)
    }

    fn cache_key(&self, id: &str, images: &[PathBuf], references: &[PathBuf]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(id.as_bytes());
        for (tag, list) in [(b'i', images), (b'r', references)] {
            for p in list {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                h.update([tag]);
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn run(&self, id: &str, images: &[PathBuf], references: &[PathBuf]) -> ScoreOutcome {
        let Some(exe) = self.plugin_path(id) else {
            return ScoreOutcome::Absent;
        };
        match self.run_inner(id, &exe, images, references) {
            Ok(o) => o,
            Err(e) => ScoreOutcome::Failed(e.to_string()),
        }
    }

    fn run_inner(&self, id: &str, exe: &Path, images: &[PathBuf], references: &[PathBuf]) -> Result<ScoreOutcome> {
        let key = self.cache_key(id, images, references)?;
        let cached = self.cache_dir.join(format!("{id}-{key}.json"));
        if let Ok(text) = std::fs::read_to_string(&cached) {
            if let Ok(r) = serde_json::from_str::<PluginResult>(&text) {
                return Ok(ScoreOutcome::Value {
                    value: r.value,
                    cached: true,
                });
            }
        }
        std::fs::create_dir_all(&self.cache_dir).map_err(|e| Error::io(&self.cache_dir, e))?;
        let work = self.cache_dir.join(format!("work-{id}-{key}"));
        std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        let list = |name: &str, paths: &[PathBuf]| -> Result<PathBuf> {
            let p = work.join(name);
            let mut s = String::new();
            for x in paths {
                let abs = std::fs::canonicalize(x).map_err(|e| Error::io(x, e))?;
                s.push_str(&abs.to_string_lossy());
                s.push('\n');
            }
            std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        };
        let imgs = list("images.txt", images)?;
        let refs = list("refs.txt", references)?;
        let out = work.join("out.json");
        let status = Command::new(exe)
            .arg(&imgs)
            .arg(&refs)
            .arg(&out)
            .status()
            .map_err(|e| Error::io(exe, e))?;
        if !status.success() {
            return Ok(ScoreOutcome::Failed(format!("plugin {id} exited with {status}")));
        }
        let text = std::fs::read_to_string(&out).map_err(|e| Error::io(&out, e))?;
        let r: PluginResult = serde_json::from_str(&text)?;
        if r.metric != id {
            return Ok(ScoreOutcome::Failed(format!("plugin {id} reported metric {}", r.metric)));
        }
        if !r.value.is_finite() {
            return Ok(ScoreOutcome::Failed(format!("plugin {id} returned a non-finite value")));
        }
        std::fs::rename(&out, &cached).map_err(|e| Error::io(&cached, e))?;
        let _ = std::fs::remove_dir_all(&work);
        Ok(ScoreOutcome::Value {
            value: r.value,
            cached: false,
        })
    }

    /// Runs the `detector` plugin, invoked as `detector images.txt prompts.json out.json`
    /// where `prompts.json` lists `{"object_id", "prompt"}` and the plugin writes
    /// `{"detections": [[DetectionRecord, ...] per image]}`. `None` when no detector is installed.
    pub fn detect(&self, images: &[PathBuf], objects: &[(u32, String)]) -> Result<Option<Vec<Vec<DetectionRecord>>>> {
        let Some(exe) = self.plugin_path(DETECTOR_ID) else {
            return Ok(None);
        };
        let plugin_err = |reason: String| Error::Plugin {
            plugin: DETECTOR_ID.into(),
            reason,
        };
        let work = tempfile::Builder::new()
            .prefix("detect-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let imgs = work.path().join("images.txt");
        let mut s = String::new();
        for x in images {
            let abs = std::fs::canonicalize(x).map_err(|e| Error::io(x, e))?;
            s.push_str(&abs.to_string_lossy());
            s.push('\n');
        }
        std::fs::write(&imgs, s).map_err(|e| Error::io(&imgs, e))?;
        let prompts = work.path().join("prompts.json");
        let list: Vec<serde_json::Value> = objects
            .iter()
            .map(|(id, p)| serde_json::json!({ "object_id": id, "prompt": p }))
            .collect();
        std::fs::write(&prompts, serde_json::to_vec(&list)?).map_err(|e| Error::io(&prompts, e))?;
        let out = work.path().join("out.json");
        let status = Command::new(&exe)
            .arg(&imgs)
            .arg(&prompts)
            .arg(&out)
            .status()
            .map_err(|e| Error::io(&exe, e))?;
        if !status.success() {
            return Err(plugin_err(format!("exited with {status}")));
        }
        #[derive(Deserialize)]
        struct Out {
            detections: Vec<Vec<DetectionRecord>>,
        }
        let text = std::fs::read_to_string(&out).map_err(|e| Error::io(&out, e))?;
        let parsed: Out = serde_json::from_str(&text)?;
        if parsed.detections.len() != images.len() {
            return Err(plugin_err(format!(
                "{} detection lists for {} images",
                parsed.detections.len(),
                images.len()
            )));
        }
        Ok(Some(parsed.detections))
    }

    /// Fills the neural metrics of `row`; absent plugins leave fields empty,
    /// failures are recorded in `row.failed`.
    pub fn score_row(&self, row: &mut MetricRow, images: &[PathBuf], references: &[PathBuf]) {
        for m in [Metric::ClipScore, Metric::ImageReward, Metric::Fid, Metric::Cmmd] {
            match self.run(m.id(), images, references) {
                ScoreOutcome::Value { value, .. } => row.set(m, Some(value)),
                ScoreOutcome::Absent => row.set(m, None),
                ScoreOutcome::Failed(_) => {
                    row.set(m, None);
                    row.failed.push(m.id().to_string());
                }
            }
        }
    }
}
