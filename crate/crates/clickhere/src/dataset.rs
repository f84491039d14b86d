//! Dataset directories.
//!
//! ```text
//! <dir>/meta.json          format tag, generation config, class tables, counts
//! <dir>/index.jsonl        one instance record per line
//! <dir>/renders.jsonl      one render record per line
//! <dir>/renders/NNNNNN.bin s*s*3 f32 little-endian, row-major [y][x][rgb]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clickhere_core::geometry::Viewpoint;
use clickhere_core::render::{
    generate_dataset, CameraPose, Dataset, DatasetSummary, Domain, GenerationConfig, Image, Instance, ObjectSpec,
    RenderError, RenderRecord, Split,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATASET_FORMAT: &str = "clickhere-dataset/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub name: String,
    pub keypoints: Vec<String>,
    /// Left/right keypoint swap used by flips.
    pub mirror: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub image_size: usize,
    pub config: GenerationConfig,
    pub objects: Vec<ObjectMeta>,
    pub summary: DatasetSummary,
}

/// One line of `index.jsonl`. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: u64,
    pub render_id: u64,
    pub split: Split,
    pub object: usize,
    pub keypoint: usize,
    pub x: usize,
    pub y: usize,
    pub az: f64,
    pub el: f64,
    pub ti: f64,
    pub domain: Domain,
}

/// One line of `renders.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRow {
    pub id: u64,
    pub object: usize,
    pub split: Split,
    pub domain: Domain,
    pub az: f64,
    pub el: f64,
    pub ti: f64,
    /// Bounding radii.
    pub distance: f64,
    /// `[keypoint class, x, y]` of each visible keypoint.
    pub keypoints: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub meta: DatasetMeta,
    pub dataset: Dataset,
}

impl StoredDataset {
    pub fn instance(&self, id: u64) -> Option<&Instance> {
        // Ids are sequential on write; fall back to a scan for hand-edited files.
        match self.dataset.instances.get(id as usize) {
            Some(i) if i.id == id => Some(i),
            _ => self.dataset.instances.iter().find(|i| i.id == id),
        }
    }

    /// Instances of one split, cloned.
    pub fn split(&self, split: Split) -> Vec<Instance> {
        self.dataset.split(split).into_iter().cloned().collect()
    }
}

pub fn render_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("renders").join(format!("{id:06}.bin"))
}

pub fn image_to_bytes(img: &Image) -> Vec<u8> {
    img.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn image_from_bytes(size: usize, bytes: &[u8]) -> Option<Image> {
    if bytes.len() != size * size * 12 {
        return None;
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Image::from_data(size, data)
}

fn instance_record(i: &Instance) -> InstanceRecord {
    InstanceRecord {
        id: i.id,
        render_id: i.render_id,
        split: i.split,
        object: i.object,
        keypoint: i.keypoint,
        x: i.x,
        y: i.y,
        az: i.viewpoint.azimuth,
        el: i.viewpoint.elevation,
        ti: i.viewpoint.tilt,
        domain: i.domain,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), DatasetError> {
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, &r).expect("record serializes");
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let f = fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn meta_of(config: &GenerationConfig, objects: &[ObjectSpec], ds: &Dataset) -> DatasetMeta {
    DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        image_size: config.image_size,
        config: config.clone(),
        objects: objects
            .iter()
            .map(|o| ObjectMeta {
                name: o.name.clone(),
                keypoints: o.keypoint_names(),
                mirror: o.mirror.clone(),
            })
            .collect(),
        summary: ds.summary(),
    }
}

/// Writes `ds` to `dir`, creating it. Output depends only on the arguments.
pub fn write_dataset(dir: &Path, meta: &DatasetMeta, ds: &Dataset) -> Result<(), DatasetError> {
    let renders = dir.join("renders");
    fs::create_dir_all(&renders).map_err(io(&renders))?;
    let meta_path = dir.join("meta.json");
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(io(&meta_path))?;
    write_jsonl(&dir.join("index.jsonl"), ds.instances.iter().map(instance_record))?;
    write_jsonl(
        &dir.join("renders.jsonl"),
        ds.renders.iter().map(|r| RenderRow {
            id: r.id,
            object: r.object,
            split: r.split,
            domain: r.domain,
            az: r.pose.viewpoint.azimuth,
            el: r.pose.viewpoint.elevation,
            ti: r.pose.viewpoint.tilt,
            distance: r.pose.distance,
            keypoints: r.keypoints.iter().map(|&(c, x, y)| [c, x, y]).collect(),
        }),
    )?;
    for r in &ds.renders {
        let p = render_path(dir, r.id);
        fs::write(&p, image_to_bytes(&r.image)).map_err(io(&p))?;
    }
    Ok(())
}

/// Generates and writes one dataset.
pub fn generate_to_dir(
    dir: &Path,
    config: &GenerationConfig,
    objects: &[ObjectSpec],
) -> Result<StoredDataset, DatasetError> {
    let ds = generate_dataset(config, objects)?;
    let meta = meta_of(config, objects, &ds);
    write_dataset(dir, &meta, &ds)?;
    Ok(StoredDataset { meta, dataset: ds })
}

/// Reads a dataset and re-validates every record against the class tables
/// and its render.
pub fn read_dataset(dir: &Path) -> Result<StoredDataset, DatasetError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| format_err(&meta_path, e.line(), e.to_string()))?;
    if meta.format != DATASET_FORMAT {
        return Err(format_err(&meta_path, 1, format!("unsupported format `{}`", meta.format)));
    }
    for (o, m) in meta.objects.iter().enumerate() {
        let k = m.keypoints.len();
        if m.mirror.len() != k || m.mirror.iter().enumerate().any(|(i, &j)| j >= k || m.mirror[j] != i) {
            return Err(format_err(&meta_path, 1, format!("object {o}: mirror table is not an involution")));
        }
    }
    let counts: Vec<usize> = meta.objects.iter().map(|o| o.keypoints.len()).collect();
    let s = meta.image_size;

    let renders_path = dir.join("renders.jsonl");
    let rows: Vec<RenderRow> = read_jsonl(&renders_path)?;
    let mut renders = Vec::with_capacity(rows.len());
    let mut by_id = BTreeMap::new();
    for (n, row) in rows.into_iter().enumerate() {
        if row.object >= counts.len() {
            return Err(format_err(&renders_path, n + 1, format!("unknown object class {}", row.object)));
        }
        let p = render_path(dir, row.id);
        let bytes = fs::read(&p).map_err(io(&p))?;
        let image = image_from_bytes(s, &bytes)
            .ok_or_else(|| format_err(&p, 0, format!("expected {} bytes, found {}", s * s * 12, bytes.len())))?;
        if by_id.insert(row.id, renders.len()).is_some() {
            return Err(format_err(&renders_path, n + 1, format!("duplicate render id {}", row.id)));
        }
        renders.push(RenderRecord {
            id: row.id,
            object: row.object,
            split: row.split,
            domain: row.domain,
            pose: CameraPose {
                viewpoint: Viewpoint::new(row.az, row.el, row.ti),
                distance: row.distance,
            },
            image: Arc::new(image),
            keypoints: row.keypoints.iter().map(|k| (k[0], k[1], k[2])).collect(),
        });
    }

    let index_path = dir.join("index.jsonl");
    let records: Vec<InstanceRecord> = read_jsonl(&index_path)?;
    let mut per_render = vec![0usize; renders.len()];
    let mut instances = Vec::with_capacity(records.len());
    for (n, r) in records.into_iter().enumerate() {
        let line = n + 1;
        let &ri = by_id
            .get(&r.render_id)
            .ok_or_else(|| format_err(&index_path, line, format!("unknown render id {}", r.render_id)))?;
        let render = &renders[ri];
        let inst = Instance {
            id: r.id,
            render_id: r.render_id,
            split: r.split,
            object: r.object,
            keypoint: r.keypoint,
            x: r.x,
            y: r.y,
            viewpoint: Viewpoint::new(r.az, r.el, r.ti),
            domain: r.domain,
            image: render.image.clone(),
        };
        inst.validate(&counts).map_err(|m| format_err(&index_path, line, m))?;
        let consistent = render.object == inst.object
            && render.split == inst.split
            && render.domain == inst.domain
            && render.pose.viewpoint == inst.viewpoint
            && render.keypoints.contains(&(inst.keypoint, inst.x, inst.y));
        if !consistent {
            return Err(format_err(&index_path, line, format!("instance {} disagrees with its render", inst.id)));
        }
        per_render[ri] += 1;
        instances.push(inst);
    }
    if let Some(ri) = (0..renders.len()).find(|&i| per_render[i] != renders[i].keypoints.len()) {
        return Err(format_err(
            &index_path,
            0,
            format!(
                "render {} lists {} keypoints but has {} instances",
                renders[ri].id,
                renders[ri].keypoints.len(),
                per_render[ri]
            ),
        ));
    }
    let dataset = Dataset {
        object_names: meta.objects.iter().map(|o| o.name.clone()).collect(),
        keypoint_names: meta.objects.iter().map(|o| o.keypoints.clone()).collect(),
        mirror: meta.objects.iter().map(|o| o.mirror.clone()).collect(),
        renders,
        instances,
    };
    Ok(StoredDataset { meta, dataset })
}
