#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clickhere::config::ProjectConfig;
use clickhere::pipeline::{gen_data, train_from_dir};
use clickhere::{checkpoint, dataset};

/// A config small enough to generate, train and evaluate in a few seconds.
pub const SMALL: &str = r#"
seed = 7

[model]
image_size = 16
convs = [
  { channels = 4, kernel = 3, stride = 2, pad = 1, pool = 1 },
  { channels = 6, kernel = 3, stride = 1, pad = 1, pool = 2 },
]
image_feature_dim = 12
map_pool = 4
map_feature_dim = 6
class_feature_dim = 4
fused_dim = 12
n_bins = 12

[data.synthetic]
renders_per_class = 10
image_size = 16
render_size = 48

[data.realish]
renders_per_class = 10
image_size = 16
render_size = 48

[data.test]
renders_per_class = 8
image_size = 16
render_size = 48
max_instances = 40

[train]
batch_size = 4
eval_every = 5
max_steps = [10, 5]
"#;

pub fn small_config() -> ProjectConfig {
    ProjectConfig::from_toml_str(SMALL, &[]).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ProjectConfig,
}

impl Fixture {
    /// Writes `config.toml`, the three datasets and a trained checkpoint.
    pub fn build() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        std::fs::write(dir.path().join("config.toml"), SMALL).unwrap();
        gen_data(&config, &dir.path().join("data"), &[]).unwrap();
        let trained = train_from_dir(&config, &dir.path().join("data"), &mut |_| {}).unwrap();
        checkpoint::save(&trained.model, &dir.path().join("model.ckpt")).unwrap();
        Self { dir, config }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn test_data(&self) -> dataset::StoredDataset {
        dataset::read_dataset(&self.path("data/test")).unwrap()
    }
}

pub fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Every file under `dir`, by relative path, with its bytes.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), read(&p)));
            }
        }
    }
    out.sort();
    out
}
