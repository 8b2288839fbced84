//! Dataset directories: `meta.txt` (key=value lines), `images.tensor` and
//! `labels.tensor`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = format!(
        "format_version={DATASET_FORMAT_VERSION}\nkind={}\nimages_shape={}\nnum_samples={}\nclass_count={}\nmean={}\nstd={}\nseed={}\n",
        ds.kind.as_str(),
        join(ds.images.shape()),
        ds.len(),
        ds.class_count,
        join(&ds.mean),
        join(&ds.std),
        ds.seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
    );
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    ds.images.save(&dir.join("images.tensor"))?;
    let labels = Tensor::from_vec(ds.labels.iter().map(|&l| l as f64).collect());
    labels.save(&dir.join("labels.tensor"))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&meta_path, format!("line {}: expected key=value", n + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(&meta_path, format!("missing field {k}")))
    };
    let bad = |k: &str, v: &str| Error::format(&meta_path, format!("field {k}: cannot parse {v:?}"));
    let parse_list = |k: &str| -> Result<Vec<f64>> {
        let v = field(k)?;
        v.split(',').map(|s| s.parse::<f64>().map_err(|_| bad(k, v))).collect()
    };

    let version = field("format_version")?;
    if version.parse::<u32>().ok() != Some(DATASET_FORMAT_VERSION) {
        return Err(Error::format(
            &meta_path,
            format!("field format_version: unsupported version {version}"),
        ));
    }
    let kind = match field("kind")? {
        "static" => DataKind::Static,
        "event" => DataKind::Event,
        other => return Err(bad("kind", other)),
    };
    let shape_str = field("images_shape")?;
    let shape = shape_str
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| bad("images_shape", shape_str)))
        .collect::<Result<Vec<_>>>()?;
    let n_str = field("num_samples")?;
    let n: usize = n_str.parse().map_err(|_| bad("num_samples", n_str))?;
    let c_str = field("class_count")?;
    let class_count: usize = c_str.parse().map_err(|_| bad("class_count", c_str))?;
    let seed = match field("seed")? {
        "none" => None,
        s => Some(s.parse::<u64>().map_err(|_| bad("seed", s))?),
    };
    let mean = parse_list("mean")?;
    let std = parse_list("std")?;

    let images_path = dir.join("images.tensor");
    let images = Tensor::load(&images_path)?;
    if images.shape() != shape.as_slice() {
        return Err(Error::format(
            &images_path,
            format!(
                "field images_shape: meta says {shape:?}, file holds {:?}",
                images.shape()
            ),
        ));
    }
    let labels_path = dir.join("labels.tensor");
    let raw = Tensor::load(&labels_path)?;
    if raw.shape() != [n] || shape.first() != Some(&n) {
        return Err(Error::format(
            &labels_path,
            format!("field num_samples: expected {n} labels, file holds {:?}", raw.shape()),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for &l in raw.data() {
        if !(l >= 0.0 && l.fract() == 0.0 && l < u32::MAX as f64) {
            return Err(Error::format(&labels_path, format!("label {l} is not a class index")));
        }
        labels.push(l as usize);
    }
    let ds = Dataset {
        kind,
        images,
        labels,
        class_count,
        mean,
        std,
        seed,
    };
    ds.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(ds)
}
