//! Shared dataset file plumbing for the subcommands.

use std::path::Path;

use anyhow::{bail, Context, Result};

use rfeat::data::{dataset_from_idx, save_idx, IdxData, IdxTensor, LabeledDataset};

/// Writes a dataset as an IDX image/label tensor pair, quantizing inputs to
/// bytes (`round(v·255)`).
///
/// Requires image-like data (all values in `[0, 1]`) and at most 256
/// classes. `side` selects a `[n, side, side]` image tensor; otherwise the
/// tensor is `[n, dim]`.
pub fn write_idx_pair(
    ds: &LabeledDataset,
    side: Option<usize>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    if !ds.image_like() {
        bail!("IDX export requires image-like data (values in [0, 1])");
    }
    if ds.class_count() > 256 {
        bail!("IDX labels are bytes; got {} classes", ds.class_count());
    }
    let shape = match side {
        Some(side) => {
            if side * side != ds.dim() {
                bail!("side {side} does not square to dimension {}", ds.dim());
            }
            vec![ds.n(), side, side]
        }
        None => vec![ds.n(), ds.dim()],
    };
    let pixels: Vec<u8> = ds
        .inputs()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let images = IdxTensor::new(shape, IdxData::U8(pixels)).context("building IDX images")?;
    let labels = IdxTensor::new(
        vec![ds.n()],
        IdxData::U8(ds.labels().iter().map(|&l| l as u8).collect()),
    )
    .context("building IDX labels")?;
    save_idx(images_path, &images)
        .with_context(|| format!("writing {}", images_path.display()))?;
    save_idx(labels_path, &labels)
        .with_context(|| format!("writing {}", labels_path.display()))?;
    Ok(())
}

/// Routes a dataset through an IDX write → read round trip (quantizing
/// pixels to bytes), preserving the original class count even when the top
/// classes happen to be absent (IDX files carry no class metadata).
pub fn idx_roundtrip(
    ds: &LabeledDataset,
    side: Option<usize>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<LabeledDataset> {
    write_idx_pair(ds, side, images_path, labels_path)?;
    let images = rfeat::data::load_idx(images_path)
        .with_context(|| format!("reloading {}", images_path.display()))?;
    let labels = rfeat::data::load_idx(labels_path)
        .with_context(|| format!("reloading {}", labels_path.display()))?;
    let loaded = dataset_from_idx(&images, &labels).context("assembling IDX dataset")?;
    if loaded.class_count() == ds.class_count() {
        return Ok(loaded);
    }
    let mut rebuilt = LabeledDataset::new(
        loaded.inputs().to_vec(),
        loaded.dim(),
        loaded.labels().to_vec(),
        ds.class_count(),
    )?;
    rebuilt.set_image_like(loaded.image_like())?;
    Ok(rebuilt)
}

/// The `side` hint for 3-D IDX export when the dataset came from the
/// synthetic image task.
pub fn image_side(ds: &LabeledDataset) -> Option<usize> {
    let side = (ds.dim() as f64).sqrt().round() as usize;
    (ds.image_like() && side * side == ds.dim()).then_some(side)
}
