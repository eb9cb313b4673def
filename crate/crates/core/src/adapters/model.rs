use std::collections::BTreeMap;

use super::{AdapterError, AssetLibrary};
use crate::data::canonical_episodes;
use crate::state::{hash_bytes, Checkpoint, EvalReport, OperationalContext};

/// Resource units charged per training epoch.
pub const TRAIN_UNIT_COST: f64 = 1.0;
/// Resource units charged per evaluation episode.
pub const EVAL_UNIT_COST: f64 = 1.0;

const DECAY: f64 = 0.8;
const NOISE: f64 = 0.01;

/// Uniform value in `[0, 1)` derived from the SHA-256 of the parts.
pub(crate) fn unit_hash(parts: &[&str]) -> f64 {
    let h = hash_bytes(parts.join("\u{1f}").as_bytes());
    let v = u64::from_str_radix(&h[..16], 16).expect("hex digest");
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Training loss: `0.8^epochs + 0.01 * u`, with `u` in `[0, 1)` derived from
/// the dataset content hash, the epoch count and the seed.
pub fn train_metric(dataset_hash: &str, epochs: u32, seed: u64) -> f64 {
    DECAY.powi(epochs as i32) + NOISE * unit_hash(&[dataset_hash, &epochs.to_string(), &seed.to_string()])
}

/// Upper bound of [`train_metric`] for a given epoch count.
pub fn train_metric_bound(epochs: u32) -> f64 {
    DECAY.powi(epochs as i32) + NOISE
}

fn dataset_hash(ctx: &OperationalContext, dataset: &str) -> Result<String, AdapterError> {
    let eps: Vec<_> = ctx.data.episodes_of(dataset).filter(|e| e.success).cloned().collect();
    if eps.is_empty() {
        return Err(AdapterError::MissingDataset(dataset.to_string()));
    }
    Ok(hash_bytes(canonical_episodes(&eps).to_string().as_bytes()))
}

/// Trains `model` on the successful episodes of `dataset` and returns the
/// new checkpoint `<model>-ckpt-<n>`.
pub fn mock_train(
    ctx: &OperationalContext,
    assets: &AssetLibrary,
    model: &str,
    dataset: &str,
    epochs: u32,
    seed: u64,
) -> Result<Checkpoint, AdapterError> {
    if !assets.is_stub_model(model) && !ctx.model.code_assets.iter().any(|c| c.model == model) {
        return Err(AdapterError::UnknownModel(model.to_string()));
    }
    if epochs == 0 {
        return Err(AdapterError::InvalidArgument { name: "epochs".into(), detail: "must be positive".into() });
    }
    let hash = dataset_hash(ctx, dataset)?;
    let n = ctx.model.checkpoints.iter().filter(|c| c.model == model).count() + 1;
    let metrics = BTreeMap::from([
        ("loss".to_string(), train_metric(&hash, epochs, seed)),
        ("resource_units".to_string(), epochs as f64 * TRAIN_UNIT_COST),
    ]);
    Ok(Checkpoint {
        id: format!("{model}-ckpt-{n:04}"),
        model: model.to_string(),
        parent_dataset: dataset.to_string(),
        epochs,
        metrics,
    })
}

/// Evaluates a model (its latest checkpoint when one exists) on a
/// benchmark. The success rate depends only on (model, checkpoint,
/// benchmark, seed) and is a multiple of `1 / episodes`.
pub fn mock_evaluate(
    ctx: &OperationalContext,
    assets: &AssetLibrary,
    model: &str,
    benchmark: &str,
    episodes: u64,
    seed: u64,
) -> Result<EvalReport, AdapterError> {
    if !assets.is_benchmark(benchmark) {
        return Err(AdapterError::UnknownBenchmark(benchmark.to_string()));
    }
    if episodes == 0 {
        return Err(AdapterError::InvalidArgument { name: "episodes".into(), detail: "must be positive".into() });
    }
    let weights = match ctx.model.latest_checkpoint(model) {
        Some(c) => c.id.clone(),
        None if assets.is_stub_model(model) || ctx.model.code_assets.iter().any(|c| c.model == model) => {
            model.to_string()
        }
        None => return Err(AdapterError::UnknownModel(model.to_string())),
    };
    let u = unit_hash(&[&weights, benchmark, &seed.to_string()]);
    let successes = (u * (episodes + 1) as f64).floor().min(episodes as f64);
    Ok(EvalReport {
        model: model.to_string(),
        benchmark: benchmark.to_string(),
        success_rate: successes / episodes as f64,
        episode_count: episodes,
        resource_units: episodes as f64 * EVAL_UNIT_COST,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_within_bound() {
        for e in 0..30 {
            let m = train_metric("abc", e, 7);
            assert!(m >= DECAY.powi(e as i32) && m <= train_metric_bound(e));
        }
    }

    #[test]
    fn unit_hash_range() {
        for i in 0..100 {
            let u = unit_hash(&["x", &i.to_string()]);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
