//! Flat key=value run configuration. One pair per line, `#` starts a
//! comment, whitespace around keys and values is ignored, later lines win
//! on duplicate keys, and every key has a default so the empty file is a
//! valid configuration. `render_config` emits every key in a fixed order
//! with round-trippable values, which is what makes `resolved-config.txt`
//! re-runnable.

use std::fs;
use std::path::Path;

use crate::data::BlobSpec;
use crate::error::CarpError;
use crate::partition::PartitionStrategy;
use crate::trainer::{DatasetSpec, Objective, RunConfig};

/// Parse a configuration file's text into a complete RunConfig.
pub fn parse_config(text: &str) -> Result<RunConfig, CarpError> {
    let mut cfg = RunConfig::default();
    let mut blob = match &cfg.dataset {
        DatasetSpec::Blobs(spec) => spec.clone(),
        _ => unreachable!("default dataset is blobs"),
    };
    let mut dataset_kind = String::from("blobs");
    let mut idx_images = String::new();
    let mut idx_labels = String::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CarpError::Config(format!(
                "line {}: expected key=value, got {line:?}",
                line_no + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.seed = parse_scalar(key, value)?,
            "epochs" => cfg.epochs = parse_scalar(key, value)?,
            "batch_size" => cfg.batch_size = parse_scalar(key, value)?,
            "prototypes" => cfg.prototypes = parse_scalar(key, value)?,
            "block_size" => cfg.block_size = parse_scalar(key, value)?,
            "partition" => {
                cfg.partition = match value {
                    "random" => PartitionStrategy::Random,
                    "constant" => PartitionStrategy::Constant,
                    other => {
                        return Err(CarpError::Config(format!(
                            "partition must be random or constant, got {other:?}"
                        )))
                    }
                }
            }
            "objective" => {
                cfg.objective = match value {
                    "partitioned" => Objective::Partitioned,
                    "global" => Objective::Global,
                    other => {
                        return Err(CarpError::Config(format!(
                            "objective must be partitioned or global, got {other:?}"
                        )))
                    }
                }
            }
            "lambda_e" => cfg.lambda_e = parse_scalar(key, value)?,
            "lr_start" => cfg.lr_start = parse_scalar(key, value)?,
            "lr_end" => cfg.lr_end = parse_scalar(key, value)?,
            "momentum" => cfg.momentum = parse_scalar(key, value)?,
            "weight_decay" => cfg.weight_decay = parse_scalar(key, value)?,
            "eta_start" => cfg.eta_start = parse_scalar(key, value)?,
            "eta_end" => cfg.eta_end = parse_scalar(key, value)?,
            "use_teacher" => cfg.use_teacher = parse_scalar(key, value)?,
            "encoder_dims" => cfg.encoder_dims = parse_dims(key, value)?,
            "projector_dims" => cfg.projector_dims = parse_dims(key, value)?,
            "dataset" => match value {
                "blobs" | "idx" => dataset_kind = value.to_string(),
                other => {
                    return Err(CarpError::Config(format!(
                        "dataset must be blobs or idx, got {other:?}"
                    )))
                }
            },
            "blob_classes" => blob.classes = parse_scalar(key, value)?,
            "blob_per_class" => blob.per_class = parse_scalar(key, value)?,
            "blob_dim" => blob.dim = parse_scalar(key, value)?,
            "blob_spread" => blob.spread = parse_scalar(key, value)?,
            "idx_images" => idx_images = value.to_string(),
            "idx_labels" => idx_labels = value.to_string(),
            "noise_sigma" => cfg.noise_sigma = parse_scalar(key, value)?,
            "mask_fraction" => cfg.mask_fraction = parse_scalar(key, value)?,
            "eval_every" => cfg.eval_every = parse_scalar(key, value)?,
            "shards" => cfg.shards = parse_scalar(key, value)?,
            "parallel" => cfg.parallel = parse_scalar(key, value)?,
            other => return Err(CarpError::UnknownKey(other.to_string())),
        }
    }

    cfg.dataset = match dataset_kind.as_str() {
        "blobs" => DatasetSpec::Blobs(blob),
        "idx" => DatasetSpec::Idx { images: idx_images, labels: idx_labels },
        _ => unreachable!(),
    };
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CarpError> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CarpError> {
    value.parse().map_err(|_| {
        CarpError::Config(format!("cannot parse value {value:?} for key {key:?}"))
    })
}

/// Comma-separated layer widths; the empty value is the empty list.
fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>, CarpError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

fn render_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Every key in a fixed order; float Display in Rust prints the shortest
/// decimal that parses back to the identical bits, so parse(render(c)) == c.
pub fn render_config(cfg: &RunConfig) -> String {
    let (dataset_kind, blob, idx_images, idx_labels) = match &cfg.dataset {
        DatasetSpec::Blobs(spec) => ("blobs", spec.clone(), String::new(), String::new()),
        DatasetSpec::Idx { images, labels } => (
            "idx",
            default_blob(),
            images.clone(),
            labels.clone(),
        ),
    };
    let partition = match cfg.partition {
        PartitionStrategy::Random => "random",
        PartitionStrategy::Constant => "constant",
    };
    let objective = match cfg.objective {
        Objective::Partitioned => "partitioned",
        Objective::Global => "global",
    };
    format!(
        "# run\n\
         seed={}\n\
         epochs={}\n\
         batch_size={}\n\
         # objective\n\
         prototypes={}\n\
         block_size={}\n\
         partition={}\n\
         objective={}\n\
         lambda_e={}\n\
         # optimization\n\
         lr_start={}\n\
         lr_end={}\n\
         momentum={}\n\
         weight_decay={}\n\
         # teacher\n\
         use_teacher={}\n\
         eta_start={}\n\
         eta_end={}\n\
         # model\n\
         encoder_dims={}\n\
         projector_dims={}\n\
         # data\n\
         dataset={}\n\
         blob_classes={}\n\
         blob_per_class={}\n\
         blob_dim={}\n\
         blob_spread={}\n\
         idx_images={}\n\
         idx_labels={}\n\
         noise_sigma={}\n\
         mask_fraction={}\n\
         # execution\n\
         eval_every={}\n\
         shards={}\n\
         parallel={}\n",
        cfg.seed,
        cfg.epochs,
        cfg.batch_size,
        cfg.prototypes,
        cfg.block_size,
        partition,
        objective,
        cfg.lambda_e,
        cfg.lr_start,
        cfg.lr_end,
        cfg.momentum,
        cfg.weight_decay,
        cfg.use_teacher,
        cfg.eta_start,
        cfg.eta_end,
        render_dims(&cfg.encoder_dims),
        render_dims(&cfg.projector_dims),
        dataset_kind,
        blob.classes,
        blob.per_class,
        blob.dim,
        blob.spread,
        idx_images,
        idx_labels,
        cfg.noise_sigma,
        cfg.mask_fraction,
        cfg.eval_every,
        cfg.shards,
        cfg.parallel,
    )
}

/// Blob keys still rendered when the dataset is idx, so the emitted file
/// always contains the full key set.
fn default_blob() -> BlobSpec {
    match RunConfig::default().dataset {
        DatasetSpec::Blobs(spec) => spec,
        _ => unreachable!("default dataset is blobs"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default_config() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("\n\n# only a comment\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        match parse_config("foo=1") {
            Err(CarpError::UnknownKey(k)) => assert_eq!(k, "foo"),
            other => panic!("expected an unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn default_round_trips_through_render() {
        let cfg = RunConfig::default();
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn exotic_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = u64::MAX;
        cfg.partition = PartitionStrategy::Constant;
        cfg.objective = Objective::Global;
        cfg.lambda_e = 0.325_001;
        cfg.encoder_dims = vec![];
        cfg.projector_dims = vec![7];
        cfg.dataset =
            DatasetSpec::Idx { images: "a/b.idx3".into(), labels: "a/b.idx1".into() };
        cfg.lr_start = 1.0 / 3.0;
        cfg.parallel = true;
        cfg.use_teacher = false;
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn whitespace_and_duplicates_are_tolerated() {
        let cfg = parse_config("  epochs = 7 \nepochs=9\n").unwrap();
        assert_eq!(cfg.epochs, 9, "the last occurrence of a key wins");
    }

    #[test]
    fn bad_values_name_the_key() {
        match parse_config("epochs=many") {
            Err(CarpError::Config(msg)) => {
                assert!(msg.contains("epochs"), "message should name the key: {msg}")
            }
            other => panic!("expected a config error, got {other:?}"),
        }
        assert!(parse_config("use_teacher=True").is_err(), "booleans are lowercase");
        assert!(parse_config("partition=shuffled").is_err());
        assert!(parse_config("objective=both").is_err());
        assert!(parse_config("dataset=parquet").is_err());
    }

    #[test]
    fn lines_without_equals_report_their_number() {
        match parse_config("epochs=1\nbogus line\n") {
            Err(CarpError::Config(msg)) => {
                assert!(msg.contains("line 2"), "message should locate the line: {msg}")
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn dims_lists_parse_in_both_forms() {
        assert_eq!(parse_config("encoder_dims=").unwrap().encoder_dims, Vec::<usize>::new());
        assert_eq!(parse_config("encoder_dims=10, 20 ,30").unwrap().encoder_dims, vec![10, 20, 30]);
        assert!(parse_config("encoder_dims=10,x").is_err());
    }

    #[test]
    fn key_order_is_independent_of_dataset_switch() {
        let text = "idx_images=img\nidx_labels=lab\ndataset=idx\n";
        match parse_config(text).unwrap().dataset {
            DatasetSpec::Idx { images, labels } => {
                assert_eq!(images, "img");
                assert_eq!(labels, "lab");
            }
            other => panic!("expected the idx dataset, got {other:?}"),
        }
    }
}
