//! Checkpoint and per-epoch metrics files.
//!
//! Checkpoint layout:
//!
//! ```text
//! lplp-checkpoint v1
//! method <ce|pl|ppl|two_stage|ours>
//! classes <C>
//! dim <d>
//! epoch <best epoch>
//! best_val_loss <loss>
//! aggregation <none|mean|max|lse r>
//! part <name> <width> .. <width>
//! values <n> <v_1> .. <v_n>
//! ...
//! end
//! ```
//!
//! Values use 17 significant digits, so loading reproduces the parameters
//! bit-exactly. Writes go through a temp file and a rename.

use std::path::Path;

use super::{EpochRecord, FlatModel, Method, MilModel, TrainError, TrainedModel, TwoStageModel};
use crate::mil::AggregationKind;
use crate::nets::{Mlp, MlpSpec, ModelTriple};

const MAGIC: &str = "lplp-checkpoint v1";

/// Header of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub method: Method,
    pub num_positive_classes: usize,
    pub feature_dim: usize,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub aggregation: Option<AggregationKind>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn aggregation_line(kind: Option<AggregationKind>) -> String {
    match kind {
        None => "aggregation none".into(),
        Some(AggregationKind::Mean) => "aggregation mean".into(),
        Some(AggregationKind::Max) => "aggregation max".into(),
        Some(AggregationKind::Lse { r }) => format!("aggregation lse {}", fmt_f64(r)),
    }
}

fn model_parts(model: &TrainedModel) -> Vec<(&'static str, &Mlp)> {
    match model {
        TrainedModel::Masked(triple) => vec![
            ("feature", &triple.feature),
            ("score_head", &triple.score_head),
            ("class_head", &triple.class_head),
        ],
        TrainedModel::Flat(flat) => vec![("feature", &flat.feature), ("head", &flat.head)],
        TrainedModel::TwoStage(ts) => vec![
            ("mil_feature", &ts.mil.feature),
            ("mil_score_head", &ts.mil.score_head),
            ("feature", &ts.feature),
            ("class_head", &ts.class_head),
        ],
    }
}

/// Serialize a checkpoint to its text form.
pub fn serialize_checkpoint(meta: &CheckpointMeta, model: &TrainedModel) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "method {}", meta.method);
    let _ = writeln!(out, "classes {}", meta.num_positive_classes);
    let _ = writeln!(out, "dim {}", meta.feature_dim);
    let _ = writeln!(out, "epoch {}", meta.epoch);
    let _ = writeln!(out, "best_val_loss {}", fmt_f64(meta.best_val_loss));
    let _ = writeln!(out, "{}", aggregation_line(meta.aggregation));
    for (name, mlp) in model_parts(model) {
        let widths: Vec<String> =
            mlp.spec.layer_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "part {name} {}", widths.join(" "));
        let values: Vec<String> = mlp.params.iter().map(|&p| fmt_f64(p)).collect();
        let _ = writeln!(out, "values {} {}", mlp.params.len(), values.join(" "));
    }
    let _ = writeln!(out, "end");
    out
}

/// Write a checkpoint atomically.
pub fn save_checkpoint(
    meta: &CheckpointMeta,
    model: &TrainedModel,
    path: &Path,
) -> Result<(), TrainError> {
    let text = serialize_checkpoint(meta, model);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<(usize, Vec<&'a str>), TrainError> {
        for (idx, raw) in self.lines.by_ref() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            return Ok((line, raw.split_whitespace().collect()));
        }
        Err(TrainError::CheckpointParse { line: 0, message: "unexpected end of file".into() })
    }

    fn expect_kv(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), TrainError> {
        let (line, fields) = self.next_line()?;
        if fields.first() != Some(&key) {
            return Err(TrainError::CheckpointParse {
                line,
                message: format!("expected `{key}`, found `{}`", fields.first().unwrap_or(&"")),
            });
        }
        Ok((line, fields[1..].to_vec()))
    }
}

fn parse_one<T: std::str::FromStr>(
    line: usize,
    fields: &[&str],
    what: &str,
) -> Result<T, TrainError> {
    if fields.len() != 1 {
        return Err(TrainError::CheckpointParse {
            line,
            message: format!("`{what}` takes exactly one value"),
        });
    }
    fields[0]
        .parse()
        .map_err(|_| TrainError::CheckpointParse { line, message: format!("invalid {what}") })
}

/// Parse a checkpoint from its text form.
pub fn parse_checkpoint(text: &str) -> Result<(CheckpointMeta, TrainedModel), TrainError> {
    let mut reader = Reader { lines: text.lines().enumerate() };
    let (line, fields) = reader.next_line()?;
    if fields.join(" ") != MAGIC {
        return Err(TrainError::CheckpointParse {
            line,
            message: format!("expected `{MAGIC}` header"),
        });
    }

    let (line, fields) = reader.expect_kv("method")?;
    let method: Method = parse_one::<String>(line, &fields, "method")?
        .parse()
        .map_err(|e: String| TrainError::CheckpointParse { line, message: e })?;
    let (line, fields) = reader.expect_kv("classes")?;
    let num_positive_classes: usize = parse_one(line, &fields, "classes")?;
    let (line, fields) = reader.expect_kv("dim")?;
    let feature_dim: usize = parse_one(line, &fields, "dim")?;
    let (line, fields) = reader.expect_kv("epoch")?;
    let epoch: usize = parse_one(line, &fields, "epoch")?;
    let (line, fields) = reader.expect_kv("best_val_loss")?;
    let best_val_loss: f64 = parse_one(line, &fields, "best_val_loss")?;
    let (line, fields) = reader.expect_kv("aggregation")?;
    let aggregation = match fields.as_slice() {
        ["none"] => None,
        ["mean"] => Some(AggregationKind::Mean),
        ["max"] => Some(AggregationKind::Max),
        ["lse", r] => Some(AggregationKind::Lse {
            r: r.parse().map_err(|_| TrainError::CheckpointParse {
                line,
                message: "invalid lse sharpness".into(),
            })?,
        }),
        _ => {
            return Err(TrainError::CheckpointParse {
                line,
                message: "invalid aggregation".into(),
            })
        }
    };

    let expected_parts: &[&str] = match method {
        Method::Ours => &["feature", "score_head", "class_head"],
        Method::Ce | Method::Pl | Method::Ppl => &["feature", "head"],
        Method::TwoStage => &["mil_feature", "mil_score_head", "feature", "class_head"],
    };
    let mut parts: Vec<Mlp> = Vec::with_capacity(expected_parts.len());
    for &name in expected_parts {
        let (line, fields) = reader.expect_kv("part")?;
        if fields.first() != Some(&name) {
            return Err(TrainError::CheckpointParse {
                line,
                message: format!("expected part `{name}`, found `{}`", fields.first().unwrap_or(&"")),
            });
        }
        let widths: Vec<usize> = fields[1..]
            .iter()
            .map(|w| {
                w.parse().map_err(|_| TrainError::CheckpointParse {
                    line,
                    message: "invalid layer width".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        if widths.len() < 2 {
            return Err(TrainError::CheckpointParse {
                line,
                message: format!("part `{name}` needs at least two widths"),
            });
        }
        let spec = MlpSpec::new(widths);
        let (line, fields) = reader.expect_kv("values")?;
        let declared: usize = fields
            .first()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TrainError::CheckpointParse {
                line,
                message: "missing value count".into(),
            })?;
        let params: Vec<f64> = fields[1..]
            .iter()
            .map(|v| {
                v.parse().map_err(|_| TrainError::CheckpointParse {
                    line,
                    message: "invalid parameter value".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        if params.len() != declared || params.len() != spec.num_params() {
            return Err(TrainError::CheckpointParse {
                line,
                message: format!(
                    "part `{name}` declares {declared} values, found {}, spec wants {}",
                    params.len(),
                    spec.num_params()
                ),
            });
        }
        parts.push(Mlp { spec, params });
    }
    let (line, fields) = reader.next_line()?;
    if fields != ["end"] {
        return Err(TrainError::CheckpointParse { line, message: "expected `end`".into() });
    }

    let mut parts = parts.into_iter();
    let model = match method {
        Method::Ours => TrainedModel::Masked(ModelTriple {
            feature: parts.next().unwrap(),
            score_head: parts.next().unwrap(),
            class_head: parts.next().unwrap(),
        }),
        Method::Ce | Method::Pl | Method::Ppl => TrainedModel::Flat(FlatModel {
            feature: parts.next().unwrap(),
            head: parts.next().unwrap(),
            num_positive_classes,
        }),
        Method::TwoStage => TrainedModel::TwoStage(TwoStageModel {
            mil: MilModel { feature: parts.next().unwrap(), score_head: parts.next().unwrap() },
            feature: parts.next().unwrap(),
            class_head: parts.next().unwrap(),
        }),
    };
    let meta = CheckpointMeta {
        method,
        num_positive_classes,
        feature_dim,
        epoch,
        best_val_loss,
        aggregation,
    };
    Ok((meta, model))
}

/// Load a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, TrainedModel), TrainError> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text)
}

/// Write the per-epoch metric log, one self-describing record per line.
pub fn write_metrics(log: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    for r in log {
        let _ = writeln!(
            out,
            "epoch={} train_loss={} val_loss={} timestamp={} epochs_since_improvement={}",
            r.epoch,
            fmt_f64(r.train_loss),
            fmt_f64(r.val_loss),
            r.timestamp,
            r.epochs_since_improvement
        );
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
