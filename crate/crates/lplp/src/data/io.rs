//! Dataset file format: a self-describing text container.
//!
//! ```text
//! lplp-dataset v1
//! classes <C>
//! dim <d>
//! seed <seed>
//! bags <n_train> <n_validation> <n_test>
//! bag <bag_id> <Y> none|<p_1> .. <p_C>
//! inst <split> <bag_id> <instance_id> <true_label> <f_1> .. <f_d>
//! ...
//! ```
//!
//! Bags appear grouped by split in header order (train, validation, test),
//! each `bag` line followed by its `inst` lines. Feature values and
//! proportions are written with 17 significant digits, so a save/load round
//! trip reproduces every `f64` bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::{Bag, BagLabel, DataError, DatasetSplit, Instance};

const MAGIC: &str = "lplp-dataset v1";
const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serialize a dataset to its text form.
pub fn serialize_dataset(dataset: &DatasetSplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "classes {}", dataset.num_positive_classes);
    let _ = writeln!(out, "dim {}", dataset.feature_dim);
    let _ = writeln!(out, "seed {}", dataset.seed);
    let _ = writeln!(
        out,
        "bags {} {} {}",
        dataset.train.len(),
        dataset.validation.len(),
        dataset.test.len()
    );
    for (split, bags) in dataset.splits() {
        for bag in bags {
            match &bag.label {
                BagLabel::Negative => {
                    let _ = writeln!(out, "bag {} 0 none", bag.id);
                }
                BagLabel::Positive { proportions } => {
                    let ps: Vec<String> = proportions.iter().map(|&p| fmt_f64(p)).collect();
                    let _ = writeln!(out, "bag {} 1 {}", bag.id, ps.join(" "));
                }
            }
            for inst in &bag.instances {
                let fs: Vec<String> = inst.features.iter().map(|&f| fmt_f64(f)).collect();
                let _ = writeln!(
                    out,
                    "inst {split} {} {} {} {}",
                    bag.id,
                    inst.id,
                    inst.true_label,
                    fs.join(" ")
                );
            }
        }
    }
    out
}

/// Write a dataset file atomically (temp file + rename).
pub fn save_dataset(dataset: &DatasetSplit, path: &Path) -> Result<(), DataError> {
    let text = serialize_dataset(dataset);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct LineParser<'a> {
    line: usize,
    fields: std::str::SplitWhitespace<'a>,
}

impl<'a> LineParser<'a> {
    fn err(&self, message: impl Into<String>) -> DataError {
        DataError::Parse { line: self.line, message: message.into() }
    }

    fn next_str(&mut self, what: &str) -> Result<&'a str, DataError> {
        self.fields.next().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, DataError> {
        let raw = self.next_str(what)?;
        raw.parse().map_err(|_| self.err(format!("invalid {what} `{raw}`")))
    }

    fn rest<T: std::str::FromStr>(&mut self, what: &str) -> Result<Vec<T>, DataError> {
        let line = self.line;
        let mut out = Vec::new();
        for raw in self.fields.by_ref() {
            out.push(raw.parse().map_err(|_| DataError::Parse {
                line,
                message: format!("invalid {what} `{raw}`"),
            })?);
        }
        Ok(out)
    }
}

/// Parse a dataset from its text form.
pub fn parse_dataset(text: &str) -> Result<DatasetSplit, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let parse_err = |line: usize, message: String| DataError::Parse { line, message };

    let (line, magic) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    if magic.trim() != MAGIC {
        return Err(parse_err(line, format!("expected `{MAGIC}` header")));
    }

    let mut header = |key: &str| -> Result<Vec<u64>, DataError> {
        let (line, raw) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file before `{key}`")))?;
        let mut p = LineParser { line, fields: raw.split_whitespace() };
        let found = p.next_str("header key")?;
        if found != key {
            return Err(p.err(format!("expected `{key}`, found `{found}`")));
        }
        p.rest("header value")
    };

    let classes = header("classes")?;
    let dim = header("dim")?;
    let seed = header("seed")?;
    let counts = header("bags")?;
    let [num_positive_classes] = classes[..] else {
        return Err(parse_err(2, "`classes` takes exactly one value".into()));
    };
    let [feature_dim] = dim[..] else {
        return Err(parse_err(3, "`dim` takes exactly one value".into()));
    };
    let [seed] = seed[..] else {
        return Err(parse_err(4, "`seed` takes exactly one value".into()));
    };
    if counts.len() != 3 {
        return Err(parse_err(5, "`bags` takes exactly three values".into()));
    }

    let mut bags: Vec<(Bag, Option<&str>)> = Vec::new();
    let mut last_line = 5usize;
    for (line, raw) in lines {
        last_line = line;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut p = LineParser { line, fields: trimmed.split_whitespace() };
        match p.next_str("record tag")? {
            "bag" => {
                let id: u64 = p.next("bag id")?;
                let y: u8 = p.next("bag label")?;
                let label = match y {
                    0 => {
                        let marker = p.next_str("proportion marker")?;
                        if marker != "none" {
                            return Err(p.err("negative bag must carry `none`"));
                        }
                        BagLabel::Negative
                    }
                    1 => {
                        let proportions: Vec<f64> = p.rest("proportion value")?;
                        if proportions.len() != num_positive_classes as usize {
                            return Err(p.err(format!(
                                "expected {num_positive_classes} proportions, found {}",
                                proportions.len()
                            )));
                        }
                        BagLabel::Positive { proportions }
                    }
                    other => return Err(p.err(format!("bag label must be 0 or 1, found {other}"))),
                };
                bags.push((Bag { id, instances: Vec::new(), label }, None));
            }
            "inst" => {
                let split = p.next_str("split tag")?;
                if !SPLIT_NAMES.contains(&split) {
                    return Err(p.err(format!("unknown split `{split}`")));
                }
                let bag_id: u64 = p.next("bag id")?;
                let id: u64 = p.next("instance id")?;
                let true_label: usize = p.next("label")?;
                let features: Vec<f64> = p.rest("feature value")?;
                if features.len() != feature_dim as usize {
                    return Err(p.err(format!(
                        "expected {feature_dim} features, found {}",
                        features.len()
                    )));
                }
                let Some((bag, bag_split)) = bags.last_mut() else {
                    return Err(p.err("instance record before any bag record"));
                };
                if bag.id != bag_id {
                    return Err(p.err(format!(
                        "instance references bag {bag_id} but current bag is {}",
                        bag.id
                    )));
                }
                match bag_split {
                    None => *bag_split = Some(split),
                    Some(existing) if *existing != split => {
                        return Err(p.err(format!(
                            "bag {bag_id} spans splits {existing} and {split}"
                        )));
                    }
                    _ => {}
                }
                bag.instances.push(Instance { id, true_label, features });
            }
            other => return Err(p.err(format!("unknown record tag `{other}`"))),
        }
    }

    let total_expected: u64 = counts.iter().sum();
    if bags.len() as u64 != total_expected {
        return Err(parse_err(
            last_line,
            format!(
                "file ends with {} bags but the header declares {total_expected}; truncated?",
                bags.len()
            ),
        ));
    }

    // Assign splits positionally and cross-check the instance split tags.
    let mut dataset = DatasetSplit {
        num_positive_classes: num_positive_classes as usize,
        feature_dim: feature_dim as usize,
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut iter = bags.into_iter();
    for (split_idx, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let (bag, tagged) = iter.next().expect("counts checked above");
            if let Some(tag) = tagged {
                if tag != SPLIT_NAMES[split_idx] {
                    return Err(parse_err(
                        last_line,
                        format!(
                            "bag {} is positioned in {} but its instances are tagged {tag}",
                            bag.id, SPLIT_NAMES[split_idx]
                        ),
                    ));
                }
            }
            match split_idx {
                0 => dataset.train.push(bag),
                1 => dataset.validation.push(bag),
                _ => dataset.test.push(bag),
            }
        }
    }

    dataset.validate()?;
    Ok(dataset)
}

/// Load a dataset file.
pub fn load_dataset(path: &Path) -> Result<DatasetSplit, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text)
}
