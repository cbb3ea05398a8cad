//! Synthetic Gaussian bag generator.
//!
//! Instances of class `k` are drawn from an isotropic unit-variance Gaussian
//! whose mean sits on a scaled regular simplex, so every pair of class means
//! is exactly `class_separation` apart. Bags then sample instances from
//! per-class pools according to a randomly drawn partial label proportion.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Bag, BagLabel, DataError, DatasetSplit, Instance};
use crate::rng::stream;

/// Shape of a generated dataset. Defaults follow the desk-scale protocol:
/// 400+400 training bags, 100+100 validation, 100+10 test, 32 instances per
/// bag, two positive classes in eight dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_positive_classes: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub train_pos: usize,
    pub train_neg: usize,
    pub val_pos: usize,
    pub val_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub bag_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_positive_classes: 2,
            feature_dim: 8,
            class_separation: 6.0,
            train_pos: 400,
            train_neg: 400,
            val_pos: 100,
            val_neg: 100,
            test_pos: 100,
            test_neg: 10,
            bag_size: 32,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.num_positive_classes < 2 {
            return bad(format!("need at least 2 positive classes, got {}", self.num_positive_classes));
        }
        if self.feature_dim < self.num_positive_classes + 1 {
            return bad(format!(
                "feature_dim {} too small to place {} equidistant class means",
                self.feature_dim,
                self.num_positive_classes + 1
            ));
        }
        if self.class_separation < 0.0 {
            return bad("class_separation must be non-negative".into());
        }
        if self.bag_size == 0 {
            return bad("bag_size must be at least 1".into());
        }
        for (name, n) in [
            ("train_pos", self.train_pos),
            ("train_neg", self.train_neg),
            ("val_pos", self.val_pos),
            ("val_neg", self.val_neg),
            ("test_pos", self.test_pos),
            ("test_neg", self.test_neg),
        ] {
            if n == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Per-class instance pools a split's bags sample from. Index 0 is the
/// negative class; 1..=C the positive classes.
#[derive(Debug, Clone)]
pub struct InstancePools {
    pub per_class: Vec<Vec<Instance>>,
}

impl InstancePools {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }
}

/// Uniform draw from the probability simplex over `C` positive classes
/// (Dirichlet with all concentrations 1), deterministic per seed.
pub fn sample_partial_proportions(num_positive_classes: usize, seed: u64) -> Result<Vec<f64>, DataError> {
    if num_positive_classes < 2 {
        return Err(DataError::InvalidConfig(format!(
            "partial proportions need at least 2 positive classes, got {num_positive_classes}"
        )));
    }
    let mut rng = stream(seed, "proportions", 0);
    Ok(dirichlet_uniform(num_positive_classes, &mut rng))
}

fn dirichlet_uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Normalized Exp(1) draws are uniform on the simplex.
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

/// Apportion `total` slots among classes by largest remainder: every count
/// differs from `total * p` by less than one and the counts sum to `total`.
/// Remainder ties go to the lowest class index.
fn largest_remainder_counts(total: usize, proportions: &[f64]) -> Vec<usize> {
    let targets: Vec<f64> = proportions.iter().map(|&p| p * total as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|&t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &class in order.iter().take(total - assigned) {
        counts[class] += 1;
    }
    counts
}

fn check_simplex(proportions: &[f64]) -> Result<(), DataError> {
    if proportions.is_empty() || proportions.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(DataError::InvalidConfig("proportions must lie in [0, 1]".into()));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > super::SIMPLEX_TOL {
        return Err(DataError::InvalidConfig(format!("proportions sum to {total}, expected 1")));
    }
    Ok(())
}

fn select_from_pool(
    pool: &[Instance],
    class: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Instance>, DataError> {
    if pool.len() < count {
        return Err(DataError::PoolExhausted { class, needed: count, available: pool.len() });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Compose a positive bag of `size` instances: `round(negative_fraction *
/// size)` negatives, the remaining slots apportioned among the positive
/// classes by largest remainder on `proportions`. The stored partial
/// proportions are the realized counts normalized, so the proportion-loss
/// target always matches the bag's actual contents.
pub fn compose_bag(
    pools: &InstancePools,
    bag_id: u64,
    size: usize,
    proportions: &[f64],
    negative_fraction: f64,
    seed: u64,
) -> Result<Bag, DataError> {
    if size == 0 {
        return Err(DataError::InvalidConfig("bag size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&negative_fraction) {
        return Err(DataError::InvalidConfig(format!(
            "negative_fraction {negative_fraction} outside [0, 1)"
        )));
    }
    check_simplex(proportions)?;
    if proportions.len() + 1 != pools.num_classes() {
        return Err(DataError::InvalidConfig(format!(
            "{} proportions for {} positive classes",
            proportions.len(),
            pools.num_classes() - 1
        )));
    }

    let negatives = (negative_fraction * size as f64).round() as usize;
    let positive_slots = size - negatives;
    if positive_slots == 0 {
        return Err(DataError::InvalidConfig(format!(
            "negative_fraction {negative_fraction} leaves no positive slot in a bag of {size}"
        )));
    }
    let counts = largest_remainder_counts(positive_slots, proportions);

    let mut rng = stream(seed, "compose-bag", bag_id);
    let mut instances = select_from_pool(&pools.per_class[0], 0, negatives, &mut rng)?;
    for (offset, &count) in counts.iter().enumerate() {
        let class = offset + 1;
        instances.extend(select_from_pool(&pools.per_class[class], class, count, &mut rng)?);
    }
    instances.shuffle(&mut rng);

    let realized: Vec<f64> =
        counts.iter().map(|&c| c as f64 / positive_slots as f64).collect();
    Ok(Bag { id: bag_id, instances, label: BagLabel::Positive { proportions: realized } })
}

/// Compose a negative bag: `size` instances of the negative class only.
pub fn compose_negative_bag(
    pools: &InstancePools,
    bag_id: u64,
    size: usize,
    seed: u64,
) -> Result<Bag, DataError> {
    if size == 0 {
        return Err(DataError::InvalidConfig("bag size must be at least 1".into()));
    }
    let mut rng = stream(seed, "compose-neg-bag", bag_id);
    let instances = select_from_pool(&pools.per_class[0], 0, size, &mut rng)?;
    Ok(Bag { id: bag_id, instances, label: BagLabel::Negative })
}

fn class_mean(class: usize, dim: usize, separation: f64) -> Vec<f64> {
    // Scaled standard-basis vectors: all pairwise distances equal separation.
    let mut mean = vec![0.0; dim];
    mean[class] = separation / std::f64::consts::SQRT_2;
    mean
}

fn gaussian_pool(
    class: usize,
    count: usize,
    dim: usize,
    separation: f64,
    next_id: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Vec<Instance> {
    let mean = class_mean(class, dim, separation);
    (0..count)
        .map(|_| {
            let features: Vec<f64> =
                mean.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            let id = *next_id;
            *next_id += 1;
            Instance { id, true_label: class, features }
        })
        .collect()
}

/// Range of the negative share inside generated positive bags.
const NEG_FRACTION_RANGE: (f64, f64) = (0.2, 0.7);

/// Generate a full dataset from Gaussians. Pure function of the config:
/// identical configs give byte-identical datasets after serialization.
pub fn synth_gaussian_dataset(config: &SynthConfig) -> Result<DatasetSplit, DataError> {
    config.validate()?;
    let c = config.num_positive_classes;
    let mut next_instance_id: u64 = 0;
    let mut next_bag_id: u64 = 0;

    let mut make_split = |split_idx: u64, pos_bags: usize, neg_bags: usize| -> Result<Vec<Bag>, DataError> {
        // One pool per class, sized so no composition can exhaust it.
        let pool_size = (pos_bags + neg_bags) * config.bag_size;
        let per_class: Vec<Vec<Instance>> = (0..=c)
            .map(|class| {
                let mut rng = stream(config.seed, "pool", split_idx * 100 + class as u64);
                gaussian_pool(
                    class,
                    pool_size,
                    config.feature_dim,
                    config.class_separation,
                    &mut next_instance_id,
                    &mut rng,
                )
            })
            .collect();
        let pools = InstancePools { per_class };

        let mut bags = Vec::with_capacity(pos_bags + neg_bags);
        for _ in 0..pos_bags {
            let bag_id = next_bag_id;
            next_bag_id += 1;
            let prop_seed = crate::rng::derive_seed(config.seed, "bag-proportions", bag_id);
            let proportions = sample_partial_proportions(c, prop_seed)?;
            let mut frac_rng = stream(config.seed, "neg-fraction", bag_id);
            let negative_fraction =
                frac_rng.gen_range(NEG_FRACTION_RANGE.0..NEG_FRACTION_RANGE.1);
            bags.push(compose_bag(
                &pools,
                bag_id,
                config.bag_size,
                &proportions,
                negative_fraction,
                config.seed,
            )?);
        }
        for _ in 0..neg_bags {
            let bag_id = next_bag_id;
            next_bag_id += 1;
            bags.push(compose_negative_bag(&pools, bag_id, config.bag_size, config.seed)?);
        }
        Ok(bags)
    };

    let train = make_split(0, config.train_pos, config.train_neg)?;
    let validation = make_split(1, config.val_pos, config.val_neg)?;
    let test = make_split(2, config.test_pos, config.test_neg)?;

    let dataset = DatasetSplit {
        num_positive_classes: c,
        feature_dim: config.feature_dim,
        seed: config.seed,
        train,
        validation,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}
