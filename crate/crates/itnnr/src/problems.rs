//! The nine benchmark forward problems: closed-form maps, sampling domains,
//! dataset splitting, noise injection, and the on-the-fly pair generator.
//!
//! Every map is cheap and exact, which is what makes inversion benchmarks
//! honest: predicted inputs can always be pushed back through the true
//! forward function.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::BatchSource;

/// Sampling region for problem inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Per-coordinate closed intervals [lo, hi].
    Box(Vec<(f64, f64)>),
    /// The closed unit disk in two dimensions.
    UnitDisk,
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Box(ranges) => ranges.len(),
            Domain::UnitDisk => 2,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Box(ranges) => {
                x.len() == ranges.len()
                    && x.iter()
                        .zip(ranges)
                        .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
            }
            Domain::UnitDisk => x.len() == 2 && x[0] * x[0] + x[1] * x[1] <= 1.0,
        }
    }

    /// One uniform draw. Disk sampling rejects from the bounding square, so
    /// acceptance is ~78.5% per attempt.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Domain::Box(ranges) => ranges.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect(),
            Domain::UnitDisk => loop {
                let x = rng.gen_range(-1.0..1.0);
                let y = rng.gen_range(-1.0..1.0);
                if x * x + y * y <= 1.0 {
                    return vec![x, y];
                }
            },
        }
    }

    /// Nearest in-domain point: per-coordinate clamp for boxes, radial
    /// projection for the disk.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Domain::Box(ranges) => x
                .iter()
                .zip(ranges)
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
            Domain::UnitDisk => {
                if x[0] * x[0] + x[1] * x[1] <= 1.0 {
                    return x.to_vec();
                }
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let mut out = vec![x[0] / r, x[1] / r];
                // Division rounding can leave the projection a few ulps
                // outside; shrink until strictly contained.
                while out[0] * out[0] + out[1] * out[1] > 1.0 {
                    out[0] *= 0.999_999_999_999_999_9;
                    out[1] *= 0.999_999_999_999_999_9;
                }
                out
            }
        }
    }
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    TrainAnchor,
    Validation,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::TrainAnchor => "train_anchor",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

/// Inputs and outputs for one split of one problem.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub role: Role,
    pub seed: u64,
}

/// One benchmark problem: the map, its domain, and the split sizes.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub id: u8,
    pub name: &'static str,
    pub input_dim: usize,
    pub output_dim: usize,
    pub domain: Domain,
    /// Segment lengths for the robot-arm problems (7..9); empty otherwise.
    pub link_lengths: Vec<f64>,
    pub n_total: usize,
    pub n_train_anchor: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl ProblemSpec {
    /// The benchmark catalog. Ids run 1..=9.
    pub fn by_id(id: u8) -> Result<ProblemSpec> {
        let pi = std::f64::consts::PI;
        let spec = match id {
            1 => ProblemSpec::small(1, "cubic", 1, 1, Domain::Box(vec![(-1.5, 1.5)]), vec![]),
            2 => ProblemSpec::small(2, "quartic", 1, 1, Domain::Box(vec![(-2.0, 2.0)]), vec![]),
            3 => ProblemSpec::small(3, "sine", 1, 1, Domain::Box(vec![(-1.5, 1.5)]), vec![]),
            4 => ProblemSpec::small(4, "half_ball", 2, 1, Domain::UnitDisk, vec![]),
            5 => ProblemSpec::large(
                5,
                "bivariate_poly",
                2,
                2,
                Domain::Box(vec![(-2.0, 2.0), (-2.0, 2.0)]),
                vec![],
            ),
            6 => ProblemSpec::large(
                6,
                "trivariate_poly",
                3,
                3,
                Domain::Box(vec![(-1.5, 1.5); 3]),
                vec![],
            ),
            7 => ProblemSpec::large(
                7,
                "planar_arm_2",
                2,
                2,
                Domain::Box(vec![(-pi, pi); 2]),
                vec![1.0, 0.8],
            ),
            8 => ProblemSpec::large(
                8,
                "planar_arm_3",
                3,
                2,
                Domain::Box(vec![(-pi, pi); 3]),
                vec![1.0, 0.8, 0.6],
            ),
            9 => ProblemSpec::large(
                9,
                "yaw_pitch_pitch",
                3,
                3,
                Domain::Box(vec![
                    (-pi, pi),
                    (-pi / 2.0, pi / 2.0),
                    (-pi / 2.0, pi / 2.0),
                ]),
                vec![1.0, 0.8],
            ),
            other => {
                return Err(Error::Argument(format!(
                    "unknown experiment id {other}, valid ids are 1..=9"
                )))
            }
        };
        Ok(spec)
    }

    fn small(
        id: u8,
        name: &'static str,
        p: usize,
        q: usize,
        domain: Domain,
        link_lengths: Vec<f64>,
    ) -> ProblemSpec {
        ProblemSpec {
            id,
            name,
            input_dim: p,
            output_dim: q,
            domain,
            link_lengths,
            n_total: 500,
            n_train_anchor: 300,
            n_val: 100,
            n_test: 100,
        }
    }

    fn large(
        id: u8,
        name: &'static str,
        p: usize,
        q: usize,
        domain: Domain,
        link_lengths: Vec<f64>,
    ) -> ProblemSpec {
        ProblemSpec {
            id,
            name,
            input_dim: p,
            output_dim: q,
            domain,
            link_lengths,
            n_total: 1000,
            n_train_anchor: 600,
            n_val: 200,
            n_test: 200,
        }
    }

    /// Exact forward map. The half-ball is undefined outside the unit disk;
    /// every other map is a total analytic expression.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        if self.id == 4 {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 > 1.0 {
                return Err(Error::Domain(format!(
                    "half-ball input ({}, {}) lies outside the unit disk",
                    x[0], x[1]
                )));
            }
            return Ok(vec![(1.0 - r2).sqrt()]);
        }
        Ok(self.forward_unchecked(x))
    }

    /// Forward map where the half-ball is continued as sqrt(max(0, 1-r^2)).
    /// Used when a predicted input may sit epsilon outside the disk and an
    /// output value is still needed (error measurement, surrogate targets).
    pub fn forward_extended(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Forward map as an Option: None where the map is undefined.
    pub fn forward_total(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x.len() != self.input_dim {
            return None;
        }
        if self.id == 4 && x[0] * x[0] + x[1] * x[1] > 1.0 {
            return None;
        }
        Some(self.forward_unchecked(x))
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "problem {} expects {} input coordinates, got {}",
                self.id,
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self.id {
            1 => vec![x[0].powi(3) - x[0]],
            2 => vec![x[0].powi(4) - 4.0 * x[0]],
            3 => vec![(5.0 * x[0]).sin()],
            4 => vec![(1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0).sqrt()],
            5 => {
                let (a, b) = (x[0], x[1]);
                vec![
                    a.powi(3) - 2.0 * a * b * b + 5.0 * a + 5.0 * b,
                    b * b - 2.0 * a * b + 3.0 * a - 2.0 * b,
                ]
            }
            6 => {
                let (a, b, c) = (x[0], x[1], x[2]);
                vec![a * a - b * b + c, 2.0 * a * b + c, a + b + c * c]
            }
            7 => {
                let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
                let (t1, t2) = (x[0], x[1]);
                vec![
                    l1 * t1.cos() + l2 * (t1 + t2).cos(),
                    l1 * t1.sin() + l2 * (t1 + t2).sin(),
                ]
            }
            8 => {
                let (l1, l2, l3) = (
                    self.link_lengths[0],
                    self.link_lengths[1],
                    self.link_lengths[2],
                );
                let (t1, t2, t3) = (x[0], x[1], x[2]);
                vec![
                    l1 * t1.cos() + l2 * (t1 + t2).cos() + l3 * (t1 + t2 + t3).cos(),
                    l1 * t1.sin() + l2 * (t1 + t2).sin() + l3 * (t1 + t2 + t3).sin(),
                ]
            }
            9 => {
                let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
                let (yaw, p1, p2) = (x[0], x[1], x[2]);
                vec![
                    l1 * yaw.cos() * p1.cos() + l2 * yaw.cos() * (p1 + p2).cos(),
                    l1 * yaw.sin() * p1.cos() + l2 * yaw.sin() * (p1 + p2).cos(),
                    l1 * p1.sin() + l2 * (p1 + p2).sin(),
                ]
            }
            other => unreachable!("constructor admits only ids 1..=9, found {other}"),
        }
    }

    /// Forward map over matrix rows.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut y = Array2::zeros((x.nrows(), self.output_dim));
        for (i, row) in x.rows().into_iter().enumerate() {
            let out = self.forward(&row.to_vec())?;
            for (j, v) in out.iter().enumerate() {
                y[[i, j]] = *v;
            }
        }
        Ok(y)
    }
}

/// Draws `n_total` inputs uniformly over the domain, evaluates the exact
/// forward map, then deals a shuffled partition into the three splits.
/// The draw and the shuffle both come from `seed`, so equal seeds give
/// identical datasets.
pub fn sample_dataset(spec: &ProblemSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if spec.n_train_anchor + spec.n_val + spec.n_test != spec.n_total {
        return Err(Error::Config(format!(
            "split sizes {}+{}+{} do not add up to n_total {}",
            spec.n_train_anchor, spec.n_val, spec.n_test, spec.n_total
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((spec.n_total, spec.input_dim));
    for i in 0..spec.n_total {
        let row = spec.domain.sample(&mut rng);
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    let y = spec.forward_batch(&x)?;

    let mut order: Vec<usize> = (0..spec.n_total).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let take = |ids: &[usize], role: Role| -> Dataset {
        let xs = x.select(ndarray::Axis(0), ids);
        let ys = y.select(ndarray::Axis(0), ids);
        Dataset {
            x: xs,
            y: ys,
            role,
            seed,
        }
    };
    let train = take(&order[..spec.n_train_anchor], Role::TrainAnchor);
    let val = take(
        &order[spec.n_train_anchor..spec.n_train_anchor + spec.n_val],
        Role::Validation,
    );
    let test = take(&order[spec.n_train_anchor + spec.n_val..], Role::Test);
    Ok((train, val, test))
}

/// Multiplicative Gaussian noise: y -> y * (1 + level * eps).
pub fn add_noise(y: &Array2<f64>, level: f64, seed: u64) -> Result<Array2<f64>> {
    if level < 0.0 {
        return Err(Error::Argument(format!("noise level must be >= 0, got {level}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut out = y.clone();
    for v in out.iter_mut() {
        let eps: f64 = normal.sample(&mut rng);
        *v *= 1.0 + level * eps;
    }
    Ok(out)
}

/// Endless stream of perturbation pairs for generator-mode training.
///
/// Each row: sample x_j uniform over the domain, offset each coordinate by
/// uniform noise in [-scale_c, +scale_c], clamp back into the domain, and
/// emit inputs (f(x_i), f(x_j), x_j) against target x_i - x_j.
pub struct TwinPairGenerator {
    spec: ProblemSpec,
    perturb_scale: Vec<f64>,
    batch_size: usize,
    pub batches_per_round: usize,
    rng: ChaCha8Rng,
}

/// Batches per validation round in generator mode; stands in for an epoch,
/// since the stream has no natural pass boundary.
pub const GENERATOR_BATCHES_PER_ROUND: usize = 100;

/// Builds the pair stream. `perturb_scale` gives per-coordinate half-widths
/// of the offset distribution; a zero component pins that coordinate.
pub fn make_generator(
    spec: &ProblemSpec,
    perturb_scale: &[f64],
    batch_size: usize,
    seed: u64,
) -> Result<TwinPairGenerator> {
    if perturb_scale.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "perturb_scale has {} components, problem {} has {} inputs",
            perturb_scale.len(),
            spec.id,
            spec.input_dim
        )));
    }
    if perturb_scale.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Argument(format!(
            "perturb_scale components must be non-negative, got {perturb_scale:?}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be positive".into()));
    }
    Ok(TwinPairGenerator {
        spec: spec.clone(),
        perturb_scale: perturb_scale.to_vec(),
        batch_size,
        batches_per_round: GENERATOR_BATCHES_PER_ROUND,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl BatchSource for TwinPairGenerator {
    fn batches_per_round(&self) -> usize {
        self.batches_per_round
    }

    fn next_batch(&mut self) -> (Array2<f64>, Array2<f64>) {
        let p = self.spec.input_dim;
        let q = self.spec.output_dim;
        let mut inputs = Array2::zeros((self.batch_size, 2 * q + p));
        let mut targets = Array2::zeros((self.batch_size, p));
        for r in 0..self.batch_size {
            let x_j = self.spec.domain.sample(&mut self.rng);
            let mut x_i: Vec<f64> = x_j
                .iter()
                .zip(&self.perturb_scale)
                .map(|(v, s)| {
                    if *s > 0.0 {
                        v + self.rng.gen_range(-*s..*s)
                    } else {
                        *v
                    }
                })
                .collect();
            x_i = self.spec.domain.clamp(&x_i);
            let y_i = self
                .spec
                .forward(&x_i)
                .expect("clamped point stays inside the domain");
            let y_j = self
                .spec
                .forward(&x_j)
                .expect("sampled point stays inside the domain");
            for (c, v) in y_i.iter().chain(y_j.iter()).chain(x_j.iter()).enumerate() {
                inputs[[r, c]] = *v;
            }
            for c in 0..p {
                targets[[r, c]] = x_i[c] - x_j[c];
            }
        }
        (inputs, targets)
    }
}
