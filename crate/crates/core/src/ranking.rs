//! Pairwise ranking mathematics: logistic pair probabilities from per-joint
//! scalar features, the pairwise cross-entropy cost and its gradient,
//! three-way discretization, per-pair accuracy statistics, a topological-sort
//! ordering baseline, and the flip-noise oracle that stands in for an
//! image-based ranking predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{DepthOrder, RankingMatrix, NUM_JOINTS};

/// Default half-width of the tie band used by [`discretize`].
pub const DEFAULT_DISCRETIZE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFeatures(pub [f64; NUM_JOINTS]);

impl JointFeatures {
    pub fn zeros() -> Self {
        JointFeatures([0.0; NUM_JOINTS])
    }

    #[inline]
    pub fn diff(&self, i: usize, j: usize) -> f64 {
        self.0[i] - self.0[j]
    }
}

/// Soft pairwise relations; `get(i, j)` is the probability that joint `i`
/// lies behind joint `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    entries: [[f64; NUM_JOINTS]; NUM_JOINTS],
}

impl ProbMatrix {
    pub fn from_entries(entries: [[f64; NUM_JOINTS]; NUM_JOINTS]) -> Result<Self> {
        for i in 0..NUM_JOINTS {
            if entries[i][i] != 0.5 {
                return Err(Error::Input(format!("probability diagonal ({i},{i}) != 0.5")));
            }
            for j in 0..NUM_JOINTS {
                let v = entries[i][j];
                if !(0.0..=1.0).contains(&v) || (v + entries[j][i] - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!(
                        "probability entries ({i},{j}) / ({j},{i}) violate P_ij + P_ji = 1"
                    )));
                }
            }
        }
        Ok(ProbMatrix { entries })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn prob_matrix_from_features(f: &JointFeatures) -> ProbMatrix {
    let mut entries = [[0.5; NUM_JOINTS]; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        for j in i + 1..NUM_JOINTS {
            // evaluate the smaller side directly so it keeps full precision
            let d = f.diff(i, j);
            if d >= 0.0 {
                let back = sigmoid(-d);
                entries[j][i] = back;
                entries[i][j] = 1.0 - back;
            } else {
                let fwd = sigmoid(d);
                entries[i][j] = fwd;
                entries[j][i] = 1.0 - fwd;
            }
        }
    }
    ProbMatrix { entries }
}

/// Sum over all ordered pairs of `-M_ij F_ij + ln(1 + e^{F_ij})`.
pub fn rank_cost(f: &JointFeatures, m: &RankingMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            let d = f.diff(i, j);
            total += softplus(d) - m.get(i, j) * d;
        }
    }
    total
}

/// Exact gradient of [`rank_cost`] with respect to each joint feature.
pub fn rank_cost_gradient(f: &JointFeatures, m: &RankingMatrix) -> [f64; NUM_JOINTS] {
    let p = prob_matrix_from_features(f);
    let mut grad = [0.0; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            let r = p.get(i, j) - m.get(i, j);
            grad[i] += r;
            grad[j] -= r;
        }
    }
    grad
}

/// Maps soft probabilities to `{0, 0.5, 1}` with a tie band of half-width
/// `thresh` around 0.5.
pub fn discretize(p: &ProbMatrix, thresh: f64) -> Result<RankingMatrix> {
    if !(thresh > 0.0 && thresh < 0.5) {
        return Err(Error::Input(format!(
            "discretization threshold must lie in (0, 0.5), got {thresh}"
        )));
    }
    Ok(RankingMatrix::from_upper(|i, j| {
        let v = p.get(i, j);
        if v > 0.5 + thresh {
            1.0
        } else if v < 0.5 - thresh {
            0.0
        } else {
            0.5
        }
    }))
}

/// Per-pair agreement rate between predicted and reference matrices.
/// Entries with `count == 0` carry no information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub p: [[f64; NUM_JOINTS]; NUM_JOINTS],
    pub count: [[u64; NUM_JOINTS]; NUM_JOINTS],
}

impl AccuracyMatrix {
    /// The same accuracy on every pair (diagonal is always 1).
    pub fn uniform(p: f64) -> Result<Self> {
        Self::from_fn(|_, _| p)
    }

    /// Builds a symmetric matrix from `acc(i, j)` evaluated for `i < j`.
    pub fn from_fn(mut acc: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut p = [[1.0; NUM_JOINTS]; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            for j in i + 1..NUM_JOINTS {
                let v = acc(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Input(format!("accuracy ({i},{j}) = {v} outside [0, 1]")));
                }
                p[i][j] = v;
                p[j][i] = v;
            }
        }
        Ok(AccuracyMatrix {
            p,
            count: [[1; NUM_JOINTS]; NUM_JOINTS],
        })
    }

    /// Per-pair accuracy drawn uniformly from `[lo, hi]`.
    pub fn random(lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Input(format!("invalid accuracy range [{lo}, {hi}]")));
        }
        Self::from_fn(|_, _| if lo == hi { lo } else { rng.random_range(lo..=hi) })
    }

    pub fn from_values(p: [[f64; NUM_JOINTS]; NUM_JOINTS]) -> Result<Self> {
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Input(format!("accuracy ({i},{j}) = {v} outside [0, 1]")));
                }
            }
        }
        Ok(AccuracyMatrix {
            p,
            count: [[1; NUM_JOINTS]; NUM_JOINTS],
        })
    }

    /// Probability that pair `(i, j)` is kept as-is.
    pub fn keep_probability(&self, i: usize, j: usize) -> f64 {
        if self.count[i][j] == 0 {
            1.0
        } else {
            self.p[i][j]
        }
    }

    /// Mean accuracy over off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                if i != j && self.count[i][j] > 0 {
                    sum += self.p[i][j];
                    n += 1;
                }
            }
        }
        if n == 0 {
            1.0
        } else {
            sum / n as f64
        }
    }
}

/// Flips each unordered pair independently with probability `1 - p_ij`.
/// A flipped tie becomes a uniformly random strict relation.
pub fn noisy_ranking_oracle(
    m_true: &RankingMatrix,
    acc: &AccuracyMatrix,
    rng: &mut impl Rng,
) -> RankingMatrix {
    RankingMatrix::from_upper(|i, j| {
        let v = m_true.get(i, j);
        let flip_prob = 1.0 - acc.keep_probability(i, j);
        let u: f64 = rng.random();
        if u < flip_prob {
            if v == 0.5 {
                if rng.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - v
            }
        } else {
            v
        }
    })
}

pub fn pairwise_accuracy(preds: &[RankingMatrix], gts: &[RankingMatrix]) -> Result<AccuracyMatrix> {
    if preds.is_empty() {
        return Err(Error::Input("pairwise accuracy needs at least one sample".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} references",
            preds.len(),
            gts.len()
        )));
    }
    let mut hits = [[0u64; NUM_JOINTS]; NUM_JOINTS];
    for (pred, gt) in preds.iter().zip(gts) {
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                if pred.get(i, j) == gt.get(i, j) {
                    hits[i][j] += 1;
                }
            }
        }
    }
    let n = preds.len() as u64;
    Ok(AccuracyMatrix {
        p: hits.map(|row| row.map(|h| h as f64 / n as f64)),
        count: [[n; NUM_JOINTS]; NUM_JOINTS],
    })
}

/// Kahn topological sort over strict relations, nearest joint first. When
/// every remaining joint has a nearer remaining joint (a cycle), the
/// lowest-index joint of minimum in-degree is taken.
pub fn topo_sort_order(m: &RankingMatrix) -> DepthOrder {
    // in_degree[i]: remaining joints known to be nearer than i
    let mut in_degree = [0usize; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            if m.get(i, j) == 1.0 {
                in_degree[i] += 1;
            }
        }
    }
    let mut removed = [false; NUM_JOINTS];
    let mut sequence = Vec::with_capacity(NUM_JOINTS);
    for _ in 0..NUM_JOINTS {
        let next = (0..NUM_JOINTS)
            .filter(|&i| !removed[i])
            .min_by_key(|&i| (in_degree[i], i))
            .expect("a joint remains");
        removed[next] = true;
        sequence.push(next);
        for i in 0..NUM_JOINTS {
            if !removed[i] && m.get(i, next) == 1.0 {
                in_degree[i] -= 1;
            }
        }
    }
    DepthOrder::from_sequence(&sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{depth_order, ranking_matrix_from_pose, Pose3D};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_with_depths(z: [f64; NUM_JOINTS]) -> Pose3D {
        Pose3D::new(std::array::from_fn(|j| Vector3::new(0.0, 0.0, z[j])))
    }

    fn random_features(rng: &mut impl Rng, scale: f64) -> JointFeatures {
        JointFeatures(std::array::from_fn(|_| rng.random_range(-scale..scale)))
    }

    fn random_matrix(rng: &mut impl Rng) -> RankingMatrix {
        RankingMatrix::from_upper(|_, _| [0.0, 0.5, 1.0][rng.random_range(0..3)])
    }

    /// Cross-entropy form `-M log P - (1 - M) log(1 - P)`, evaluated directly
    /// from the logistic probability.
    fn cross_entropy_cost(f: &JointFeatures, m: &RankingMatrix) -> f64 {
        let mut total = 0.0;
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                let p = 1.0 / (1.0 + (-f.diff(i, j)).exp());
                let mij = m.get(i, j);
                total += -mij * p.ln() - (1.0 - mij) * (1.0 - p).ln();
            }
        }
        total
    }

    #[test]
    fn probability_cases() {
        let mut f = JointFeatures::zeros();
        let p = prob_matrix_from_features(&f);
        assert_eq!(p.get(2, 9), 0.5);
        f.0[0] = 3f64.ln();
        let p = prob_matrix_from_features(&f);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-15);
        f.0[0] = 1000.0;
        let p = prob_matrix_from_features(&f);
        assert!((p.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(p.get(1, 0).is_finite() && p.get(1, 0) >= 0.0);
        f.0[0] = 1e4;
        f.0[1] = -1e4;
        let p = prob_matrix_from_features(&f);
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(1, 0), 0.0);
    }

    #[test]
    fn cost_cases() {
        let mut e = [[0.5; 16]; 16];
        e[0][1] = 1.0;
        e[1][0] = 0.0;
        let m = RankingMatrix::from_entries(e).unwrap();
        let f = JointFeatures::zeros();
        // single term C_01 with F_01 = 0
        let c01 = softplus(0.0) - m.get(0, 1) * 0.0;
        assert!((c01 - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert!((rank_cost(&f, &m) - 256.0 * 2f64.ln()).abs() < 1e-9);

        let mut f = JointFeatures::zeros();
        f.0[0] = 50.0;
        let c01 = softplus(f.diff(0, 1)) - f.diff(0, 1);
        assert!(c01 < 1e-20);
    }

    #[test]
    fn cost_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let f = random_features(&mut rng, 8.0);
            let m = random_matrix(&mut rng);
            let a = rank_cost(&f, &m);
            let b = cross_entropy_cost(&f, &m);
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_at_optimum_and_sum() {
        // P = M only when every pair is tied and features are equal
        let g = rank_cost_gradient(&JointFeatures([4.2; 16]), &RankingMatrix::all_ties());
        assert!(g.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let g = rank_cost_gradient(&random_features(&mut rng, 5.0), &random_matrix(&mut rng));
            assert!(g.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-5;
        for _ in 0..100 {
            let f = random_features(&mut rng, 3.0);
            let m = random_matrix(&mut rng);
            let g = rank_cost_gradient(&f, &m);
            for k in 0..NUM_JOINTS {
                let mut fp = f;
                let mut fm = f;
                fp.0[k] += h;
                fm.0[k] -= h;
                let fd = (rank_cost(&fp, &m) - rank_cost(&fm, &m)) / (2.0 * h);
                let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-6, "component {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn discretize_cases() {
        let mut e = [[0.5; 16]; 16];
        e[0][1] = 0.9;
        e[1][0] = 0.1;
        e[2][3] = 0.55;
        e[3][2] = 0.45;
        let p = ProbMatrix::from_entries(e).unwrap();
        let m = discretize(&p, 0.1).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(2, 3), 0.5);
        assert_eq!(m.get(5, 6), 0.5);
        let m = discretize(&p, 0.49).unwrap();
        assert_eq!(m.get(5, 6), 0.5);
        assert!(discretize(&p, 0.0).is_err());
        assert!(discretize(&p, 0.5).is_err());
    }

    #[test]
    fn oracle_without_errors_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let acc = AccuracyMatrix::uniform(1.0).unwrap();
        for _ in 0..50 {
            let m = random_matrix(&mut rng);
            assert_eq!(noisy_ranking_oracle(&m, &acc, &mut rng), m);
        }
    }

    #[test]
    fn oracle_flip_rate_at_half() {
        // 10^5 draws of pair (0, 1)
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let acc = AccuracyMatrix::uniform(0.5).unwrap();
        let m = ranking_matrix_from_pose(&pose_with_depths(std::array::from_fn(|i| i as f64)), 0.0).unwrap();
        let draws = 100_000;
        let flips = (0..draws)
            .filter(|_| noisy_ranking_oracle(&m, &acc, &mut rng).get(0, 1) != m.get(0, 1))
            .count();
        let rate = flips as f64 / draws as f64;
        assert!((0.497..=0.503).contains(&rate), "flip rate {rate}");
    }

    #[test]
    fn accuracy_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let gts: Vec<_> = (0..10)
            .map(|_| ranking_matrix_from_pose(&pose_with_depths(std::array::from_fn(|_| rng.random())), 0.0).unwrap())
            .collect();
        let acc = pairwise_accuracy(&gts, &gts).unwrap();
        assert!(acc.p.iter().flatten().all(|&v| v == 1.0));

        let flipped: Vec<_> = gts
            .iter()
            .map(|m| RankingMatrix::from_upper(|i, j| 1.0 - m.get(i, j)))
            .collect();
        let acc = pairwise_accuracy(&flipped, &gts).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(acc.p[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }

        // single sample, upper triangle of pairs (i < 8) flipped
        let half = RankingMatrix::from_upper(|i, j| if i < 8 { 1.0 - gts[0].get(i, j) } else { gts[0].get(i, j) });
        let acc = pairwise_accuracy(&[half.clone()], &gts[..1]).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expected = if half.get(i, j) == gts[0].get(i, j) { 1.0 } else { 0.0 };
                assert_eq!(acc.p[i][j], expected);
            }
        }
        assert!(pairwise_accuracy(&[], &[]).is_err());
        assert!(pairwise_accuracy(&gts[..2], &gts[..3]).is_err());
    }

    #[test]
    fn topo_sort_cases() {
        let mut z = [100.0; NUM_JOINTS];
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = 10.0 * j as f64;
        }
        let m = ranking_matrix_from_pose(&pose_with_depths(z), 0.0).unwrap();
        assert_eq!(&topo_sort_order(&m).ranks()[..3], &[1, 2, 3]);

        // one flipped pair creates a cycle; result is still a permutation
        let cyc = RankingMatrix::from_upper(|i, j| if (i, j) == (0, 15) { 1.0 } else { m.get(i, j) });
        let order = topo_sort_order(&cyc);
        assert!(DepthOrder::from_ranks(*order.ranks()).is_ok());

        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..100 {
            let pose = pose_with_depths(std::array::from_fn(|_| rng.random_range(-1000.0..1000.0)));
            let m = ranking_matrix_from_pose(&pose, 0.0).unwrap();
            assert_eq!(topo_sort_order(&m), depth_order(&pose));
        }
        // ties resolved by index, like depth_order
        let pose = pose_with_depths([3.0; 16]);
        let m = ranking_matrix_from_pose(&pose, 0.0).unwrap();
        assert_eq!(topo_sort_order(&m), depth_order(&pose));
    }

    #[test]
    fn gradient_descent_learns_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let pose = pose_with_depths(std::array::from_fn(|_| rng.random_range(-500.0..500.0)));
        let target = ranking_matrix_from_pose(&pose, 0.0).unwrap();
        let mut f = JointFeatures::zeros();
        for _ in 0..5000 {
            let g = rank_cost_gradient(&f, &target);
            for k in 0..NUM_JOINTS {
                f.0[k] -= 0.1 * g[k];
            }
        }
        let learned = discretize(&prob_matrix_from_features(&f), DEFAULT_DISCRETIZE_THRESHOLD).unwrap();
        assert_eq!(learned, target);
    }

    proptest! {
        #[test]
        fn probability_invariants(f in prop::array::uniform16(-1e4..1e4f64)) {
            let p = prob_matrix_from_features(&JointFeatures(f));
            for i in 0..16 {
                prop_assert_eq!(p.get(i, i), 0.5);
                for j in 0..16 {
                    prop_assert_eq!(p.get(i, j) + p.get(j, i), 1.0);
                    prop_assert!((0.0..=1.0).contains(&p.get(i, j)));
                }
            }
        }

        #[test]
        fn discretized_matrix_is_valid(f in prop::array::uniform16(-5.0..5.0f64), t in 0.01..0.49f64) {
            let m = discretize(&prob_matrix_from_features(&JointFeatures(f)), t).unwrap();
            prop_assert!(RankingMatrix::from_entries(*m.entries()).is_ok());
        }

        #[test]
        fn cost_is_convex(a in prop::array::uniform16(-6.0..6.0f64), b in prop::array::uniform16(-6.0..6.0f64), seed in 0u64..1000) {
            let m = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed));
            let mid = JointFeatures(std::array::from_fn(|k| 0.5 * (a[k] + b[k])));
            let lhs = rank_cost(&mid, &m);
            let rhs = 0.5 * (rank_cost(&JointFeatures(a), &m) + rank_cost(&JointFeatures(b), &m));
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn cost_translation_invariant(a in prop::array::uniform16(-6.0..6.0f64), c in -50.0..50.0f64, seed in 0u64..1000) {
            let m = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed));
            let shifted = JointFeatures(a.map(|x| x + c));
            let base = rank_cost(&JointFeatures(a), &m);
            prop_assert!((rank_cost(&shifted, &m) - base).abs() < 1e-9 * base.max(1.0));
        }

        #[test]
        fn oracle_output_is_valid(seed in 0u64..10_000, p in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng);
            let acc = AccuracyMatrix::uniform(p).unwrap();
            let out = noisy_ranking_oracle(&m, &acc, &mut rng);
            prop_assert!(RankingMatrix::from_entries(*out.entries()).is_ok());
        }
    }
}
