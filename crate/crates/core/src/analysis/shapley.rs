use ndarray::ArrayView2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 5;

/// Training indices by ascending Euclidean distance to `q`, ties broken by index.
fn nearest_order<T: Scalar>(train: ArrayView2<T>, q: ndarray::ArrayView1<T>) -> Vec<usize> {
    let d: Vec<f64> = train
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(q.iter()).map(|(&a, &b)| (a - b).widen().powi(2)).sum::<f64>())
        .collect();
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

/// Exact KNN-Shapley values of each training point for one validation point, by recursion.
pub fn knn_shapley_single<T: Scalar>(train: &Dataset<T>, q: ndarray::ArrayView1<T>, y: usize, k: usize) -> Result<Vec<f64>> {
    let n = train.len();
    if k == 0 || k > n {
        return Err(Error::config(format!("K = {k} for {n} training points")));
    }
    let order = nearest_order(train.x(), q);
    let hit = |j: usize| if train.labels[order[j]] == y { 1.0 } else { 0.0 };
    let mut s = vec![0.0; n];
    let mut cur = hit(n - 1) / n as f64;
    s[order[n - 1]] = cur;
    for j in (1..n).rev() {
        // 1-based position j corresponds to order[j - 1]
        let pos = j as f64;
        cur += (hit(j - 1) - hit(j)) * (k.min(j) as f64) / (k as f64 * pos);
        s[order[j - 1]] = cur;
    }
    Ok(s)
}

/// Mean KNN-Shapley value of every training point over the validation split.
pub fn knn_shapley<T: Scalar>(train: &Dataset<T>, validation: &Dataset<T>, k: usize) -> Result<Vec<f64>> {
    if train.dim() != validation.dim() {
        return Err(Error::input("train and validation feature widths differ"));
    }
    let mut total = vec![0.0; train.len()];
    for (q, &y) in validation.x().rows().into_iter().zip(&validation.labels) {
        for (t, v) in total.iter_mut().zip(knn_shapley_single(train, q, y, k)?) {
            *t += v;
        }
    }
    let m = validation.len() as f64;
    Ok(total.into_iter().map(|v| v / m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn ds(x: Array2<f64>, y: Vec<usize>) -> Dataset<f64> {
        Dataset::new(x, y, None, 3, 0).unwrap()
    }

    #[test]
    fn all_matching_labels_share_equally() {
        let d = ds(array![[0.0], [1.0], [3.0], [7.0]], vec![1; 4]);
        let s = knn_shapley_single(&d, array![0.5].view(), 1, 2).unwrap();
        assert!(s.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_points_by_hand() {
        let d = ds(array![[0.0], [5.0]], vec![2, 0]);
        let s = knn_shapley_single(&d, array![0.1].view(), 2, 1).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn bad_k_is_a_config_error() {
        let d = ds(array![[0.0], [5.0]], vec![2, 0]);
        assert!(matches!(knn_shapley(&d, &d, 3), Err(Error::Config(_))));
        assert!(matches!(knn_shapley(&d, &d, 0), Err(Error::Config(_))));
    }

    fn utility(train: &Dataset<f64>, order: &[usize], subset: u32, y: usize, k: usize) -> f64 {
        let members: Vec<usize> = order.iter().copied().filter(|&i| subset >> i & 1 == 1).collect();
        members.iter().take(k).filter(|&&i| train.labels[i] == y).count() as f64 / k as f64
    }

    fn brute_force(train: &Dataset<f64>, q: ndarray::ArrayView1<f64>, y: usize, k: usize) -> Vec<f64> {
        let n = train.len();
        let order = nearest_order(train.x(), q);
        let fact = |m: usize| (1..=m).map(|v| v as f64).product::<f64>();
        (0..n)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0u32..(1 << n) {
                    if s >> i & 1 == 1 {
                        continue;
                    }
                    let size = s.count_ones() as usize;
                    let w = fact(size) * fact(n - size - 1) / fact(n);
                    phi += w * (utility(train, &order, s | 1 << i, y, k) - utility(train, &order, s, y, k));
                }
                phi
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn recursion_equals_subset_enumeration(
            pts in proptest::collection::vec((0u8..10, 0u8..10, 0usize..3), 1..8),
            q in (0u8..10, 0u8..10, 0usize..3),
            k in 1usize..4,
        ) {
            proptest::prop_assume!(k <= pts.len());
            let x = Array2::from_shape_fn((pts.len(), 2), |(i, j)| if j == 0 { pts[i].0 as f64 } else { pts[i].1 as f64 });
            let d = ds(x, pts.iter().map(|p| p.2).collect());
            let qv = array![q.0 as f64, q.1 as f64];
            let fast = knn_shapley_single(&d, qv.view(), q.2, k).unwrap();
            let slow = brute_force(&d, qv.view(), q.2, k);
            for (a, b) in fast.iter().zip(&slow) {
                proptest::prop_assert!((a - b).abs() < 1e-9, "{fast:?} vs {slow:?}");
            }
            // Efficiency: values sum to the utility of the whole training set.
            let order = nearest_order(d.x(), qv.view());
            let full = utility(&d, &order, (1u32 << d.len()) - 1, q.2, k);
            proptest::prop_assert!((fast.iter().sum::<f64>() - full).abs() < 1e-9);
        }
    }
}
