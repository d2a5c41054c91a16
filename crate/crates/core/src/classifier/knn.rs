use crate::error::{Error, Result};
use crate::iip::ClassId;

/// Majority vote among the `k` nearest training images by Euclidean
/// distance. Distance ties keep training order; vote ties go to the lower
/// class.
pub fn knn_predict(train: &[(&[f32], ClassId)], image: &[f32], k: usize) -> Result<ClassId> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("k-NN needs training samples".into()));
    }
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for (i, (t, _)) in train.iter().enumerate() {
        if t.len() != image.len() {
            return Err(Error::Shape(format!(
                "training image {i} has {} pixels, query has {}",
                t.len(),
                image.len()
            )));
        }
        let d: f64 = t
            .iter()
            .zip(image)
            .map(|(&a, &b)| {
                let e = a as f64 - b as f64;
                e * e
            })
            .sum();
        dists.push((d, i));
    }
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let max_class = train.iter().map(|&(_, c)| c).max().unwrap_or(0) as usize;
    let mut votes = vec![0usize; max_class + 1];
    for &(_, i) in dists.iter().take(k) {
        votes[train[i].1 as usize] += 1;
    }
    Ok(super::argmax(&votes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_k1() {
        let a = [0.0f32, 0.0];
        let b = [1.0f32, 1.0];
        let train = [(&a[..], 3), (&b[..], 5)];
        assert_eq!(knn_predict(&train, &[1.0, 1.0], 1).unwrap(), 5);
    }

    #[test]
    fn majority_of_three() {
        let imgs = [[0.0f32], [0.1], [0.2], [5.0]];
        let train = [(&imgs[0][..], 2), (&imgs[1][..], 1), (&imgs[2][..], 2), (&imgs[3][..], 1)];
        assert_eq!(knn_predict(&train, &[0.1], 3).unwrap(), 2);
    }

    #[test]
    fn vote_tie_goes_low() {
        let imgs = [[0.0f32], [0.0]];
        let train = [(&imgs[0][..], 4), (&imgs[1][..], 1)];
        assert_eq!(knn_predict(&train, &[0.0], 2).unwrap(), 1);
    }

    #[test]
    fn empty_train_set() {
        assert!(matches!(knn_predict(&[], &[0.0], 1), Err(Error::EmptyDataset(_))));
    }
}
