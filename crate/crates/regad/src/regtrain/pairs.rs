use rand::seq::index;
use rand::Rng;

use crate::{RegadError, Result};

/// Draws same-category pairs: a category uniformly among those with at least
/// two images, then two distinct images uniformly within it.
#[derive(Debug, Clone)]
pub struct PairSampler {
    groups: Vec<(String, Vec<usize>)>,
}

impl PairSampler {
    /// `categories[i]` is the category of pool item `i`.
    pub fn new<S: AsRef<str>>(categories: &[S]) -> Result<Self> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, c) in categories.iter().enumerate() {
            let c = c.as_ref();
            match groups.iter_mut().find(|(name, _)| name == c) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((c.to_string(), vec![i])),
            }
        }
        groups.retain(|(_, idx)| idx.len() >= 2);
        groups.sort_by(|a, b| a.0.cmp(&b.0));
        if groups.is_empty() {
            return Err(RegadError::InsufficientSamples {
                needed: 2,
                available: categories.len().min(1),
            });
        }
        Ok(PairSampler { groups })
    }

    pub fn categories(&self) -> Vec<&str> {
        self.groups.iter().map(|(c, _)| c.as_str()).collect()
    }

    /// Pool indices of one pair.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let (_, members) = &self.groups[rng.random_range(0..self.groups.len())];
        let picked = index::sample(rng, members.len(), 2);
        (members[picked.index(0)], members[picked.index(1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_category_of_two_always_yields_that_pair() {
        let s = PairSampler::new(&["a", "a"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (x, y) = s.sample(&mut rng);
            assert_eq!([x.min(y), x.max(y)], [0, 1]);
        }
    }

    #[test]
    fn singleton_categories_are_rejected() {
        assert!(PairSampler::new(&["a", "b", "c"]).is_err());
        assert!(PairSampler::new::<&str>(&[]).is_err());
    }

    #[test]
    fn categories_are_uniform_regardless_of_size() {
        // 14 categories of very different sizes.
        let mut cats = Vec::new();
        for c in 0..14 {
            for _ in 0..(2 + c * 5) {
                cats.push(format!("c{c:02}"));
            }
        }
        let s = PairSampler::new(&cats).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mut counts = [0usize; 14];
        for _ in 0..draws {
            let (a, b) = s.sample(&mut rng);
            assert_ne!(a, b);
            assert_eq!(cats[a], cats[b]);
            let c: usize = cats[a][1..].parse().unwrap();
            counts[c] += 1;
        }
        let p = 1.0 / 14.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (c, &n) in counts.iter().enumerate() {
            assert!((n as f64 - expected).abs() < 5.0 * sigma, "category {c}: {n}");
        }
    }
}
