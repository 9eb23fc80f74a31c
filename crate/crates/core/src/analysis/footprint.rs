//! Support of the composed impulse response of a small depth-wise kernel
//! followed by a dilated one.

use std::collections::BTreeSet;
use std::fmt;

use crate::blocks::Decomposition;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub decomposition: Decomposition,
    /// `(dy, dx)` offsets from the center with a nonzero composed weight.
    pub offsets: BTreeSet<(i64, i64)>,
}

fn square(k: usize, step: i64) -> Vec<(i64, i64)> {
    let r = (k / 2) as i64;
    (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (y * step, x * step)))
        .collect()
}

impl Footprint {
    /// Minkowski sum of the two legs' tap sets, which is the support of the
    /// convolution of their all-positive indicator kernels.
    pub fn new(d: Decomposition) -> Result<Self> {
        d.validate()?;
        let small = square(d.small_kernel(), 1);
        let dilated = square(d.dilated_kernel(), d.dilation as i64);
        let offsets = small
            .iter()
            .flat_map(|&(a, b)| dilated.iter().map(move |&(c, e)| (a + c, b + e)))
            .collect();
        Ok(Footprint {
            decomposition: d,
            offsets,
        })
    }

    /// Side of the bounding square.
    pub fn extent(&self) -> usize {
        let lo = self.offsets.iter().map(|o| o.0).min().unwrap_or(0);
        let hi = self.offsets.iter().map(|o| o.0).max().unwrap_or(0);
        (hi - lo + 1) as usize
    }

    /// Positions inside the bounding square that receive no weight.
    pub fn holes(&self) -> usize {
        self.extent().pow(2) - self.offsets.len()
    }

    /// Whether every tap of a centered `k x k` kernel is reached.
    pub fn covers(&self, k: usize) -> bool {
        square(k, 1).iter().all(|o| self.offsets.contains(o))
    }

    /// Boolean grid of the bounding square, row-major.
    pub fn grid(&self) -> Vec<Vec<bool>> {
        let e = self.extent() as i64;
        let r = e / 2;
        (-r..e - r)
            .map(|y| {
                (-r..e - r)
                    .map(|x| self.offsets.contains(&(y, x)))
                    .collect()
            })
            .collect()
    }
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.decomposition;
        write!(
            f,
            "legs {0}×{0} + {1}×{1}(d={2}), extent {3}, holes {4}, covers {5}: {6}",
            d.small_kernel(),
            d.dilated_kernel(),
            d.dilation,
            self.extent(),
            self.holes(),
            d.kernel,
            if self.covers(d.kernel) { "yes" } else { "no" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thirteen_by_three() {
        let f = Footprint::new(Decomposition::new(13, 3).unwrap()).unwrap();
        assert_eq!(f.extent(), 17);
        assert_eq!(f.holes(), 0);
        assert!(f.covers(13));
        assert_eq!(
            f.to_string(),
            "legs 5×5 + 5×5(d=3), extent 17, holes 0, covers 13: yes"
        );
    }

    #[test]
    fn default_is_dense_23() {
        let f = Footprint::new(Decomposition::default()).unwrap();
        assert_eq!((f.extent(), f.holes()), (23, 0));
        assert!(f.covers(21) && !f.covers(25));
    }

    #[test]
    fn unit_dilation_is_the_plain_kernel() {
        for k in [1, 3, 7, 9] {
            let f = Footprint::new(Decomposition::new(k, 1).unwrap()).unwrap();
            assert_eq!(f.offsets.len(), k * k);
            assert_eq!(f.extent(), k);
        }
    }

    proptest! {
        #[test]
        fn symmetric_under_rotation_and_reflection(k in 0usize..12, d in 1usize..6) {
            let kernel = 2 * k + 1;
            prop_assume!(Decomposition::new(kernel, d).is_ok());
            let f = Footprint::new(Decomposition::new(kernel, d).unwrap()).unwrap();
            for &(y, x) in &f.offsets {
                prop_assert!(f.offsets.contains(&(x, -y)));
                prop_assert!(f.offsets.contains(&(y, -x)));
                prop_assert!(f.offsets.contains(&(x, y)));
            }
            prop_assert_eq!(f.holes(), 0);
            prop_assert!(f.covers(kernel));
        }
    }
}
