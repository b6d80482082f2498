use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Mask;

/// Row-major run lengths alternating unset/set, starting with unset.
///
/// Wire form: `{"h": int, "w": int, "runs": [int, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub h: usize,
    pub w: usize,
    pub runs: Vec<u64>,
}

impl Rle {
    pub fn decode(&self) -> Result<Mask> {
        rle_decode(&self.runs, self.h, self.w)
    }
}

impl From<&Mask> for Rle {
    fn from(mask: &Mask) -> Self {
        rle_encode(mask)
    }
}

pub fn rle_encode(mask: &Mask) -> Rle {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &bit in mask.bits() {
        if bit != current {
            runs.push(len);
            current = bit;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    Rle {
        h: mask.height(),
        w: mask.width(),
        runs,
    }
}

pub fn rle_decode(runs: &[u64], h: usize, w: usize) -> Result<Mask> {
    let expected = h * w;
    let total = runs
        .iter()
        .try_fold(0u64, |acc, &r| acc.checked_add(r))
        .map(|t| usize::try_from(t).unwrap_or(usize::MAX))
        .unwrap_or(usize::MAX);
    if total != expected {
        return Err(Error::LengthMismatch { expected, got: total });
    }
    let mut bits = Vec::with_capacity(expected);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Mask::new(h, w, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_full() {
        assert_eq!(rle_encode(&Mask::empty(2, 2)).runs, vec![4]);
        assert_eq!(rle_encode(&Mask::full(2, 2)).runs, vec![0, 4]);
    }

    #[test]
    fn mixed_runs() {
        let m = Mask::new(2, 3, vec![false, true, true, false, false, true]).unwrap();
        let rle = rle_encode(&m);
        assert_eq!(rle.runs, vec![1, 2, 2, 1]);
        assert_eq!(rle.decode().unwrap(), m);
    }

    #[test]
    fn length_mismatch() {
        let err = rle_decode(&[1, 2], 2, 2).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 4, got: 3 }));
        assert!(rle_decode(&[u64::MAX, 5], 2, 2).is_err());
    }

    #[test]
    fn json_wire_form() {
        let rle = rle_encode(&Mask::full(2, 2));
        assert_eq!(serde_json::to_string(&rle).unwrap(), r#"{"h":2,"w":2,"runs":[0,4]}"#);
        let back: Rle = serde_json::from_str(r#"{"h":1,"w":3,"runs":[1,1,1]}"#).unwrap();
        assert_eq!(back.decode().unwrap().bits(), &[false, true, false]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn round_trip(bits in proptest::collection::vec(any::<bool>(), 256)) {
                let m = Mask::new(16, 16, bits).unwrap();
                prop_assert_eq!(rle_encode(&m).decode().unwrap(), m);
            }
        }
    }
}
