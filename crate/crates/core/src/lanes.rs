//! Fixed-width lane masks and lane permutations (at most 16 lanes).

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MAX_LANES: usize = 16;

/// Boolean per lane. Displays lane 0 first, e.g. `0110`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LaneMask {
    width: u8,
    bits: u16,
}

impl LaneMask {
    pub fn none(width: usize) -> Self {
        assert!(width <= MAX_LANES);
        LaneMask {
            width: width as u8,
            bits: 0,
        }
    }

    pub fn all(width: usize) -> Self {
        Self::prefix(width, width)
    }

    /// The first `active` lanes set.
    pub fn prefix(width: usize, active: usize) -> Self {
        assert!(active <= width && width <= MAX_LANES);
        let bits = if active == 16 { u16::MAX } else { (1u16 << active) - 1 };
        LaneMask {
            width: width as u8,
            bits,
        }
    }

    pub fn single(width: usize, lane: usize) -> Self {
        let mut m = Self::none(width);
        m.set(lane, true);
        m
    }

    pub fn from_bools(lanes: &[bool]) -> Self {
        let mut m = Self::none(lanes.len());
        for (l, &b) in lanes.iter().enumerate() {
            m.set(l, b);
        }
        m
    }

    pub fn width(self) -> usize {
        self.width as usize
    }

    pub fn bits(self) -> u16 {
        self.bits
    }

    pub fn get(self, lane: usize) -> bool {
        lane < self.width() && self.bits & (1 << lane) != 0
    }

    pub fn set(&mut self, lane: usize, on: bool) {
        assert!(lane < self.width(), "lane {lane} outside width {}", self.width);
        if on {
            self.bits |= 1 << lane;
        } else {
            self.bits &= !(1 << lane);
        }
    }

    pub fn count(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_full(self) -> bool {
        self.count() == self.width()
    }

    /// Indices of set lanes, ascending.
    pub fn lanes(self) -> impl Iterator<Item = usize> {
        (0..self.width()).filter(move |&l| self.get(l))
    }

    pub fn to_bools(self) -> Vec<bool> {
        (0..self.width()).map(|l| self.get(l)).collect()
    }
}

impl fmt::Display for LaneMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in 0..self.width() {
            f.write_str(if self.get(l) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for LaneMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LaneMask({self})")
    }
}

impl From<LaneMask> for String {
    fn from(m: LaneMask) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for LaneMask {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.len() > MAX_LANES {
            return Err(format!("mask `{s}` wider than {MAX_LANES} lanes"));
        }
        let bools = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(format!("bad mask character `{c}`")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LaneMask::from_bools(&bools))
    }
}

/// Lane-source vector: `out[l] = in[src[l]]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LanePerm {
    width: u8,
    src: [u8; MAX_LANES],
}

impl LanePerm {
    pub fn identity(width: usize) -> Self {
        assert!(width <= MAX_LANES);
        let mut src = [0u8; MAX_LANES];
        for (l, s) in src.iter_mut().enumerate() {
            *s = l as u8;
        }
        LanePerm {
            width: width as u8,
            src,
        }
    }

    /// Panics if any source lane is outside `0..src.len()`.
    pub fn from_slice(src: &[u8]) -> Self {
        let width = src.len();
        assert!(width <= MAX_LANES);
        let mut p = Self::identity(width);
        for (l, &s) in src.iter().enumerate() {
            assert!((s as usize) < width, "source lane {s} outside width {width}");
            p.src[l] = s;
        }
        p
    }

    pub fn width(self) -> usize {
        self.width as usize
    }

    pub fn get(self, lane: usize) -> usize {
        self.src[lane] as usize
    }

    pub fn set(&mut self, lane: usize, src: usize) {
        assert!(lane < self.width() && src < self.width());
        self.src[lane] = src as u8;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.src[..self.width()]
    }

    pub fn is_identity(self) -> bool {
        self.as_slice().iter().enumerate().all(|(l, &s)| l == s as usize)
    }
}

impl fmt::Display for LanePerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl fmt::Debug for LanePerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LanePerm{self}")
    }
}

impl From<LanePerm> for Vec<u8> {
    fn from(p: LanePerm) -> Vec<u8> {
        p.as_slice().to_vec()
    }
}

impl TryFrom<Vec<u8>> for LanePerm {
    type Error = String;

    fn try_from(v: Vec<u8>) -> Result<Self, String> {
        if v.len() > MAX_LANES || v.iter().any(|&s| s as usize >= v.len()) {
            return Err(format!("invalid permutation {v:?}"));
        }
        Ok(LanePerm::from_slice(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_basics() {
        let m = LaneMask::from_bools(&[false, true, true, false]);
        assert_eq!(m.to_string(), "0110");
        assert_eq!(m.count(), 2);
        assert_eq!(m.lanes().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(LaneMask::prefix(8, 2).to_string(), "11000000");
        assert!(LaneMask::all(16).is_full());
    }

    #[test]
    fn serde_forms() {
        let m = LaneMask::from_bools(&[true, false, true]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "\"101\"");
        assert_eq!(serde_json::from_str::<LaneMask>(&s).unwrap(), m);
        let p = LanePerm::from_slice(&[0, 0, 1, 1]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[0,0,1,1]");
        assert_eq!(serde_json::from_str::<LanePerm>(&s).unwrap(), p);
        assert!(serde_json::from_str::<LanePerm>("[0,4]").is_err());
    }

    #[test]
    fn perm_identity() {
        assert!(LanePerm::identity(8).is_identity());
        assert!(!LanePerm::from_slice(&[1, 0]).is_identity());
    }
}
