//! Replacing a gather by two loads, one shared permutation and a select.

use seedvec::data::Scalar;
use seedvec::feature::{gather_feature, VectorShape};
use seedvec::lanes::LaneMask;
use seedvec::vvm::LaneVector;

pub fn run_example() -> Vec<char> {
    let data: Vec<char> = "ABCDEFGH".chars().collect();
    let indices = [0, 4, 5, 1];
    let shape = VectorShape::new(4).unwrap();
    let g = gather_feature(&indices, LaneMask::all(4), data.len(), shape).unwrap();
    println!("flag {}  bases {:?}  perm {}  masks {:?}", g.flag, g.bases, g.perm, g.masks);

    let window = |base: i64| {
        let lanes: Vec<Scalar> = (0..4).map(|l| Scalar::Int(data[base as usize + l] as i64)).collect();
        LaneVector::from_scalars(&lanes)
    };
    let mut acc = window(g.bases[0]).permute(g.perm);
    for k in 1..g.flag {
        let shuffled = window(g.bases[k]).permute(g.perm);
        acc = LaneVector::select(g.masks[k - 1], &shuffled, &acc);
    }
    acc.as_slice()
        .iter()
        .map(|s| char::from_u32(s.as_int().unwrap() as u32).unwrap())
        .collect()
}

fn main() {
    let lanes = run_example();
    println!("lanes: {}", lanes.iter().collect::<String>());
}
