use layermix::io::VolumeFile;
use layermix::manifest::{Manifest, Plan};
use layermix::shuffle::{recover_batch, shuffle_batch, ShufflePlan};
use layermix::{Axis, ConfidenceGrid, Dims, LabelGrid, SupervisionGrid, VolumeGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..6, 1usize..6, 1usize..6).prop_map(|(d, h, w)| Dims::new(d, h, w).unwrap())
}

fn volume_file() -> impl Strategy<Value = VolumeFile> {
    dims().prop_flat_map(|d| {
        let n = d.len();
        prop_oneof![
            proptest::collection::vec(
                proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL,
                n
            )
            .prop_map(move |v| VolumeGrid::new(d, v).unwrap().into()),
            (1usize..=256).prop_flat_map(move |k| proptest::collection::vec(0..k, n)
                .prop_map(move |v| LabelGrid::new(d, k, v.into_iter().map(|x| x as u8).collect()).unwrap().into())),
            proptest::collection::vec(0.0f32..=1.0, n).prop_map(move |v| ConfidenceGrid::new(d, v).unwrap().into()),
            proptest::collection::vec(0u8..2, n).prop_map(move |v| SupervisionGrid::new(d, v).unwrap().into()),
        ]
    })
}

proptest! {
    #[test]
    fn encode_decode_is_bit_exact(file in volume_file()) {
        let bytes = file.encode();
        let back = VolumeFile::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn any_truncation_is_rejected(file in volume_file(), cut in 0.0f64..1.0) {
        let bytes = file.encode();
        let len = (bytes.len() as f64 * cut) as usize;
        prop_assert!(VolumeFile::decode(&bytes[..len]).is_err());
    }

    #[test]
    fn recover_inverts_shuffle(seed: u64, axis_i in 0usize..3, p in 1usize..4, blocks in 1usize..4, batch in 1usize..5) {
        let axis = Axis::from_index(axis_i).unwrap();
        let mut e = [2, 3, 2];
        e[axis_i] = p * blocks;
        let d = Dims::from_array(e).unwrap();
        let grids: Vec<VolumeGrid> =
            (0..batch).map(|b| VolumeGrid::new(d, (0..d.len()).map(|i| (b * 100 + i) as f32).collect()).unwrap()).collect();
        let plan = ShufflePlan::sample(&mut ChaCha8Rng::seed_from_u64(seed), axis, d.extent(axis), p, batch).unwrap();
        prop_assert_eq!(recover_batch(&shuffle_batch(&grids, &plan).unwrap(), &plan).unwrap(), grids);
    }

    #[test]
    fn shuffle_manifest_text_round_trips(seed: u64, rows in 1usize..6, blocks in 1usize..6) {
        let plan = ShufflePlan::sample(&mut ChaCha8Rng::seed_from_u64(seed), Axis::H, 2 * blocks, 2, rows).unwrap();
        let m = Manifest { plan: Plan::Shuffle(plan), inputs: (0..rows).map(|i| format!("case {i}.jnv")).collect() };
        prop_assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }
}
