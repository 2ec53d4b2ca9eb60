use proptest::prelude::*;
use topogbm::container::Checkpoint;
use topogbm::nifti::{parse_nifti, write_nifti, NdVolume};

proptest! {
    #[test]
    fn nifti_f32_round_trip(shape in prop::collection::vec(1usize..6, 3), bits in prop::collection::vec(any::<u32>(), 125)) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b)).map(|v| if v.is_nan() { 0.0 } else { v }).collect();
        let vol = NdVolume::new(shape.clone(), data.clone()).unwrap();
        let bytes = write_nifti(&vol, &[1.0, 2.0, 0.5]).unwrap();
        let (_, back) = parse_nifti(&bytes).unwrap();
        prop_assert_eq!(back.shape, shape);
        prop_assert!(back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_nifti_is_rejected(cut in 1usize..200) {
        let vol = NdVolume::new(vec![4, 4, 4], vec![0.25; 64]).unwrap();
        let bytes = write_nifti(&vol, &[1.0; 3]).unwrap();
        prop_assert!(parse_nifti(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn checkpoint_round_trip(vals in prop::collection::vec(any::<u32>(), 1..40), name in "[a-z.]{1,12}") {
        let mut ck = Checkpoint::default();
        ck.push(name.clone(), vec![vals.len()], vals.iter().map(|&b| f32::from_bits(b)).collect());
        ck.push("empty", vec![0, 3], vec![]);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back.require(&name).unwrap().shape, &vec![vals.len()]);
    }
}
