use patchcluster::io::{decode_tensor, encode_tensor, read_tensor, write_tensor, TensorData};
use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        (1usize..40, 1usize..40).prop_map(|(a, b)| vec![a, b]),
        (1usize..12, 1usize..12, 1usize..16).prop_map(|(a, b, c)| vec![a, b, c]),
    ]
}

fn tensor_strategy() -> impl Strategy<Value = (Vec<usize>, TensorData)> {
    dims_strategy().prop_flat_map(|dims| {
        let len: usize = dims.iter().product();
        prop_oneof![
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), len)
                .prop_map(TensorData::F32),
            prop::collection::vec(any::<u8>(), len).prop_map(TensorData::U8),
        ]
        .prop_map(move |data| (dims.clone(), data))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_is_identity((dims, data) in tensor_strategy()) {
        let bytes = encode_tensor(&dims, &data).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(&back.dims, &dims);
        match (&back.data, &data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            (a, b) => prop_assert_eq!(a, b),
        }
        prop_assert_eq!(encode_tensor(&back.dims, &back.data).unwrap(), bytes);
    }
}

#[test]
fn file_roundtrip_keeps_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/feature.pcfb");
    let values: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32 - 7.5) / 3.0).collect();
    write_tensor(&path, &[2, 3, 4], &values).unwrap();
    let back = read_tensor(&path).unwrap();
    assert_eq!(back.dims, vec![2, 3, 4]);
    assert_eq!(back.data, TensorData::F32(values));
}
