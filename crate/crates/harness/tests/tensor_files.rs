use proptest::prelude::*;
use topp_harness::{read_tensor, write_tensor, Tensor, TensorError};

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0u64..5, 0..4).prop_flat_map(|dims| {
        let len = dims.iter().product::<u64>() as usize;
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), len)
            .prop_map(move |data| Tensor::new(dims.clone(), data))
    })
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.dims() == b.dims()
        && a.data().len() == b.data().len()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #[test]
    fn file_roundtrip_is_bit_exact(t in tensor_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.twlt");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert!(same_bits(&t, &back));
        prop_assert_eq!(std::fs::read(&path).unwrap(), t.to_bytes());
    }

    #[test]
    fn every_proper_prefix_is_truncated(t in tensor_strategy()) {
        let bytes = t.to_bytes();
        for cut in 4..bytes.len() {
            match Tensor::from_bytes(&bytes[..cut]) {
                Err(TensorError::Truncated { found, .. }) => prop_assert_eq!(found, cut as u64),
                other => prop_assert!(false, "cut {}: {:?}", cut, other),
            }
        }
    }
}

#[test]
fn corruptions_map_to_distinct_errors() {
    let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f32).collect());
    let good = t.to_bytes();

    let mut b = good.clone();
    b[..4].copy_from_slice(b"TWLX");
    assert!(matches!(Tensor::from_bytes(&b), Err(TensorError::BadMagic(m)) if &m == b"TWLX"));

    let mut b = good.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        Tensor::from_bytes(&b),
        Err(TensorError::VersionMismatch(2))
    ));

    // Header claims more rows than the payload holds.
    let mut b = good.clone();
    b[12..20].copy_from_slice(&3u64.to_le_bytes());
    assert!(matches!(
        Tensor::from_bytes(&b),
        Err(TensorError::Truncated {
            expected: 64,
            found: 52
        })
    ));

    let mut b = good.clone();
    b[12..20].copy_from_slice(&(1u64 << 40).to_le_bytes());
    b[20..28].copy_from_slice(&(1u64 << 40).to_le_bytes());
    assert!(matches!(
        Tensor::from_bytes(&b),
        Err(TensorError::DimOverflow(_))
    ));

    // A huge rank runs past the end of the header.
    let mut b = good.clone();
    b[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(
        Tensor::from_bytes(&b),
        Err(TensorError::Truncated { .. })
    ));

    let codes: Vec<&str> = [
        TensorError::BadMagic(*b"XXXX"),
        TensorError::VersionMismatch(0),
        TensorError::Truncated {
            expected: 1,
            found: 0,
        },
        TensorError::DimOverflow(vec![]),
    ]
    .iter()
    .map(TensorError::code)
    .collect();
    let mut unique = codes.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), codes.len());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_tensor(&dir.path().join("absent")),
        Err(TensorError::Io(_))
    ));
}
