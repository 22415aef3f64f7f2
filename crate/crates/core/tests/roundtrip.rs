use proptest::collection::vec;
use proptest::prelude::*;
use semhash::codebook::{decode_codebook, encode_codebook};
use semhash::features::{decode_features, encode_features, FEATURE_HEADER_LEN};
use semhash::head::{decode_head, encode_head};
use semhash::{BinaryCodebook, BitCode, Error, FeatureSet, HashHeadParams};

fn feature_set() -> impl Strategy<Value = FeatureSet> {
    (0usize..6, 1usize..6, 0usize..3, any::<bool>()).prop_flat_map(|(n, d, r, labeled)| {
        let blocks = vec(vec(-1e6f32..1e6, n * d), r + 1);
        let labels = vec(any::<u32>(), n);
        (blocks, labels)
            .prop_map(move |(blocks, labels)| FeatureSet::new(n, d, blocks, labeled.then_some(labels)).unwrap())
    })
}

fn codebook() -> impl Strategy<Value = BinaryCodebook> {
    (1usize..140, 0usize..20).prop_flat_map(|(bits, n)| {
        let codes = vec(vec(any::<bool>(), bits), n);
        let ids = proptest::sample::subsequence((0u64..1000).collect::<Vec<_>>(), n).prop_shuffle();
        (codes, ids).prop_map(move |(codes, ids)| {
            let codes: Vec<BitCode> = codes.iter().map(|c| BitCode::from_bools(c)).collect();
            if codes.is_empty() {
                BinaryCodebook::new(bits)
            } else {
                BinaryCodebook::from_codes(&codes, &ids).unwrap()
            }
        })
    })
}

proptest! {
    #[test]
    fn features_round_trip(fs in feature_set()) {
        let bytes = encode_features(&fs).unwrap();
        prop_assert_eq!(bytes.len(), fs.encoded_len());
        prop_assert_eq!(decode_features(&bytes).unwrap(), fs);
    }

    #[test]
    fn features_reject_every_truncation(fs in feature_set(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_features(&fs).unwrap();
        let len = cut.index(bytes.len());
        prop_assert!(decode_features(&bytes[..len]).is_err());
    }

    #[test]
    fn features_reject_injected_nan(fs in feature_set(), at in any::<prop::sample::Index>()) {
        prop_assume!(!fs.is_empty());
        let mut bytes = encode_features(&fs).unwrap();
        let floats = (fs.rotations() + 1) * fs.len() * fs.dim();
        let slot = at.index(floats);
        let offset = FEATURE_HEADER_LEN + 4 * slot;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_features(&bytes) {
            Err(Error::NonFinite { offset: o, .. }) => prop_assert_eq!(o, offset as u64),
            other => prop_assert!(false, "expected NonFinite, got {:?}", other),
        }
    }

    #[test]
    fn codebook_round_trip(cb in codebook()) {
        let bytes = encode_codebook(&cb).unwrap();
        prop_assert_eq!(bytes.len(), cb.encoded_len());
        prop_assert_eq!(decode_codebook(&bytes).unwrap(), cb);
    }

    #[test]
    fn codebook_bytes_are_lsb_first(bits in vec(any::<bool>(), 1..100)) {
        let code = BitCode::from_bools(&bits);
        let bytes = code.to_bytes();
        prop_assert_eq!(bytes.len(), bits.len().div_ceil(8));
        for (j, &b) in bits.iter().enumerate() {
            prop_assert_eq!((bytes[j / 8] >> (j % 8)) & 1 == 1, b);
        }
        prop_assert_eq!(BitCode::from_bytes(bits.len(), &bytes).unwrap(), code);
    }

    #[test]
    fn codebook_rejects_pad_bits(bits in (1usize..100).prop_filter("needs padding", |b| b % 8 != 0)) {
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        *bytes.last_mut().unwrap() |= 0x80;
        let is_pad_error = matches!(BitCode::from_bytes(bits, &bytes), Err(Error::NonzeroPadBits { .. }));
        prop_assert!(is_pad_error);
    }

    #[test]
    fn head_round_trip(bits in 1usize..10, dim in 1usize..10, seed in any::<u64>()) {
        let head = semhash::init_head(bits, dim, seed).unwrap();
        let back: HashHeadParams = decode_head(&encode_head(&head).unwrap()).unwrap();
        prop_assert_eq!(back, head);
    }
}
